//! One-hidden-layer perceptron with logistic units on both layers,
//! half sum-of-squares loss against 0.9/0.1 one-hot targets, and exact
//! backpropagated gradients.
//!
//! Parameters live in one flat vector ordered `w1` (row-major,
//! `n_hidden x n_in`), `b1`, `w2` (row-major, `n_out x n_hidden`), `b2`.
//! The conjugate-gradient trainer works on that vector directly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

pub const TARGET_HIGH: f64 = 0.9;
pub const TARGET_LOW: f64 = 0.1;

const FORMAT_MAGIC: &str = "gczone-mlp";
const FORMAT_VERSION: u32 = 1;
// Samples per partial sum; fixed so summation order never depends on thread count.
const CHUNK: usize = 32;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty dataset")]
    EmptyData,
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("model file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Layout {
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
}

impl Layout {
    pub fn new(n_in: usize, n_hidden: usize, n_out: usize) -> Self {
        Self { n_in, n_hidden, n_out }
    }

    pub fn param_count(&self) -> usize {
        self.n_hidden * self.n_in + self.n_hidden + self.n_out * self.n_hidden + self.n_out
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = 0;
        let b1 = w1 + self.n_hidden * self.n_in;
        let w2 = b1 + self.n_hidden;
        let b2 = w2 + self.n_out * self.n_hidden;
        [w1, b1, w2, b2]
    }
}

impl std::fmt::Display for Layout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.n_in, self.n_hidden, self.n_out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layout: Layout,
    params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl LabeledSample {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self { features, label }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl MlpModel {
    pub fn zeros(layout: Layout) -> Result<Self, NetError> {
        Self::from_flat(layout, vec![0.0; layout.param_count()])
    }

    /// Uniform initialization in `[-0.5, 0.5]`.
    pub fn random<R: Rng + ?Sized>(layout: Layout, rng: &mut R) -> Result<Self, NetError> {
        let params = (0..layout.param_count()).map(|_| rng.gen_range(-0.5..=0.5)).collect();
        Self::from_flat(layout, params)
    }

    /// Inverse of [`MlpModel::flatten`].
    pub fn from_flat(layout: Layout, params: Vec<f64>) -> Result<Self, NetError> {
        if layout.n_in == 0 || layout.n_hidden == 0 || layout.n_out == 0 {
            return Err(NetError::Shape(format!("layer widths must be positive, got {layout}")));
        }
        if params.len() != layout.param_count() {
            return Err(NetError::Shape(format!(
                "layout {layout} needs {} parameters, got {}",
                layout.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(NetError::Parameter("non-finite parameter".into()));
        }
        Ok(Self { layout, params })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.params.clone()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn w1(&self) -> &[f64] {
        let [w1, b1, _, _] = self.layout.offsets();
        &self.params[w1..b1]
    }

    pub fn b1(&self) -> &[f64] {
        let [_, b1, w2, _] = self.layout.offsets();
        &self.params[b1..w2]
    }

    pub fn w2(&self) -> &[f64] {
        let [_, _, w2, b2] = self.layout.offsets();
        &self.params[w2..b2]
    }

    pub fn b2(&self) -> &[f64] {
        let [_, _, _, b2] = self.layout.offsets();
        &self.params[b2..]
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NetError> {
        if x.len() != self.layout.n_in {
            return Err(NetError::Shape(format!("input length {} but model expects {}", x.len(), self.layout.n_in)));
        }
        Ok(())
    }

    fn check_data(&self, data: &[LabeledSample]) -> Result<(), NetError> {
        if data.is_empty() {
            return Err(NetError::EmptyData);
        }
        for (i, s) in data.iter().enumerate() {
            if s.features.len() != self.layout.n_in {
                return Err(NetError::Shape(format!(
                    "sample {i} has {} features, model expects {}",
                    s.features.len(),
                    self.layout.n_in
                )));
            }
            if s.label >= self.layout.n_out {
                return Err(NetError::Shape(format!("sample {i} label {} >= {}", s.label, self.layout.n_out)));
            }
        }
        Ok(())
    }

    fn hidden_into(&self, x: &[f64], h: &mut [f64]) {
        let n_in = self.layout.n_in;
        let (w1, b1) = (self.w1(), self.b1());
        for (j, hj) in h.iter_mut().enumerate() {
            let row = &w1[j * n_in..(j + 1) * n_in];
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b1[j];
            *hj = sigmoid(z);
        }
    }

    fn output_into(&self, h: &[f64], y: &mut [f64]) {
        let n_h = self.layout.n_hidden;
        let (w2, b2) = (self.w2(), self.b2());
        for (k, yk) in y.iter_mut().enumerate() {
            let row = &w2[k * n_h..(k + 1) * n_h];
            let z: f64 = row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>() + b2[k];
            *yk = sigmoid(z);
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NetError> {
        self.check_input(x)?;
        let mut h = vec![0.0; self.layout.n_hidden];
        let mut y = vec![0.0; self.layout.n_out];
        self.hidden_into(x, &mut h);
        self.output_into(&h, &mut y);
        Ok(y)
    }

    /// Index of the largest output; the lowest index wins ties.
    pub fn predict(&self, x: &[f64]) -> Result<usize, NetError> {
        Ok(argmax(&self.forward(x)?))
    }

    pub fn loss(&self, data: &[LabeledSample]) -> Result<f64, NetError> {
        self.check_data(data)?;
        let partial: Vec<f64> = data
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut h = vec![0.0; self.layout.n_hidden];
                let mut y = vec![0.0; self.layout.n_out];
                chunk
                    .iter()
                    .map(|s| {
                        self.hidden_into(&s.features, &mut h);
                        self.output_into(&h, &mut y);
                        sample_error(&y, s.label)
                    })
                    .sum::<f64>()
            })
            .collect();
        Ok(partial.iter().sum())
    }

    /// Gradient of [`MlpModel::loss`] in flat parameter order.
    pub fn gradient(&self, data: &[LabeledSample]) -> Result<Vec<f64>, NetError> {
        Ok(self.loss_and_gradient(data)?.1)
    }

    pub fn loss_and_gradient(&self, data: &[LabeledSample]) -> Result<(f64, Vec<f64>), NetError> {
        self.check_data(data)?;
        let n = self.layout.param_count();
        let partial: Vec<(f64, Vec<f64>)> = data
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut grad = vec![0.0; n];
                let mut loss = 0.0;
                let mut scratch = Scratch::new(self.layout);
                for s in chunk {
                    loss += self.accumulate(s, &mut grad, &mut scratch);
                }
                (loss, grad)
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; n];
        for (l, g) in partial {
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        Ok((loss, grad))
    }

    fn accumulate(&self, s: &LabeledSample, grad: &mut [f64], sc: &mut Scratch) -> f64 {
        let Layout { n_in, n_hidden, n_out } = self.layout;
        let [o_w1, o_b1, o_w2, o_b2] = self.layout.offsets();
        self.hidden_into(&s.features, &mut sc.h);
        self.output_into(&sc.h, &mut sc.y);
        let w2 = self.w2();

        let mut err = 0.0;
        for k in 0..n_out {
            let diff = sc.y[k] - target(k, s.label);
            err += diff * diff;
            sc.delta_out[k] = diff * sc.y[k] * (1.0 - sc.y[k]);
        }
        for j in 0..n_hidden {
            let back: f64 = (0..n_out).map(|k| w2[k * n_hidden + j] * sc.delta_out[k]).sum();
            sc.delta_hidden[j] = back * sc.h[j] * (1.0 - sc.h[j]);
        }
        for k in 0..n_out {
            let d = sc.delta_out[k];
            let row = &mut grad[o_w2 + k * n_hidden..o_w2 + (k + 1) * n_hidden];
            row.iter_mut().zip(&sc.h).for_each(|(g, hj)| *g += d * hj);
            grad[o_b2 + k] += d;
        }
        for j in 0..n_hidden {
            let d = sc.delta_hidden[j];
            let row = &mut grad[o_w1 + j * n_in..o_w1 + (j + 1) * n_in];
            row.iter_mut().zip(&s.features).for_each(|(g, x)| *g += d * x);
            grad[o_b1 + j] += d;
        }
        0.5 * err
    }
}

struct Scratch {
    h: Vec<f64>,
    y: Vec<f64>,
    delta_out: Vec<f64>,
    delta_hidden: Vec<f64>,
}

impl Scratch {
    fn new(l: Layout) -> Self {
        Self {
            h: vec![0.0; l.n_hidden],
            y: vec![0.0; l.n_out],
            delta_out: vec![0.0; l.n_out],
            delta_hidden: vec![0.0; l.n_hidden],
        }
    }
}

#[inline]
fn target(k: usize, label: usize) -> f64 {
    if k == label {
        TARGET_HIGH
    } else {
        TARGET_LOW
    }
}

fn sample_error(y: &[f64], label: usize) -> f64 {
    0.5 * y.iter().enumerate().map(|(k, &v)| (v - target(k, label)).powi(2)).sum::<f64>()
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Everything besides the weights a model file can carry so that a saved
/// model is usable on its own.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelMeta {
    /// Grid side used for feature extraction.
    pub k: Option<usize>,
    /// Normalization half-range.
    pub factor: Option<f64>,
    pub class_names: Vec<String>,
}

/// Text serialization:
///
/// ```text
/// gczone-mlp 1
/// layout <n_in> <n_hidden> <n_out>
/// k <side>                 (optional)
/// factor <half-range>      (optional)
/// classes <name> ...       (optional)
/// params <count>
/// <17 significant digit values, whitespace separated>
/// ```
pub fn serialize_model(model: &MlpModel, meta: &ModelMeta) -> String {
    let l = model.layout;
    let mut s = format!("{FORMAT_MAGIC} {FORMAT_VERSION}\nlayout {} {} {}\n", l.n_in, l.n_hidden, l.n_out);
    if let Some(k) = meta.k {
        writeln!(s, "k {k}").unwrap();
    }
    if let Some(f) = meta.factor {
        writeln!(s, "factor {f:.16e}").unwrap();
    }
    if !meta.class_names.is_empty() {
        writeln!(s, "classes {}", meta.class_names.join(" ")).unwrap();
    }
    writeln!(s, "params {}", model.params.len()).unwrap();
    for chunk in model.params.chunks(6) {
        let line: Vec<String> = chunk.iter().map(|p| format!("{p:.16e}")).collect();
        writeln!(s, "{}", line.join(" ")).unwrap();
    }
    s
}

fn format_err(line: usize, message: impl Into<String>) -> NetError {
    NetError::Format { line, message: message.into() }
}

pub fn deserialize_model(text: &str) -> Result<(MlpModel, ModelMeta), NetError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (ln, header) = lines.next().ok_or_else(|| format_err(1, "empty model file"))?;
    let version = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
        [magic, v] if *magic == FORMAT_MAGIC => v.parse::<u32>().map_err(|_| format_err(ln, "bad version"))?,
        _ => return Err(format_err(ln, format!("expected '{FORMAT_MAGIC} <version>' header"))),
    };
    if version != FORMAT_VERSION {
        return Err(format_err(ln, format!("unsupported version {version}")));
    }

    let mut layout = None;
    let mut meta = ModelMeta::default();
    let mut count = None;
    for (ln, line) in lines.by_ref() {
        let mut parts = line.split_whitespace();
        let Some(key) = parts.next() else { continue };
        let rest: Vec<&str> = parts.collect();
        let num = |s: &str| s.parse::<usize>().map_err(|_| format_err(ln, format!("bad integer '{s}'")));
        match (key, rest.as_slice()) {
            ("layout", [a, b, c]) => layout = Some(Layout::new(num(a)?, num(b)?, num(c)?)),
            ("k", [k]) => meta.k = Some(num(k)?),
            ("factor", [f]) => meta.factor = Some(f.parse().map_err(|_| format_err(ln, "bad factor"))?),
            ("classes", names) => meta.class_names = names.iter().map(|s| s.to_string()).collect(),
            ("params", [n]) => {
                count = Some(num(n)?);
                break;
            }
            _ => return Err(format_err(ln, format!("unexpected line '{line}'"))),
        }
    }
    let layout = layout.ok_or_else(|| format_err(0, "missing layout line"))?;
    let count = count.ok_or_else(|| format_err(0, "missing params line"))?;
    let mut params = Vec::with_capacity(count);
    for (ln, line) in lines {
        for tok in line.split_whitespace() {
            params.push(tok.parse::<f64>().map_err(|_| format_err(ln, format!("bad number '{tok}'")))?);
        }
    }
    if params.len() != count {
        return Err(format_err(0, format!("declared {count} parameters, found {}", params.len())));
    }
    Ok((MlpModel::from_flat(layout, params)?, meta))
}

pub fn save_model(model: &MlpModel, meta: &ModelMeta, path: impl AsRef<Path>) -> Result<(), NetError> {
    let path = path.as_ref();
    fs::write(path, serialize_model(model, meta)).map_err(|source| NetError::Io { path: path.display().to_string(), source })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(MlpModel, ModelMeta), NetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| NetError::Io { path: path.display().to_string(), source })?;
    deserialize_model(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_case(seed: u64, layout: Layout, n: usize) -> (MlpModel, Vec<LabeledSample>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = MlpModel::random(layout, &mut rng).unwrap();
        let data = (0..n)
            .map(|_| {
                LabeledSample::new(
                    (0..layout.n_in).map(|_| rng.gen_range(0.0..1.0)).collect(),
                    rng.gen_range(0..layout.n_out),
                )
            })
            .collect();
        (m, data)
    }

    // Straight-line re-implementation used as a forward oracle.
    fn forward_oracle(m: &MlpModel, x: &[f64]) -> Vec<f64> {
        let l = m.layout();
        let mut h = Vec::new();
        for j in 0..l.n_hidden {
            let mut z = m.b1()[j];
            for i in 0..l.n_in {
                z += m.w1()[j * l.n_in + i] * x[i];
            }
            h.push(1.0 / (1.0 + (-z).exp()));
        }
        let mut y = Vec::new();
        for k in 0..l.n_out {
            let mut z = m.b2()[k];
            for j in 0..l.n_hidden {
                z += m.w2()[k * l.n_hidden + j] * h[j];
            }
            y.push(1.0 / (1.0 + (-z).exp()));
        }
        y
    }

    #[test]
    fn zero_model_outputs_half() {
        let m = MlpModel::zeros(Layout::new(9, 9, 10)).unwrap();
        let y = m.forward(&[0.3; 9]).unwrap();
        assert_eq!(y, vec![0.5; 10]);
        assert!(matches!(m.forward(&[0.0; 8]), Err(NetError::Shape(_))));
    }

    #[test]
    fn forward_matches_oracle() {
        for seed in 0..10 {
            let (m, data) = random_case(seed, Layout::new(7, 5, 4), 5);
            for s in &data {
                let a = m.forward(&s.features).unwrap();
                let b = forward_oracle(&m, &s.features);
                for (x, y) in a.iter().zip(&b) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn loss_examples() {
        let m = MlpModel::zeros(Layout::new(3, 2, 10)).unwrap();
        let data = vec![LabeledSample::new(vec![0.1, 0.2, 0.3], 0)];
        let expected = 0.5 * ((0.5f64 - 0.9).powi(2) + 9.0 * (0.5f64 - 0.1).powi(2));
        assert!((m.loss(&data).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.8).abs() < 1e-12);
        assert!(matches!(m.loss(&[]), Err(NetError::EmptyData)));
        let bad = vec![LabeledSample::new(vec![0.0; 3], 10)];
        assert!(matches!(m.loss(&bad), Err(NetError::Shape(_))));
    }

    #[test]
    fn loss_is_order_invariant() {
        let (m, mut data) = random_case(4, Layout::new(4, 3, 3), 40);
        let a = m.loss(&data).unwrap();
        data.reverse();
        assert!((a - m.loss(&data).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_gradient() {
        // Output biases at logit(0.9)/logit(0.1) with zero weights reproduce the
        // targets of class 0 exactly.
        let layout = Layout::new(2, 2, 3);
        let mut p = vec![0.0; layout.param_count()];
        let b2 = layout.offsets()[3];
        let logit = |t: f64| (t / (1.0 - t)).ln();
        p[b2] = logit(0.9);
        p[b2 + 1] = logit(0.1);
        p[b2 + 2] = logit(0.1);
        let m = MlpModel::from_flat(layout, p).unwrap();
        let data = vec![LabeledSample::new(vec![0.2, 0.7], 0)];
        let (loss, grad) = m.loss_and_gradient(&data).unwrap();
        assert!(loss < 1e-30);
        assert!(grad.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn gradient_matches_central_differences() {
        for seed in 0..5 {
            let (m, data) = random_case(100 + seed, Layout::new(6, 4, 3), 8);
            let g = m.gradient(&data).unwrap();
            let base = m.flatten();
            let h = 1e-5;
            let mut worst: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for i in 0..base.len() {
                let mut p = base.clone();
                p[i] += h;
                let fp = MlpModel::from_flat(m.layout(), p.clone()).unwrap().loss(&data).unwrap();
                p[i] -= 2.0 * h;
                let fm = MlpModel::from_flat(m.layout(), p).unwrap().loss(&data).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                worst = worst.max((fd - g[i]).abs());
                scale = scale.max(fd.abs());
            }
            assert!(worst / (1.0 + scale) < 1e-5, "seed {seed}: {worst}");
        }
    }

    #[test]
    fn gradient_is_linear_in_dataset() {
        let (m, data) = random_case(9, Layout::new(5, 4, 3), 50);
        let g1 = m.gradient(&data).unwrap();
        let doubled: Vec<_> = data.iter().chain(&data).cloned().collect();
        let g2 = m.gradient(&doubled).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn predict_examples() {
        let mut out = vec![0.1; 10];
        out[1] = 0.9;
        assert_eq!(argmax(&out), 1);
        assert_eq!(argmax(&[0.5; 10]), 0);
        let m = MlpModel::zeros(Layout::new(2, 2, 4)).unwrap();
        assert_eq!(m.predict(&[1.0, 2.0]).unwrap(), 0);
    }

    proptest! {
        #[test]
        fn predict_agrees_with_argmax_oracle(seed in 0u64..1000) {
            let (m, data) = random_case(seed, Layout::new(5, 6, 7), 3);
            for s in &data {
                let y = m.forward(&s.features).unwrap();
                prop_assert!(y.iter().all(|&v| v > 0.0 && v < 1.0));
                let oracle = (0..y.len()).fold(0, |b, i| if y[i] > y[b] { i } else { b });
                prop_assert_eq!(m.predict(&s.features).unwrap(), oracle);
                // Strictly monotone transforms keep the argmax.
                let t: Vec<f64> = y.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
                prop_assert_eq!(argmax(&t), oracle);
            }
        }

        #[test]
        fn flatten_round_trips(seed in 0u64..1000) {
            let (m, _) = random_case(seed, Layout::new(3, 4, 2), 0);
            prop_assert_eq!(MlpModel::from_flat(m.layout(), m.flatten()).unwrap(), m);
        }

        #[test]
        fn serialization_round_trips(seed in 0u64..200, scale in -300i32..300) {
            let (m, _) = random_case(seed, Layout::new(4, 3, 5), 0);
            let p: Vec<f64> = m.flatten().iter().map(|v| v * 10f64.powi(scale / 10)).collect();
            let m = MlpModel::from_flat(m.layout(), p).unwrap();
            let meta = ModelMeta { k: Some(4), factor: Some(30.0), class_names: vec!["A".into(), "B".into()] };
            let (back, meta2) = deserialize_model(&serialize_model(&m, &meta)).unwrap();
            prop_assert_eq!(back.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            m.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(meta2, meta);
        }
    }

    #[test]
    fn malformed_model_files() {
        assert!(deserialize_model("").is_err());
        assert!(deserialize_model("gczone-mlp 2\nlayout 1 1 1\nparams 4\n0 0 0 0\n").is_err());
        assert!(deserialize_model("gczone-mlp 1\nlayout 1 1 1\nparams 4\n0 0 0\n").is_err());
        assert!(deserialize_model("gczone-mlp 1\nlayout 1 1 1\nparams 4\n0 0 x 0\n").is_err());
        let (m, meta) = deserialize_model("gczone-mlp 1\nlayout 1 1 1\nparams 4\n1 2 3 4\n").unwrap();
        assert_eq!(m.flatten(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(meta, ModelMeta::default());
    }
}
