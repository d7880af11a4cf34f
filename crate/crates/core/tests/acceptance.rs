//! Acceptance checks. Each prints one PASS/FAIL line; the process exits
//! non-zero if any gated check fails.

use std::collections::VecDeque;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gczone::cgtrain::{minimize_with, BetaVariant, LineSearchError, LineSearchResult, Objective, StepRule, StopReason, TrainConfig};
use gczone::features::{csv_header, csv_row, extract_features, gc_of_segment, Segment};
use gczone::harness::{builtin_glyphs, run_experiment, run_pipeline, synth_generate, ExperimentConfig, PipelineConfig, RunConfig};
use gczone::imagecore::{decode_pgm, encode_pgm, load_pgm, save_pgm, BinaryImage, GrayImage, PgmFormat};
use gczone::neuralnet::{deserialize_model, serialize_model, LabeledSample, Layout, MlpModel, ModelMeta};
use gczone::thinning::thin;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

const FIXTURES: [&str; 5] = ["ring", "zed", "vee", "hook", "cross"];

// ---------------------------------------------------------------- gradient

fn fd_gradient(model: &MlpModel, data: &[LabeledSample], h: f64) -> Vec<f64> {
    let layout = model.layout();
    let base = model.flatten();
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] = base[i] + h;
            let up = MlpModel::from_flat(layout, p.clone()).unwrap().loss(data).unwrap();
            p[i] = base[i] - h;
            let down = MlpModel::from_flat(layout, p).unwrap().loss(data).unwrap();
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for case in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + case);
        let layout = if case == 0 {
            Layout::new(25, 25, 10)
        } else {
            Layout::new(rng.gen_range(1..=25), rng.gen_range(1..=25), rng.gen_range(2..=10))
        };
        let model = MlpModel::random(layout, &mut rng).unwrap();
        let n = rng.gen_range(1..=20);
        let data: Vec<LabeledSample> = (0..n)
            .map(|_| LabeledSample::new((0..layout.n_in).map(|_| rng.gen::<f64>()).collect(), rng.gen_range(0..layout.n_out)))
            .collect();
        let analytic = model.gradient(&data).unwrap();
        let numeric = fd_gradient(&model, &data, 1e-5);
        let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = numeric.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
        worst = worst.max(diff / scale);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst < 1e-5 && secs < 10.0, format!("worst relative inf-norm error {worst:.2e}, {secs:.2}s"))
}

// ---------------------------------------------------------------- CG

/// `f(x) = x'Ax/2 - b'x` with dense symmetric positive definite `A`.
struct Quadratic {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl Quadratic {
    fn mul(&self, x: &[f64]) -> Vec<f64> {
        self.a.iter().map(|row| row.iter().zip(x).map(|(a, x)| a * x).sum()).collect()
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }
    fn value(&mut self, x: &[f64]) -> f64 {
        let ax = self.mul(x);
        x.iter().zip(&ax).zip(&self.b).map(|((x, ax), b)| 0.5 * x * ax - b * x).sum()
    }
    fn value_and_gradient(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        let ax = self.mul(x);
        for i in 0..x.len() {
            grad[i] = ax[i] - self.b[i];
        }
        self.value(x)
    }
}

struct ExactStep(Vec<Vec<f64>>);

impl StepRule for ExactStep {
    fn step(&mut self, obj: &mut dyn Objective, x: &[f64], p: &[f64], _value: f64, slope: f64, _initial: f64) -> Result<LineSearchResult, LineSearchError> {
        let ap: Vec<f64> = self.0.iter().map(|row| row.iter().zip(p).map(|(a, p)| a * p).sum()).collect();
        let curvature: f64 = p.iter().zip(&ap).map(|(p, q)| p * q).sum();
        let step = -slope / curvature;
        let probe: Vec<f64> = x.iter().zip(p).map(|(x, p)| x + step * p).collect();
        Ok(LineSearchResult { step, value: obj.value(&probe), evaluations: 1 })
    }
}

/// Random rotation of `diag(1 .. 100)`.
fn conditioned_quadratic(rng: &mut ChaCha8Rng, n: usize) -> Quadratic {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            q.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let eig: Vec<f64> = (0..n).map(|i| 100f64.powf(i as f64 / (n - 1) as f64)).collect();
    let a = (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|m| q[m][i] * eig[m] * q[m][j]).sum()).collect())
        .collect();
    let b = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Quadratic { a, b }
}

fn cg_behaviour() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut quad = conditioned_quadratic(&mut rng, 10);
    let x0 = vec![0.0; 10];
    let run = |quad: &mut Quadratic, beta: BetaVariant, max_iterations: usize| {
        let cfg = TrainConfig { max_iterations, grad_tolerance: 1e-6, beta, ..TrainConfig::default() };
        let mut first: Option<(f64, bool)> = None;
        let mut rule = ExactStep(quad.a.clone());
        let min = minimize_with(quad, &x0, &cfg, &mut rule, |v| {
            if v.iteration == 0 {
                let is_neg_grad = v.direction.iter().zip(v.gradient).all(|(p, g)| *p == -*g);
                first = Some((v.beta, is_neg_grad));
            }
        })
        .unwrap();
        (min.trace, first)
    };
    let (cg, first) = run(&mut quad, BetaVariant::PolakRibierePlus, 10);
    let (sd, _) = run(&mut quad, BetaVariant::SteepestDescent, 10_000);
    let cg_ok = cg.stop == StopReason::GradientTolerance && cg.iterations() <= 10;
    let sd_iters = if sd.stop == StopReason::GradientTolerance { sd.iterations() } else { usize::MAX };
    let first_ok = first == Some((0.0, true)) && cg.records[0].beta == 0.0;
    outcome(
        cg_ok && cg.iterations() < sd_iters && first_ok,
        format!(
            "CG {} iterations (|g| {:.1e}), steepest descent {} iterations, first beta {:?}",
            cg.iterations(),
            cg.final_grad_norm,
            sd.iterations(),
            first.map(|f| f.0)
        ),
    )
}

// ---------------------------------------------------------------- thinning

fn components(img: &BinaryImage) -> usize {
    let (w, h) = (img.width(), img.height());
    let mut seen = vec![false; w * h];
    let mut count = 0;
    for start in 0..w * h {
        if seen[start] || img.pixels()[start] == 0 {
            continue;
        }
        count += 1;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let j = nr as usize * w + nc as usize;
                    if !seen[j] && img.pixels()[j] == 1 {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    count
}

// Deletion rule written out directly on the 3x3 window.
fn removable(img: &BinaryImage, r: usize, c: usize) -> bool {
    let at = |dr: isize, dc: isize, rr: usize, cc: usize| img.get_or_zero(rr as isize + dr, cc as isize + dc);
    let ring = |rr: usize, cc: usize| -> [u8; 8] {
        [at(-1, 0, rr, cc), at(-1, -1, rr, cc), at(0, -1, rr, cc), at(1, -1, rr, cc), at(1, 0, rr, cc), at(1, 1, rr, cc), at(0, 1, rr, cc), at(-1, 1, rr, cc)]
    };
    let transitions = |p: [u8; 8]| (0..8).filter(|&i| p[i] == 0 && p[(i + 1) % 8] == 1).count();
    let zo_at = |dr: isize, dc: isize| {
        let (rr, cc) = (r as isize + dr, c as isize + dc);
        let p = [-1isize, -1, 0, 1, 1, 1, 0, -1]
            .iter()
            .zip([0isize, -1, -1, -1, 0, 1, 1, 1])
            .map(|(a, b)| img.get_or_zero(rr + a, cc + b))
            .collect::<Vec<u8>>();
        transitions(p.try_into().unwrap())
    };
    let p = ring(r, c);
    let nz: u8 = p.iter().sum();
    (2..=6).contains(&nz)
        && transitions(p) == 1
        && (p[0] * p[2] * p[6] == 0 || zo_at(-1, 0) != 1)
        && (p[0] * p[2] * p[4] == 0 || zo_at(0, -1) != 1)
}

fn paint(img: &mut BinaryImage, f: impl Fn(f64, f64) -> bool) {
    for r in 0..img.height() {
        for c in 0..img.width() {
            if f(r as f64, c as f64) {
                img.set(r, c, true);
            }
        }
    }
}

fn thinning_corpus() -> Vec<BinaryImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut out = Vec::new();
    for i in 0..15 {
        // straight strokes of varying angle and width
        let mut img = BinaryImage::blank(60, 60);
        let angle = i as f64 * 12.0f64.to_radians();
        let (dx, dy) = (angle.cos(), angle.sin());
        let width = 1.0 + (i % 5) as f64;
        paint(&mut img, |r, c| {
            let (x, y) = (c - 30.0, r - 30.0);
            (x * dy - y * dx).abs() <= width / 2.0 && (x * dx + y * dy).abs() <= 25.0
        });
        out.push(img);
    }
    for i in 0..12 {
        let (h, w) = (rng.gen_range(2..40), rng.gen_range(2..40));
        let mut img = BinaryImage::blank(w + 4 + i, h + 3);
        paint(&mut img, |r, c| r >= 1.0 && r < 1.0 + h as f64 && c >= 2.0 && c < 2.0 + w as f64);
        out.push(img);
    }
    for i in 0..12 {
        let (outer, inner) = (8.0 + 2.0 * i as f64, 4.0 + 1.5 * i as f64);
        let n = (2.0 * outer) as usize + 5;
        let mut img = BinaryImage::blank(n, n);
        let m = n as f64 / 2.0;
        paint(&mut img, |r, c| {
            let d = ((r - m).powi(2) + (c - m).powi(2)).sqrt();
            d <= outer && d >= inner
        });
        out.push(img);
    }
    for _ in 0..16 {
        let mut img = BinaryImage::blank(50, 50);
        for _ in 0..rng.gen_range(1..5) {
            let (mut r, mut c) = (rng.gen_range(5..45) as f64, rng.gen_range(5..45) as f64);
            let radius = rng.gen_range(1.0..4.0);
            for _ in 0..rng.gen_range(20..120) {
                r = (r + rng.gen_range(-1.5..1.5)).clamp(0.0, 49.0);
                c = (c + rng.gen_range(-1.5..1.5)).clamp(0.0, 49.0);
                paint(&mut img, |y, x| (y - r).powi(2) + (x - c).powi(2) <= radius * radius);
            }
        }
        for _ in 0..40 {
            let (r, c) = (rng.gen_range(0..50), rng.gen_range(0..50));
            img.set(r, c, rng.gen_bool(0.5));
        }
        out.push(img);
    }
    out
}

fn thinning_properties() -> Outcome {
    let corpus = thinning_corpus();
    let start = Instant::now();
    let mut problems = Vec::new();
    for (i, img) in corpus.iter().enumerate() {
        let sk = thin(img);
        if sk.ink_positions().any(|(r, c)| removable(&sk, r, c)) {
            problems.push(format!("#{i} not a fixed point"));
        }
        if sk.ink_positions().any(|(r, c)| img.get(r, c) == 0) {
            problems.push(format!("#{i} added ink"));
        }
        let (a, b) = (components(img), components(&sk));
        if a != b {
            problems.push(format!("#{i} components {a} -> {b}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("{} glyphs, {secs:.2}s{}", corpus.len(), if problems.is_empty() { String::new() } else { format!(": {}", problems.join(", ")) });
    outcome(problems.is_empty() && corpus.len() >= 50 && secs < 5.0, detail)
}

// ---------------------------------------------------------------- gc

fn brute_gc(img: &BinaryImage, seg: &Segment) -> i64 {
    let rows: Vec<Option<i64>> = seg
        .rows
        .clone()
        .map(|r| seg.cols.clone().filter(|&c| img.get(r, c) == 1).min().map(|c| c as i64))
        .collect();
    rows.windows(2)
        .map(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => b - a,
            _ => 0,
        })
        .sum()
}

fn gc_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut mismatches = 0;
    let mut telescoped = 0;
    for _ in 0..200 {
        let (w, h) = (rng.gen_range(1..40), rng.gen_range(1..40));
        let density = rng.gen_range(0.0..0.6);
        let pixels = (0..w * h).map(|_| u8::from(rng.gen_bool(density))).collect();
        let mut img = BinaryImage::new(w, h, pixels).unwrap();
        let r0 = rng.gen_range(0..h);
        let r1 = rng.gen_range(r0 + 1..=h);
        let c0 = rng.gen_range(0..w);
        let c1 = rng.gen_range(c0 + 1..=w);
        let seg = Segment { rows: r0..r1, cols: c0..c1 };
        if gc_of_segment(&img, &seg) != brute_gc(&img, &seg) {
            mismatches += 1;
        }
        // Ink in every row: the sum telescopes to last minus first.
        let lefts: Vec<usize> = (r0..r1).map(|_| rng.gen_range(c0..c1)).collect();
        for (r, &l) in (r0..r1).zip(&lefts) {
            for c in c0..c1 {
                img.set(r, c, c >= l && rng.gen_bool(0.7) || c == l);
            }
        }
        let expect = *lefts.last().unwrap() as i64 - lefts[0] as i64;
        if gc_of_segment(&img, &seg) != expect {
            telescoped += 1;
        }
    }
    let mut bar_nonzero = 0;
    for (w, h, col, width) in [(100, 100, 40, 6), (37, 80, 3, 1), (20, 64, 10, 9)] {
        let mut gray = GrayImage::blank(w, h, 255);
        for r in 5..h - 5 {
            for c in col..col + width {
                gray.set(r, c, 255);
            }
        }
        for k in 1..=6 {
            let skeleton = gczone::harness::preprocess(&gray, &Default::default()).unwrap();
            let raw = extract_features(&skeleton, k).unwrap();
            bar_nonzero += raw.values().iter().filter(|v| **v != 0.0).count();
            let direct = extract_features(&BinaryImage::new(w, h, gray.pixels().iter().map(|&v| u8::from(v > 0)).collect()).unwrap(), k).unwrap();
            bar_nonzero += direct.values().iter().filter(|v| **v != 0.0).count();
        }
    }
    outcome(
        mismatches == 0 && telescoped == 0 && bar_nonzero == 0,
        format!("oracle mismatches {mismatches}/200, telescoping mismatches {telescoped}/200, non-zero vertical-bar features {bar_nonzero}"),
    )
}

// ---------------------------------------------------------------- experiment

fn synthetic_config(seed: u64, jobs: usize) -> (RunConfig, gczone::harness::Dataset) {
    let mut rc = RunConfig::default();
    rc.experiment.train.seed = seed;
    rc.experiment.jobs = jobs;
    rc.set("sides", "3,4,5").unwrap();
    let data = synth_generate(&builtin_glyphs(), rc.synth_counts, rc.canvas, seed).unwrap();
    (rc, data)
}

fn parallelism() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get()).min(6)
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let (rc, data) = synthetic_config(0, 1);
    assert_eq!(rc.experiment.sweep, ExperimentConfig::default_sweep());
    let report = run_experiment(&rc.experiment, &data).unwrap();
    let elapsed = start.elapsed();
    let (rc2, data2) = synthetic_config(0, parallelism());
    let again = run_experiment(&rc2.experiment, &data2).unwrap();
    let reproducible = report.same_outcome(&again);
    let cell = report.cell(4, 30.0).unwrap();
    let (train, test) = (cell.train_accuracy.unwrap_or(0.0), cell.test_accuracy.unwrap_or(0.0));
    let counts = (data.count(gczone::harness::Split::Train), data.count(gczone::harness::Split::Test));
    print!("{}", report.to_table());
    outcome(
        counts == (250, 50) && train >= 98.0 && test >= 90.0 && reproducible && elapsed < Duration::from_secs(120),
        format!(
            "size 16 +(30/60): train {train:.2}% test {test:.2}%, {} cells, reproducible {reproducible}, {:.1}s single-threaded",
            report.cells.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn trend() -> Outcome {
    let seeds = [1u64, 2, 3, 4, 5];
    let mut per_size = [0.0f64; 3];
    let mut counts = [0usize; 3];
    for &seed in &seeds {
        let (rc, data) = synthetic_config(seed, parallelism());
        let report = run_experiment(&rc.experiment, &data).unwrap();
        for c in &report.cells {
            let slot = c.k - 3;
            per_size[slot] += c.test_accuracy.unwrap_or(0.0);
            counts[slot] += 1;
        }
    }
    let means: Vec<f64> = per_size.iter().zip(counts).map(|(s, n)| s / n as f64).collect();
    outcome(
        means[1] >= means[2],
        format!("mean test accuracy over {} seeds: size 9 {:.2}%, size 16 {:.2}%, size 25 {:.2}%", seeds.len(), means[0], means[1], means[2]),
    )
}

// ---------------------------------------------------------------- formats

fn round_trips() -> Outcome {
    let mut problems = Vec::new();
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut images: Vec<GrayImage> = FIXTURES.iter().map(|n| load_pgm(fixtures().join(format!("{n}.pgm"))).unwrap()).collect();
    for maxval in [1u32, 15, 255, 256, 65535] {
        let (w, h) = (rng.gen_range(1..30), rng.gen_range(1..30));
        images.push(GrayImage::new(w, h, maxval, (0..w * h).map(|_| rng.gen_range(0..=maxval)).collect()).unwrap());
    }
    for (i, img) in images.iter().enumerate() {
        for fmt in [PgmFormat::Ascii, PgmFormat::Binary] {
            let bytes = encode_pgm(img, fmt).unwrap();
            let back = decode_pgm(&bytes).unwrap();
            if &back != img || encode_pgm(&back, fmt).unwrap() != bytes {
                problems.push(format!("image {i} {fmt:?}"));
            }
        }
        let path = dir.path().join(format!("{i}.pgm"));
        save_pgm(img, &path).unwrap();
        let first = fs::read(&path).unwrap();
        save_pgm(&load_pgm(&path).unwrap(), &path).unwrap();
        if fs::read(&path).unwrap() != first || &load_pgm(&path).unwrap() != img {
            problems.push(format!("image {i} file"));
        }
    }
    for case in 0..10 {
        let layout = Layout::new(rng.gen_range(1..26), rng.gen_range(1..26), rng.gen_range(1..11));
        let mut params: Vec<f64> = (0..layout.param_count()).map(|_| rng.gen_range(-50.0..50.0) * 10f64.powi(rng.gen_range(-30..30))).collect();
        params[0] = -0.0;
        let last = params.len() - 1;
        params[last] = f64::MIN_POSITIVE / 8.0;
        let model = MlpModel::from_flat(layout, params).unwrap();
        let meta = ModelMeta { k: Some(4), factor: Some(30.0), class_names: vec!["a".into(), "b".into()] };
        let text = serialize_model(&model, &meta);
        let (back, meta_back) = deserialize_model(&text).unwrap();
        let bits = |m: &MlpModel| m.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        if bits(&back) != bits(&model) || meta_back != meta || serialize_model(&back, &meta_back) != text {
            problems.push(format!("model {case}"));
        }
    }
    let mut golden = 0;
    for name in FIXTURES {
        let img = load_pgm(fixtures().join(format!("{name}.pgm"))).unwrap();
        for (k, factor) in [(3, 35.0), (4, 30.0), (5, 25.0)] {
            let v = run_pipeline(&img, &PipelineConfig { preprocess: Default::default(), k, factor }).unwrap();
            let produced = format!("{}\n{}\n", csv_header(k * k), csv_row(name, &v));
            let expected = fs::read_to_string(fixtures().join(format!("{name}.k{k}.csv"))).unwrap();
            if produced == expected {
                golden += 1;
            } else {
                problems.push(format!("{name} k={k} CSV"));
            }
        }
    }
    outcome(problems.is_empty(), format!("{} images, 10 models, {golden}/15 golden CSVs{}", images.len(), if problems.is_empty() { String::new() } else { format!("; failed: {}", problems.join(", ")) }))
}

fn main() -> ExitCode {
    let checks: [(&str, bool, fn() -> Outcome); 7] = [
        ("1 backprop gradient matches central differences", true, gradient_check),
        ("2 CG beats steepest descent on a quadratic", true, cg_behaviour),
        ("3 thinning fixed point, subset, connectivity", true, thinning_properties),
        ("4 gc against brute force, telescoping, vertical bars", true, gc_correctness),
        ("5 synthetic end-to-end experiment", true, end_to_end),
        ("6 size 16 at least as accurate as size 25 (soft)", false, trend),
        ("7 PGM/model round trips and golden features", true, round_trips),
    ];
    let mut failed = 0;
    for (name, gated, check) in checks {
        let o = check();
        let tag = match (o.pass, gated) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "FINDING",
        };
        println!("{tag} [{name}] {}", o.detail);
        if !o.pass && gated {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
