//! Synthetic handwriting: stroke templates in the unit square, randomly
//! deformed and rendered as anti-aliased 16-level grayscale glyphs with
//! bright ink on a dark, noisy background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, Sample, SampleSource, Split};
use super::{mix_seed, HarnessError};
use crate::imagecore::{binarize_with, BinarizeOptions, GrayImage};

const MAX_ATTEMPTS: usize = 10;

/// Random deformation applied to each rendered instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    /// Maximum shift of the glyph centre, as a fraction of the canvas side.
    pub translate: f64,
    /// Maximum relative change of size, per axis.
    pub scale: f64,
    /// Maximum rotation in degrees.
    pub rotate_deg: f64,
    /// Maximum independent displacement of each template vertex (unit square).
    pub point_noise: f64,
    /// Stroke width range in pixels.
    pub stroke_width: (f64, f64),
    /// Background noise amplitude in gray levels.
    pub background_noise: u32,
}

impl Jitter {
    pub fn none() -> Self {
        Self { translate: 0.0, scale: 0.0, rotate_deg: 0.0, point_noise: 0.0, stroke_width: (3.0, 3.0), background_noise: 0 }
    }

    fn damped(&self, by: f64) -> Self {
        Self {
            translate: self.translate * by,
            scale: self.scale * by,
            rotate_deg: self.rotate_deg * by,
            point_noise: self.point_noise * by,
            ..*self
        }
    }
}

impl Default for Jitter {
    fn default() -> Self {
        Self {
            translate: 0.06,
            scale: 0.12,
            rotate_deg: 6.0,
            point_noise: 0.035,
            stroke_width: (2.5, 3.75),
            background_noise: 4,
        }
    }
}

pub type Stroke = Vec<(f64, f64)>;

/// Template of one character class; `x` grows rightward and `y` downward.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphSpec {
    pub class_id: usize,
    pub name: String,
    pub strokes: Vec<Stroke>,
    pub jitter: Jitter,
    /// Mixed with the generation seed so classes draw independent noise.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Canvas {
    pub size: usize,
    pub maxval: u32,
}

impl Default for Canvas {
    fn default() -> Self {
        Self { size: 40, maxval: 15 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self { train: 25, test: 5 }
    }
}

/// Polyline approximation of an elliptical arc; angles in degrees,
/// measured clockwise on screen from the positive x axis.
pub fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from_deg: f64, to_deg: f64, segments: usize) -> Stroke {
    (0..=segments)
        .map(|i| {
            let t = (from_deg + (to_deg - from_deg) * i as f64 / segments as f64).to_radians();
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

fn spec(class_id: usize, name: &str, strokes: Vec<Stroke>) -> GlyphSpec {
    GlyphSpec { class_id, name: name.to_string(), strokes, jitter: Jitter::default(), seed: class_id as u64 }
}

/// Ten built-in letters: A C F K L N O S V Z.
pub fn builtin_glyphs() -> Vec<GlyphSpec> {
    let s_curve = vec![
        (0.80, 0.16),
        (0.66, 0.06),
        (0.45, 0.04),
        (0.26, 0.10),
        (0.20, 0.26),
        (0.32, 0.41),
        (0.52, 0.49),
        (0.72, 0.58),
        (0.82, 0.74),
        (0.74, 0.90),
        (0.52, 0.97),
        (0.32, 0.94),
        (0.18, 0.84),
    ];
    let templates: Vec<(&str, Vec<Stroke>)> = vec![
        ("A", vec![vec![(0.12, 0.96), (0.50, 0.04), (0.88, 0.96)], vec![(0.30, 0.62), (0.72, 0.58)]]),
        ("C", vec![arc(0.56, 0.5, 0.40, 0.46, -50.0, -310.0, 24)]),
        (
            "F",
            vec![
                vec![(0.26, 0.06), (0.20, 0.96)],
                vec![(0.26, 0.06), (0.84, 0.00)],
                vec![(0.23, 0.50), (0.68, 0.42)],
            ],
        ),
        ("K", vec![vec![(0.20, 0.04), (0.20, 0.96)], vec![(0.82, 0.04), (0.22, 0.56), (0.84, 0.96)]]),
        ("L", vec![vec![(0.26, 0.04), (0.20, 0.92)], vec![(0.20, 0.92), (0.84, 0.82)]]),
        ("N", vec![vec![(0.18, 0.96), (0.20, 0.04), (0.80, 0.96), (0.82, 0.04)]]),
        ("O", vec![arc(0.5, 0.5, 0.38, 0.46, 0.0, 360.0, 32)]),
        ("S", vec![s_curve]),
        ("V", vec![vec![(0.12, 0.04), (0.50, 0.96), (0.88, 0.04)]]),
        ("Z", vec![vec![(0.18, 0.08), (0.82, 0.04), (0.18, 0.94), (0.84, 0.90)]]),
    ];
    templates.into_iter().enumerate().map(|(i, (n, s))| spec(i, n, s)).collect()
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len_sq).clamp(0.0, 1.0) };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Renders strokes given in canvas pixel coordinates.
pub fn render_strokes(strokes: &[Stroke], width: f64, canvas: Canvas) -> GrayImage {
    let n = canvas.size;
    let mut img = GrayImage::blank(n, n, canvas.maxval);
    let half = width / 2.0;
    for r in 0..n {
        for c in 0..n {
            let p = (c as f64 + 0.5, r as f64 + 0.5);
            let d = strokes
                .iter()
                .flat_map(|s| s.windows(2).map(move |w| segment_distance(p, w[0], w[1])))
                .fold(f64::INFINITY, f64::min);
            let coverage = (half + 0.5 - d).clamp(0.0, 1.0);
            img.set(r, c, (coverage * canvas.maxval as f64).round() as u32);
        }
    }
    img
}

fn draw_instance<R: Rng>(spec: &GlyphSpec, jitter: &Jitter, canvas: Canvas, rng: &mut R) -> GrayImage {
    let mut sym = |m: f64| if m > 0.0 { rng.gen_range(-m..=m) } else { 0.0 };
    let sx = 1.0 + sym(jitter.scale);
    let sy = 1.0 + sym(jitter.scale);
    let theta = sym(jitter.rotate_deg).to_radians();
    let tx = sym(jitter.translate);
    let ty = sym(jitter.translate);
    let (lo, hi) = jitter.stroke_width;
    let width = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let (sin, cos) = theta.sin_cos();
    let margin = 0.15 * canvas.size as f64;
    let span = canvas.size as f64 - 2.0 * margin;

    let strokes: Vec<Stroke> = spec
        .strokes
        .iter()
        .map(|stroke| {
            stroke
                .iter()
                .map(|&(x, y)| {
                    let (nx, ny) = (jitter.point_noise, jitter.point_noise);
                    let (px, py) = (x - 0.5 + jitter_value(rng, nx), y - 0.5 + jitter_value(rng, ny));
                    let (px, py) = (px * sx, py * sy);
                    let (rx, ry) = (cos * px - sin * py, sin * px + cos * py);
                    (margin + (rx + 0.5 + tx) * span, margin + (ry + 0.5 + ty) * span)
                })
                .collect()
        })
        .collect();

    let mut img = render_strokes(&strokes, width, canvas);
    if jitter.background_noise > 0 {
        for r in 0..canvas.size {
            for c in 0..canvas.size {
                let v = img.get(r, c) + rng.gen_range(0..=jitter.background_noise);
                img.set(r, c, v);
            }
        }
    }
    img
}

fn jitter_value<R: Rng>(rng: &mut R, m: f64) -> f64 {
    if m > 0.0 {
        rng.gen_range(-m..=m)
    } else {
        0.0
    }
}

/// Renders one instance, damping the jitter and retrying when the glyph
/// leaves no ink on the canvas.
pub fn render_glyph<R: Rng>(spec: &GlyphSpec, canvas: Canvas, rng: &mut R) -> Result<GrayImage, HarnessError> {
    let mut jitter = spec.jitter;
    for _ in 0..MAX_ATTEMPTS {
        let img = draw_instance(spec, &jitter, canvas, rng);
        if binarize_with(&img, &BinarizeOptions::default()).ink_count() > 0 {
            return Ok(img);
        }
        jitter = jitter.damped(0.5);
    }
    Err(HarnessError::Synth(format!("glyph '{}' fell off the canvas {MAX_ATTEMPTS} times", spec.name)))
}

/// Generates `counts.train + counts.test` instances per spec. Every
/// instance has its own generator seeded from `(seed, class seed, split,
/// index)`, so output does not depend on generation order.
pub fn synth_generate(specs: &[GlyphSpec], counts: SplitCounts, canvas: Canvas, seed: u64) -> Result<Dataset, HarnessError> {
    if specs.len() < 2 {
        return Err(HarnessError::Synth("at least two classes are required".into()));
    }
    if counts.train == 0 && counts.test == 0 {
        return Err(HarnessError::Synth("per-class count must be at least 1".into()));
    }
    if let Some(s) = specs.iter().find(|s| s.strokes.is_empty() || s.strokes.iter().any(|st| st.is_empty())) {
        return Err(HarnessError::Synth(format!("template '{}' is empty", s.name)));
    }
    let mut samples = Vec::new();
    for (split, n) in [(Split::Train, counts.train), (Split::Test, counts.test)] {
        for (label, spec) in specs.iter().enumerate() {
            for i in 0..n {
                let s = mix_seed(&[seed, spec.seed, split as u64, i as u64]);
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                samples.push(Sample {
                    id: format!("synth/{}/{}/{i:04}", split.dir_name(), spec.name),
                    source: SampleSource::Raster(render_glyph(spec, canvas, &mut rng)?),
                    label,
                    split,
                });
            }
        }
    }
    Ok(Dataset { class_names: specs.iter().map(|s| s.name.clone()).collect(), samples, warnings: vec![] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_set_has_ten_distinct_letters() {
        let g = builtin_glyphs();
        assert_eq!(g.len(), 10);
        let mut names: Vec<_> = g.iter().map(|s| s.name.clone()).collect();
        names.dedup();
        assert_eq!(names.len(), 10);
        for name in ["F", "L", "O", "Z"] {
            assert!(names.iter().any(|n| n == name));
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let specs = builtin_glyphs();
        let counts = SplitCounts { train: 2, test: 1 };
        let a = synth_generate(&specs, counts, Canvas::default(), 7).unwrap();
        let b = synth_generate(&specs, counts, Canvas::default(), 7).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&specs, counts, Canvas::default(), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn default_sized_split() {
        let ds = synth_generate(&builtin_glyphs(), SplitCounts::default(), Canvas::default(), 1).unwrap();
        assert_eq!(ds.count(Split::Train), 250);
        assert_eq!(ds.count(Split::Test), 50);
    }

    #[test]
    fn zero_jitter_reproduces_template() {
        let specs: Vec<GlyphSpec> = builtin_glyphs()
            .into_iter()
            .take(3)
            .map(|mut s| {
                s.jitter = Jitter::none();
                s
            })
            .collect();
        let ds = synth_generate(&specs, SplitCounts { train: 4, test: 2 }, Canvas::default(), 99).unwrap();
        for s in &ds.samples {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let template = render_glyph(&specs[s.label], Canvas::default(), &mut rng).unwrap();
            assert_eq!(s.image().unwrap().into_owned(), template);
        }
    }

    #[test]
    fn rendered_glyphs_have_ink_and_stay_in_range() {
        let ds = synth_generate(&builtin_glyphs(), SplitCounts { train: 3, test: 0 }, Canvas::default(), 3).unwrap();
        for s in &ds.samples {
            let img = s.image().unwrap();
            assert!(img.pixels().iter().all(|&p| p <= 15));
            assert!(binarize_with(&img, &BinarizeOptions::default()).ink_count() > 20);
        }
    }

    #[test]
    fn off_canvas_glyph_fails_after_retries() {
        let mut s = builtin_glyphs().remove(0);
        // Always far outside the canvas, even after damping.
        s.strokes = vec![vec![(50.0, 50.0), (51.0, 51.0)]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(render_glyph(&s, Canvas::default(), &mut rng), Err(HarnessError::Synth(_))));
    }

    #[test]
    fn rejects_degenerate_requests() {
        let one = vec![builtin_glyphs().remove(0)];
        assert!(synth_generate(&one, SplitCounts::default(), Canvas::default(), 0).is_err());
        assert!(synth_generate(&builtin_glyphs(), SplitCounts { train: 0, test: 0 }, Canvas::default(), 0).is_err());
    }
}
