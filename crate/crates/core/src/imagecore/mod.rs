//! Raster types and the preprocessing stages that run before thinning:
//! threshold binarization, bounding-box extraction, cropping and affine
//! scaling to the canonical raster.
//!
//! Coordinates are `(row, col)` with rows growing downward and columns
//! growing rightward, both 0-based. In binary images `1` is ink.

mod pgm;

pub use pgm::{decode_pgm, encode_pgm, load_pgm, save_binary_pgm, save_pgm, PgmFormat};

use thiserror::Error;

/// Side length of the canonical raster every glyph is scaled to.
pub const CANONICAL_SIZE: usize = 100;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("PGM parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image has no ink pixels")]
    EmptyGlyph,
    #[error("out of range: {0}")]
    Range(String),
    #[error("invalid image: {0}")]
    Invalid(String),
}

/// Grayscale raster with an explicit maximum intensity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    maxval: u32,
    pixels: Vec<u32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, maxval: u32, pixels: Vec<u32>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Invalid(format!("zero dimension {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(ImageError::Invalid(format!(
                "expected {} pixels for {width}x{height}, got {}",
                width * height,
                pixels.len()
            )));
        }
        if maxval == 0 {
            return Err(ImageError::Invalid("maxval must be positive".into()));
        }
        if let Some(p) = pixels.iter().find(|&&p| p > maxval) {
            return Err(ImageError::Invalid(format!("pixel value {p} exceeds maxval {maxval}")));
        }
        Ok(Self { width, height, maxval, pixels })
    }

    /// All-zero image.
    pub fn blank(width: usize, height: usize, maxval: u32) -> Self {
        assert!(width > 0 && height > 0 && maxval > 0);
        Self { width, height, maxval, pixels: vec![0; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn maxval(&self) -> u32 {
        self.maxval
    }

    pub fn pixels(&self) -> &[u32] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.pixels[row * self.width + col]
    }

    /// Sets a pixel, saturating at `maxval`.
    pub fn set(&mut self, row: usize, col: usize, value: u32) {
        self.pixels[row * self.width + col] = value.min(self.maxval);
    }
}

/// Ink/background raster. Pixels are stored as `0` or `1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Invalid(format!("zero dimension {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(ImageError::Invalid(format!(
                "expected {} pixels for {width}x{height}, got {}",
                width * height,
                pixels.len()
            )));
        }
        if pixels.iter().any(|&p| p > 1) {
            return Err(ImageError::Invalid("binary pixels must be 0 or 1".into()));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn blank(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0);
        Self { width, height, pixels: vec![0; width * height] }
    }

    /// Builds an image from rows of `0`/`1`; convenient for fixtures.
    pub fn from_rows(rows: &[&[u8]]) -> Result<Self, ImageError> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(ImageError::Invalid("ragged rows".into()));
        }
        Self::new(width, height, rows.concat())
    }

    /// Parses an ASCII-art picture where `#` marks ink and `.` background.
    pub fn from_ascii(art: &str) -> Result<Self, ImageError> {
        let rows: Vec<Vec<u8>> = art
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| l.bytes().map(|b| u8::from(b == b'#')).collect())
            .collect();
        let refs: Vec<&[u8]> = rows.iter().map(Vec::as_slice).collect();
        Self::from_rows(&refs)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    /// Pixel lookup where everything outside the raster reads as background.
    #[inline]
    pub fn get_or_zero(&self, row: isize, col: isize) -> u8 {
        if row < 0 || col < 0 || row as usize >= self.height || col as usize >= self.width {
            0
        } else {
            self.pixels[row as usize * self.width + col as usize]
        }
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ink: bool) {
        self.pixels[row * self.width + col] = u8::from(ink);
    }

    pub fn ink_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == 1).count()
    }

    /// Iterates `(row, col)` of every ink pixel in raster order.
    pub fn ink_positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.pixels
            .iter()
            .enumerate()
            .filter(|(_, &p)| p == 1)
            .map(move |(i, _)| (i / w, i % w))
    }

    /// Gray view with ink at 255, matching what [`save_binary_pgm`] writes.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            maxval: 255,
            pixels: self.pixels.iter().map(|&p| u32::from(p) * 255).collect(),
        }
    }
}

impl std::fmt::Display for BinaryImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for row in self.pixels.chunks(self.width) {
            for &p in row {
                f.write_str(if p == 1 { "#" } else { "." })?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// How raw intensities are compared against the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdMode {
    /// Compare the stored intensity directly.
    #[default]
    Intensity,
    /// Rescale the intensity to 8 bits, replicate it into a packed
    /// `0xRRGGBB` gray value and compare that integer. Under this reading
    /// a threshold such as 7,000,000 (`0x6ACFC0`) selects gray levels
    /// from 107/255 upward.
    PackedRgb,
}

/// Which end of the intensity scale is ink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Polarity {
    /// Bright strokes on a dark background: `value >= threshold` is ink.
    #[default]
    BrightInk,
    /// Dark strokes on a light background: intensities are inverted
    /// (`maxval - value`) before the comparison.
    DarkInk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BinarizeOptions {
    /// `None` selects `(maxval + 1) / 2` of the image being binarized.
    pub threshold: Option<u64>,
    pub mode: ThresholdMode,
    pub polarity: Polarity,
}

impl BinarizeOptions {
    pub fn resolved_threshold(&self, img: &GrayImage) -> u64 {
        self.threshold.unwrap_or(u64::from(img.maxval).div_ceil(2))
    }
}

/// Plain threshold binarization: `1` iff `pixel >= threshold`.
pub fn binarize(img: &GrayImage, threshold: u64) -> BinaryImage {
    BinaryImage {
        width: img.width,
        height: img.height,
        pixels: img.pixels.iter().map(|&p| u8::from(u64::from(p) >= threshold)).collect(),
    }
}

/// Binarization honouring threshold mode and polarity.
pub fn binarize_with(img: &GrayImage, opts: &BinarizeOptions) -> BinaryImage {
    let threshold = opts.resolved_threshold(img);
    let maxval = u64::from(img.maxval);
    let pixels = img
        .pixels
        .iter()
        .map(|&p| {
            let mut v = u64::from(p);
            if opts.polarity == Polarity::DarkInk {
                v = maxval - v;
            }
            if opts.mode == ThresholdMode::PackedRgb {
                let v8 = (v * 255 + maxval / 2) / maxval;
                v = v8 * 0x01_01_01;
            }
            u8::from(v >= threshold)
        })
        .collect();
    BinaryImage { width: img.width, height: img.height, pixels }
}

/// Inclusive ink extent of a binary image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl BoundingBox {
    pub fn width(&self) -> usize {
        self.right - self.left + 1
    }

    pub fn height(&self) -> usize {
        self.bottom - self.top + 1
    }
}

/// Smallest axis-aligned rectangle holding every ink pixel.
pub fn bounding_box(img: &BinaryImage) -> Result<BoundingBox, ImageError> {
    let mut bbox: Option<BoundingBox> = None;
    for (r, c) in img.ink_positions() {
        let b = bbox.get_or_insert(BoundingBox { top: r, bottom: r, left: c, right: c });
        b.top = b.top.min(r);
        b.bottom = b.bottom.max(r);
        b.left = b.left.min(c);
        b.right = b.right.max(c);
    }
    bbox.ok_or(ImageError::EmptyGlyph)
}

pub fn crop(img: &BinaryImage, bbox: &BoundingBox) -> Result<BinaryImage, ImageError> {
    if bbox.top > bbox.bottom || bbox.left > bbox.right || bbox.bottom >= img.height || bbox.right >= img.width {
        return Err(ImageError::Range(format!(
            "box {bbox:?} does not fit a {}x{} image",
            img.width, img.height
        )));
    }
    let (w, h) = (bbox.width(), bbox.height());
    let mut pixels = Vec::with_capacity(w * h);
    for r in bbox.top..=bbox.bottom {
        let start = r * img.width + bbox.left;
        pixels.extend_from_slice(&img.pixels[start..start + w]);
    }
    Ok(BinaryImage { width: w, height: h, pixels })
}

/// 2x3 affine map `(x, y) -> (m00 x + m01 y + m02, m10 x + m11 y + m12)`,
/// with `x` the column and `y` the row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    pub m00: f64,
    pub m01: f64,
    pub m02: f64,
    pub m10: f64,
    pub m11: f64,
    pub m12: f64,
}

impl AffineTransform {
    pub fn identity() -> Self {
        Self::scaling(1.0, 1.0)
    }

    pub fn scaling(sx: f64, sy: f64) -> Self {
        Self { m00: sx, m01: 0.0, m02: 0.0, m10: 0.0, m11: sy, m12: 0.0 }
    }

    pub fn determinant(&self) -> f64 {
        self.m00 * self.m11 - self.m01 * self.m10
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.m00 * x + self.m01 * y + self.m02,
            self.m10 * x + self.m11 * y + self.m12,
        )
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.determinant();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let (a, b, c, d) = (self.m11 / det, -self.m01 / det, -self.m10 / det, self.m00 / det);
        Some(Self {
            m00: a,
            m01: b,
            m02: -(a * self.m02 + b * self.m12),
            m10: c,
            m11: d,
            m12: -(c * self.m02 + d * self.m12),
        })
    }
}

// Absorbs rounding in products like (a / b) * b that land just below an integer.
const SAMPLE_EPS: f64 = 1e-9;

/// Resamples `img` through `target_to_source`, which maps output pixel
/// coordinates back into the source. Nearest-neighbour (floor) sampling,
/// out-of-range samples read as background.
pub fn warp(img: &BinaryImage, target_to_source: &AffineTransform, target_w: usize, target_h: usize) -> Result<BinaryImage, ImageError> {
    if target_w == 0 || target_h == 0 {
        return Err(ImageError::Range(format!("target size {target_w}x{target_h}")));
    }
    if target_to_source.determinant() == 0.0 {
        return Err(ImageError::Range("singular transform".into()));
    }
    let mut out = BinaryImage::blank(target_w, target_h);
    for y in 0..target_h {
        for x in 0..target_w {
            let (sx, sy) = target_to_source.apply(x as f64, y as f64);
            let (sc, sr) = ((sx + SAMPLE_EPS).floor(), (sy + SAMPLE_EPS).floor());
            if sc >= 0.0 && sr >= 0.0 && (sc as usize) < img.width && (sr as usize) < img.height {
                out.pixels[y * target_w + x] = img.get(sr as usize, sc as usize);
            }
        }
    }
    Ok(out)
}

/// Scales to `target_w x target_h` via the inverse mapping
/// `m00 = src_w / target_w`, `m11 = src_h / target_h`.
pub fn scale_to(img: &BinaryImage, target_w: usize, target_h: usize) -> Result<BinaryImage, ImageError> {
    if target_w == 0 || target_h == 0 {
        return Err(ImageError::Range(format!("target size {target_w}x{target_h}")));
    }
    let inverse = AffineTransform::scaling(
        img.width as f64 / target_w as f64,
        img.height as f64 / target_h as f64,
    );
    warp(img, &inverse, target_w, target_h)
}
