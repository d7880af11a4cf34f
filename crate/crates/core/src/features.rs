//! Zoning features: the skeleton is split into a `k x k` grid and each cell
//! contributes one signed gradient-change (gc) value.
//!
//! Within a cell, rows are scanned top to bottom. For every pair of
//! successive rows that both hold ink inside the cell, the column of the
//! leftmost ink pixel of the lower row minus that of the upper row is added
//! to the cell's gc. An ink-free row breaks the chain. A vertical stroke
//! therefore scores 0, a stroke drifting right going down scores positive and
//! one drifting left scores negative.

use std::fmt::Write as _;
use std::ops::Range;

use thiserror::Error;

use crate::imagecore::BinaryImage;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("cannot split a {width}x{height} image into {k}x{k} segments")]
    Grid { width: usize, height: usize, k: usize },
    #[error("normalization half-range must be positive, got {0}")]
    Factor(f64),
    #[error("feature vector is already normalized")]
    AlreadyNormalized,
}

/// Splits `0..n` into `k` contiguous ranges; the first `n % k` ranges get
/// one extra element.
pub fn partition(n: usize, k: usize) -> Vec<Range<usize>> {
    let (base, extra) = (n / k, n % k);
    let mut start = 0;
    (0..k)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentGrid {
    k: usize,
    rows: Vec<Range<usize>>,
    cols: Vec<Range<usize>>,
}

/// One grid cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

impl SegmentGrid {
    pub fn new(width: usize, height: usize, k: usize) -> Result<Self, FeatureError> {
        if k == 0 || k > width.min(height) {
            return Err(FeatureError::Grid { width, height, k });
        }
        Ok(Self { k, rows: partition(height, k), cols: partition(width, k) })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row_ranges(&self) -> &[Range<usize>] {
        &self.rows
    }

    pub fn col_ranges(&self) -> &[Range<usize>] {
        &self.cols
    }

    /// Cells in row-major order.
    pub fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        self.rows
            .iter()
            .flat_map(move |r| self.cols.iter().map(move |c| Segment { rows: r.clone(), cols: c.clone() }))
    }
}

pub fn segment_grid(width: usize, height: usize, k: usize) -> Result<SegmentGrid, FeatureError> {
    SegmentGrid::new(width, height, k)
}

fn leftmost_ink(img: &BinaryImage, row: usize, cols: &Range<usize>) -> Option<usize> {
    cols.clone().find(|&c| img.get(row, c) == 1)
}

/// Signed gc value of one segment.
///
/// # Panics
/// If the segment reaches outside the image.
pub fn gc_of_segment(img: &BinaryImage, seg: &Segment) -> i64 {
    assert!(seg.rows.end <= img.height() && seg.cols.end <= img.width(), "segment outside image");
    let mut gc = 0i64;
    let mut prev: Option<usize> = None;
    for r in seg.rows.clone() {
        let cur = leftmost_ink(img, r, &seg.cols);
        if let (Some(a), Some(b)) = (prev, cur) {
            gc += b as i64 - a as i64;
        }
        prev = cur;
    }
    gc
}

/// gc values of one image, optionally normalized into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    k: usize,
    values: Vec<f64>,
    factor: Option<f64>,
}

impl FeatureVector {
    pub fn new(k: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), k * k, "feature vector length must be k^2");
        Self { k, values, factor: None }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.factor.is_some()
    }

    /// Half-range `A` used by [`normalize`], if applied.
    pub fn factor(&self) -> Option<f64> {
        self.factor
    }
}

pub fn extract_features(img: &BinaryImage, k: usize) -> Result<FeatureVector, FeatureError> {
    let grid = SegmentGrid::new(img.width(), img.height(), k)?;
    let values = grid.segments().map(|s| gc_of_segment(img, &s) as f64).collect();
    Ok(FeatureVector::new(k, values))
}

/// Maps `x` to `clamp((x + A) / 2A, 0, 1)`, i.e. the factor written `+(A/2A)`.
pub fn normalize_value(x: f64, half_range: f64) -> f64 {
    ((x + half_range) / (2.0 * half_range)).clamp(0.0, 1.0)
}

pub fn normalize(v: &FeatureVector, half_range: f64) -> Result<FeatureVector, FeatureError> {
    if !(half_range > 0.0 && half_range.is_finite()) {
        return Err(FeatureError::Factor(half_range));
    }
    if v.is_normalized() {
        return Err(FeatureError::AlreadyNormalized);
    }
    Ok(FeatureVector {
        k: v.k,
        values: v.values.iter().map(|&x| normalize_value(x, half_range)).collect(),
        factor: Some(half_range),
    })
}

/// Header line `label,gc_1,...,gc_n`.
pub fn csv_header(len: usize) -> String {
    let mut s = String::from("label");
    for i in 1..=len {
        write!(s, ",gc_{i}").unwrap();
    }
    s
}

/// One CSV row with six decimal digits per value.
pub fn csv_row(label: &str, v: &FeatureVector) -> String {
    let mut s = label.to_string();
    for x in &v.values {
        write!(s, ",{x:.6}").unwrap();
    }
    s
}
