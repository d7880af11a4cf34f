use super::HarnessError;
use crate::features::{extract_features, normalize, FeatureVector};
use crate::imagecore::{binarize_with, bounding_box, crop, scale_to, BinarizeOptions, BinaryImage, GrayImage, ImageError, CANONICAL_SIZE};
use crate::thinning::{thin_with, UpdateSchedule};

/// Settings for the image stages up to and including thinning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessConfig {
    pub binarize: BinarizeOptions,
    /// Side of the square raster glyphs are scaled to.
    pub size: usize,
    pub schedule: UpdateSchedule,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { binarize: BinarizeOptions::default(), size: CANONICAL_SIZE, schedule: UpdateSchedule::Sequential }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub preprocess: PreprocessConfig,
    /// Grid side; the feature vector has `k * k` entries.
    pub k: usize,
    /// Normalization half-range.
    pub factor: f64,
}

/// binarize -> bounding box -> crop -> scale -> thin.
pub fn preprocess(img: &GrayImage, cfg: &PreprocessConfig) -> Result<BinaryImage, HarnessError> {
    let binary = binarize_with(img, &cfg.binarize);
    let bbox = bounding_box(&binary).map_err(|e| match e {
        ImageError::EmptyGlyph => HarnessError::EmptyGlyph,
        other => other.into(),
    })?;
    let cropped = crop(&binary, &bbox)?;
    let scaled = scale_to(&cropped, cfg.size, cfg.size)?;
    Ok(thin_with(&scaled, cfg.schedule).image)
}

/// Raw gc features of an already preprocessed skeleton, then normalized.
pub fn features_from_skeleton(skeleton: &BinaryImage, k: usize, factor: f64) -> Result<FeatureVector, HarnessError> {
    Ok(normalize(&extract_features(skeleton, k)?, factor)?)
}

/// Whole chain from a grayscale image to the normalized feature vector.
pub fn run_pipeline(img: &GrayImage, cfg: &PipelineConfig) -> Result<FeatureVector, HarnessError> {
    features_from_skeleton(&preprocess(img, &cfg.preprocess)?, cfg.k, cfg.factor)
}
