//! Datasets, the end-to-end pipeline, evaluation and the experiment sweep.

pub mod config;
pub mod dataset;
pub mod experiment;
pub mod metrics;
pub mod pipeline;
pub mod synth;

use std::path::Path;

use thiserror::Error;

use crate::cgtrain::TrainError;
use crate::features::FeatureError;
use crate::imagecore::ImageError;
use crate::neuralnet::NetError;

pub use config::RunConfig;
pub use dataset::{load_corpus, Dataset, Sample, SampleSource, Split};
pub use experiment::{cell_seed, featurize_split, ExcludedSample, run_experiment, CellResult, ExperimentConfig, ExperimentReport, HiddenWidth, SweepEntry};
pub use metrics::{evaluate, ConfusionMatrix, Evaluation};
pub use pipeline::{preprocess, run_pipeline, PipelineConfig, PreprocessConfig};
pub use synth::{builtin_glyphs, synth_generate, Canvas, GlyphSpec, Jitter, SplitCounts};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("glyph has no ink after binarization")]
    EmptyGlyph,
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("corpus error: {0}")]
    Corpus(String),
    #[error("synthesis error: {0}")]
    Synth(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }
}

/// Combines values into one well-mixed 64-bit seed (splitmix64 finalizer).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}
