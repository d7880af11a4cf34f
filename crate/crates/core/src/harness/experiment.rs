//! Sweep over grid sizes and normalization factors, one trained network
//! per cell, reported in the layout of a recognition-accuracy table.

use std::fmt::Write as _;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;

use super::dataset::{Dataset, Split};
use super::metrics::{evaluate, ConfusionMatrix};
use super::pipeline::{features_from_skeleton, preprocess, PreprocessConfig};
use super::{mix_seed, HarnessError};
use crate::cgtrain::{train, StopReason, TrainConfig};
use crate::imagecore::BinaryImage;
use crate::neuralnet::{LabeledSample, Layout, MlpModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HiddenWidth {
    /// As many hidden units as inputs.
    SameAsInput,
    Fixed(usize),
}

impl HiddenWidth {
    pub fn resolve(self, n_in: usize) -> usize {
        match self {
            HiddenWidth::SameAsInput => n_in,
            HiddenWidth::Fixed(n) => n,
        }
    }
}

/// Grid side together with the half-ranges to try for it.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub k: usize,
    pub factors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub sweep: Vec<SweepEntry>,
    pub hidden: HiddenWidth,
    /// `train.seed` is the master seed; each cell derives its own.
    pub train: TrainConfig,
    pub preprocess: PreprocessConfig,
    /// Worker threads for independent cells.
    pub jobs: usize,
}

impl ExperimentConfig {
    /// Sides 3, 4, 5 with the factor pairs 35/40, 30/40 and 25/30.
    pub fn default_sweep() -> Vec<SweepEntry> {
        vec![
            SweepEntry { k: 3, factors: vec![35.0, 40.0] },
            SweepEntry { k: 4, factors: vec![30.0, 40.0] },
            SweepEntry { k: 5, factors: vec![25.0, 30.0] },
        ]
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.sweep.is_empty() {
            return Err(HarnessError::Config("sweep has no grid sizes".into()));
        }
        for e in &self.sweep {
            if e.factors.is_empty() {
                return Err(HarnessError::Config(format!("grid side {} has no normalization factor", e.k)));
            }
            if e.k == 0 || e.k > self.preprocess.size {
                return Err(HarnessError::Config(format!("grid side {} does not fit a {} raster", e.k, self.preprocess.size)));
            }
            if let Some(f) = e.factors.iter().find(|f| !(**f > 0.0)) {
                return Err(HarnessError::Config(format!("normalization factor {f} must be positive")));
            }
        }
        if self.hidden == HiddenWidth::Fixed(0) {
            return Err(HarnessError::Config("hidden width must be positive".into()));
        }
        self.train.validate().map_err(|e| HarnessError::Config(e.to_string()))
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sweep: Self::default_sweep(),
            hidden: HiddenWidth::SameAsInput,
            train: TrainConfig { max_iterations: 1500, grad_tolerance: 1e-6, ..TrainConfig::default() },
            preprocess: PreprocessConfig::default(),
            jobs: 1,
        }
    }
}

/// Seed of the cell `(k, factor)` under a master seed.
pub fn cell_seed(master: u64, k: usize, factor: f64) -> u64 {
    mix_seed(&[master, k as u64, factor.to_bits()])
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub k: usize,
    pub factor: f64,
    pub layout: Layout,
    pub seed: u64,
    /// `None` when training failed.
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub test_confusion: Option<ConfusionMatrix>,
    pub iterations: usize,
    pub final_loss: f64,
    pub stop: Option<StopReason>,
    pub seconds: f64,
    pub error: Option<String>,
}

impl CellResult {
    pub fn feature_size(&self) -> usize {
        self.k * self.k
    }

    /// Every field except wall time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        Self { seconds: 0.0, ..self.clone() } == Self { seconds: 0.0, ..other.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExcludedSample {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub cells: Vec<CellResult>,
    pub excluded: Vec<ExcludedSample>,
    pub class_names: Vec<String>,
}

fn fmt_acc(a: Option<f64>) -> String {
    a.map_or_else(|| "nan".to_string(), |v| format!("{v:.2}"))
}

impl ExperimentReport {
    /// Columns `feature_size,factor,train_acc,test_acc,seconds`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("feature_size,factor,train_acc,test_acc,seconds\n");
        for c in &self.cells {
            writeln!(
                s,
                "{},{},{},{},{:.3}",
                c.feature_size(),
                c.factor,
                fmt_acc(c.train_accuracy),
                fmt_acc(c.test_accuracy),
                c.seconds
            )
            .unwrap();
        }
        s
    }

    /// Accuracy table grouped by feature-vector size.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let mut sizes: Vec<usize> = self.cells.iter().map(CellResult::feature_size).collect();
        sizes.dedup();
        for size in sizes {
            writeln!(s, "Input Feature Vector Size: {size}\n").unwrap();
            writeln!(s, "{:<22}{:>14}{:>10}", "Normalization Factor", "Training Set", "Test Set").unwrap();
            for c in self.cells.iter().filter(|c| c.feature_size() == size) {
                let label = format!("+({}/{})", c.factor, 2.0 * c.factor);
                writeln!(s, "{label:<22}{:>14}{:>10}", fmt_acc(c.train_accuracy), fmt_acc(c.test_accuracy)).unwrap();
            }
            s.push('\n');
        }
        if !self.excluded.is_empty() {
            writeln!(s, "Excluded samples: {}", self.excluded.len()).unwrap();
            for e in &self.excluded {
                writeln!(s, "  {}: {}", e.id, e.reason).unwrap();
            }
        }
        s
    }

    pub fn cell(&self, k: usize, factor: f64) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.k == k && c.factor == factor)
    }

    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.excluded == other.excluded
            && self.class_names == other.class_names
            && self.cells.len() == other.cells.len()
            && self.cells.iter().zip(&other.cells).all(|(a, b)| a.same_outcome(b))
    }
}

/// Features of every sample in `split`, with samples that fail
/// preprocessing set aside instead of aborting.
pub fn featurize_split(
    data: &Dataset,
    split: Split,
    pre: &PreprocessConfig,
    k: usize,
    factor: f64,
) -> Result<(Vec<LabeledSample>, Vec<ExcludedSample>), HarnessError> {
    let samples: Vec<&super::dataset::Sample> = data.split(split).collect();
    let outcomes: Vec<Result<LabeledSample, HarnessError>> = samples
        .par_iter()
        .map(|s| {
            let img = s.image()?;
            let f = features_from_skeleton(&preprocess(&img, pre)?, k, factor)?;
            Ok(LabeledSample::new(f.into_values(), s.label))
        })
        .collect();
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for (s, o) in samples.iter().zip(outcomes) {
        match o {
            Ok(x) => kept.push(x),
            Err(HarnessError::EmptyGlyph) => {
                let e = ExcludedSample { id: s.id.clone(), reason: HarnessError::EmptyGlyph.to_string() };
                warn!("excluding {}: {}", e.id, e.reason);
                excluded.push(e);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((kept, excluded))
}

struct Prepared {
    label: usize,
    split: Split,
    skeleton: BinaryImage,
}

fn samples_for(prepared: &[Prepared], split: Split, k: usize, factor: f64) -> Result<Vec<LabeledSample>, HarnessError> {
    prepared
        .iter()
        .filter(|p| p.split == split)
        .map(|p| Ok(LabeledSample::new(features_from_skeleton(&p.skeleton, k, factor)?.into_values(), p.label)))
        .collect()
}

fn run_cell(cfg: &ExperimentConfig, prepared: &[Prepared], n_classes: usize, k: usize, factor: f64) -> CellResult {
    let start = Instant::now();
    let n_in = k * k;
    let layout = Layout::new(n_in, cfg.hidden.resolve(n_in), n_classes);
    let seed = cell_seed(cfg.train.seed, k, factor);
    let mut result = CellResult {
        k,
        factor,
        layout,
        seed,
        train_accuracy: None,
        test_accuracy: None,
        test_confusion: None,
        iterations: 0,
        final_loss: f64::NAN,
        stop: None,
        seconds: 0.0,
        error: None,
    };
    let outcome = (|| -> Result<(), HarnessError> {
        let train_set = samples_for(prepared, Split::Train, k, factor)?;
        let test_set = samples_for(prepared, Split::Test, k, factor)?;
        let tcfg = TrainConfig { seed, ..cfg.train.clone() };
        let (model, trace): (MlpModel, _) = train(&train_set, layout, &tcfg)?;
        result.iterations = trace.iterations();
        result.final_loss = trace.final_loss;
        result.stop = Some(trace.stop);
        result.train_accuracy = Some(evaluate(&model, &train_set)?.accuracy);
        let test_eval = evaluate(&model, &test_set)?;
        result.test_accuracy = Some(test_eval.accuracy);
        result.test_confusion = Some(test_eval.confusion);
        Ok(())
    })();
    if let Err(e) = outcome {
        warn!("cell k={k} factor={factor} failed: {e}");
        result.error = Some(e.to_string());
    }
    result.seconds = start.elapsed().as_secs_f64();
    info!(
        "cell {layout} factor {factor}: train {} test {} ({} iterations, {:.2}s)",
        fmt_acc(result.train_accuracy),
        fmt_acc(result.test_accuracy),
        result.iterations,
        result.seconds
    );
    result
}

/// Preprocesses every sample once, then trains and evaluates each
/// `(k, factor)` cell. A failing cell is reported without stopping the rest.
pub fn run_experiment(cfg: &ExperimentConfig, data: &Dataset) -> Result<ExperimentReport, HarnessError> {
    cfg.validate()?;
    if data.count(Split::Train) == 0 || data.count(Split::Test) == 0 {
        return Err(HarnessError::Corpus("experiment needs non-empty train and test splits".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;

    pool.install(|| {
        let outcomes: Vec<Result<Prepared, ExcludedSample>> = data
            .samples
            .par_iter()
            .map(|s| {
                s.image()
                    .map_err(HarnessError::from)
                    .and_then(|img| preprocess(&img, &cfg.preprocess))
                    .map(|skeleton| Prepared { label: s.label, split: s.split, skeleton })
                    .map_err(|e| ExcludedSample { id: s.id.clone(), reason: e.to_string() })
            })
            .collect();
        let mut prepared = Vec::new();
        let mut excluded = Vec::new();
        for o in outcomes {
            match o {
                Ok(p) => prepared.push(p),
                Err(e) => {
                    warn!("excluding {}: {}", e.id, e.reason);
                    excluded.push(e);
                }
            }
        }
        for split in [Split::Train, Split::Test] {
            if !prepared.iter().any(|p| p.split == split) {
                return Err(HarnessError::Corpus(format!("every {} sample was excluded", split.dir_name())));
            }
        }

        let cells: Vec<(usize, f64)> = cfg.sweep.iter().flat_map(|e| e.factors.iter().map(move |&f| (e.k, f))).collect();
        let n_classes = data.class_names.len();
        let results: Vec<CellResult> = cells.par_iter().map(|&(k, f)| run_cell(cfg, &prepared, n_classes, k, f)).collect();
        Ok(ExperimentReport { cells: results, excluded, class_names: data.class_names.clone() })
    })
}
