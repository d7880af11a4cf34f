//! Flat `key = value` configuration files.
//!
//! ```text
//! # sweep
//! sides = 3,4,5
//! factors.3 = 35,40
//! factors.4 = 30,40
//! factors.5 = 25,30
//! hidden = input          # or a number
//! # training
//! seed = 1
//! max_iterations = 1500
//! grad_tolerance = 1e-6
//! loss_tolerance = 0
//! restart_interval = auto # or a number
//! beta = pr+              # or fr
//! ls.max_expansions = 12
//! ls.max_backtracks = 40
//! ls.shrink = 0.5
//! ls.sufficient_decrease = 1e-4
//! # preprocessing
//! threshold = auto        # or an integer
//! threshold_mode = intensity   # or packed-rgb
//! polarity = bright       # or dark
//! schedule = sequential   # or simultaneous
//! size = 100
//! jobs = 1
//! # synthetic data
//! synth.train_per_class = 25
//! synth.test_per_class = 5
//! synth.canvas = 40
//! ```
//!
//! Unknown keys are rejected. `sides` selects which `factors.<k>` lines
//! are used; a side without a factor line falls back to the built-in pair.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::experiment::{ExperimentConfig, HiddenWidth, SweepEntry};
use super::synth::{Canvas, SplitCounts};
use super::HarnessError;
use crate::imagecore::{Polarity, ThresholdMode};
use crate::thinning::UpdateSchedule;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub synth_counts: SplitCounts,
    pub canvas: Canvas,
    sides: Option<Vec<usize>>,
    factors: BTreeMap<usize, Vec<f64>>,
}

fn bad(key: &str, value: &str) -> HarnessError {
    HarnessError::Config(format!("invalid value '{value}' for '{key}'"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value.parse().map_err(|_| bad(key, value))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, HarnessError> {
    value.split(',').map(|s| num(key, s.trim())).collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| HarnessError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies one setting; used for both file lines and command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let exp = &mut self.experiment;
        let t = &mut exp.train;
        match key {
            "sides" => self.sides = Some(list(key, value)?),
            k if k.starts_with("factors.") => {
                let side: usize = num(key, &k["factors.".len()..])?;
                self.factors.insert(side, list(key, value)?);
            }
            "hidden" => {
                exp.hidden = match value {
                    "input" | "auto" => HiddenWidth::SameAsInput,
                    v => HiddenWidth::Fixed(num(key, v)?),
                }
            }
            "seed" => t.seed = num(key, value)?,
            "max_iterations" => t.max_iterations = num(key, value)?,
            "grad_tolerance" => t.grad_tolerance = num(key, value)?,
            "loss_tolerance" => t.loss_tolerance = num(key, value)?,
            "restart_interval" => {
                t.restart_interval = match value {
                    "auto" => None,
                    v => Some(num(key, v)?),
                }
            }
            "beta" => t.beta = value.parse().map_err(|_| bad(key, value))?,
            "ls.max_expansions" => t.line_search.max_expansions = num(key, value)?,
            "ls.max_backtracks" => t.line_search.max_backtracks = num(key, value)?,
            "ls.shrink" => t.line_search.shrink = num(key, value)?,
            "ls.sufficient_decrease" => t.line_search.sufficient_decrease = num(key, value)?,
            "threshold" => {
                exp.preprocess.binarize.threshold = match value {
                    "auto" => None,
                    v => Some(num(key, v)?),
                }
            }
            "threshold_mode" => {
                exp.preprocess.binarize.mode = match value {
                    "intensity" => ThresholdMode::Intensity,
                    "packed-rgb" | "rgb" => ThresholdMode::PackedRgb,
                    _ => return Err(bad(key, value)),
                }
            }
            "polarity" => {
                exp.preprocess.binarize.polarity = match value {
                    "bright" => Polarity::BrightInk,
                    "dark" => Polarity::DarkInk,
                    _ => return Err(bad(key, value)),
                }
            }
            "schedule" => {
                exp.preprocess.schedule = match value {
                    "sequential" => UpdateSchedule::Sequential,
                    "simultaneous" | "parallel" => UpdateSchedule::Simultaneous,
                    _ => return Err(bad(key, value)),
                }
            }
            "size" => exp.preprocess.size = num(key, value)?,
            "jobs" => exp.jobs = num(key, value)?,
            "synth.train_per_class" => self.synth_counts.train = num(key, value)?,
            "synth.test_per_class" => self.synth_counts.test = num(key, value)?,
            "synth.canvas" => self.canvas.size = num(key, value)?,
            _ => return Err(HarnessError::Config(format!("unknown key '{key}'"))),
        }
        self.rebuild_sweep();
        Ok(())
    }

    fn rebuild_sweep(&mut self) {
        let defaults = ExperimentConfig::default_sweep();
        let sides: Vec<usize> = match &self.sides {
            Some(s) => s.clone(),
            None if self.factors.is_empty() => defaults.iter().map(|e| e.k).collect(),
            None => {
                let mut s: Vec<usize> = defaults.iter().map(|e| e.k).collect();
                let extra: Vec<usize> = self.factors.keys().copied().filter(|k| !s.contains(k)).collect();
                s.extend(extra);
                s
            }
        };
        self.experiment.sweep = sides
            .into_iter()
            .map(|k| {
                let factors = self
                    .factors
                    .get(&k)
                    .cloned()
                    .or_else(|| defaults.iter().find(|e| e.k == k).map(|e| e.factors.clone()))
                    .unwrap_or_default();
                SweepEntry { k, factors }
            })
            .collect();
    }
}
