//! Full-batch nonlinear conjugate-gradient minimization.
//!
//! The first direction is the negative gradient. Each iteration moves
//! `x_{k+1} = x_k + a_k p_k` with the step `a_k` chosen by a line search,
//! then forms `p_{k+1} = -g_{k+1} + beta_{k+1} p_k`. The direction is reset
//! to steepest descent every `restart_interval` iterations, whenever the
//! combined direction fails to descend, and after a failed line search.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::neuralnet::{LabeledSample, Layout, MlpModel, NetError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss or gradient at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Formula for the conjugacy coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BetaVariant {
    /// `max(0, g_k . (g_k - g_{k-1}) / |g_{k-1}|^2)`
    #[default]
    PolakRibierePlus,
    /// `|g_k|^2 / |g_{k-1}|^2`
    FletcherReeves,
    /// Always 0, i.e. plain steepest descent. Used as a baseline.
    SteepestDescent,
}

impl std::str::FromStr for BetaVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pr+" | "prp+" | "polak-ribiere-plus" | "polak-ribiere" | "pr" => Ok(Self::PolakRibierePlus),
            "fr" | "fletcher-reeves" => Ok(Self::FletcherReeves),
            "sd" | "steepest-descent" => Ok(Self::SteepestDescent),
            _ => Err(format!("unknown beta variant '{s}'")),
        }
    }
}

impl std::fmt::Display for BetaVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PolakRibierePlus => "polak-ribiere-plus",
            Self::FletcherReeves => "fletcher-reeves",
            Self::SteepestDescent => "steepest-descent",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchConfig {
    /// Maximum number of times an accepted step is grown by `1 / shrink`.
    pub max_expansions: usize,
    /// Maximum number of times a rejected step is multiplied by `shrink`.
    pub max_backtracks: usize,
    pub shrink: f64,
    /// Armijo constant `c` in `f(a) <= f(0) + c a g'p`.
    pub sufficient_decrease: f64,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self { max_expansions: 12, max_backtracks: 40, shrink: 0.5, sufficient_decrease: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_iterations: usize,
    /// Stop once `|g|_inf` falls below this.
    pub grad_tolerance: f64,
    /// Stop once one step improves the loss by less than this.
    pub loss_tolerance: f64,
    /// `None` means the parameter dimension.
    pub restart_interval: Option<usize>,
    pub beta: BetaVariant,
    pub line_search: LineSearchConfig,
    /// Seeds weight initialization.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            grad_tolerance: 1e-6,
            loss_tolerance: 0.0,
            restart_interval: None,
            beta: BetaVariant::default(),
            line_search: LineSearchConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ls = &self.line_search;
        if self.max_iterations == 0 {
            return Err(TrainError::Config("max_iterations must be at least 1".into()));
        }
        if !(self.grad_tolerance >= 0.0) || !(self.loss_tolerance >= 0.0) {
            return Err(TrainError::Config("tolerances must be non-negative".into()));
        }
        if self.restart_interval == Some(0) {
            return Err(TrainError::Config("restart_interval must be at least 1".into()));
        }
        if !(ls.shrink > 0.0 && ls.shrink < 1.0) {
            return Err(TrainError::Config(format!("shrink factor {} outside (0, 1)", ls.shrink)));
        }
        if !(ls.sufficient_decrease > 0.0 && ls.sufficient_decrease < 1.0) {
            return Err(TrainError::Config("sufficient-decrease constant outside (0, 1)".into()));
        }
        Ok(())
    }
}

/// A differentiable function of a flat parameter vector.
pub trait Objective {
    fn dim(&self) -> usize;

    /// Value only; line searches call this for every probe.
    fn value(&mut self, x: &[f64]) -> f64;

    /// Value, with the gradient written into `grad`.
    fn value_and_gradient(&mut self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchResult {
    pub step: f64,
    pub value: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum LineSearchError {
    #[error("direction is not a descent direction (g.p = {0})")]
    NotDescent(f64),
    #[error("no decrease found along the search direction")]
    NoDecrease,
}

/// Bracket-and-backtrack search for a step satisfying sufficient decrease.
///
/// `phi(a)` is the objective along the direction, `phi0 = phi(0)` and
/// `slope` its derivative at 0. Starting from `initial`, an accepted step
/// is grown while the value keeps falling; the final bracket is refined
/// with one parabolic fit. A rejected step is shrunk until accepted. If the
/// shrink budget runs out, the lowest value seen below `phi0` is returned.
pub fn line_search<F>(mut phi: F, phi0: f64, slope: f64, initial: f64, cfg: &LineSearchConfig) -> Result<LineSearchResult, LineSearchError>
where
    F: FnMut(f64) -> f64,
{
    if !(slope < 0.0) {
        return Err(LineSearchError::NotDescent(slope));
    }
    let c = cfg.sufficient_decrease;
    let armijo = |a: f64, v: f64| v.is_finite() && v < phi0 && v <= phi0 + c * a * slope;
    let mut evaluations = 0;
    let mut eval = |a: f64, n: &mut usize| {
        *n += 1;
        phi(a)
    };

    let mut a = if initial.is_finite() && initial > 0.0 { initial } else { 1.0 };
    let mut v = eval(a, &mut evaluations);

    if armijo(a, v) {
        let (mut prev_a, mut prev_v) = (0.0, phi0);
        for _ in 0..cfg.max_expansions {
            let next_a = a / cfg.shrink;
            let next_v = eval(next_a, &mut evaluations);
            if armijo(next_a, next_v) && next_v < v {
                (prev_a, prev_v, a, v) = (a, v, next_a, next_v);
                continue;
            }
            if next_v.is_finite() {
                if let Some(t) = parabola_vertex((prev_a, prev_v), (a, v), (next_a, next_v)) {
                    let tv = eval(t, &mut evaluations);
                    if armijo(t, tv) && tv < v {
                        (a, v) = (t, tv);
                    }
                }
            }
            break;
        }
        return Ok(LineSearchResult { step: a, value: v, evaluations });
    }

    let mut best = (v.is_finite() && v < phi0).then_some((a, v));
    for _ in 0..cfg.max_backtracks {
        a *= cfg.shrink;
        v = eval(a, &mut evaluations);
        if armijo(a, v) {
            return Ok(LineSearchResult { step: a, value: v, evaluations });
        }
        if v.is_finite() && v < best.map_or(phi0, |b| b.1) {
            best = Some((a, v));
        }
    }
    match best {
        Some((step, value)) => Ok(LineSearchResult { step, value, evaluations }),
        None => Err(LineSearchError::NoDecrease),
    }
}

// Minimizer of the parabola through three points, if it lies strictly
// inside the outer pair and differs from the middle one.
fn parabola_vertex((x1, f1): (f64, f64), (x2, f2): (f64, f64), (x3, f3): (f64, f64)) -> Option<f64> {
    let d1 = (x2 - x1) * (f2 - f3);
    let d2 = (x2 - x3) * (f2 - f1);
    let denom = d1 - d2;
    if denom.abs() < f64::MIN_POSITIVE || !denom.is_finite() {
        return None;
    }
    let t = x2 - 0.5 * ((x2 - x1) * d1 - (x2 - x3) * d2) / denom;
    (t.is_finite() && t > x1 && t < x3 && t != x2).then_some(t)
}

/// Chooses the step length along a search direction.
pub trait StepRule {
    fn step(
        &mut self,
        objective: &mut dyn Objective,
        x: &[f64],
        direction: &[f64],
        value: f64,
        slope: f64,
        initial: f64,
    ) -> Result<LineSearchResult, LineSearchError>;
}

/// Default rule: [`line_search`] with the configured budgets.
#[derive(Debug, Clone, Copy, Default)]
pub struct ArmijoSearch(pub LineSearchConfig);

impl StepRule for ArmijoSearch {
    fn step(
        &mut self,
        objective: &mut dyn Objective,
        x: &[f64],
        direction: &[f64],
        value: f64,
        slope: f64,
        initial: f64,
    ) -> Result<LineSearchResult, LineSearchError> {
        let mut probe = vec![0.0; x.len()];
        line_search(
            |a| {
                probe.iter_mut().zip(x.iter().zip(direction)).for_each(|(t, (xi, pi))| *t = xi + a * pi);
                objective.value(&probe)
            },
            value,
            slope,
            initial,
            &self.0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Loss at `x_k`, before the step.
    pub loss: f64,
    /// `|g_k|_inf`.
    pub grad_norm: f64,
    /// Accepted step `a_k`.
    pub step: f64,
    /// Coefficient used to build `p_k`; 0 on the first iteration and on restarts.
    pub beta: f64,
    /// `p_k` was reset to `-g_k` after the first iteration.
    pub restart: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    LossTolerance,
    MaxIterations,
    LineSearchFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<IterationRecord>,
    pub final_loss: f64,
    pub final_grad_norm: f64,
    pub stop: StopReason,
}

impl TrainTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// CSV with columns `iteration,loss,grad_norm,step,beta,restart`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,loss,grad_norm,step,beta,restart\n");
        for r in &self.records {
            writeln!(s, "{},{:e},{:e},{:e},{:e},{}", r.iteration, r.loss, r.grad_norm, r.step, r.beta, u8::from(r.restart)).unwrap();
        }
        s
    }
}

/// State handed to an observer right before each line search.
#[derive(Debug)]
pub struct IterationView<'a> {
    pub iteration: usize,
    pub x: &'a [f64],
    pub gradient: &'a [f64],
    pub direction: &'a [f64],
    pub beta: f64,
    pub restart: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub trace: TrainTrace,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn minimize(objective: &mut dyn Objective, x0: &[f64], cfg: &TrainConfig) -> Result<Minimum, TrainError> {
    minimize_with(objective, x0, cfg, &mut ArmijoSearch(cfg.line_search), |_| {})
}

/// Conjugate-gradient loop with a caller-supplied step rule and observer.
pub fn minimize_with<O>(
    objective: &mut dyn Objective,
    x0: &[f64],
    cfg: &TrainConfig,
    rule: &mut dyn StepRule,
    mut observe: O,
) -> Result<Minimum, TrainError>
where
    O: FnMut(&IterationView<'_>),
{
    cfg.validate()?;
    let n = objective.dim();
    if x0.len() != n {
        return Err(TrainError::Config(format!("start point has {} entries, objective expects {n}", x0.len())));
    }
    let restart_interval = cfg.restart_interval.unwrap_or(n.max(1));

    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = objective.value_and_gradient(&x, &mut g);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(TrainError::NonFinite { iteration: 0 });
    }
    let mut p: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut beta = 0.0;
    let mut restart = false;
    let mut since_restart = 0usize;
    let mut prev_step: Option<(f64, f64)> = None;
    let mut records = Vec::new();
    let mut g_new = vec![0.0; n];
    let mut stop = StopReason::MaxIterations;

    for k in 0..cfg.max_iterations {
        let gnorm = inf_norm(&g);
        if gnorm < cfg.grad_tolerance {
            stop = StopReason::GradientTolerance;
            break;
        }
        let mut slope = dot(&g, &p);
        observe(&IterationView { iteration: k, x: &x, gradient: &g, direction: &p, beta, restart });

        let initial = match prev_step {
            Some((a, prev_slope)) if !restart => (a * prev_slope / slope).clamp(1e-12, 1e12),
            _ => 1.0 / dot(&g, &g).sqrt(),
        };
        let result = match rule.step(objective, &x, &p, f, slope, initial) {
            Ok(r) => r,
            Err(_) if beta != 0.0 => {
                // Retry once along steepest descent.
                p.iter_mut().zip(&g).for_each(|(pi, gi)| *pi = -gi);
                beta = 0.0;
                restart = true;
                since_restart = 0;
                slope = dot(&g, &p);
                match rule.step(objective, &x, &p, f, slope, 1.0 / slope.abs().sqrt()) {
                    Ok(r) => r,
                    Err(_) => {
                        stop = StopReason::LineSearchFailure;
                        break;
                    }
                }
            }
            Err(_) => {
                stop = StopReason::LineSearchFailure;
                break;
            }
        };

        let a = result.step;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += a * pi);
        let f_next = objective.value_and_gradient(&x, &mut g_new);
        if !f_next.is_finite() || g_new.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFinite { iteration: k });
        }
        records.push(IterationRecord { iteration: k, loss: f, grad_norm: gnorm, step: a, beta, restart });
        let improvement = f - f_next;
        f = f_next;
        prev_step = Some((a, slope));
        since_restart += 1;

        let g_prev_sq = dot(&g, &g);
        let mut next_beta = match cfg.beta {
            BetaVariant::PolakRibierePlus => {
                let num: f64 = g_new.iter().zip(&g).map(|(gn, go)| gn * (gn - go)).sum();
                (num / g_prev_sq).max(0.0)
            }
            BetaVariant::FletcherReeves => dot(&g_new, &g_new) / g_prev_sq,
            BetaVariant::SteepestDescent => 0.0,
        };
        if !next_beta.is_finite() {
            next_beta = 0.0;
        }
        std::mem::swap(&mut g, &mut g_new);
        let mut next_restart = false;
        if since_restart >= restart_interval {
            next_beta = 0.0;
            next_restart = true;
        }
        p.iter_mut().zip(&g).for_each(|(pi, gi)| *pi = -gi + next_beta * *pi);
        if next_beta != 0.0 && dot(&g, &p) >= 0.0 {
            p.iter_mut().zip(&g).for_each(|(pi, gi)| *pi = -gi);
            next_beta = 0.0;
            next_restart = true;
        }
        if next_restart {
            since_restart = 0;
        }
        beta = next_beta;
        restart = next_restart;

        if improvement < cfg.loss_tolerance {
            stop = StopReason::LossTolerance;
            break;
        }
    }

    let final_grad_norm = inf_norm(&g);
    if stop == StopReason::MaxIterations && final_grad_norm < cfg.grad_tolerance {
        stop = StopReason::GradientTolerance;
    }
    Ok(Minimum { x, trace: TrainTrace { records, final_loss: f, final_grad_norm, stop } })
}

/// Training loss of an MLP as an [`Objective`] over its flat parameters.
pub struct MlpObjective<'a> {
    layout: Layout,
    data: &'a [LabeledSample],
}

impl<'a> MlpObjective<'a> {
    pub fn new(layout: Layout, data: &'a [LabeledSample]) -> Result<Self, NetError> {
        // Validate shapes once so evaluation can't fail later.
        MlpModel::zeros(layout)?.loss(data)?;
        Ok(Self { layout, data })
    }

    fn model(&self, x: &[f64]) -> Option<MlpModel> {
        MlpModel::from_flat(self.layout, x.to_vec()).ok()
    }
}

impl Objective for MlpObjective<'_> {
    fn dim(&self) -> usize {
        self.layout.param_count()
    }

    fn value(&mut self, x: &[f64]) -> f64 {
        self.model(x).and_then(|m| m.loss(self.data).ok()).unwrap_or(f64::NAN)
    }

    fn value_and_gradient(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        match self.model(x).and_then(|m| m.loss_and_gradient(self.data).ok()) {
            Some((f, g)) => {
                grad.copy_from_slice(&g);
                f
            }
            None => {
                grad.fill(f64::NAN);
                f64::NAN
            }
        }
    }
}

/// Minimizes the training loss starting from `model`.
pub fn cg_minimize(model: &MlpModel, data: &[LabeledSample], cfg: &TrainConfig) -> Result<(MlpModel, TrainTrace), TrainError> {
    let mut objective = MlpObjective::new(model.layout(), data)?;
    let min = minimize(&mut objective, model.params(), cfg)?;
    Ok((MlpModel::from_flat(model.layout(), min.x)?, min.trace))
}

/// Seeded initialization followed by [`cg_minimize`].
pub fn train(data: &[LabeledSample], layout: Layout, cfg: &TrainConfig) -> Result<(MlpModel, TrainTrace), TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = MlpModel::random(layout, &mut rng)?;
    cg_minimize(&model, data, cfg)
}
