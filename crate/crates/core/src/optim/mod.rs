//! Stochastic solvers for the variational CVaR objective.
//!
//! Three methods share one driver loop: the stochastic subgradient method
//! (`Sgm`), the prox-linear method with a single regularizer (`Spl`) and the
//! prox-linear method with separate, unit-consistent regularization of the
//! parameters and the quantile (`SplPlus`). Each iteration draws one sample
//! uniformly with replacement, takes one step, and folds the new iterate
//! into a running average; the trace records the objective of the averaged
//! iterate.

mod rate;

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use rate::{rate_bounds, RateBound};

use crate::error::{Error, Result};
use crate::model::{Dataset, Iterate, LossKind};
use crate::objective::{empirical_objective, tail_active, CvarLevel};
use crate::prox::spl_plus_weight;
use crate::rng::{self, Stream};

/// Iterates whose `|alpha|` or `|theta|` exceed this are declared diverged.
pub const DIVERGENCE_BOUND: f64 = 1e12;

/// Rows above which the initial loss is estimated on a subsample.
pub const ELL0_FULL_LIMIT: usize = 1_000_000;
pub const ELL0_SUBSAMPLE: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sgm,
    Spl,
    #[serde(alias = "spl+", alias = "spl-plus")]
    SplPlus,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sgm => "sgm",
            Method::Spl => "spl",
            Method::SplPlus => "splplus",
        }
    }

    pub const ALL: [Method; 3] = [Method::Sgm, Method::Spl, Method::SplPlus];
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgm" => Ok(Method::Sgm),
            "spl" => Ok(Method::Spl),
            "splplus" | "spl+" | "spl-plus" => Ok(Method::SplPlus),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// `lambda / sqrt(t + 1)`
    #[default]
    SqrtDecay,
    /// `lambda / sqrt(T + 1)` for the whole horizon.
    ConstantHorizon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub base_lambda: f64,
}

impl Schedule {
    pub fn sqrt_decay(base_lambda: f64) -> Self {
        Self {
            kind: ScheduleKind::SqrtDecay,
            base_lambda,
        }
    }

    /// Step size at 0-based iteration `t` of a run with horizon `horizon`.
    pub fn at(&self, t: u64, horizon: u64) -> f64 {
        match self.kind {
            ScheduleKind::SqrtDecay => self.base_lambda / ((t + 1) as f64).sqrt(),
            ScheduleKind::ConstantHorizon => self.base_lambda / ((horizon + 1) as f64).sqrt(),
        }
    }
}

/// How the prox-linear method with separate regularization splits the step
/// `lambda_t` into `lambda_theta` and `lambda_alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplPlusScaling {
    /// `lambda_alpha = lambda_t * ell0`, `lambda_theta = lambda_t / ell0`, with
    /// `ell0` the mean loss at the initial parameters (estimated when absent).
    InitialLoss { ell0: Option<f64> },
    /// `lambda_alpha = lambda_t |alpha_t - alpha*|`,
    /// `lambda_theta = lambda_t |theta_t - theta*| / L`.
    LipschitzOracle {
        theta_star: Vec<f64>,
        alpha_star: f64,
        lipschitz: f64,
    },
    /// Fixed multipliers: `lambda_theta = lambda_t * theta`, `lambda_alpha = lambda_t * alpha`.
    Manual { theta: f64, alpha: f64 },
}

impl Default for SplPlusScaling {
    fn default() -> Self {
        SplPlusScaling::InitialLoss { ell0: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    pub beta: CvarLevel,
    pub schedule: Schedule,
    #[serde(default)]
    pub scaling: SplPlusScaling,
    /// Iterations run are `t = 0, ..., horizon`.
    pub horizon: u64,
    pub seed: u64,
    pub record_every: u64,
}

impl SolverConfig {
    pub fn new(method: Method, beta: CvarLevel, lambda: f64, horizon: u64, seed: u64) -> Self {
        Self {
            method,
            beta,
            schedule: Schedule::sqrt_decay(lambda),
            scaling: SplPlusScaling::default(),
            horizon,
            seed,
            record_every: (horizon / 100).max(1),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if self.record_every < 1 {
            return Err(Error::invalid("record_every must be at least 1"));
        }
        let l = self.schedule.base_lambda;
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::invalid(format!("lambda must be positive, got {l}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    /// Trace entry `t` holds the average of the iterates `x_1, ..., x_{t+1}`.
    pub iteration: u64,
    pub averaged_objective: f64,
    /// Mode-specific companion value: the max loss (max-loss mode) or the
    /// mean loss (ERM mode) at the averaged parameters.
    pub aux: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub trace: Vec<TracePoint>,
    /// Objective at the initial point.
    pub initial_objective: f64,
    pub final_iterate: Iterate,
    pub final_averaged_iterate: Iterate,
    pub wall_seconds: f64,
    /// Iteration at which the run was stopped for divergence.
    pub diverged_at: Option<u64>,
    /// Initial loss used by the `InitialLoss` scaling.
    pub ell0: Option<f64>,
    pub ell0_subsampled: bool,
}

impl RunRecord {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.trace.last().map(|p| p.averaged_objective)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Companion {
    None,
    MaxLoss,
    MeanLoss,
}

/// Mean loss at `theta`: over all rows, or over a seeded subsample of
/// [`ELL0_SUBSAMPLE`] rows when the dataset has more than [`ELL0_FULL_LIMIT`].
pub fn initial_loss(data: &Dataset, model: LossKind, theta: &[f64], seed: u64) -> Result<(f64, bool)> {
    let samples = data.samples();
    if samples.len() <= ELL0_FULL_LIMIT {
        let losses = data.losses(model, theta)?;
        return Ok((losses.iter().sum::<f64>() / losses.len() as f64, false));
    }
    let mut rng = rng::stream(seed, Stream::Subsample);
    let mut acc = 0.0;
    for _ in 0..ELL0_SUBSAMPLE {
        let z = &samples[rng.gen_range(0..samples.len())];
        acc += model.parts(theta, z)?.value;
    }
    Ok((acc / ELL0_SUBSAMPLE as f64, true))
}

/// `theta_0 ~ N(0, I_d)` and `alpha_0 ~ U(0, 1)` drawn from the seed's init stream.
pub fn random_init(dim: usize, seed: u64) -> Iterate {
    let mut rng = rng::stream(seed, Stream::Init);
    let theta = (0..dim).map(|_| rng::standard_normal(&mut rng)).collect();
    let alpha: f64 = rng.gen();
    Iterate { theta, alpha }
}

struct RegularizerRule {
    ell0: Option<f64>,
    subsampled: bool,
}

fn resolve_scaling(config: &SolverConfig, data: &Dataset, model: LossKind, init: &Iterate) -> Result<RegularizerRule> {
    match (&config.method, &config.scaling) {
        (Method::SplPlus, SplPlusScaling::InitialLoss { ell0 }) => {
            let (ell0, subsampled) = match ell0 {
                Some(v) => (*v, false),
                None => initial_loss(data, model, &init.theta, config.seed)?,
            };
            if !(ell0 > 0.0 && ell0.is_finite()) {
                return Err(Error::invalid(format!(
                    "initial loss must be positive for initial-loss scaling (got {ell0}); use manual scaling"
                )));
            }
            Ok(RegularizerRule {
                ell0: Some(ell0),
                subsampled,
            })
        }
        (Method::SplPlus, SplPlusScaling::LipschitzOracle { theta_star, lipschitz, .. }) => {
            if theta_star.len() != data.dim() {
                return Err(Error::DimensionMismatch {
                    expected: data.dim(),
                    found: theta_star.len(),
                });
            }
            if !(*lipschitz > 0.0 && lipschitz.is_finite()) {
                return Err(Error::invalid("Lipschitz constant must be positive"));
            }
            Ok(RegularizerRule {
                ell0: None,
                subsampled: false,
            })
        }
        (Method::SplPlus, SplPlusScaling::Manual { theta, alpha }) => {
            if !(*theta > 0.0 && *alpha > 0.0 && theta.is_finite() && alpha.is_finite()) {
                return Err(Error::invalid("manual multipliers must be positive"));
            }
            Ok(RegularizerRule {
                ell0: None,
                subsampled: false,
            })
        }
        _ => Ok(RegularizerRule {
            ell0: None,
            subsampled: false,
        }),
    }
}

/// `(lambda_theta, lambda_alpha)` at iteration `t`.
fn split_regularizers(config: &SolverConfig, rule: &RegularizerRule, lambda_t: f64, theta: &[f64], alpha: f64) -> (f64, f64) {
    match (&config.method, &config.scaling) {
        (Method::SplPlus, SplPlusScaling::InitialLoss { .. }) => {
            let ell0 = rule.ell0.expect("resolved");
            (lambda_t / ell0, lambda_t * ell0)
        }
        (Method::SplPlus, SplPlusScaling::LipschitzOracle { theta_star, alpha_star, lipschitz }) => {
            let floor = 1e-12 * lambda_t;
            let dist: f64 = theta
                .iter()
                .zip(theta_star)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let lt = (lambda_t * dist / lipschitz).max(floor);
            let la = (lambda_t * (alpha - alpha_star).abs()).max(floor);
            (lt, la)
        }
        (Method::SplPlus, SplPlusScaling::Manual { theta, alpha }) => (lambda_t * theta, lambda_t * alpha),
        _ => (lambda_t, lambda_t),
    }
}

fn evaluate(
    theta: &[f64],
    alpha: f64,
    beta: CvarLevel,
    data: &Dataset,
    model: LossKind,
    companion: Companion,
) -> Result<(f64, Option<f64>)> {
    let losses = data.losses(model, theta)?;
    let f = crate::objective::objective_of_losses(&losses, alpha, beta)?;
    let aux = match companion {
        Companion::None => None,
        Companion::MaxLoss => Some(losses.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        Companion::MeanLoss => Some(losses.iter().sum::<f64>() / losses.len() as f64),
    };
    Ok((f, aux))
}

fn drive(config: &SolverConfig, data: &Dataset, model: LossKind, init: &Iterate, companion: Companion) -> Result<RunRecord> {
    drive_observed(config, data, model, init, companion, &mut |_, _, _| {})
}

fn drive_observed(
    config: &SolverConfig,
    data: &Dataset,
    model: LossKind,
    init: &Iterate,
    companion: Companion,
    observer: &mut dyn FnMut(u64, &[f64], f64),
) -> Result<RunRecord> {
    config.validate()?;
    data.check_labels(model)?;
    if init.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            found: init.dim(),
        });
    }
    if !init.is_finite() {
        return Err(Error::NonFinite("initial iterate"));
    }
    let started = Instant::now();
    let rule = resolve_scaling(config, data, model, init)?;
    let beta = config.beta;
    let tail = beta.tail_scale();
    let samples = data.samples();
    let n = samples.len();
    let horizon = config.horizon;

    let mut theta = init.theta.clone();
    let mut alpha = init.alpha;
    let mut avg_theta = vec![0.0; theta.len()];
    let mut avg_alpha = 0.0;
    let mut v = vec![0.0; theta.len()];
    let mut trace = Vec::new();
    let mut diverged_at = None;
    let mut rng = rng::stream(config.seed, Stream::Sampling);
    let (initial_objective, _) = evaluate(&theta, alpha, beta, data, model, Companion::None)?;

    for t in 0..=horizon {
        let z = &samples[rng.gen_range(0..n)];
        let parts = model.parts(&theta, z)?;
        let lambda_t = config.schedule.at(t, horizon);
        match config.method {
            Method::Sgm => {
                if tail_active(parts.value, alpha) {
                    z.features.for_each(|i, x| theta[i] -= lambda_t * (tail * (parts.slope * x)));
                    alpha -= lambda_t * (1.0 - tail);
                } else {
                    alpha -= lambda_t;
                }
            }
            Method::Spl | Method::SplPlus => {
                let (lt, la) = split_regularizers(config, &rule, lambda_t, &theta, alpha);
                let mut v_sq = 0.0;
                z.features.for_each(|i, x| {
                    v[i] = parts.slope * x;
                    v_sq += v[i] * v[i];
                });
                let w = spl_plus_weight(parts.value, alpha, v_sq, beta, lt, la)?;
                let coef = lt * w;
                z.features.for_each(|i, _| theta[i] -= coef * v[i]);
                alpha = alpha - la + la * w;
            }
        }

        let norm_sq: f64 = theta.iter().map(|x| x * x).sum();
        let k = (t + 1) as f64;
        if !(alpha.abs() <= DIVERGENCE_BOUND && norm_sq.sqrt() <= DIVERGENCE_BOUND) {
            diverged_at = Some(t);
            break;
        }
        observer(t, &theta, alpha);
        for (a, x) in avg_theta.iter_mut().zip(&theta) {
            *a += (x - *a) / k;
        }
        avg_alpha += (alpha - avg_alpha) / k;

        if t == horizon || (t > 0 && t % config.record_every == 0) {
            let (f, aux) = evaluate(&avg_theta, avg_alpha, beta, data, model, companion)?;
            trace.push(TracePoint {
                iteration: t,
                averaged_objective: f,
                aux,
            });
        }
    }

    let averaged = Iterate {
        theta: avg_theta,
        alpha: avg_alpha,
    };
    let final_iterate = if diverged_at.is_some() && !(alpha.is_finite() && theta.iter().all(|x| x.is_finite())) {
        averaged.clone()
    } else {
        Iterate { theta, alpha }
    };
    if diverged_at.is_some() {
        log::debug!(
            "{} lambda={} seed={} diverged at t={:?}",
            config.method.name(),
            config.schedule.base_lambda,
            config.seed,
            diverged_at
        );
    }
    Ok(RunRecord {
        trace,
        initial_objective,
        final_iterate,
        final_averaged_iterate: averaged,
        wall_seconds: started.elapsed().as_secs_f64(),
        diverged_at,
        ell0: rule.ell0,
        ell0_subsampled: rule.subsampled,
    })
}

/// Stochastic subgradient method.
pub fn run_sgm(config: &SolverConfig, data: &Dataset, model: LossKind, init: &Iterate) -> Result<RunRecord> {
    if config.method != Method::Sgm {
        return Err(Error::invalid("run_sgm needs method = sgm"));
    }
    drive(config, data, model, init, Companion::None)
}

/// Prox-linear method, single (`Spl`) or separate (`SplPlus`) regularization.
pub fn run_spl_plus(config: &SolverConfig, data: &Dataset, model: LossKind, init: &Iterate) -> Result<RunRecord> {
    if config.method == Method::Sgm {
        return Err(Error::invalid("run_spl_plus needs method = spl or splplus"));
    }
    drive(config, data, model, init, Companion::None)
}

/// Dispatches on `config.method`.
pub fn run(config: &SolverConfig, data: &Dataset, model: LossKind, init: &Iterate) -> Result<RunRecord> {
    drive(config, data, model, init, Companion::None)
}

/// Like [`run`], calling `observer(t, theta, alpha)` with every post-update iterate.
pub fn run_with_observer(
    config: &SolverConfig,
    data: &Dataset,
    model: LossKind,
    init: &Iterate,
    observer: &mut dyn FnMut(u64, &[f64], f64),
) -> Result<RunRecord> {
    drive_observed(config, data, model, init, Companion::None, observer)
}

/// Runs with `beta = (n - 1) / n`; the trace's `aux` holds the max loss.
pub fn run_max_loss(config: &SolverConfig, data: &Dataset, model: LossKind, init: &Iterate) -> Result<RunRecord> {
    let mut cfg = config.clone();
    cfg.beta = CvarLevel::max_loss(data.len())?;
    drive(&cfg, data, model, init, Companion::MaxLoss)
}

/// Runs with `beta = 0`; the trace's `aux` holds the mean loss.
pub fn run_erm(config: &SolverConfig, data: &Dataset, model: LossKind, init: &Iterate) -> Result<RunRecord> {
    let mut cfg = config.clone();
    cfg.beta = CvarLevel::new(0.0)?;
    drive(&cfg, data, model, init, Companion::MeanLoss)
}

/// Solver mode: the plain CVaR objective or one of its two specializations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Cvar,
    MaxLoss,
    Erm,
}

impl Mode {
    /// Level actually optimized: `beta` itself, `(n - 1) / n`, or `0`.
    pub fn effective_beta(self, beta: CvarLevel, n: usize) -> Result<CvarLevel> {
        match self {
            Mode::Cvar => Ok(beta),
            Mode::MaxLoss => CvarLevel::max_loss(n),
            Mode::Erm => CvarLevel::new(0.0),
        }
    }
}

pub fn run_mode(mode: Mode, config: &SolverConfig, data: &Dataset, model: LossKind, init: &Iterate) -> Result<RunRecord> {
    match mode {
        Mode::Cvar => run(config, data, model, init),
        Mode::MaxLoss => run_max_loss(config, data, model, init),
        Mode::Erm => run_erm(config, data, model, init),
    }
}

/// Value of the objective at the final averaged iterate, recomputed.
pub fn final_averaged_objective(record: &RunRecord, beta: CvarLevel, data: &Dataset, model: LossKind) -> Result<f64> {
    let x = &record.final_averaged_iterate;
    empirical_objective(&x.theta, x.alpha, beta, data, model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Sample;
    use crate::prox::{spl_plus_step, SplPlusStepInput};

    fn level(b: f64) -> CvarLevel {
        CvarLevel::new(b).unwrap()
    }

    fn toy() -> Dataset {
        Dataset::new(vec![
            Sample::dense(vec![1.0, 0.5], 0.3).unwrap(),
            Sample::dense(vec![-0.2, 1.0], -1.0).unwrap(),
            Sample::dense(vec![0.7, -0.7], 2.0).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn schedules() {
        let s = Schedule::sqrt_decay(2.0);
        assert_eq!(s.at(0, 10), 2.0);
        assert_eq!(s.at(3, 10), 1.0);
        let c = Schedule {
            kind: ScheduleKind::ConstantHorizon,
            base_lambda: 2.0,
        };
        assert_eq!(c.at(0, 3), 1.0);
        assert_eq!(c.at(2, 3), 1.0);
    }

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(serde_json::from_str::<Method>(&json).unwrap(), m);
        }
        assert!("adam".parse::<Method>().is_err());
    }

    #[test]
    fn sgm_alpha_descends_on_flat_loss() {
        // zero features: loss 2 everywhere, subgradient zero
        let data = Dataset::new(vec![Sample::dense(vec![0.0], 2.0).unwrap()]).unwrap();
        let mut cfg = SolverConfig::new(Method::Sgm, level(0.5), 0.5, 9, 1);
        cfg.schedule.kind = ScheduleKind::ConstantHorizon;
        cfg.schedule.base_lambda = 0.5 * (10f64).sqrt();
        cfg.record_every = 1;
        let init = Iterate::new(vec![0.0], 5.0).unwrap();
        let rec = run_sgm(&cfg, &data, LossKind::Squared, &init).unwrap();
        // constant step 0.5: alpha walks 5.0 -> 2.0 in 6 steps, then oscillates within one step of l
        let a = rec.final_iterate.alpha;
        assert!((a - 2.0).abs() <= 0.5 + 1e-12, "alpha = {a}");
        assert_eq!(rec.final_iterate.theta, vec![0.0]);
    }

    #[test]
    fn sgm_single_step_matches_update_rule() {
        // l = 2 with x = (1, 0), y = -2 under absolute loss at theta = 0
        let data = Dataset::new(vec![Sample::dense(vec![1.0, 0.0], -2.0).unwrap()]).unwrap();
        let mut cfg = SolverConfig::new(Method::Sgm, level(0.5), 0.1, 0, 1);
        cfg.horizon = 1;
        cfg.schedule.kind = ScheduleKind::ConstantHorizon;
        cfg.schedule.base_lambda = 0.1 * 2f64.sqrt();
        let init = Iterate::new(vec![0.0, 0.0], 1.0).unwrap();
        let rec = run_sgm(&cfg, &data, LossKind::Absolute, &init).unwrap();
        // after the first step theta = (-0.2, 0), alpha = 1.1; the loss is
        // then 1.8 > 1.1 so the second step repeats the same move
        let x = &rec.final_iterate;
        assert!((x.theta[0] + 0.4).abs() < 1e-12);
        assert!((x.alpha - 1.2).abs() < 1e-12);
        let avg = &rec.final_averaged_iterate;
        assert!((avg.theta[0] + 0.3).abs() < 1e-12);
        assert!((avg.alpha - 1.15).abs() < 1e-12);
    }

    #[test]
    fn spl_plus_frozen_theta_when_alpha_large() {
        let data = toy();
        let mut cfg = SolverConfig::new(Method::SplPlus, level(0.9), 0.01, 50, 3);
        cfg.scaling = SplPlusScaling::Manual { theta: 1.0, alpha: 1.0 };
        let init = Iterate::new(vec![0.1, -0.1], 1e3).unwrap();
        let rec = run_spl_plus(&cfg, &data, LossKind::Squared, &init).unwrap();
        assert_eq!(rec.final_iterate.theta, vec![0.1, -0.1]);
        let expected: f64 = 1e3 - (0..=50).map(|t| cfg.schedule.at(t, 50)).sum::<f64>();
        assert!((rec.final_iterate.alpha - expected).abs() < 1e-9);
    }

    #[test]
    fn spl_matches_public_step_exactly() {
        let data = toy();
        let cfg = SolverConfig::new(Method::Spl, level(0.5), 0.7, 40, 9);
        let init = random_init(2, 9);
        // replay the same sample sequence with the public step function
        let mut rng = rng::stream(9, Stream::Sampling);
        let mut theta = init.theta.clone();
        let mut alpha = init.alpha;
        for t in 0..=40u64 {
            let z = &data.samples()[rng.gen_range(0..data.len())];
            let loss = LossKind::Squared.value(&theta, z).unwrap();
            let v = LossKind::Squared.subgradient(&theta, z).unwrap();
            let lambda = cfg.schedule.at(t, 40);
            let out = spl_plus_step(&SplPlusStepInput {
                theta_t: &theta,
                alpha_t: alpha,
                loss_t: loss,
                v_t: &v,
                beta: cfg.beta,
                lambda_theta: lambda,
                lambda_alpha: lambda,
            })
            .unwrap();
            theta = out.theta;
            alpha = out.alpha;
        }
        let rec = run_spl_plus(&cfg, &data, LossKind::Squared, &init).unwrap();
        assert_eq!(rec.final_iterate.theta, theta);
        assert_eq!(rec.final_iterate.alpha, alpha);
    }

    #[test]
    fn manual_unit_multipliers_equal_spl() {
        let data = toy();
        let spl = SolverConfig::new(Method::Spl, level(0.9), 0.3, 500, 4);
        let mut plus = spl.clone();
        plus.method = Method::SplPlus;
        plus.scaling = SplPlusScaling::Manual { theta: 1.0, alpha: 1.0 };
        let init = random_init(2, 4);
        let a = run(&spl, &data, LossKind::Squared, &init).unwrap();
        let b = run(&plus, &data, LossKind::Squared, &init).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.final_averaged_iterate, b.final_averaged_iterate);
    }

    #[test]
    fn averaging_matches_iterate_log() {
        let data = toy();
        let init = random_init(2, 11);
        for method in Method::ALL {
            let cfg = SolverConfig::new(method, level(0.8), 0.5, 999, 11);
            let mut log: Vec<(Vec<f64>, f64)> = Vec::new();
            let rec = run_with_observer(&cfg, &data, LossKind::Squared, &init, &mut |_, th, a| {
                log.push((th.to_vec(), a))
            })
            .unwrap();
            assert_eq!(log.len(), 1000);
            let n = log.len() as f64;
            let mean_alpha = log.iter().map(|x| x.1).sum::<f64>() / n;
            assert!((mean_alpha - rec.final_averaged_iterate.alpha).abs() < 1e-12);
            for j in 0..2 {
                let mean = log.iter().map(|x| x.0[j]).sum::<f64>() / n;
                assert!((mean - rec.final_averaged_iterate.theta[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let data = toy();
        let init = random_init(2, 5);
        for method in Method::ALL {
            let cfg = SolverConfig::new(method, level(0.9), 1.0, 300, 5);
            let a = run(&cfg, &data, LossKind::Squared, &init).unwrap();
            let b = run(&cfg, &data, LossKind::Squared, &init).unwrap();
            assert_eq!(a.trace, b.trace);
            assert_eq!(a.final_iterate, b.final_iterate);
        }
    }

    #[test]
    fn sgm_divergence_is_reported() {
        let data = toy();
        let init = random_init(2, 2);
        let cfg = SolverConfig::new(Method::Sgm, level(0.95), 1e4, 2000, 2);
        let rec = run(&cfg, &data, LossKind::Squared, &init).unwrap();
        assert!(rec.diverged());
        assert!(rec.trace.iter().all(|p| p.averaged_objective.is_finite()));
        assert!(rec.final_averaged_iterate.is_finite());
    }

    #[test]
    fn trace_cadence() {
        let data = toy();
        let mut cfg = SolverConfig::new(Method::SplPlus, level(0.9), 1.0, 95, 1);
        cfg.record_every = 10;
        let rec = run(&cfg, &data, LossKind::Squared, &random_init(2, 1)).unwrap();
        let its: Vec<u64> = rec.trace.iter().map(|p| p.iteration).collect();
        assert_eq!(its, vec![10, 20, 30, 40, 50, 60, 70, 80, 90, 95]);
    }

    #[test]
    fn config_errors() {
        let data = toy();
        let init = random_init(2, 1);
        let mut cfg = SolverConfig::new(Method::Sgm, level(0.9), 1.0, 10, 1);
        assert!(run_spl_plus(&cfg, &data, LossKind::Squared, &init).is_err());
        cfg.schedule.base_lambda = 0.0;
        assert!(run_sgm(&cfg, &data, LossKind::Squared, &init).is_err());
        let cfg = SolverConfig::new(Method::SplPlus, level(0.9), 1.0, 10, 1);
        assert!(run(&cfg, &data, LossKind::Squared, &Iterate::zeros(3)).is_err());
        assert!(run(&cfg, &data, LossKind::Logistic, &init).is_err());
        let mut zero_loss = cfg.clone();
        zero_loss.scaling = SplPlusScaling::InitialLoss { ell0: Some(0.0) };
        let err = run(&zero_loss, &data, LossKind::Squared, &init).unwrap_err();
        assert!(err.to_string().contains("manual"));
    }

    #[test]
    fn max_loss_and_erm_companions() {
        let data = toy();
        let init = random_init(2, 3);
        let cfg = SolverConfig::new(Method::SplPlus, level(0.5), 1.0, 100, 3);
        let rec = run_max_loss(&cfg, &data, LossKind::Squared, &init).unwrap();
        let p = rec.trace.last().unwrap();
        let losses = data.losses(LossKind::Squared, &rec.final_averaged_iterate.theta).unwrap();
        assert_eq!(p.aux, Some(losses.iter().copied().fold(f64::NEG_INFINITY, f64::max)));
        let rec = run_erm(&cfg, &data, LossKind::Squared, &init).unwrap();
        let p = rec.trace.last().unwrap();
        let losses = data.losses(LossKind::Squared, &rec.final_averaged_iterate.theta).unwrap();
        assert_eq!(p.aux, Some(losses.iter().sum::<f64>() / 3.0));
        assert!(run_max_loss(&cfg, &Dataset::new(vec![data.samples()[0].clone()]).unwrap(), LossKind::Squared, &init).is_err());
    }
}
