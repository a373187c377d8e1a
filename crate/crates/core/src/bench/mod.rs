//! Step-size sensitivity sweeps: every `(method, lambda, seed)` cell is one
//! solver run, scored against a reference optimum.

mod emit;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{generate_synthetic, read_libsvm, LabelMapping, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::{Dataset, LossKind};
use crate::objective::CvarLevel;
use crate::optim::{random_init, run_mode, Method, Mode, RunRecord, Schedule, ScheduleKind, SolverConfig, SplPlusScaling, TracePoint};
use crate::reference::ReferenceSolution;

pub use emit::{emit_results, format_real, read_aggregate_csv, read_cells_csv, write_trace};

/// Suboptimality of diverged (or worse) cells is capped at this multiple of
/// the cell's initial gap.
pub const DIVERGENCE_CAP: f64 = 1e6;

/// Where the data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum Problem {
    Synthetic(SyntheticSpec),
    Libsvm {
        path: PathBuf,
        loss: LossKind,
        #[serde(default)]
        labels: LabelMapping,
        /// Per-feature max-abs scaling.
        #[serde(default)]
        scale: bool,
    },
}

impl Problem {
    pub fn load(&self) -> Result<(Dataset, LossKind)> {
        match self {
            Problem::Synthetic(spec) => Ok((generate_synthetic(spec)?, spec.task.loss())),
            Problem::Libsvm {
                path,
                loss,
                labels,
                scale,
            } => {
                let mut sparse = read_libsvm(path, *labels)?;
                if *scale {
                    sparse.max_abs_scale();
                }
                let data = sparse.to_dataset(None)?;
                data.check_labels(*loss)?;
                Ok((data, *loss))
            }
        }
    }
}

/// `10^-6, ..., 10^4`.
pub fn base_lambda_grid() -> Vec<f64> {
    (-6..=4).map(|k| 10f64.powi(k)).collect()
}

/// The base grid densified with `10^-1.5, 10^-0.5, 10^0.5, 10^1.5`.
pub fn default_lambda_grid() -> Vec<f64> {
    let mut grid = base_lambda_grid();
    grid.extend([-1.5f64, -0.5, 0.5, 1.5].map(|e| 10f64.powf(e)));
    grid.sort_by(f64::total_cmp);
    grid
}

fn default_beta() -> CvarLevel {
    CvarLevel::new(0.95).expect("valid level")
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

fn default_epsilons() -> Vec<f64> {
    vec![1.0, 0.1, 0.01]
}

fn default_horizon() -> u64 {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub problem: Problem,
    #[serde(default = "default_beta")]
    pub beta: CvarLevel,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Absolute suboptimality targets for iterations-to-epsilon.
    #[serde(default = "default_epsilons")]
    pub epsilon_targets: Vec<f64>,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    /// Trace cadence; `horizon / 100` when absent.
    #[serde(default)]
    pub record_every: Option<u64>,
    #[serde(default)]
    pub schedule: ScheduleKind,
    #[serde(default)]
    pub scaling: SplPlusScaling,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub write_traces: bool,
}

impl SweepSpec {
    /// Desk-scale defaults for a given problem.
    pub fn new(problem: Problem) -> Self {
        Self {
            problem,
            beta: default_beta(),
            methods: default_methods(),
            lambda_grid: default_lambda_grid(),
            seeds: default_seeds(),
            epsilon_targets: default_epsilons(),
            horizon: default_horizon(),
            record_every: None,
            schedule: ScheduleKind::default(),
            scaling: SplPlusScaling::default(),
            mode: Mode::default(),
            write_traces: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.lambda_grid;
        if g.is_empty() {
            return Err(Error::invalid("lambda_grid is empty"));
        }
        if g.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::invalid("lambda_grid entries must be positive"));
        }
        if g.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("lambda_grid must be strictly increasing"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds is empty"));
        }
        let mut methods = self.methods.clone();
        methods.sort();
        methods.dedup();
        if methods.is_empty() || methods.len() != self.methods.len() {
            return Err(Error::invalid("methods must be a nonempty list without repeats"));
        }
        if self.epsilon_targets.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::invalid("epsilon_targets must be positive"));
        }
        if self.horizon < 1 || self.record_every == Some(0) {
            return Err(Error::invalid("horizon and record_every must be at least 1"));
        }
        Ok(())
    }

    pub fn record_every(&self) -> u64 {
        self.record_every.unwrap_or((self.horizon / 100).max(1))
    }

    /// Solver configuration of one cell.
    pub fn cell_config(&self, method: Method, lambda: f64, seed: u64) -> SolverConfig {
        SolverConfig {
            method,
            beta: self.beta,
            schedule: Schedule {
                kind: self.schedule,
                base_lambda: lambda,
            },
            scaling: self.scaling.clone(),
            horizon: self.horizon,
            seed,
            record_every: self.record_every(),
        }
    }
}

/// Persisted per-cell numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRow {
    pub method: Method,
    pub lambda: f64,
    pub seed: u64,
    /// `F(x_0) - F*`.
    pub initial_gap: f64,
    /// `F(x̄_T) - F*`, capped.
    pub final_subopt: f64,
    /// `final_subopt` divided by the initial gap.
    pub relative_subopt: f64,
    pub diverged: bool,
    pub capped: bool,
    /// One entry per epsilon target; `None` when not reached.
    pub iters_to_eps: Vec<Option<u64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub row: CellRow,
    pub wall_seconds: f64,
    pub record: RunRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: Method,
    pub lambda: f64,
    pub seeds: usize,
    pub diverged: usize,
    pub median_subopt: f64,
    pub min_subopt: f64,
    pub max_subopt: f64,
    pub median_relative: f64,
    pub min_relative: f64,
    pub max_relative: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub f_star: f64,
    pub reference_sha256: String,
    /// Ordered by method, then lambda, then seed, as listed in the spec.
    pub cells: Vec<CellResult>,
    pub aggregates: Vec<AggregateRow>,
}

impl SweepResult {
    /// Smallest objective value recorded in any trace.
    pub fn min_trace_objective(&self) -> Option<f64> {
        self.cells
            .iter()
            .flat_map(|c| c.record.trace.iter().map(|p| p.averaged_objective))
            .filter(|v| v.is_finite())
            .reduce(f64::min)
    }
}

/// First recorded iteration whose suboptimality is at most `epsilon`.
pub fn iterations_to_epsilon(trace: &[TracePoint], f_star: f64, epsilon: f64) -> Option<u64> {
    trace
        .iter()
        .find(|p| p.averaged_objective - f_star <= epsilon)
        .map(|p| p.iteration)
}

/// Median of a nonempty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Lambdas whose median relative suboptimality is at most `threshold`.
pub fn basin(aggregates: &[AggregateRow], method: Method, threshold: f64) -> Vec<f64> {
    aggregates
        .iter()
        .filter(|a| a.method == method && a.median_relative <= threshold)
        .map(|a| a.lambda)
        .collect()
}

/// Sha-256 of the reference's compact JSON serialization, hex encoded.
pub fn reference_hash(reference: &ReferenceSolution) -> Result<String> {
    let bytes = serde_json::to_vec(reference)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn score(spec: &SweepSpec, method: Method, lambda: f64, seed: u64, f_star: f64, record: RunRecord) -> CellResult {
    let gap = record.initial_objective - f_star;
    let scale = if gap > 0.0 { gap } else { f_star.abs().max(1.0) };
    let cap = DIVERGENCE_CAP * scale;
    let raw = match record.final_objective() {
        Some(f) if !record.diverged() && f.is_finite() => f - f_star,
        _ => f64::INFINITY,
    };
    let capped = !(raw <= cap);
    let final_subopt = if capped { cap } else { raw };
    let iters_to_eps = spec
        .epsilon_targets
        .iter()
        .map(|&e| iterations_to_epsilon(&record.trace, f_star, e))
        .collect();
    CellResult {
        row: CellRow {
            method,
            lambda,
            seed,
            initial_gap: gap,
            final_subopt,
            relative_subopt: final_subopt / scale,
            diverged: record.diverged(),
            capped,
            iters_to_eps,
        },
        wall_seconds: record.wall_seconds,
        record,
    }
}

fn aggregate(spec: &SweepSpec, cells: &[CellResult]) -> Vec<AggregateRow> {
    let mut out = Vec::new();
    for &method in &spec.methods {
        for &lambda in &spec.lambda_grid {
            let group: Vec<&CellRow> = cells
                .iter()
                .map(|c| &c.row)
                .filter(|r| r.method == method && r.lambda == lambda)
                .collect();
            if group.is_empty() {
                continue;
            }
            let abs: Vec<f64> = group.iter().map(|r| r.final_subopt).collect();
            let rel: Vec<f64> = group.iter().map(|r| r.relative_subopt).collect();
            let lo = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            out.push(AggregateRow {
                method,
                lambda,
                seeds: group.len(),
                diverged: group.iter().filter(|r| r.diverged).count(),
                median_subopt: median(&abs),
                min_subopt: lo(&abs),
                max_subopt: hi(&abs),
                median_relative: median(&rel),
                min_relative: lo(&rel),
                max_relative: hi(&rel),
            });
        }
    }
    out
}

/// Runs every cell on `data`. `jobs = 0` uses one worker per logical core.
pub fn run_sweep_on(
    spec: &SweepSpec,
    data: &Dataset,
    model: LossKind,
    reference: &ReferenceSolution,
    jobs: usize,
) -> Result<SweepResult> {
    spec.validate()?;
    let beta = spec.mode.effective_beta(spec.beta, data.len())?;
    reference.check_matches(data, model, beta)?;
    let f_star = reference.f_star;
    let mut cells = Vec::new();
    for &method in &spec.methods {
        for &lambda in &spec.lambda_grid {
            for &seed in &spec.seeds {
                cells.push((method, lambda, seed));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    let results: Vec<Result<CellResult>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(method, lambda, seed)| {
                let config = spec.cell_config(method, lambda, seed);
                let init = random_init(data.dim(), seed);
                let record = run_mode(spec.mode, &config, data, model, &init)?;
                log::debug!("cell {} lambda={lambda} seed={seed} done", method.name());
                Ok(score(spec, method, lambda, seed, f_star, record))
            })
            .collect()
    });
    let cells = results.into_iter().collect::<Result<Vec<_>>>()?;
    let aggregates = aggregate(spec, &cells);
    Ok(SweepResult {
        spec: spec.clone(),
        f_star,
        reference_sha256: reference_hash(reference)?,
        cells,
        aggregates,
    })
}

/// Loads the spec's problem and runs the sweep.
pub fn run_sweep(spec: &SweepSpec, reference: &ReferenceSolution, jobs: usize) -> Result<SweepResult> {
    let (data, model) = spec.problem.load()?;
    run_sweep_on(spec, &data, model, reference, jobs)
}
