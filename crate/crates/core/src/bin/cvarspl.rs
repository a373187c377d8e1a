use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cvarspl::bench::{self, Problem};
use cvarspl::config::{ReferenceSettings, RunConfig};
use cvarspl::data::{generate_synthetic, read_libsvm, write_libsvm, LabelMapping, SparseDataset};
use cvarspl::objective::{empirical_objective, exact_cvar, exact_var, CvarLevel};
use cvarspl::optim::{random_init, run_mode, Method, Mode, SolverConfig, SplPlusScaling};
use cvarspl::{Dataset, Error, Iterate, LossKind, ReferenceSolution, SparseVec};

#[derive(Parser, Debug)]
#[command(name = "cvarspl", version, about = "CVaR minimization with SGM, SPL and SPL+ solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the configured synthetic dataset as a LIBSVM file.
    GenData(GenDataArgs),
    /// Compute and store the reference optimum.
    Reference(ReferenceArgs),
    /// Run one (method, lambda, seed) cell and write its trace CSV.
    Solve(SolveArgs),
    /// Run the configured lambda sweep.
    Sweep(SweepArgs),
    /// Print F, VaR and CVaR of a stored iterate.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct ProblemArgs {
    /// JSON run config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// LIBSVM dataset, replacing the configured problem.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Loss used with --dataset.
    #[arg(long, value_enum, default_value_t = LossArg::Squared)]
    loss: LossArg,
    /// Map two-class labels of --dataset to -1/+1.
    #[arg(long)]
    binary_labels: bool,
    /// CVaR level.
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    config: PathBuf,
    /// Generator seed, replacing the configured one.
    #[arg(long)]
    seed: Option<u64>,
    /// Output LIBSVM file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReferenceArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Output JSON file (default: <output_dir>/reference.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// sgm, spl or splplus.
    #[arg(long, default_value = "splplus")]
    method: Method,
    /// Base step size.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Run seed (sampling and initialization).
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of iterations T [default: 20000 or the configured one].
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long, value_enum)]
    scaling: Option<ScalingArg>,
    /// Multiplier of lambda_t for theta under manual scaling.
    #[arg(long)]
    lambda_theta: Option<f64>,
    /// Multiplier of lambda_t for alpha under manual scaling.
    #[arg(long)]
    lambda_alpha: Option<f64>,
    /// Reference JSON; adds a suboptimality column to the trace.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Output trace CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// JSON run config.
    #[arg(long)]
    config: PathBuf,
    /// Run only this method.
    #[arg(long)]
    method: Option<Method>,
    /// CVaR level, replacing the configured one.
    #[arg(long)]
    beta: Option<f64>,
    /// Iterations per cell, replacing the configured horizon.
    #[arg(long)]
    horizon: Option<u64>,
    /// Replace the configured seeds with a single one.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0: one per logical core).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Output directory, replacing the configured one.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// JSON iterate {"theta": [...], "alpha": ...}.
    #[arg(long)]
    iterate: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LossArg {
    Squared,
    Absolute,
    Logistic,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Squared => LossKind::Squared,
            LossArg::Absolute => LossKind::Absolute,
            LossArg::Logistic => LossKind::Logistic,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScalingArg {
    InitialLoss,
    Manual,
}

/// Failure classes mapped to exit codes 1 and 2.
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Usage(m),
            other => Failure::Runtime(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

struct LoadedProblem {
    data: Dataset,
    model: LossKind,
    beta: CvarLevel,
    config: Option<RunConfig>,
}

fn level(beta: f64) -> CliResult<CvarLevel> {
    CvarLevel::new(beta).map_err(|e| usage(format!("--beta: {e}")))
}

fn load_problem(args: &ProblemArgs) -> CliResult<LoadedProblem> {
    let config = args.config.as_deref().map(RunConfig::load).transpose()?;
    let (data, model) = match (&args.dataset, &config) {
        (Some(path), _) => {
            let mapping = if args.binary_labels {
                LabelMapping::Binary
            } else {
                LabelMapping::Raw
            };
            let model = LossKind::from(args.loss);
            let data = read_libsvm(path, mapping)?.to_dataset(None)?;
            data.check_labels(model)?;
            (data, model)
        }
        (None, Some(c)) => c.sweep.problem.load()?,
        (None, None) => return Err(usage("either --config or --dataset is required")),
    };
    let mode = config.as_ref().map_or(Mode::Cvar, |c| c.sweep.mode);
    let beta = match (args.beta, &config) {
        (Some(b), _) => level(b)?,
        (None, Some(c)) => c.sweep.beta,
        (None, None) => level(0.95)?,
    };
    let beta = mode.effective_beta(beta, data.len())?;
    Ok(LoadedProblem {
        data,
        model,
        beta,
        config,
    })
}

fn gen_data(args: GenDataArgs) -> CliResult<()> {
    let config = RunConfig::load(&args.config)?;
    let Problem::Synthetic(mut spec) = config.sweep.problem else {
        return Err(usage("gen-data needs a synthetic problem in the config"));
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let data = generate_synthetic(&spec)?;
    let mut sparse = SparseDataset {
        dim: data.dim(),
        ..Default::default()
    };
    for z in data.samples() {
        let dense = z.features.to_dense();
        let indices = (0..dense.len() as u32).collect();
        sparse.rows.push(SparseVec::new(indices, dense)?);
        sparse.labels.push(z.target);
    }
    let file = std::fs::File::create(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    write_libsvm(std::io::BufWriter::new(file), &sparse).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    eprintln!("wrote {} samples of dimension {} to {}", data.len(), data.dim(), args.out.display());
    Ok(())
}

fn reference_settings(config: &Option<RunConfig>) -> ReferenceSettings {
    config.as_ref().map(|c| c.reference.clone()).unwrap_or_default()
}

fn compute_reference(p: &LoadedProblem) -> CliResult<ReferenceSolution> {
    let settings = reference_settings(&p.config);
    let theta0 = vec![0.0; p.data.dim()];
    Ok(cvarspl::solve_reference(
        &p.data,
        p.model,
        p.beta,
        &theta0,
        settings.max_iters,
        settings.tol,
    )?)
}

fn reference(args: ReferenceArgs) -> CliResult<()> {
    let p = load_problem(&args.problem)?;
    let out = match (&args.out, &p.config) {
        (Some(o), _) => o.clone(),
        (None, Some(c)) => c.reference.path.clone().unwrap_or_else(|| c.output_dir.join("reference.json")),
        (None, None) => return Err(usage("--out is required without --config")),
    };
    let sol = compute_reference(&p)?;
    if let Some(parent) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    sol.save(&out)?;
    eprintln!(
        "f* = {} after {} iterations (stationarity {}), written to {}",
        sol.f_star,
        sol.iterations,
        sol.stationarity,
        out.display()
    );
    Ok(())
}

fn solve(args: SolveArgs) -> CliResult<()> {
    let p = load_problem(&args.problem)?;
    if !(args.lambda > 0.0 && args.lambda.is_finite()) {
        return Err(usage("--lambda must be positive"));
    }
    let (mut config, mode) = match &p.config {
        Some(c) => {
            let mut spec = c.sweep.clone();
            if let Some(h) = args.horizon {
                spec.horizon = h;
                spec.record_every = None;
            }
            (spec.cell_config(args.method, args.lambda, args.seed), spec.mode)
        }
        None => (
            SolverConfig::new(args.method, p.beta, args.lambda, args.horizon.unwrap_or(20_000), args.seed),
            Mode::Cvar,
        ),
    };
    config.beta = p.beta;
    match (args.scaling, args.lambda_theta, args.lambda_alpha) {
        (Some(ScalingArg::Manual), Some(theta), Some(alpha)) => config.scaling = SplPlusScaling::Manual { theta, alpha },
        (Some(ScalingArg::Manual), _, _) => return Err(usage("--scaling manual needs --lambda-theta and --lambda-alpha")),
        (_, Some(_), _) | (_, _, Some(_)) => return Err(usage("--lambda-theta/--lambda-alpha need --scaling manual")),
        (Some(ScalingArg::InitialLoss), None, None) => config.scaling = SplPlusScaling::InitialLoss { ell0: None },
        (None, None, None) => {}
    }
    let init = random_init(p.data.dim(), args.seed);
    let record = run_mode(mode, &config, &p.data, p.model, &init)?;
    let f_star = match &args.reference {
        Some(path) => {
            let r = ReferenceSolution::load(path)?;
            r.check_matches(&p.data, p.model, p.beta)?;
            Some(r.f_star)
        }
        None => None,
    };
    bench::write_trace(&args.out, &record, f_star)?;
    if let Some(t) = record.diverged_at {
        eprintln!("run diverged at iteration {t}");
    }
    eprintln!(
        "final averaged objective {} written to {}",
        record.final_objective().unwrap_or(f64::NAN),
        args.out.display()
    );
    Ok(())
}

fn sweep(args: SweepArgs) -> CliResult<()> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(m) = args.method {
        config.sweep.methods = vec![m];
    }
    if let Some(b) = args.beta {
        config.sweep.beta = level(b)?;
    }
    if let Some(h) = args.horizon {
        config.sweep.horizon = h;
    }
    if let Some(s) = args.seed {
        config.sweep.seeds = vec![s];
    }
    if let Some(o) = args.out {
        config.output_dir = o;
    }
    config.validate()?;
    let (data, model) = config.sweep.problem.load()?;
    let beta = config.sweep.mode.effective_beta(config.sweep.beta, data.len())?;
    let reference = match &config.reference.path {
        Some(path) if path.exists() => ReferenceSolution::load(path)?,
        _ => {
            let theta0 = vec![0.0; data.dim()];
            let sol = cvarspl::solve_reference(&data, model, beta, &theta0, config.reference.max_iters, config.reference.tol)?;
            std::fs::create_dir_all(&config.output_dir).map_err(|e| Error::Io {
                path: config.output_dir.clone(),
                source: e,
            })?;
            let path = config.reference.path.clone().unwrap_or_else(|| config.output_dir.join("reference.json"));
            sol.save(&path)?;
            eprintln!("reference f* = {} written to {}", sol.f_star, path.display());
            sol
        }
    };
    let result = bench::run_sweep_on(&config.sweep, &data, model, &reference, args.jobs)?;
    bench::emit_results(&result, &config.output_dir)?;
    eprintln!("{} cells written to {}", result.cells.len(), config.output_dir.display());
    Ok(())
}

fn load_iterate(path: &Path) -> CliResult<Iterate> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let raw: Iterate = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok(Iterate::new(raw.theta, raw.alpha)?)
}

fn eval(args: EvalArgs) -> CliResult<()> {
    let p = load_problem(&args.problem)?;
    let x = load_iterate(&args.iterate)?;
    let f = empirical_objective(&x.theta, x.alpha, p.beta, &p.data, p.model)?;
    let var = exact_var(&x.theta, p.beta, &p.data, p.model)?;
    let cvar = exact_cvar(&x.theta, p.beta, &p.data, p.model)?;
    println!("F = {f}");
    println!("VaR = {var}");
    println!("CVaR = {cvar}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Reference(a) => reference(a),
        Command::Solve(a) => solve(a),
        Command::Sweep(a) => sweep(a),
        Command::Eval(a) => eval(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
