use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde_json::{json, Value};

use penlik::covariance::{cholesky_select, factor_cov, RowTuning};
use penlik::cox::CoxObjective;
use penlik::harness::experiment::{run_experiment, ExperimentConfig};
use penlik::harness::generate::{
    ar_series, factor, linear, logistic_data, poisson_data, rng_for, survival, ArParams, FactorParams,
    RegressionParams, SurvivalParams, RNG_NAME,
};
use penlik::harness::io::{
    json_string, read_dataset, read_json, read_survival, read_table, write_dataset, write_json, write_survival,
    write_table,
};
use penlik::harness::orthonormal::{fit_orthonormal, Universal};
use penlik::harness::subset::{best_subset_oracle, DEFAULT_MAX_D};
use penlik::likelihoods::{Dataset, GlmFamily, GlmObjective, Likelihood};
use penlik::lqa::{self, Init, LqaConfig};
use penlik::penalty::{PenaltyKind, PenaltySpec};
use penlik::qloss::{penalized_erm_fit, ErmLoss};
use penlik::tuning::{gcv_select, sandwich_se, TuneOptions, DEFAULT_GRID_SIZE};
use penlik::{Error, Result};

#[derive(Parser)]
#[command(name = "penlik", version, about = "Penalized likelihood estimation and simulation")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Penalized GLM or Cox fit at a fixed λ or with GCV.
    Fit(FitArgs),
    /// GCV over a λ grid, reporting the whole path.
    Tune(FitArgs),
    /// Covariance estimation.
    Cov(CovArgs),
    /// Penalized empirical-risk classifier for ±1 labels.
    Classify(ClassifyArgs),
    /// Write a simulated dataset as CSV.
    Simulate(SimulateArgs),
    /// Exhaustive best-subset selection.
    OracleSubset(SubsetArgs),
    /// Componentwise thresholding of coefficients.
    Threshold(ThresholdArgs),
    /// Monte Carlo study described by a JSON config.
    Experiment(ExperimentArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Seed of the random generator.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON object whose keys supply flags of the same name.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct PenaltyArgs {
    #[arg(long, default_value = "scad")]
    penalty: String,
    /// SCAD shape parameter.
    #[arg(long, default_value_t = 3.7)]
    a: f64,
    /// Bridge exponent.
    #[arg(long, default_value_t = 0.5)]
    q: f64,
}

impl PenaltyArgs {
    fn kind(&self) -> Result<PenaltyKind> {
        PenaltyKind::parse(&self.penalty, self.a, self.q)
    }
}

#[derive(Args, Clone)]
struct SolverArgs {
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long)]
    clamp_tau: Option<f64>,
    /// Starting point: `mle` or `zeros`.
    #[arg(long, default_value = "mle")]
    init: String,
}

impl SolverArgs {
    fn config(&self) -> Result<LqaConfig> {
        let init = match self.init.as_str() {
            "mle" => Init::Mle,
            "zeros" => Init::Zeros,
            other => return Err(Error::InvalidInput(format!("init: unknown start `{other}`"))),
        };
        let cfg = LqaConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            clamp_tau: self.clamp_tau,
            init,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Gaussian,
    Logistic,
    Poisson,
    Cox,
}

#[derive(Args, Clone)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    /// CSV with a `y` column, or `time` and `status` for Cox.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "gaussian")]
    family: Family,
    #[command(flatten)]
    penalty: PenaltyArgs,
    #[arg(long)]
    lambda: Option<f64>,
    /// Choose λ by generalized cross-validation.
    #[arg(long)]
    gcv: bool,
    #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
    grid_size: usize,
    /// Explicit λ grid.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    /// Zero-based columns left unpenalized.
    #[arg(long, value_delimiter = ',')]
    unpenalized: Vec<usize>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum CovMethod {
    Chol,
    Factor,
}

#[derive(Args, Clone)]
struct CovArgs {
    method: CovMethod,
    #[command(flatten)]
    common: Common,
    /// CSV of observations, one column per variable.
    #[arg(long)]
    data: Option<PathBuf>,
    /// CSV of factor observations (factor method).
    #[arg(long)]
    factors: Option<PathBuf>,
    #[command(flatten)]
    penalty: PenaltyArgs,
    /// Fixed λ for every row regression; GCV per row when absent.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
    grid_size: usize,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Quadratic,
    Exponential,
    Hinge,
}

#[derive(Args, Clone)]
struct ClassifyArgs {
    #[command(flatten)]
    common: Common,
    /// CSV with a `y` column coded ±1 or 0/1.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "hinge")]
    loss: LossArg,
    /// Smoothing width of the hinge loss.
    #[arg(long, default_value_t = penlik::qloss::DEFAULT_HINGE_DELTA)]
    delta: f64,
    #[command(flatten)]
    penalty: PenaltyArgs,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    unpenalized: Vec<usize>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimKind {
    Linear,
    Logistic,
    Poisson,
    Survival,
    Factor,
    Ar,
}

#[derive(Args, Clone)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    kind: Option<SimKind>,
    #[arg(long)]
    n: Option<usize>,
    /// True coefficients (regression and survival kinds).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    beta: Vec<f64>,
    /// Covariate correlation `ρ^|i−j|`.
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    baseline_hazard: f64,
    #[arg(long, default_value_t = 0.0)]
    censoring_rate: f64,
    /// Dimension (factor and AR kinds).
    #[arg(long)]
    d: Option<usize>,
    /// Number of factors.
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    idio_sd: f64,
    /// AR coefficients at lags 1, 2, ...
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    coefficients: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    innovation_sd: f64,
    /// Factor CSV path for the factor kind; defaults next to `--out`.
    #[arg(long)]
    factors_out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SubsetArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MAX_D)]
    max_d: usize,
    /// Columns included in every model.
    #[arg(long, value_delimiter = ',')]
    always: Vec<usize>,
}

#[derive(Args, Clone)]
struct ThresholdArgs {
    #[command(flatten)]
    common: Common,
    /// Coefficients to threshold.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    z: Vec<f64>,
    /// CSV with a `z` column, used when `--z` is absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    penalty: PenaltyArgs,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Use `σ √(2 log n / n)` in place of `--lambda`.
    #[arg(long)]
    universal: bool,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    /// Seed overriding the config's.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving `replicates.json` and `summary.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    replicates: Option<usize>,
}

fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone().ok_or_else(|| Error::InvalidInput(format!("--{flag} is required")))
}

fn wrap(command: &str, seed: u64, result: Value) -> Value {
    json!({ "command": command, "seed": seed, "rng": RNG_NAME, "result": result })
}

fn emit(common: &Common, command: &str, result: Value) -> Result<()> {
    let doc = wrap(command, common.seed, result);
    match &common.out {
        Some(path) => write_json(path, &doc),
        None => {
            print!("{}", json_string(&doc)?);
            Ok(())
        }
    }
}

fn penalty_vector(kind: PenaltyKind, lambda: f64, d: usize, unpenalized: &[usize]) -> Result<Vec<PenaltySpec>> {
    if let Some(&j) = unpenalized.iter().find(|&&j| j >= d) {
        return Err(Error::Dimension(format!("unpenalized column {j} out of range for d = {d}")));
    }
    let spec = PenaltySpec::new(kind, lambda)?;
    Ok((0..d)
        .map(|j| if unpenalized.contains(&j) { PenaltySpec::unpenalized(kind) } else { spec })
        .collect())
}

fn load_likelihood(args: &FitArgs) -> Result<(Box<dyn Likelihood>, Vec<String>)> {
    let path = required(&args.data, "data")?;
    Ok(match args.family {
        Family::Cox => {
            let (data, names) = read_survival(&path)?;
            (Box::new(CoxObjective::new(data)?), names)
        }
        fam => {
            let family = match fam {
                Family::Gaussian => GlmFamily::Gaussian,
                Family::Logistic => GlmFamily::Logistic,
                _ => GlmFamily::Poisson,
            };
            let (data, names) = read_dataset(&path)?;
            (Box::new(GlmObjective::new(family, data)?), names)
        }
    })
}

fn tune_options(args: &FitArgs) -> Result<TuneOptions> {
    Ok(TuneOptions {
        grid: args.grid.clone(),
        grid_size: args.grid_size,
        lqa: args.solver.config()?,
        unpenalized: args.unpenalized.clone(),
    })
}

fn fit_report(fit: &lqa::FitResult, lik: &dyn Likelihood, names: &[String]) -> Result<Value> {
    let stat = lqa::stationarity_residual(fit, lik, &fit.penalty)?;
    let se = if fit.active_set.is_empty() {
        Vec::new()
    } else {
        sandwich_se(fit, lik).unwrap_or_default()
    };
    let mut report = fit.to_json();
    report["names"] = json!(names);
    report["stationarity_residual"] = json!(stat.max_norm);
    report["sandwich_se"] = json!(se);
    Ok(report)
}

fn cmd_fit(args: &FitArgs) -> Result<Value> {
    let (lik, names) = load_likelihood(args)?;
    let kind = args.penalty.kind()?;
    if args.gcv {
        let tune = gcv_select(lik.as_ref(), kind, &tune_options(args)?)?;
        let mut report = fit_report(&tune.fit_at_chosen, lik.as_ref(), &names)?;
        report["lambda"] = json!(tune.chosen_lambda);
        report["per_coordinate_lambda"] = json!(tune.per_coordinate_lambda);
        return Ok(report);
    }
    let lambda = required(&args.lambda, "lambda (or --gcv)")?;
    let pen = penalty_vector(kind, lambda, lik.dim(), &args.unpenalized)?;
    let fit = lqa::fit(lik.as_ref(), &pen, &args.solver.config()?)?;
    let mut report = fit_report(&fit, lik.as_ref(), &names)?;
    report["lambda"] = json!(lambda);
    Ok(report)
}

fn cmd_tune(args: &FitArgs) -> Result<Value> {
    let (lik, names) = load_likelihood(args)?;
    let tune = gcv_select(lik.as_ref(), args.penalty.kind()?, &tune_options(args)?)?;
    let mut report = tune.to_json();
    report["names"] = json!(names);
    Ok(report)
}

fn cmd_cov(args: &CovArgs) -> Result<Value> {
    let (names, w) = read_table(&required(&args.data, "data")?)?;
    let mut report = match args.method {
        CovMethod::Chol => {
            let kind = args.penalty.kind()?;
            let tuning = match args.lambda {
                Some(lambda) => RowTuning::Fixed {
                    lambda,
                    lqa: args.solver.config()?,
                },
                None => RowTuning::Gcv(TuneOptions {
                    grid_size: args.grid_size,
                    lqa: args.solver.config()?,
                    ..Default::default()
                }),
            };
            cholesky_select(&w, kind, &tuning)?.to_json()
        }
        CovMethod::Factor => {
            let (_, f) = read_table(&required(&args.factors, "factors")?)?;
            factor_cov(&w, &f)?.to_json()
        }
    };
    report["names"] = json!(names);
    Ok(report)
}

fn cmd_classify(args: &ClassifyArgs) -> Result<Value> {
    let (data, names) = read_dataset(&required(&args.data, "data")?)?;
    // 0/1 labels are recoded to −1/1.
    let data = if data.y().iter().all(|&v| v == 0.0 || v == 1.0) {
        let y = data.y().map(|v| 2.0 * v - 1.0);
        Dataset::new(data.x().clone(), y)?
    } else {
        data
    };
    let loss = match args.loss {
        LossArg::Quadratic => ErmLoss::Quadratic,
        LossArg::Exponential => ErmLoss::Exponential,
        LossArg::Hinge => ErmLoss::Hinge { delta: args.delta },
    };
    let lambda = required(&args.lambda, "lambda")?;
    let pen = penalty_vector(args.penalty.kind()?, lambda, data.d(), &args.unpenalized)?;
    let erm = penalized_erm_fit(loss, &data, &pen, &args.solver.config()?)?;
    let eta = data.x() * &erm.fit.beta;
    let errors = eta
        .iter()
        .zip(data.y().iter())
        .filter(|(e, y)| (if **e >= 0.0 { 1.0 } else { -1.0 }) != **y)
        .count();
    let mut report = erm.fit.to_json();
    report["names"] = json!(names);
    report["lambda"] = json!(lambda);
    report["loss"] = json!(loss);
    report["exact_objective"] = json!(erm.exact_objective);
    report["surrogate_objective"] = json!(erm.surrogate_objective);
    report["training_error_rate"] = json!(errors as f64 / data.n() as f64);
    Ok(report)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}.csv"))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<Value> {
    let out = required(&args.common.out, "out")?;
    let kind = required(&args.kind, "kind")?;
    let n = required(&args.n, "n")?;
    let mut rng = rng_for(args.common.seed, 0);
    let reg = || RegressionParams {
        n,
        beta: args.beta.clone(),
        rho: args.rho,
        sigma: args.sigma,
    };
    let mut report = json!({ "path": out, "n": n });
    match kind {
        SimKind::Linear | SimKind::Logistic | SimKind::Poisson => {
            let data = match kind {
                SimKind::Linear => linear(&reg(), &mut rng)?,
                SimKind::Logistic => logistic_data(&reg(), &mut rng)?,
                _ => poisson_data(&reg(), &mut rng)?,
            };
            write_dataset(&out, &data)?;
            report["d"] = json!(data.d());
        }
        SimKind::Survival => {
            let p = SurvivalParams {
                n,
                beta: args.beta.clone(),
                rho: args.rho,
                baseline_hazard: args.baseline_hazard,
                censoring_rate: args.censoring_rate,
            };
            let data = survival(&p, &mut rng)?;
            write_survival(&out, &data)?;
            report["d"] = json!(data.d());
            report["events"] = json!(data.status().iter().filter(|s| **s).count());
        }
        SimKind::Factor => {
            let p = FactorParams {
                n,
                d: required(&args.d, "d")?,
                k: args.k,
                idio_sd: args.idio_sd,
            };
            let s = factor(&p, &mut rng)?;
            let fpath = args.factors_out.clone().unwrap_or_else(|| sibling(&out, "_factors"));
            write_table(&out, &names("y", p.d), &s.returns)?;
            write_table(&fpath, &names("f", p.k), &s.factors)?;
            report["d"] = json!(p.d);
            report["factors_path"] = json!(fpath);
            report["loadings"] = matrix_json(&s.loadings);
        }
        SimKind::Ar => {
            let p = ArParams {
                n,
                d: required(&args.d, "d")?,
                coefficients: args.coefficients.clone(),
                innovation_sd: args.innovation_sd,
            };
            write_table(&out, &names("w", p.d), &ar_series(&p, &mut rng)?)?;
            report["d"] = json!(p.d);
        }
    }
    Ok(report)
}

fn names(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("{prefix}{j}")).collect()
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    json!(m.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>())
}

fn cmd_subset(args: &SubsetArgs) -> Result<Value> {
    let (data, names) = read_dataset(&required(&args.data, "data")?)?;
    let fit = best_subset_oracle(&data, required(&args.lambda, "lambda")?, args.max_d, &args.always)?;
    let mut report = serde_json::to_value(&fit)?;
    report["names"] = json!(names);
    Ok(report)
}

fn cmd_threshold(args: &ThresholdArgs) -> Result<Value> {
    let z: Vec<f64> = if !args.z.is_empty() {
        args.z.clone()
    } else {
        let path = required(&args.data, "z (or --data)")?;
        let (header, m) = read_table(&path)?;
        let c = header
            .iter()
            .position(|h| h == "z")
            .ok_or_else(|| Error::InvalidInput(format!("{}: missing `z` column", path.display())))?;
        m.column(c).iter().copied().collect()
    };
    let universal = if args.universal {
        Some(Universal {
            n: required(&args.n, "n")?,
            sigma: args.sigma,
        })
    } else {
        None
    };
    let fit = fit_orthonormal(&z, args.penalty.kind()?, args.lambda, universal)?;
    Ok(serde_json::to_value(&fit)?)
}

fn cmd_experiment(args: &ExperimentArgs) -> Result<Value> {
    let path = required(&args.config, "config")?;
    let out = required(&args.out, "out")?;
    let mut config: ExperimentConfig = serde_json::from_value(read_json(&path)?)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(r) = args.replicates {
        config.replicates = r;
    }
    let report = run_experiment(&config, &out)?;
    Ok(report.summary)
}

/// Flags taken from the JSON object in the `--config` file, inserted ahead of
/// the command-line flags so that the latter win.
fn config_flags(path: &Path) -> Result<Vec<OsString>> {
    let value = read_json(path)?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::InvalidInput(format!("{}: config must be a JSON object", path.display())))?;
    let mut flags = Vec::new();
    for (key, v) in obj {
        let flag = format!("--{}", key.replace('_', "-"));
        let text = match v {
            Value::Bool(true) => {
                flags.push(flag.into());
                continue;
            }
            Value::Bool(false) | Value::Null => continue,
            Value::String(s) => s.clone(),
            Value::Number(n) => n.to_string(),
            Value::Array(items) => items
                .iter()
                .map(|i| match i {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(","),
            Value::Object(_) => {
                return Err(Error::InvalidInput(format!("config key `{key}`: nested objects are not flags")));
            }
        };
        if key == "method" {
            flags.insert(0, text.into());
        } else {
            flags.push(format!("{flag}={text}").into());
        }
    }
    Ok(flags)
}

/// Expands `--config FILE` for every subcommand except `experiment`, whose
/// config is the experiment description itself.
fn expand_args(raw: Vec<OsString>) -> Result<Vec<OsString>> {
    let is_experiment = raw.get(1).is_some_and(|s| s == "experiment");
    let mut config = None;
    for (i, a) in raw.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            config = raw.get(i + 1).map(PathBuf::from);
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        }
    }
    let Some(path) = config.filter(|_| !is_experiment) else {
        return Ok(raw);
    };
    let mut flags = config_flags(&path)?;
    let mut out: Vec<OsString> = raw.iter().take(2).cloned().collect();
    // Positional arguments (the `cov` method) stay ahead of inserted flags.
    let rest: Vec<OsString> = raw.iter().skip(2).cloned().collect();
    let positional = rest.first().filter(|a| !a.to_string_lossy().starts_with('-')).cloned();
    if let Some(p) = positional {
        if flags.first().is_some_and(|f| !f.to_string_lossy().starts_with('-')) {
            flags.remove(0);
        }
        out.push(p);
        out.extend(flags);
        out.extend(rest.into_iter().skip(1));
    } else {
        out.extend(flags);
        out.extend(rest);
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Fit(a) => emit(&a.common, "fit", cmd_fit(a)?),
        Command::Tune(a) => emit(&a.common, "tune", cmd_tune(a)?),
        Command::Cov(a) => emit(&a.common, "cov", cmd_cov(a)?),
        Command::Classify(a) => emit(&a.common, "classify", cmd_classify(a)?),
        Command::Simulate(a) => {
            let report = wrap("simulate", a.common.seed, cmd_simulate(a)?);
            print!("{}", json_string(&report)?);
            Ok(())
        }
        Command::OracleSubset(a) => emit(&a.common, "oracle-subset", cmd_subset(a)?),
        Command::Threshold(a) => emit(&a.common, "threshold", cmd_threshold(a)?),
        Command::Experiment(a) => {
            let summary = cmd_experiment(a)?;
            print!("{}", json_string(&summary)?);
            Ok(())
        }
    }
}

fn fail(code: &str, message: String, status: u8) -> ExitCode {
    let doc = json!({ "error": { "code": code, "message": message } });
    eprintln!("{doc}");
    ExitCode::from(status)
}

fn main() -> ExitCode {
    let args = match expand_args(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => return fail(e.code(), e.to_string(), 1),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.render().to_string().trim().to_string(), 2),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.code(), e.to_string(), 1),
    }
}
