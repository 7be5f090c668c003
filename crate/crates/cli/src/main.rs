//! `cfiv` — fit instrumental-variable and control-function models from CSV
//! data, replicate Monte Carlo tables, and evaluate the closed-form 2SLS
//! bias oracle.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 estimation
//! error (rank deficiency, convergence, too many failed replicates).

mod ingest;
mod render;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cfiv_core::{
    bias_oracle_2sls, bootstrap, fit_2sls, fit_cf, fit_ols, mc_rows, run_grid, simulate_dgp,
    CfModel, Estimator, GridSpec, McConfig, SkedasticSpec,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

use render::{write_output, FitReport, OracleReport};

/// Errors surfaced to the user, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config file, or role definitions (exit 2).
    Config(String),
    /// Unreadable or malformed input data (exit 3).
    Data(String),
    /// The estimation engine rejected a well-formed problem (exit 4).
    Estimation(cfiv_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Estimation(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "{msg}"),
            CliError::Data(msg) => write!(f, "{msg}"),
            CliError::Estimation(err) => write!(f, "{err}"),
        }
    }
}

impl From<cfiv_core::Error> for CliError {
    fn from(err: cfiv_core::Error) -> Self {
        CliError::Estimation(err)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "cfiv",
    version,
    about = "Control-function estimation for endogenous regressors with \
             instrument-dependent first-stage variance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit OLS, 2SLS, or the control-function estimator on a CSV dataset.
    Fit(FitArgs),
    /// Run a Monte Carlo grid and render per-cell summary rows.
    Simulate(SimulateArgs),
    /// Monte Carlo evaluation of the large-sample 2SLS bias for a design.
    BiasOracle(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Csv,
    Markdown,
    Json,
}

impl OutputFormat {
    fn from_name(name: &str) -> Result<Self, CliError> {
        match name.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "markdown" | "md" => Ok(OutputFormat::Markdown),
            "json" => Ok(OutputFormat::Json),
            other => Err(CliError::Config(format!(
                "unknown format `{other}` (expected csv, markdown, or json)"
            ))),
        }
    }
}

#[derive(Debug, Args)]
struct SharedArgs {
    /// RNG seed; when omitted, a seed is drawn from OS entropy and logged.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format.
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    /// JSON config file with flat keys mirroring the flags; flags override.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    shared: SharedArgs,
    /// Input CSV (header row required).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Outcome column.
    #[arg(long)]
    y: Option<String>,
    /// Endogenous regressor column.
    #[arg(long)]
    d: Option<String>,
    /// Exogenous control columns (an intercept is added if none is constant).
    #[arg(long, value_delimiter = ',')]
    x: Option<Vec<String>>,
    /// Instrument columns.
    #[arg(long, value_delimiter = ',')]
    z: Option<Vec<String>>,
    /// Estimator: ols, 2sls, or cf.
    #[arg(long)]
    estimator: Option<String>,
    /// Control-function terms: cf1, cf2, or a list like v+vd+v2.
    #[arg(long = "cf-terms")]
    cf_terms: Option<String>,
    /// Variance-scale family: unit, linear, or loglinear.
    #[arg(long)]
    skedastic: Option<String>,
    /// Pairs-bootstrap replicates (bare flag = 200); cf estimator only.
    #[arg(long, num_args = 0..=1, default_missing_value = "200")]
    bootstrap: Option<usize>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    shared: SharedArgs,
    /// Grid preset: table1, table2, table3, or table4.
    #[arg(long)]
    preset: Option<String>,
    /// Endogeneity loading of the structural error on the first-stage shock.
    #[arg(long)]
    lambda: Option<f64>,
    /// First-stage heteroskedasticity slope.
    #[arg(long)]
    gamma1: Option<f64>,
    /// Sample sizes, e.g. 250,500,1000.
    #[arg(long = "n-grid", value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    /// Structural-scale slopes on D.
    #[arg(long = "delta1-grid", value_delimiter = ',')]
    delta1_grid: Option<Vec<f64>>,
    /// Structural-scale slopes on D².
    #[arg(long = "delta2-grid", value_delimiter = ',')]
    delta2_grid: Option<Vec<f64>>,
    /// Replications per grid cell.
    #[arg(long)]
    replications: Option<usize>,
    /// Estimators to run (default ols,2sls,cf1,cf2).
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    /// Instead of simulating, write one drawn dataset (first grid cell,
    /// replication 0) as CSV with columns y,d,z and exit.
    #[arg(long = "emit-csv")]
    emit_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[command(flatten)]
    shared: SharedArgs,
    /// Endogeneity loading of the structural error on the first-stage shock.
    #[arg(long)]
    lambda: Option<f64>,
    /// First-stage heteroskedasticity slope.
    #[arg(long)]
    gamma1: Option<f64>,
    /// Structural-scale slope on D.
    #[arg(long)]
    delta1: Option<f64>,
    /// Structural-scale slope on D².
    #[arg(long)]
    delta2: Option<f64>,
    /// Monte Carlo draws (at least 100000).
    #[arg(long)]
    draws: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::BiasOracle(args) => cmd_bias_oracle(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

// ---------------------------------------------------------------------------
// Config-file handling

/// Flat-key JSON config mirroring the CLI flags. Flag values take priority.
struct FileConfig {
    map: serde_json::Map<String, serde_json::Value>,
}

impl FileConfig {
    fn empty() -> Self {
        Self {
            map: serde_json::Map::new(),
        }
    }

    fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
            CliError::Config(format!("config {} is not valid JSON: {e}", path.display()))
        })?;
        match value {
            serde_json::Value::Object(map) => Ok(Self { map }),
            _ => Err(CliError::Config(format!(
                "config {} must be a JSON object with flat keys",
                path.display()
            ))),
        }
    }

    fn check_known(&self, allowed: &[&str]) -> Result<(), CliError> {
        for key in self.map.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(CliError::Config(format!(
                    "unknown config key `{key}` (expected one of: {})",
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    fn string(&self, key: &str) -> Result<Option<String>, CliError> {
        match self.map.get(key) {
            None => Ok(None),
            Some(serde_json::Value::String(s)) => Ok(Some(s.clone())),
            Some(serde_json::Value::Number(n)) => Ok(Some(n.to_string())),
            Some(other) => Err(CliError::Config(format!(
                "config key `{key}` must be a string, got {other}"
            ))),
        }
    }

    fn f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        match self.map.get(key) {
            None => Ok(None),
            Some(serde_json::Value::Number(n)) => n.as_f64().map(Some).ok_or_else(|| {
                CliError::Config(format!("config key `{key}` is not a finite number"))
            }),
            Some(other) => Err(CliError::Config(format!(
                "config key `{key}` must be a number, got {other}"
            ))),
        }
    }

    fn unsigned(&self, key: &str) -> Result<Option<u64>, CliError> {
        match self.map.get(key) {
            None => Ok(None),
            Some(serde_json::Value::Number(n)) => n.as_u64().map(Some).ok_or_else(|| {
                CliError::Config(format!("config key `{key}` must be a nonnegative integer"))
            }),
            Some(other) => Err(CliError::Config(format!(
                "config key `{key}` must be a nonnegative integer, got {other}"
            ))),
        }
    }

    fn usize(&self, key: &str) -> Result<Option<usize>, CliError> {
        Ok(self.unsigned(key)?.map(|v| v as usize))
    }

    /// Accepts a JSON array of strings/numbers or a single comma-separated
    /// string.
    fn string_list(&self, key: &str) -> Result<Option<Vec<String>>, CliError> {
        match self.map.get(key) {
            None => Ok(None),
            Some(serde_json::Value::String(s)) => Ok(Some(
                s.split(',')
                    .map(|t| t.trim().to_string())
                    .filter(|t| !t.is_empty())
                    .collect(),
            )),
            Some(serde_json::Value::Array(items)) => {
                let mut out = Vec::with_capacity(items.len());
                for item in items {
                    match item {
                        serde_json::Value::String(s) => out.push(s.clone()),
                        serde_json::Value::Number(n) => out.push(n.to_string()),
                        other => {
                            return Err(CliError::Config(format!(
                                "config key `{key}` has a non-string element {other}"
                            )))
                        }
                    }
                }
                Ok(Some(out))
            }
            Some(other) => Err(CliError::Config(format!(
                "config key `{key}` must be a list, got {other}"
            ))),
        }
    }

    fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        let Some(raw) = self.string_list(key)? else {
            return Ok(None);
        };
        raw.iter()
            .map(|s| {
                s.parse::<f64>().map_err(|_| {
                    CliError::Config(format!("config key `{key}`: `{s}` is not a number"))
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    fn usize_list(&self, key: &str) -> Result<Option<Vec<usize>>, CliError> {
        let Some(raw) = self.string_list(key)? else {
            return Ok(None);
        };
        raw.iter()
            .map(|s| {
                s.parse::<usize>().map_err(|_| {
                    CliError::Config(format!("config key `{key}`: `{s}` is not an integer"))
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }
}

fn load_file_config(shared: &SharedArgs) -> Result<FileConfig, CliError> {
    match &shared.config {
        Some(path) => FileConfig::load(path),
        None => Ok(FileConfig::empty()),
    }
}

fn shared_from_config(
    shared: &SharedArgs,
    file: &FileConfig,
) -> Result<(Option<usize>, Option<PathBuf>, OutputFormat), CliError> {
    let workers = match shared.workers {
        Some(w) => Some(w),
        None => file.usize("workers")?,
    };
    let out = match &shared.out {
        Some(p) => Some(p.clone()),
        None => file.string("out")?.map(PathBuf::from),
    };
    let format = match shared.format {
        Some(f) => f,
        None => match file.string("format")? {
            Some(name) => OutputFormat::from_name(&name)?,
            None => OutputFormat::Markdown,
        },
    };
    Ok((workers, out, format))
}

/// Resolves the seed (flag > config > OS entropy) and logs it to stderr so
/// every run is reproducible after the fact.
fn resolve_seed(flag: Option<u64>, file: &FileConfig) -> Result<u64, CliError> {
    if let Some(seed) = flag {
        eprintln!("seed: {seed}");
        return Ok(seed);
    }
    if let Some(seed) = file.unsigned("seed")? {
        eprintln!("seed: {seed}");
        return Ok(seed);
    }
    let seed: u64 = rand::random();
    eprintln!("seed: {seed} (drawn from OS entropy; pass --seed {seed} to reproduce)");
    Ok(seed)
}

/// Runs `f` inside a rayon pool of the requested size (or the global pool).
fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match workers {
        None => f(),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .expect("worker pool")
            .install(f),
    }
}

// ---------------------------------------------------------------------------
// fit

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FitEstimator {
    Ols,
    Tsls,
    Cf,
}

impl FitEstimator {
    fn from_name(name: &str) -> Result<Self, CliError> {
        match name.trim().to_ascii_lowercase().as_str() {
            "ols" => Ok(FitEstimator::Ols),
            "2sls" | "tsls" => Ok(FitEstimator::Tsls),
            "cf" => Ok(FitEstimator::Cf),
            other => Err(CliError::Config(format!(
                "unknown estimator `{other}` (expected ols, 2sls, or cf)"
            ))),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            FitEstimator::Ols => "ols",
            FitEstimator::Tsls => "2sls",
            FitEstimator::Cf => "cf",
        }
    }
}

const FIT_KEYS: [&str; 13] = [
    "seed",
    "workers",
    "out",
    "format",
    "csv",
    "y",
    "d",
    "x",
    "z",
    "estimator",
    "cf-terms",
    "skedastic",
    "bootstrap",
];

fn cmd_fit(args: FitArgs) -> Result<(), CliError> {
    let file = load_file_config(&args.shared)?;
    file.check_known(&FIT_KEYS)?;
    let (workers, out, format) = shared_from_config(&args.shared, &file)?;
    let seed = resolve_seed(args.shared.seed, &file)?;

    let csv_path = match args.csv {
        Some(p) => p,
        None => file
            .string("csv")?
            .map(PathBuf::from)
            .ok_or_else(|| CliError::Config("missing required --csv PATH".into()))?,
    };
    let y_col = args
        .y
        .or(file.string("y")?)
        .ok_or_else(|| CliError::Config("missing required --y COLUMN".into()))?;
    let d_col = args
        .d
        .or(file.string("d")?)
        .ok_or_else(|| CliError::Config("missing required --d COLUMN".into()))?;
    let x_cols = args.x.or(file.string_list("x")?).unwrap_or_default();
    let z_cols = args.z.or(file.string_list("z")?).unwrap_or_default();
    let estimator = FitEstimator::from_name(
        &args
            .estimator
            .or(file.string("estimator")?)
            .unwrap_or_else(|| "cf".to_string()),
    )?;
    let cf_terms = args
        .cf_terms
        .or(file.string("cf-terms")?)
        .unwrap_or_else(|| "cf2".to_string());
    let skedastic_name = args
        .skedastic
        .or(file.string("skedastic")?)
        .unwrap_or_else(|| "linear".to_string());
    let bootstrap_b = args.bootstrap.or(file.usize("bootstrap")?).unwrap_or(0);

    if estimator != FitEstimator::Cf && bootstrap_b > 0 {
        return Err(CliError::Config(format!(
            "--bootstrap applies to --estimator cf only (got {})",
            estimator.name()
        )));
    }
    if estimator != FitEstimator::Ols && z_cols.is_empty() {
        return Err(CliError::Config(format!(
            "--estimator {} needs at least one instrument column via --z",
            estimator.name()
        )));
    }
    let skedastic =
        SkedasticSpec::from_name(&skedastic_name).map_err(|e| CliError::Config(e.to_string()))?;
    let model = if estimator == FitEstimator::Cf {
        Some(CfModel::parse(&cf_terms, skedastic).map_err(|e| CliError::Config(e.to_string()))?)
    } else {
        None
    };

    let ingest::Ingested { data, rows_dropped } =
        ingest::read_dataset(&csv_path, &y_col, &d_col, &x_cols, &z_cols)?;
    if rows_dropped > 0 {
        eprintln!("note: dropped {rows_dropped} row(s) with missing values in role columns");
    }

    let mut report = FitReport {
        estimator: estimator.name().to_string(),
        n: data.n(),
        rows_dropped,
        seed,
        version: env!("CARGO_PKG_VERSION"),
        ..FitReport::default()
    };

    match estimator {
        FitEstimator::Ols => {
            let fit = fit_ols(&data)?;
            report.estimate = fit.alpha1;
            report.se_analytic = fit.se_alpha1();
            report.condition_number = fit.condition_number;
        }
        FitEstimator::Tsls => {
            let fit = fit_2sls(&data)?;
            report.estimate = fit.alpha1;
            report.se_analytic = fit.se_alpha1();
            report.condition_number = fit.condition_number;
            report.first_stage_f = fit.first_stage_f;
            report.weak_instrument = Some(fit.weak_instrument);
        }
        FitEstimator::Cf => {
            let model = model.as_ref().expect("constructed above");
            let fit = with_workers(workers, || fit_cf(&data, model))?;
            report.estimate = fit.alpha1;
            report.se_analytic = fit.se_alpha1();
            report.se_naive = Some(fit.se_alpha1_naive());
            report.condition_number = fit.condition_number;
            report.cf_terms = Some(model.term_spec());
            report.skedastic = Some(skedastic.name().to_string());
            report.floored_scales = Some(fit.first_stage.skedastic.floored_count);
            report.gn_converged = Some(fit.first_stage.skedastic.converged);
            report.first_stage_f = fit_2sls(&data).ok().and_then(|f| f.first_stage_f);
            report.weak_instrument = report.first_stage_f.map(|f| f < 10.0);
            if bootstrap_b > 0 {
                let boot = with_workers(workers, || bootstrap(&data, model, bootstrap_b, seed))?;
                report.se_bootstrap = Some(boot.se[0]);
                report.ci_bootstrap = Some(boot.ci_percentile[0]);
                report.b_effective = Some(boot.b_effective());
                report.bootstrap_failed = Some(boot.failed_replicates);
            }
        }
    }
    report.ci_analytic = (
        report.estimate - 1.96 * report.se_analytic,
        report.estimate + 1.96 * report.se_analytic,
    );

    let content = match format {
        OutputFormat::Markdown => report.to_markdown(),
        OutputFormat::Csv => report.to_csv(),
        OutputFormat::Json => report.to_json().to_string() + "\n",
    };
    write_output(&out, &content)
}

// ---------------------------------------------------------------------------
// simulate

const SIMULATE_KEYS: [&str; 13] = [
    "seed",
    "workers",
    "out",
    "format",
    "preset",
    "lambda",
    "gamma1",
    "n-grid",
    "delta1-grid",
    "delta2-grid",
    "replications",
    "estimators",
    "emit-csv",
];

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let file = load_file_config(&args.shared)?;
    file.check_known(&SIMULATE_KEYS)?;
    let (workers, out, format) = shared_from_config(&args.shared, &file)?;
    let seed = resolve_seed(args.shared.seed, &file)?;

    let preset = args.preset.or(file.string("preset")?);
    let mut spec = match &preset {
        Some(name) => GridSpec::preset(name, seed).map_err(|e| CliError::Config(e.to_string()))?,
        None => GridSpec::standard(1.0, 0.0, seed),
    };
    if let Some(lambda) = args.lambda.or(file.f64("lambda")?) {
        spec.lambda = lambda;
    }
    if let Some(gamma1) = args.gamma1.or(file.f64("gamma1")?) {
        spec.gamma1 = gamma1;
    }
    if let Some(n_grid) = args.n_grid.or(file.usize_list("n-grid")?) {
        spec.n_grid = n_grid;
    }
    if let Some(d1) = args.delta1_grid.or(file.f64_list("delta1-grid")?) {
        spec.delta1_grid = d1;
    }
    if let Some(d2) = args.delta2_grid.or(file.f64_list("delta2-grid")?) {
        spec.delta2_grid = d2;
    }
    if let Some(reps) = args.replications.or(file.usize("replications")?) {
        spec.replications = reps;
    }
    let estimator_names = args
        .estimators
        .or(file.string_list("estimators")?)
        .unwrap_or_else(|| vec!["ols".into(), "2sls".into(), "cf1".into(), "cf2".into()]);
    let mut estimators = Vec::with_capacity(estimator_names.len());
    for name in &estimator_names {
        estimators.push(Estimator::from_name(name).map_err(|e| CliError::Config(e.to_string()))?);
    }
    if spec.n_grid.is_empty() || spec.delta1_grid.is_empty() || spec.delta2_grid.is_empty() {
        return Err(CliError::Config("grid axes must be nonempty".into()));
    }
    let cells = spec.cells();
    for cell in &cells {
        cell.validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }

    if let Some(path) = &args.emit_csv {
        let data = simulate_dgp(&cells[0], 0)?;
        let mut csv = String::from("y,d,z\n");
        for i in 0..data.n() {
            csv.push_str(&format!(
                "{},{},{}\n",
                data.y()[i],
                data.d()[i],
                data.z()[(i, 0)]
            ));
        }
        std::fs::write(path, csv)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
        eprintln!(
            "wrote one simulated dataset (n={}, replication 0) to {}",
            cells[0].n,
            path.display()
        );
        return Ok(());
    }

    let results = run_grid(&spec, &estimators, workers, |cell, elapsed| {
        eprintln!(
            "cell n={} delta1={} delta2={} done in {:.1}s",
            cell.n,
            cell.delta1,
            cell.delta2,
            elapsed.as_secs_f64()
        );
    })?;
    let rows = mc_rows(&results);

    let content = match format {
        OutputFormat::Csv => cfiv_core::rows_to_csv(&rows),
        OutputFormat::Markdown => cfiv_core::rows_to_markdown(&rows),
        OutputFormat::Json => {
            render::simulate_json(&spec, preset.as_deref(), &rows, seed).to_string() + "\n"
        }
    };
    write_output(&out, &content)
}

// ---------------------------------------------------------------------------
// bias-oracle

const ORACLE_KEYS: [&str; 9] = [
    "seed", "workers", "out", "format", "lambda", "gamma1", "delta1", "delta2", "draws",
];

fn cmd_bias_oracle(args: OracleArgs) -> Result<(), CliError> {
    let file = load_file_config(&args.shared)?;
    file.check_known(&ORACLE_KEYS)?;
    let (workers, out, format) = shared_from_config(&args.shared, &file)?;
    let seed = resolve_seed(args.shared.seed, &file)?;

    let lambda = args.lambda.or(file.f64("lambda")?).unwrap_or(1.0);
    let gamma1 = args.gamma1.or(file.f64("gamma1")?).unwrap_or(0.0);
    let delta1 = args.delta1.or(file.f64("delta1")?).unwrap_or(0.0);
    let delta2 = args.delta2.or(file.f64("delta2")?).unwrap_or(0.0);
    let draws = args.draws.or(file.usize("draws")?).unwrap_or(1_000_000);
    if draws < 100_000 {
        return Err(CliError::Config(format!(
            "--draws {draws} too small; the oracle needs at least 100000 draws"
        )));
    }

    let config = McConfig::new(1000, lambda, gamma1, delta1, delta2, seed);
    config
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let oracle = with_workers(workers, || bias_oracle_2sls(&config, draws, seed))?;

    let report = OracleReport {
        bias: oracle.bias,
        mc_standard_error: oracle.mc_standard_error,
        sigma_h: oracle.sigma_h,
        cross_moment: oracle.cross_moment,
        draws: oracle.mc_draws,
        lambda,
        gamma1,
        delta1,
        delta2,
        seed,
        version: env!("CARGO_PKG_VERSION"),
    };
    let content = match format {
        OutputFormat::Markdown => report.to_markdown(),
        OutputFormat::Csv => report.to_csv(),
        OutputFormat::Json => report.to_json().to_string() + "\n",
    };
    write_output(&out, &content)
}
