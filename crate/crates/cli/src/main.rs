use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use csde::estimators::{AnalysisConfig, EstimatorKind, EstimatorOptions, FluctuationForm};
use csde::glm::{DesignSpec, FitOptions};
use csde::nuisance::{MediatorMode, ModelSuite, Truncation};
use csde::report::{emit_report, estimate_report, ReportFormat};
use csde::simulate::{
    oracle_truth, run_scenario, scenario_presets, write_records_csv, BootstrapSettings, DgmSpec,
    SampleBasis, ScenarioSpec, DGM_PRESETS, SCHEMA_VERSION,
};
use csde::tabular::{load_csv, ColumnMap};

mod exit {
    pub const CONFIG: u8 = 3;
    pub const FILE: u8 = 4;
    pub const DATA: u8 = 5;
    pub const ESTIMATION: u8 = 6;
}

#[derive(Parser)]
#[command(
    name = "csde",
    version,
    about = "Complier stochastic direct effect estimation"
)]
struct Cli {
    /// Format of the report written to stdout.
    #[arg(long, value_enum, global = true, default_value_t = Format::Table)]
    format: Format,
    /// Also write the JSON report to this file.
    #[arg(long, global = true, value_name = "PATH")]
    json: Option<PathBuf>,
    /// Worker threads for simulation and bootstrap replicates.
    #[arg(long, global = true, env = "CSDE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Table => ReportFormat::Table,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo study of the estimators on a simulated mechanism.
    Simulate(SimulateArgs),
    /// Estimate the CSDE on a CSV file.
    Estimate(EstimateArgs),
    /// Exact target parameters of a simulation mechanism.
    Oracle(OracleArgs),
    /// List built-in mechanisms and scenarios.
    Presets,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in scenario, `<mechanism>-<misspecification>`.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Whether `n` counts sampled units or all drawn units.
    #[arg(long, value_enum)]
    sample_basis: Option<Basis>,
    /// Bootstrap replicates per simulated dataset (0 turns it off).
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Write per-replicate results as CSV.
    #[arg(long, value_name = "PATH")]
    records: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Basis {
    Sampled,
    Total,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Covariate columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    w: Option<Vec<String>>,
    #[arg(long)]
    col_a: Option<String>,
    #[arg(long)]
    col_z: Option<String>,
    #[arg(long)]
    col_m: Option<String>,
    #[arg(long)]
    col_y: Option<String>,
    /// Sampling indicator column.
    #[arg(long)]
    col_delta: Option<String>,
    #[arg(long)]
    formula_a: Option<String>,
    #[arg(long)]
    formula_z: Option<String>,
    #[arg(long)]
    formula_m: Option<String>,
    #[arg(long)]
    formula_y: Option<String>,
    #[arg(long)]
    formula_delta: Option<String>,
    /// Let the mediator model depend on the instrument.
    #[arg(long)]
    mediator_includes_instrument: bool,
    /// Estimators to run, comma separated (iptw, ee, tmle-efficient,
    /// tmle-compatible).
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    #[arg(long)]
    truncation_lo: Option<f64>,
    #[arg(long)]
    truncation_hi: Option<f64>,
    #[arg(long)]
    level: Option<f64>,
    /// Put the mediator density ratio into the outcome fluctuation weights.
    #[arg(long)]
    weighted_fluctuation: bool,
    /// Percentile bootstrap replicates (0 turns it off).
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dgm: Option<String>,
}

#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(ConfigError(msg.into()))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Named<T> {
    Name(String),
    Spec(T),
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    #[allow(dead_code)]
    schema_version: Option<u32>,
    scenario: Option<Named<ScenarioSpec>>,
    n: Option<usize>,
    reps: Option<usize>,
    seed: Option<u64>,
    sample_basis: Option<SampleBasis>,
    bootstrap: Option<usize>,
    records: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct EstimateConfig {
    #[allow(dead_code)]
    schema_version: Option<u32>,
    input: Option<PathBuf>,
    columns: Option<ColumnMap>,
    suite: Option<ModelSuite>,
    estimators: Option<Vec<EstimatorKind>>,
    truncation: Option<Truncation>,
    nuisance_fit: Option<FitOptions>,
    estimator: Option<EstimatorOptions>,
    bootstrap: Option<BootstrapSettings>,
    seed: Option<u64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct OracleConfig {
    #[allow(dead_code)]
    schema_version: Option<u32>,
    dgm: Option<Named<DgmSpec>>,
}

fn read_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(config_err(format!(
                "{}: schema_version {v} is not supported (expected {SCHEMA_VERSION})",
                path.display()
            )))
        }
        None => {
            return Err(config_err(format!(
                "{}: missing schema_version",
                path.display()
            )));
        }
    }
    serde_json::from_value(value).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

struct Output {
    format: ReportFormat,
    json: Option<PathBuf>,
}

impl Output {
    fn emit<R: csde::report::Emit + ?Sized>(&self, report: &R) -> Result<()> {
        let text = emit_report(report, self.format)?;
        let mut out = std::io::stdout().lock();
        out.write_all(text.as_bytes())?;
        out.flush()?;
        if let Some(p) = &self.json {
            write_text(p, &emit_report(report, ReportFormat::Json)?)?;
        }
        Ok(())
    }
}

fn simulate(args: SimulateArgs, threads: Option<usize>, out: &Output) -> Result<()> {
    let cfg: SimulateConfig = read_config(args.config.as_deref())?;
    let mut spec = match (args.scenario, cfg.scenario) {
        (Some(name), _) | (None, Some(Named::Name(name))) => {
            ScenarioSpec::preset(&name).map_err(|e| config_err(e.to_string()))?
        }
        (None, Some(Named::Spec(s))) => s,
        (None, None) => return Err(config_err("no scenario given (use --scenario or a config)")),
    };
    if let Some(n) = args.n.or(cfg.n) {
        spec.n = n;
    }
    if let Some(b) = args.sample_basis {
        spec.sample_basis = match b {
            Basis::Sampled => SampleBasis::Sampled,
            Basis::Total => SampleBasis::Total,
        };
    } else if let Some(b) = cfg.sample_basis {
        spec.sample_basis = b;
    }
    match args.bootstrap.or(cfg.bootstrap) {
        Some(0) => spec.bootstrap = None,
        Some(b) => {
            spec.bootstrap
                .get_or_insert_with(BootstrapSettings::default)
                .replicates = b
        }
        None => {}
    }
    if spec.n == 0 {
        return Err(config_err("n must be at least 1"));
    }
    let reps = args.reps.or(cfg.reps).unwrap_or(1000);
    if reps == 0 {
        return Err(config_err("reps must be at least 1"));
    }
    let seed = args.seed.or(cfg.seed).unwrap_or(1);
    let run = run_scenario(&spec, reps, seed, threads)?;
    if let Some(p) = args.records.or(cfg.records) {
        let mut w = create(&p)?;
        write_records_csv(&run.records, &mut w)?;
        w.flush()?;
    }
    out.emit(&run.report)
}

fn default_suite(w: &[String], mode: MediatorMode, delta: bool) -> Result<ModelSuite> {
    let rhs = |lead: &[&str]| -> String {
        let terms: Vec<&str> = lead
            .iter()
            .copied()
            .chain(w.iter().map(String::as_str))
            .collect();
        if terms.is_empty() {
            "1".into()
        } else {
            terms.join(" + ")
        }
    };
    let m_lead: &[&str] = match mode {
        MediatorMode::ExcludesInstrument => &["Z"],
        MediatorMode::IncludesInstrument => &["Z", "A"],
    };
    let delta_formula = format!("delta ~ {}", rhs(&[]));
    Ok(ModelSuite::from_formulas(
        "A ~ 1",
        &format!("Z ~ {}", rhs(&["A"])),
        &format!("M ~ {}", rhs(m_lead)),
        &format!("Y ~ {}", rhs(&["Z", "M"])),
        delta.then_some(delta_formula.as_str()),
        mode,
    )?)
}

fn estimate(args: EstimateArgs, threads: Option<usize>, out: &Output) -> Result<()> {
    let cfg: EstimateConfig = read_config(args.config.as_deref())?;
    let input = args
        .input
        .or(cfg.input)
        .ok_or_else(|| config_err("no input file given (use --input or a config)"))?;

    let mut columns = match (cfg.columns, &args.w) {
        (Some(c), _) => c,
        (None, Some(w)) => ColumnMap::standard(&w.iter().map(String::as_str).collect::<Vec<_>>()),
        (None, None) => {
            return Err(config_err(
                "no covariate columns given (use --w or a config)",
            ))
        }
    };
    if let Some(w) = args.w {
        columns.w = w;
    }
    for (flag, slot) in [
        (args.col_a, &mut columns.a),
        (args.col_z, &mut columns.z),
        (args.col_m, &mut columns.m),
        (args.col_y, &mut columns.y),
    ] {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    if args.col_delta.is_some() {
        columns.delta = args.col_delta;
    }

    let mode = if args.mediator_includes_instrument {
        MediatorMode::IncludesInstrument
    } else {
        cfg.suite
            .as_ref()
            .map_or(MediatorMode::ExcludesInstrument, |s| s.mediator_mode)
    };
    let mut suite = match cfg.suite {
        Some(s) => s,
        None => default_suite(&columns.w, mode, columns.delta.is_some())?,
    };
    suite.mediator_mode = mode;
    let parse = |f: &str| DesignSpec::parse(f).map_err(|e| config_err(e.to_string()));
    if let Some(f) = &args.formula_a {
        suite.a = parse(f)?;
    }
    if let Some(f) = &args.formula_z {
        suite.z = parse(f)?;
    }
    if let Some(f) = &args.formula_m {
        suite.m = parse(f)?;
    }
    if let Some(f) = &args.formula_y {
        suite.y = parse(f)?;
    }
    if let Some(f) = &args.formula_delta {
        suite.delta = Some(parse(f)?);
    }
    suite.validate().map_err(|e| config_err(e.to_string()))?;

    let kinds = match args.estimators {
        Some(names) => names
            .iter()
            .map(|s| {
                EstimatorKind::parse(s.trim())
                    .ok_or_else(|| config_err(format!("unknown estimator `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?,
        None => cfg
            .estimators
            .unwrap_or_else(|| EstimatorKind::ALL.to_vec()),
    };
    if kinds.is_empty() {
        return Err(config_err("no estimators selected"));
    }

    let mut config = AnalysisConfig::new(suite);
    config.truncation = cfg.truncation.unwrap_or_default();
    if let Some(lo) = args.truncation_lo {
        config.truncation.lo = lo;
    }
    if let Some(hi) = args.truncation_hi {
        config.truncation.hi = hi;
    }
    config
        .truncation
        .validate()
        .map_err(|e| config_err(e.to_string()))?;
    if let Some(f) = cfg.nuisance_fit {
        config.nuisance_fit = f;
    }
    config.estimator = cfg.estimator.unwrap_or_default();
    if args.weighted_fluctuation {
        config.estimator.fluctuation = FluctuationForm::Weighted;
    }
    let mut boot = cfg.bootstrap;
    if let Some(level) = args.level {
        config.estimator.level = level;
        if let Some(b) = boot.as_mut() {
            b.level = level;
        }
    }
    if !(config.estimator.level > 0.0 && config.estimator.level < 1.0) {
        return Err(config_err(format!(
            "level {} is not in (0, 1)",
            config.estimator.level
        )));
    }
    match args.bootstrap {
        Some(0) => boot = None,
        Some(b) => {
            boot.get_or_insert(BootstrapSettings {
                replicates: b,
                level: config.estimator.level,
            })
            .replicates = b
        }
        None => {}
    }
    let seed = args.seed.or(cfg.seed).unwrap_or(1);

    let d = load_csv(&input, &columns)?;
    let run = || estimate_report(&d, &config, &kinds, boot.map(|b| (b, seed)));
    let report = match threads {
        Some(t) => rayon_pool(t)?.install(run)?,
        None => run()?,
    };
    out.emit(&report)
}

fn rayon_pool(threads: usize) -> Result<rayon::ThreadPool> {
    if threads == 0 {
        bail!(ConfigError("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| anyhow!("thread pool: {e}"))
}

fn oracle(args: OracleArgs, out: &Output) -> Result<()> {
    let cfg: OracleConfig = read_config(args.config.as_deref())?;
    let dgm = match (args.dgm, cfg.dgm) {
        (Some(name), _) | (None, Some(Named::Name(name))) => {
            DgmSpec::preset(&name).map_err(|e| config_err(e.to_string()))?
        }
        (None, Some(Named::Spec(d))) => d,
        (None, None) => return Err(config_err("no mechanism given (use --dgm or a config)")),
    };
    out.emit(&oracle_truth(&dgm)?)
}

fn presets() {
    println!("mechanisms:");
    for d in DGM_PRESETS {
        println!("  {d}");
    }
    println!("scenarios:");
    for s in scenario_presets() {
        println!("  {s}");
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use csde::Error as E;
    if err.downcast_ref::<ConfigError>().is_some() {
        return exit::CONFIG;
    }
    if let Some(e) = err.downcast_ref::<E>() {
        return match e {
            E::Io { .. } => exit::FILE,
            E::Csv(_)
            | E::EmptyFile
            | E::MissingColumn(_)
            | E::DuplicateColumn(_)
            | E::MissingValue { .. }
            | E::NonNumeric { .. }
            | E::NonBinary { .. }
            | E::NonFinite { .. }
            | E::NoSampledRows => exit::DATA,
            E::InvalidArgument(_) | E::Formula { .. } | E::Suite(_) | E::UnknownPreset(_) => {
                exit::CONFIG
            }
            _ => exit::ESTIMATION,
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return exit::FILE;
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = Output {
        format: cli.format.into(),
        json: cli.json,
    };
    if cli.threads == Some(0) {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(exit::CONFIG);
    }
    let result = match cli.command {
        Command::Simulate(a) => simulate(a, cli.threads, &out),
        Command::Estimate(a) => estimate(a, cli.threads, &out),
        Command::Oracle(a) => oracle(a, &out),
        Command::Presets => {
            presets();
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
