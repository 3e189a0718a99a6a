//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.
//! Progress goes to standard error; results go to files or standard output.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{MethodChoice, RunConfig};
use crate::data::{gen_synthetic, load_csv, standardize, Dataset};
use crate::error::{Error, Result};
use crate::estimators::{fit_adaptive_stage, fit_group_lasso, grid_select, Method, SelectConfig};
use crate::harness::{
    compute_metrics, run_replicates, Experiment, ExperimentSpec, FrequencyTable, SelectionMetrics,
};
use crate::net::Activation;
use crate::optimizer::FitResult;
use crate::report::{write_frequencies, write_metrics, Format};
use crate::selfcheck;

#[derive(Debug, Parser)]
#[command(name = "sparse-net", version, about = "GL and GL+AGL feature selection for feed-forward networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset and its `.meta.json` sidecar
    Gen(GenArgs),
    /// One GL or GL+AGL fit with given constants
    Fit(FitArgs),
    /// Choose constants by repeated train/test splits, then fit
    Select(SelectArgs),
    /// Replicate studies that write metrics and frequency reports
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// Run the built-in invariant and oracle checks
    Check(CheckArgs),
}

#[derive(Debug, Subcommand)]
enum ExperimentCommand {
    /// Fresh synthetic data per replicate
    Synth(SynthArgs),
    /// A CSV dataset with optional appended noise features
    Csv(CsvArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SingleMethod {
    Gl,
    GlAgl,
}

impl From<SingleMethod> for Method {
    fn from(m: SingleMethod) -> Method {
        match m {
            SingleMethod::Gl => Method::Gl,
            SingleMethod::GlAgl => Method::GlAgl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Standardize {
    /// Standardize unless a synthetic sidecar is present
    Auto,
    Yes,
    No,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags override its values
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base seed [default: config `seed`, then $SPARSE_NET_SEED, then 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Training epochs per fit [default: 20000]
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial proximal step size [default: 0.01]
    #[arg(long)]
    step: Option<f64>,
    /// Hidden layer widths, comma separated [default: 20,20,20]
    #[arg(long, value_delimiter = ',', value_name = "W,..")]
    hidden: Option<Vec<usize>>,
    /// Hidden activation [default: tanh]
    #[arg(long, value_enum)]
    activation: Option<Activation>,
}

#[derive(Debug, Args)]
struct SelectFlags {
    /// Adaptive weight exponent [default: 2]
    #[arg(long)]
    gamma: Option<f64>,
    /// Candidate lambdas [default: 0.001,0.01,0.05,0.1,0.5,1,2]
    #[arg(long, value_delimiter = ',', value_name = "V,..")]
    lambda_grid: Option<Vec<f64>>,
    /// Candidate zetas [default: 0.001,0.01,0.05,0.1,0.5,1,2]
    #[arg(long, value_delimiter = ',', value_name = "V,..")]
    zeta_grid: Option<Vec<f64>>,
    /// Train/test splits per grid point [default: 3]
    #[arg(long)]
    splits: Option<usize>,
    /// Held-out fraction per split [default: 0.3333333333333333]
    #[arg(long)]
    test_fraction: Option<f64>,
}

#[derive(Debug, Args)]
struct SynthFlags {
    /// Number of input features [default: 50]
    #[arg(long)]
    n_features: Option<usize>,
    /// Number of significant features [default: 10]
    #[arg(long)]
    n_significant: Option<usize>,
    /// Number of samples [default: 5000]
    #[arg(long)]
    n_samples: Option<usize>,
    /// Standard deviation of the additive noise [default: 1]
    #[arg(long)]
    noise_sd: Option<f64>,
}

#[derive(Debug, Args)]
struct OutputFlags {
    /// Worker threads for replicates [default: 1]
    #[arg(long)]
    workers: Option<usize>,
    /// Number of replicates [default: 1]
    #[arg(long)]
    replicates: Option<usize>,
    /// Methods to evaluate [default: both]
    #[arg(long, value_enum)]
    method: Option<MethodChoice>,
    /// Report format [default: csv]
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Metrics report path [default: metrics.<format>]
    #[arg(long, value_name = "PATH")]
    metrics: Option<PathBuf>,
    /// Frequency report path [default: frequencies.<format>]
    #[arg(long, value_name = "PATH")]
    frequencies: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    synth: SynthFlags,
    /// Output CSV; the sidecar goes next to it as `<stem>.meta.json`
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DataFlags {
    /// Input CSV with a header row
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Response column [default: config `csv.response`, then `y`]
    #[arg(long)]
    response: Option<String>,
    /// Column standardization [default: auto]
    #[arg(long, value_enum)]
    standardize: Option<Standardize>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataFlags,
    /// Estimator [default: gl-agl]
    #[arg(long, value_enum)]
    method: Option<SingleMethod>,
    /// Group lasso constant
    #[arg(long)]
    lambda: f64,
    /// Adaptive stage constant, required for gl-agl
    #[arg(long)]
    zeta: Option<f64>,
    /// Adaptive weight exponent [default: 2]
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataFlags,
    #[command(flatten)]
    select: SelectFlags,
    /// Estimator [default: gl-agl]
    #[arg(long, value_enum)]
    method: Option<SingleMethod>,
    /// Worker threads for the grid [default: 1]
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    synth: SynthFlags,
    #[command(flatten)]
    select: SelectFlags,
    #[command(flatten)]
    output: OutputFlags,
}

#[derive(Debug, Args)]
struct CsvArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataFlags,
    /// Standard-normal noise columns appended per replicate [default: 0]
    #[arg(long, value_name = "K")]
    add_noise: Option<usize>,
    #[command(flatten)]
    select: SelectFlags,
    #[command(flatten)]
    output: OutputFlags,
}

#[derive(Debug, Args)]
struct CheckArgs {
    /// Seed for the random instances [default: $SPARSE_NET_SEED, then 0]
    #[arg(long)]
    seed: Option<u64>,
}

/// Metadata written next to a generated CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub seed: u64,
    pub response: String,
    pub feature_names: Vec<String>,
    pub true_support: Vec<bool>,
    pub config: RunConfig,
}

pub fn sidecar_path(data: &Path) -> PathBuf {
    let stem = data.file_stem().unwrap_or_default().to_string_lossy();
    data.with_file_name(format!("{stem}.meta.json"))
}

fn read_sidecar(data: &Path) -> Result<Option<Sidecar>> {
    let path = sidecar_path(data);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map(Some).map_err(|e| Error::Format {
        path,
        detail: e.to_string(),
    })
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Select(a) => select_cmd(a),
        Command::Experiment(ExperimentCommand::Synth(a)) => synth_cmd(a),
        Command::Experiment(ExperimentCommand::Csv(a)) => csv_cmd(a),
        Command::Check(a) => check_cmd(a),
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(e) = common.epochs {
        cfg.opt.epochs = e;
    }
    if let Some(s) = common.step {
        cfg.opt.initial_step = s;
    }
    if let Some(h) = &common.hidden {
        cfg.network.hidden = h.clone();
    }
    if let Some(a) = common.activation {
        cfg.network.activation = a;
    }
    Ok(cfg)
}

fn apply_synth(cfg: &mut RunConfig, s: &SynthFlags) {
    let sec = &mut cfg.synthetic;
    sec.n_features = s.n_features.unwrap_or(sec.n_features);
    sec.n_significant = s.n_significant.unwrap_or(sec.n_significant);
    sec.n_samples = s.n_samples.unwrap_or(sec.n_samples);
    sec.noise_sd = s.noise_sd.unwrap_or(sec.noise_sd);
}

fn apply_select(cfg: &mut RunConfig, s: &SelectFlags) {
    let sec = &mut cfg.select;
    sec.gamma = s.gamma.unwrap_or(sec.gamma);
    if let Some(g) = &s.lambda_grid {
        sec.lambda_grid = g.clone();
    }
    if let Some(g) = &s.zeta_grid {
        sec.zeta_grid = g.clone();
    }
    sec.n_splits = s.splits.unwrap_or(sec.n_splits);
    sec.test_fraction = s.test_fraction.unwrap_or(sec.test_fraction);
}

fn apply_output(cfg: &mut RunConfig, o: &OutputFlags) {
    cfg.workers = o.workers.unwrap_or(cfg.workers);
    cfg.replicates = o.replicates.unwrap_or(cfg.replicates);
    cfg.method = o.method.unwrap_or(cfg.method);
    if o.format.is_some() {
        cfg.output.format = o.format;
    }
    if o.metrics.is_some() {
        cfg.output.metrics = o.metrics.clone();
    }
    if o.frequencies.is_some() {
        cfg.output.frequencies = o.frequencies.clone();
    }
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).expect("json values serialize");
    writeln!(out).map_err(|e| Error::io("<stdout>", e))
}

fn mask(support: &[bool]) -> String {
    support.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

fn gen(a: GenArgs) -> CliResult<()> {
    let mut cfg = load_config(&a.common)?;
    apply_synth(&mut cfg, &a.synth);
    cfg.validate()?;
    let seed = cfg.resolve_seed(a.common.seed)?;
    let sample = gen_synthetic(&cfg.synthetic_config(seed)?)?;
    let data = &sample.data;
    data.write_csv(&a.out, "y")?;
    cfg.seed = Some(seed);
    let sidecar = Sidecar {
        seed,
        response: "y".into(),
        feature_names: data.feature_names.clone(),
        true_support: data.true_support.clone().unwrap_or_default(),
        config: cfg,
    };
    let path = sidecar_path(&a.out);
    let mut text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    eprintln!(
        "wrote {} ({} rows, {} features) and {}",
        a.out.display(),
        data.n_samples(),
        data.n_features(),
        path.display()
    );
    Ok(())
}

/// Loads the CSV, attaches sidecar truth and applies standardization.
fn load_input(flags: &DataFlags, cfg: &RunConfig) -> Result<Dataset> {
    let sidecar = read_sidecar(&flags.data)?;
    let response = flags
        .response
        .clone()
        .or_else(|| cfg.csv.response.clone())
        .or_else(|| sidecar.as_ref().map(|s| s.response.clone()))
        .unwrap_or_else(|| "y".into());
    let mut data = load_csv(&flags.data, &response)?;
    if let Some(s) = &sidecar {
        if s.true_support.len() == data.n_features() {
            data = data.with_support(s.true_support.clone())?;
        }
    }
    let scale = match flags.standardize {
        Some(Standardize::Yes) => true,
        Some(Standardize::No) => false,
        Some(Standardize::Auto) | None => cfg.csv.standardize.unwrap_or(sidecar.is_none()),
    };
    Ok(if scale { standardize(&data).0 } else { data })
}

fn fit_report(method: Method, lambda: f64, zeta: Option<f64>, data: &Dataset, fit: &FitResult) -> Result<serde_json::Value> {
    let mut v = json!({
        "method": method.to_string(),
        "lambda": lambda,
        "zeta": zeta,
        "support": mask(&fit.support),
        "selected": data
            .feature_names
            .iter()
            .zip(&fit.support)
            .filter(|(_, s)| **s)
            .map(|(n, _)| n.as_str())
            .collect::<Vec<_>>(),
        "group_norms": fit.group_norms,
        "objective": fit.final_objective(),
        "epochs_run": fit.epochs_run,
        "converged_early": fit.converged_early,
    });
    if let Some(truth) = &data.true_support {
        let r = compute_metrics(&fit.support, truth)?;
        v["fpr"] = json!(r.false_positive_rate);
        v["fnr"] = json!(r.false_negative_rate);
        v["exact_recovery"] = json!(r.exact_recovery);
    }
    Ok(v)
}

fn select_config_for(cfg: &RunConfig, seed: u64, workers: usize) -> SelectConfig {
    SelectConfig {
        workers,
        ..cfg.select_config(seed)
    }
}

fn fit_cmd(a: FitArgs) -> CliResult<()> {
    let mut cfg = load_config(&a.common)?;
    cfg.select.gamma = a.gamma.unwrap_or(cfg.select.gamma);
    let method: Method = a.method.unwrap_or(SingleMethod::GlAgl).into();
    if method == Method::GlAgl && a.zeta.is_none() {
        return Err(Failure::Usage("--zeta is required for --method gl-agl".into()));
    }
    cfg.validate()?;
    let seed = cfg.resolve_seed(a.common.seed)?;
    let data = load_input(&a.data, &cfg)?;
    let arch = cfg.network.arch(data.n_features())?;
    let sc = select_config_for(&cfg, seed, 1);
    eprintln!("fitting {method} on {} rows, {} features", data.n_samples(), data.n_features());
    let base = fit_group_lasso(&arch, &data, a.lambda, &sc)?;
    let report = match (method, a.zeta) {
        (Method::GlAgl, Some(zeta)) => {
            let adaptive = fit_adaptive_stage(&arch, &data, &base.params, zeta, &sc)?;
            let mut v = fit_report(method, a.lambda, Some(zeta), &data, &adaptive)?;
            v["stage1_support"] = json!(mask(&base.support));
            v
        }
        _ => fit_report(method, a.lambda, None, &data, &base)?,
    };
    print_json(&report)?;
    Ok(())
}

fn select_cmd(a: SelectArgs) -> CliResult<()> {
    let mut cfg = load_config(&a.common)?;
    apply_select(&mut cfg, &a.select);
    cfg.workers = a.workers.unwrap_or(cfg.workers);
    cfg.validate()?;
    let seed = cfg.resolve_seed(a.common.seed)?;
    let method: Method = a.method.unwrap_or(SingleMethod::GlAgl).into();
    let data = load_input(&a.data, &cfg)?;
    let arch = cfg.network.arch(data.n_features())?;
    let sc = select_config_for(&cfg, seed, cfg.workers);
    eprintln!(
        "grid search for {method}: {} lambdas x {} splits",
        sc.lambda_grid.len(),
        sc.n_splits
    );
    let sel = grid_select(&arch, &data, method, &sc)?;
    let lambda = sel.lambda.chosen;
    let base = fit_group_lasso(&arch, &data, lambda, &sc)?;
    let zeta = sel.zeta.as_ref().map(|z| z.chosen);
    let final_fit = match zeta {
        Some(z) => fit_adaptive_stage(&arch, &data, &base.params, z, &sc)?,
        None => base,
    };
    let mut v = fit_report(method, lambda, zeta, &data, &final_fit)?;
    v["lambda_table"] = json!(sel.lambda.table);
    if let Some(z) = &sel.zeta {
        v["zeta_table"] = json!(z.table);
    }
    print_json(&v)?;
    Ok(())
}

fn report_paths(cfg: &RunConfig) -> (Format, PathBuf, PathBuf) {
    let format = cfg.output.format.unwrap_or(Format::Csv);
    let ext = match format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    let metrics = cfg
        .output
        .metrics
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("metrics.{ext}")));
    let freq = cfg
        .output
        .frequencies
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("frequencies.{ext}")));
    (format, metrics, freq)
}

fn run_study(cfg: &RunConfig, spec: ExperimentSpec, names: Vec<String>, seed: u64) -> CliResult<()> {
    let (format, metrics_path, freq_path) = report_paths(cfg);
    let methods = cfg.method.methods();
    let total = cfg.replicates;
    let done = AtomicUsize::new(0);
    let progress = |rows: &[SelectionMetrics]| {
        let k = done.fetch_add(1, Ordering::SeqCst) + 1;
        let status: Vec<String> = rows
            .iter()
            .map(|r| {
                let state = if r.status.is_ok() { "ok" } else { "failed" };
                format!("{} {state}", r.method)
            })
            .collect();
        let id = rows.first().map(|r| r.replicate_id).unwrap_or_default();
        eprintln!("[{k}/{total}] replicate {id}: {}", status.join(", "));
    };
    eprintln!("running {total} replicates on {} worker(s)", cfg.workers);
    let rows = run_replicates(&spec, total, &methods, seed, cfg.workers, Some(&progress))?;
    let table = FrequencyTable::from_metrics(names, &rows)?;
    write_metrics(&metrics_path, &rows, format)?;
    write_frequencies(&freq_path, &table, format)?;
    print_json(&json!({
        "seed": seed,
        "replicates": total,
        "metrics": metrics_path,
        "frequencies": freq_path,
        "GL": table.gl,
        "GL_AGL": table.gl_agl,
    }))?;
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> CliResult<()> {
    let mut cfg = load_config(&a.common)?;
    apply_synth(&mut cfg, &a.synth);
    apply_select(&mut cfg, &a.select);
    apply_output(&mut cfg, &a.output);
    cfg.validate()?;
    let seed = cfg.resolve_seed(a.common.seed)?;
    let synth = cfg.synthetic_config(seed)?;
    let names = (1..=synth.n_features).map(|j| format!("x{j}")).collect();
    let spec = ExperimentSpec {
        experiment: Experiment::Synthetic(synth),
        hidden: cfg.network.hidden.clone(),
        activation: cfg.network.activation,
        select: cfg.select_config(seed),
    };
    run_study(&cfg, spec, names, seed)
}

fn csv_cmd(a: CsvArgs) -> CliResult<()> {
    let mut cfg = load_config(&a.common)?;
    apply_select(&mut cfg, &a.select);
    apply_output(&mut cfg, &a.output);
    cfg.csv.add_noise = a.add_noise.unwrap_or(cfg.csv.add_noise);
    cfg.validate()?;
    let seed = cfg.resolve_seed(a.common.seed)?;
    // raw data here; the harness standardizes after appending noise
    let raw_flags = DataFlags {
        data: a.data.data.clone(),
        response: a.data.response.clone(),
        standardize: Some(Standardize::No),
    };
    let data = load_input(&raw_flags, &cfg)?;
    let scale = match a.data.standardize {
        Some(Standardize::Yes) => true,
        Some(Standardize::No) => false,
        Some(Standardize::Auto) | None => cfg
            .csv
            .standardize
            .unwrap_or(read_sidecar(&a.data.data)?.is_none()),
    };
    let mut names = data.feature_names.clone();
    names.extend((1..=cfg.csv.add_noise).map(|j| format!("noise_{j}")));
    let spec = ExperimentSpec {
        experiment: Experiment::Csv {
            data,
            add_noise: cfg.csv.add_noise,
            standardize: scale,
        },
        hidden: cfg.network.hidden.clone(),
        activation: cfg.network.activation,
        select: cfg.select_config(seed),
    };
    run_study(&cfg, spec, names, seed)
}

fn check_cmd(a: CheckArgs) -> CliResult<()> {
    let seed = RunConfig::default().resolve_seed(a.seed)?;
    let outcomes = selfcheck::run_all(seed);
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(Failure::Runtime(Error::InvalidConfig(format!(
            "{failed} of {} checks failed",
            outcomes.len()
        ))));
    }
    Ok(())
}
