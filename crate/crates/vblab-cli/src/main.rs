//! `vblab`: analysis, corruption, dataset, training, and sweep workflows
//! over the vblab library, with JSON reports on stdout and CSV series on
//! disk. Exit codes are part of the contract: 0 success, 2 usage error,
//! 3 training divergence. Messages go to stderr, data to stdout or files.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use vblab::analysis::{
    asymmetry_threshold, certify_asymmetric_under_noise, excess_risk_bound_general,
    excess_risk_bound_symmetric, variation_ratio_closed, variation_ratio_numeric, AnalysisError,
    BoundReport, Certificate, Extended, VariationReport,
};
use vblab::data::{
    gen_gaussian_blobs, load_csv, load_idx_images, save_csv, split_train_test, DataError,
    LabeledDataset, Standardizer,
};
use vblab::losses::{LossError, LossSpec};
use vblab::nn::{save_checkpoint, NnError};
use vblab::noise::{corrupt, NoiseError, NoiseKind, NoiseModel, DEFAULT_RATE_STD};
use vblab::trainer::{
    run_experiment, sweep, write_metrics_csv, write_reliability_csv, write_sweep_csv,
    ExperimentConfig, SweepParameter, TrainerError, DEFAULT_SEED,
};

/// Loss-robustness laboratory: variation ratios, noise-tolerance
/// certificates, label corruption, and MLP training experiments.
#[derive(Parser)]
#[command(name = "vblab", version, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Report a loss's gradient range, variation ratio, and (with noise
    /// flags) excess-risk bounds plus its noise-tolerance certificate
    Analyze(AnalyzeArgs),
    /// Apply a label-noise model to a dataset CSV
    Corrupt(CorruptArgs),
    /// Generate, split, convert, or inspect datasets
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Train one experiment from a JSON config
    Train(TrainArgs),
    /// Run one experiment per value of a swept config knob
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NoiseKindArg {
    Symmetric,
    #[value(name = "asymmetric_circular", alias = "circular")]
    AsymmetricCircular,
    #[value(name = "instance_dependent", alias = "instance")]
    InstanceDependent,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Loss family: ce, mae, el, sl, vce, vel, vsl, or combined
    #[arg(long)]
    loss: String,
    /// Hyperparameter for vce/vel/vsl (for combined: the passive half's)
    #[arg(long)]
    a: Option<f64>,
    /// Weight of the active half of a combined loss
    #[arg(long)]
    alpha: Option<f64>,
    /// Weight of the passive half of a combined loss
    #[arg(long)]
    beta: Option<f64>,
    /// Active half of a combined loss (a hyperparameter-free family)
    #[arg(long)]
    active: Option<String>,
    /// Passive half of a combined loss; --a supplies its hyperparameter
    #[arg(long)]
    passive: Option<String>,
    /// Noise kind; unlocks bound, threshold, and certificate reporting
    #[arg(long)]
    noise: Option<NoiseKindArg>,
    /// Overall corruption rate of the noise model
    #[arg(long)]
    eta: Option<f64>,
    /// Spread of per-instance rates (instance_dependent only)
    #[arg(long)]
    rate_std: Option<f64>,
    /// Class count the noise reports are evaluated at
    #[arg(long)]
    k: Option<usize>,
    /// Estimate the ratio on a gradient grid instead of the closed form
    #[arg(long)]
    numeric: bool,
    /// Grid resolution for --numeric
    #[arg(long, default_value_t = 1000)]
    grid_steps: usize,
    /// Write the gradient-magnitude curve as CSV "u,grad_abs"
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Number of points in the --curve CSV
    #[arg(long, default_value_t = 200)]
    curve_points: usize,
}

#[derive(Args)]
struct CorruptArgs {
    /// Dataset CSV to corrupt (header "f0,...,f{d-1},label")
    #[arg(long)]
    input: PathBuf,
    /// Where the corrupted copy is written
    #[arg(long)]
    output: PathBuf,
    /// Noise kind
    #[arg(long)]
    kind: NoiseKindArg,
    /// Overall corruption rate
    #[arg(long)]
    eta: f64,
    /// Spread of per-instance rates (instance_dependent only)
    #[arg(long)]
    rate_std: Option<f64>,
    /// Class count override when the file does not exercise every class
    #[arg(long)]
    k: Option<usize>,
    /// Seed; defaults to VBLAB_SEED, then 42
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Sample Gaussian blobs and write them as a dataset CSV
    Gen(GenArgs),
    /// Stratified train/test split of a dataset CSV
    Split(SplitArgs),
    /// Convert an IDX image/label pair into a dataset CSV
    FromIdx(FromIdxArgs),
    /// Print shape and class counts of a dataset CSV
    Info(InfoArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Number of classes
    #[arg(long)]
    k: usize,
    /// Samples per class
    #[arg(long)]
    per_class: usize,
    /// Feature dimension
    #[arg(long)]
    d: usize,
    /// Distance scale between class means
    #[arg(long)]
    separation: f64,
    /// Seed; defaults to VBLAB_SEED, then 42
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    /// Fraction of each class moved to the test side
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Seed; defaults to VBLAB_SEED, then 42
    #[arg(long)]
    seed: Option<u64>,
    /// Standardize features using statistics fitted on the train side
    #[arg(long)]
    standardize: bool,
    #[arg(long)]
    train_output: PathBuf,
    #[arg(long)]
    test_output: PathBuf,
}

#[derive(Args)]
struct FromIdxArgs {
    /// IDX image file (magic 0x00000803)
    #[arg(long)]
    images: PathBuf,
    /// IDX label file (magic 0x00000801)
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct InfoArgs {
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config JSON (schema version 1)
    #[arg(long)]
    config: PathBuf,
    /// Seed override; wins over the config and VBLAB_SEED
    #[arg(long)]
    seed: Option<u64>,
    /// Metrics CSV path; overrides outputs.metrics_csv
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Summary JSON path; overrides outputs.summary_json
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Also write the final reliability diagram CSV
    #[arg(long)]
    reliability: Option<PathBuf>,
    /// Save the trained model as a JSON checkpoint
    #[arg(long)]
    save_model: Option<PathBuf>,
    /// Accepted for compatibility; every run is already deterministic
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Base experiment config JSON (schema version 1)
    #[arg(long)]
    config: PathBuf,
    /// Config knob to vary: loss.a, loss.alpha, loss.beta, or noise.eta
    #[arg(long)]
    parameter: String,
    /// Comma-separated values; run i uses seed base + i*1000
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Base seed override; wins over the config and VBLAB_SEED
    #[arg(long)]
    seed: Option<u64>,
    /// Worker cap for parallel runs
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Sweep table CSV path
    #[arg(long, default_value = "sweep.csv")]
    output: PathBuf,
    /// Accepted for compatibility; every run is already deterministic
    #[arg(long)]
    deterministic: bool,
}

/// On-disk experiment file: the library config plus output paths, behind a
/// schema version so old files fail loudly instead of misparsing.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CliConfigFile {
    version: u32,
    experiment: ExperimentConfig,
    #[serde(default)]
    outputs: OutputsConfig,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct OutputsConfig {
    metrics_csv: Option<PathBuf>,
    summary_json: Option<PathBuf>,
    reliability_csv: Option<PathBuf>,
    model_checkpoint: Option<PathBuf>,
}

const SUPPORTED_CONFIG_VERSION: u32 = 1;

enum CliError {
    Usage(String),
    Divergence(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Divergence(msg) => f.write_str(msg),
        }
    }
}

macro_rules! usage_from {
    ($($ty:ty),+) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Usage(e.to_string())
            }
        }
    )+};
}

usage_from!(
    LossError,
    AnalysisError,
    NoiseError,
    DataError,
    NnError,
    TrainerError,
    std::io::Error
);

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                CliError::Divergence(_) => ExitCode::from(3),
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Analyze(args) => cmd_analyze(args),
        Command::Corrupt(args) => cmd_corrupt(args),
        Command::Dataset(DatasetCmd::Gen(args)) => cmd_dataset_gen(args),
        Command::Dataset(DatasetCmd::Split(args)) => cmd_dataset_split(args),
        Command::Dataset(DatasetCmd::FromIdx(args)) => cmd_dataset_from_idx(args),
        Command::Dataset(DatasetCmd::Info(args)) => cmd_dataset_info(args),
        Command::Train(args) => cmd_train(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

// ====== shared plumbing ======

fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var("VBLAB_SEED") {
        Ok(raw) => raw
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| usage(format!("VBLAB_SEED must be an unsigned integer, got {raw:?}"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(std::env::VarError::NotUnicode(_)) => {
            Err(usage("VBLAB_SEED must be valid unicode".to_string()))
        }
    }
}

/// Explicit flag wins, then the config, then VBLAB_SEED, then 42.
fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64, CliError> {
    Ok(flag
        .or(config)
        .or(env_seed()?)
        .unwrap_or(DEFAULT_SEED))
}

fn check_input_exists(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("input file {} not found", path.display())))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes)
        .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| usage(format!("cannot serialize report: {e}")))?;
    println!("{text}");
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| usage(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// `metrics.csv` gets its provenance echo at `metrics.resolved.json`.
fn sidecar_path(output: &Path) -> PathBuf {
    output.with_extension("resolved.json")
}

fn build_noise(
    kind: NoiseKindArg,
    eta: f64,
    rate_std: Option<f64>,
) -> Result<NoiseModel, CliError> {
    if rate_std.is_some() && kind != NoiseKindArg::InstanceDependent {
        return Err(usage("--rate-std only applies to instance_dependent noise"));
    }
    Ok(match kind {
        NoiseKindArg::Symmetric => NoiseModel::symmetric(eta)?,
        NoiseKindArg::AsymmetricCircular => NoiseModel::asymmetric_circular(eta)?,
        NoiseKindArg::InstanceDependent => {
            NoiseModel::instance_dependent(eta, rate_std.unwrap_or(DEFAULT_RATE_STD))?
        }
    })
}

// ====== analyze ======

fn parse_simple_family(name: &str, a: Option<f64>) -> Result<LossSpec, CliError> {
    let requires_a = |family: &str| {
        usage(format!("--loss {family} requires --a <hyperparameter>"))
    };
    let rejects_a = |family: &str| {
        usage(format!("--loss {family} takes no --a hyperparameter"))
    };
    match name {
        "ce" => a.map_or(Ok(LossSpec::Ce), |_| Err(rejects_a("ce"))),
        "mae" => a.map_or(Ok(LossSpec::Mae), |_| Err(rejects_a("mae"))),
        "el" => a.map_or(Ok(LossSpec::El), |_| Err(rejects_a("el"))),
        "sl" => a.map_or(Ok(LossSpec::Sl), |_| Err(rejects_a("sl"))),
        "nce" => a.map_or(Ok(LossSpec::Nce), |_| Err(rejects_a("nce"))),
        "vce" => Ok(LossSpec::vce(a.ok_or_else(|| requires_a("vce"))?)?),
        "vel" => Ok(LossSpec::vel(a.ok_or_else(|| requires_a("vel"))?)?),
        "vsl" => Ok(LossSpec::vsl(a.ok_or_else(|| requires_a("vsl"))?)?),
        other => Err(usage(format!(
            "unknown loss family {other:?}; expected ce, mae, el, sl, nce, vce, vel, vsl, or combined"
        ))),
    }
}

fn build_loss(args: &AnalyzeArgs) -> Result<LossSpec, CliError> {
    if args.loss == "combined" {
        let alpha = args
            .alpha
            .ok_or_else(|| usage("--loss combined requires --alpha"))?;
        let beta = args
            .beta
            .ok_or_else(|| usage("--loss combined requires --beta"))?;
        let active = args
            .active
            .as_deref()
            .ok_or_else(|| usage("--loss combined requires --active <family>"))?;
        let passive = args
            .passive
            .as_deref()
            .ok_or_else(|| usage("--loss combined requires --passive <family>"))?;
        let active = parse_simple_family(active, None)?;
        let passive = parse_simple_family(passive, args.a)?;
        Ok(LossSpec::combined(alpha, beta, active, passive)?)
    } else {
        for (flag, set) in [
            ("--alpha", args.alpha.is_some()),
            ("--beta", args.beta.is_some()),
            ("--active", args.active.is_some()),
            ("--passive", args.passive.is_some()),
        ] {
            if set {
                return Err(usage(format!("{flag} only applies to --loss combined")));
            }
        }
        parse_simple_family(&args.loss, args.a)
    }
}

#[derive(Serialize)]
struct AnalyzeReport {
    #[serde(flatten)]
    variation: VariationReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    noise: Option<NoiseModel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    /// Omitted (not empty) when the ratio is unbounded: the excess-risk
    /// bounds only exist for finite variation ratios.
    #[serde(skip_serializing_if = "Option::is_none")]
    bounds: Option<Vec<BoundReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    asymmetry_threshold: Option<Extended>,
    #[serde(skip_serializing_if = "Option::is_none")]
    certificate: Option<Certificate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    clean_label_dominant: Option<bool>,
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let spec = build_loss(&args)?;
    let variation = if args.numeric {
        variation_ratio_numeric(&spec, args.grid_steps)?
    } else {
        variation_ratio_closed(&spec)?
    };

    if let Some(path) = &args.curve {
        let curve = spec.grad_magnitude_curve(args.curve_points)?;
        let mut out = Vec::new();
        writeln!(out, "u,grad_abs").expect("vec write");
        for (u, g) in curve {
            writeln!(out, "{u},{g}").expect("vec write");
        }
        write_file(path, &out)?;
    }

    let mut report = AnalyzeReport {
        variation,
        noise: None,
        k: None,
        bounds: None,
        asymmetry_threshold: None,
        certificate: None,
        clean_label_dominant: None,
    };

    if let Some(kind) = args.noise {
        let eta = args
            .eta
            .ok_or_else(|| usage("--noise requires --eta <rate>"))?;
        let k = args
            .k
            .ok_or_else(|| usage("--noise requires --k <classes>"))?;
        if kind == NoiseKindArg::InstanceDependent {
            return Err(usage(
                "instance_dependent reports need realized per-instance rates; \
                 corrupt a dataset and use the library's profile functions",
            ));
        }
        let model = build_noise(kind, eta, args.rate_std)?;
        if report.variation.variation_ratio.finite().is_some() {
            let mut bounds = Vec::new();
            if model.kind == NoiseKind::Symmetric {
                bounds.push(excess_risk_bound_symmetric(&spec, k, eta)?);
            }
            bounds.push(excess_risk_bound_general(&spec, &model, k)?);
            report.bounds = Some(bounds);
        }
        report.asymmetry_threshold = Some(asymmetry_threshold(&model, k)?);
        report.certificate = Some(certify_asymmetric_under_noise(&spec, &model, k)?);
        report.clean_label_dominant = model.clean_label_dominant(k);
        report.noise = Some(model);
        report.k = Some(k);
    } else {
        for (flag, set) in [
            ("--eta", args.eta.is_some()),
            ("--rate-std", args.rate_std.is_some()),
            ("--k", args.k.is_some()),
        ] {
            if set {
                return Err(usage(format!("{flag} requires --noise <kind>")));
            }
        }
    }

    print_json(&report)
}

// ====== corrupt ======

#[derive(Serialize)]
struct CorruptReport<'a> {
    input: &'a Path,
    output: &'a Path,
    noise: &'a NoiseModel,
    k: usize,
    n: usize,
    seed: u64,
    flip_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_realized_rate: Option<f64>,
}

fn cmd_corrupt(args: CorruptArgs) -> Result<(), CliError> {
    check_input_exists(&args.input)?;
    let seed = resolve_seed(args.seed, None)?;
    let ds = load_csv(&args.input)?;
    let k = args.k.unwrap_or(ds.k);
    if k < ds.k {
        return Err(usage(format!(
            "--k {k} is below the {} classes present in {}",
            ds.k,
            args.input.display()
        )));
    }
    let model = build_noise(args.kind, args.eta, args.rate_std)?;
    let record = corrupt(ds.features.view(), &ds.labels, k, &model, seed)?;
    let noisy = LabeledDataset::new(
        ds.features.clone(),
        record.noisy_labels.clone(),
        k,
        format!("{}[noisy]", ds.name),
    )?;
    save_csv(&noisy, &args.output)?;

    let mean_realized_rate = record
        .realized_rates
        .as_ref()
        .map(|rates| rates.iter().sum::<f64>() / rates.len() as f64);
    let report = CorruptReport {
        input: &args.input,
        output: &args.output,
        noise: &model,
        k,
        n: ds.n(),
        seed,
        flip_fraction: record.flip_fraction(),
        mean_realized_rate,
    };
    write_json(
        &sidecar_path(&args.output),
        &json!({
            "command": "corrupt",
            "input": args.input,
            "output": args.output,
            "noise": model,
            "k": k,
            "seed": seed,
        }),
    )?;
    print_json(&report)
}

// ====== dataset ======

#[derive(Serialize)]
struct DatasetReport<'a> {
    name: &'a str,
    n: usize,
    d: usize,
    k: usize,
    class_counts: Vec<usize>,
}

impl<'a> DatasetReport<'a> {
    fn of(ds: &'a LabeledDataset) -> Self {
        DatasetReport {
            name: &ds.name,
            n: ds.n(),
            d: ds.d(),
            k: ds.k,
            class_counts: ds.class_counts(),
        }
    }
}

fn cmd_dataset_gen(args: GenArgs) -> Result<(), CliError> {
    let seed = resolve_seed(args.seed, None)?;
    let ds = gen_gaussian_blobs(args.k, args.per_class, args.d, args.separation, seed)?;
    save_csv(&ds, &args.output)?;
    write_json(
        &sidecar_path(&args.output),
        &json!({
            "command": "dataset gen",
            "k": args.k,
            "per_class": args.per_class,
            "d": args.d,
            "separation": args.separation,
            "seed": seed,
            "output": args.output,
        }),
    )?;
    print_json(&DatasetReport::of(&ds))
}

fn cmd_dataset_split(args: SplitArgs) -> Result<(), CliError> {
    check_input_exists(&args.input)?;
    let seed = resolve_seed(args.seed, None)?;
    let ds = load_csv(&args.input)?;
    let (mut train, mut test) = split_train_test(&ds, args.test_fraction, seed)?;
    if args.standardize {
        let scaler = Standardizer::fit(&train.features);
        train = scaler.apply(&train);
        test = scaler.apply(&test);
    }
    save_csv(&train, &args.train_output)?;
    save_csv(&test, &args.test_output)?;
    write_json(
        &sidecar_path(&args.train_output),
        &json!({
            "command": "dataset split",
            "input": args.input,
            "test_fraction": args.test_fraction,
            "seed": seed,
            "standardize": args.standardize,
            "train_output": args.train_output,
            "test_output": args.test_output,
        }),
    )?;
    print_json(&json!({
        "train": DatasetReport::of(&train),
        "test": DatasetReport::of(&test),
    }))
}

fn cmd_dataset_from_idx(args: FromIdxArgs) -> Result<(), CliError> {
    check_input_exists(&args.images)?;
    check_input_exists(&args.labels)?;
    let ds = load_idx_images(&args.images, &args.labels)?;
    save_csv(&ds, &args.output)?;
    write_json(
        &sidecar_path(&args.output),
        &json!({
            "command": "dataset from-idx",
            "images": args.images,
            "labels": args.labels,
            "output": args.output,
        }),
    )?;
    print_json(&DatasetReport::of(&ds))
}

fn cmd_dataset_info(args: InfoArgs) -> Result<(), CliError> {
    check_input_exists(&args.input)?;
    let ds = load_csv(&args.input)?;
    print_json(&DatasetReport::of(&ds))
}

// ====== train / sweep ======

fn load_config(path: &Path) -> Result<CliConfigFile, CliError> {
    if !path.is_file() {
        return Err(usage(format!("config file {} not found", path.display())));
    }
    let text = fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let file: CliConfigFile = serde_json::from_str(&text)
        .map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?;
    if file.version != SUPPORTED_CONFIG_VERSION {
        return Err(usage(format!(
            "config {} has schema version {}; this build supports {}",
            path.display(),
            file.version,
            SUPPORTED_CONFIG_VERSION
        )));
    }
    Ok(file)
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut file = load_config(&args.config)?;
    file.experiment.seed = Some(resolve_seed(args.seed, file.experiment.seed)?);

    let metrics_path = args
        .metrics
        .or(file.outputs.metrics_csv.take())
        .unwrap_or_else(|| PathBuf::from("metrics.csv"));
    let summary_path = args
        .summary
        .or(file.outputs.summary_json.take())
        .unwrap_or_else(|| PathBuf::from("summary.json"));
    let reliability_path = args.reliability.or(file.outputs.reliability_csv.take());
    let model_path = args.save_model.or(file.outputs.model_checkpoint.take());

    let result = run_experiment(&file.experiment)?;

    let mut csv = Vec::new();
    write_metrics_csv(&mut csv, &result.metrics).expect("vec write");
    write_file(&metrics_path, &csv)?;
    write_json(&summary_path, &result.summary())?;
    if let Some(path) = &reliability_path {
        let mut csv = Vec::new();
        write_reliability_csv(&mut csv, &result.reliability).expect("vec write");
        write_file(path, &csv)?;
    }
    if let Some(path) = &model_path {
        save_checkpoint(&result.model, path)?;
    }

    let resolved = CliConfigFile {
        version: SUPPORTED_CONFIG_VERSION,
        // the result echoes the experiment with every default made explicit
        experiment: result.config.clone(),
        outputs: OutputsConfig {
            metrics_csv: Some(metrics_path.clone()),
            summary_json: Some(summary_path),
            reliability_csv: reliability_path,
            model_checkpoint: model_path,
        },
    };
    write_json(&sidecar_path(&metrics_path), &resolved)?;

    print_json(&result.summary())?;
    if let Some(diagnostic) = result.diverged {
        return Err(CliError::Divergence(format!(
            "training diverged: {diagnostic}"
        )));
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let mut file = load_config(&args.config)?;
    file.experiment.seed = Some(resolve_seed(args.seed, file.experiment.seed)?);
    let parameter: SweepParameter = args.parameter.parse().map_err(|e: TrainerError| {
        usage(e.to_string())
    })?;

    let rows = sweep(&file.experiment, parameter, &args.values, args.jobs)?;

    let mut csv = Vec::new();
    write_sweep_csv(&mut csv, &rows).expect("vec write");
    write_file(&args.output, &csv)?;
    write_json(
        &sidecar_path(&args.output),
        &json!({
            "command": "sweep",
            "config": args.config,
            "experiment": file.experiment,
            "parameter": parameter,
            "values": args.values,
            "jobs": args.jobs,
            "output": args.output,
        }),
    )?;
    print_json(&rows)
}
