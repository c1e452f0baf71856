//! `cabin-locate`: command-line front end for the synthetic UWB cabin
//! positioning pipeline.
//!
//! One binary, six subcommands mirroring the pipeline stages:
//! `gen-cabin` makes a layout, `simulate` a measurement dataset, `fit` and
//! `train` build correction models, `evaluate` scores methods on the test
//! split, and `montecarlo` runs the what-if studies. Every subcommand is
//! deterministic for a given argument list and `--seed`: rerunning writes
//! byte-identical files.
//!
//! Exit codes: 0 success, 2 malformed arguments, 1 execution failure.
//! Messages go to standard error; progress output (silenced by `--quiet`)
//! goes to standard out.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cabin_locate_core::channel::{
    generate_dataset, load_dataset, save_dataset, Dataset, EnvironmentProfile, ProfileName, Split,
};
use cabin_locate_core::correction::{fit_lr, fit_offset, load_model, save_model, SavedModel};
use cabin_locate_core::geometry::{generate_cabin, load_layout, save_layout, CabinParams};
use cabin_locate_core::localization::{evaluate, Method};
use cabin_locate_core::montecarlo::{
    fit_base_noise, results_to_csv, simulate_added_anchors, simulate_error_scaling,
    AugmentationConfig, ScalingConfig,
};
use cabin_locate_core::nn::{load_checkpoint, save_checkpoint, train, NnVariant, TrainConfig};
use cabin_locate_core::ranging::fit_rssi_poly;
use cabin_locate_core::Error;

#[derive(Parser)]
#[command(
    name = "cabin-locate",
    version,
    about = "Synthetic UWB cabin positioning: generate, simulate, correct, locate"
)]
struct Cli {
    /// Master seed for every randomized stage of the subcommand.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output file (for `evaluate`: output stem, `.csv` and `.json` are added).
    #[arg(short, long, global = true, value_name = "PATH")]
    output: Option<PathBuf>,

    /// Suppress progress output on stdout.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a cabin layout (seats plus ceiling anchors) as JSON.
    GenCabin(GenCabinArgs),
    /// Simulate a ranging campaign over a layout into a JSON-Lines dataset.
    Simulate(SimulateArgs),
    /// Fit a classical range-correction model on the train split.
    Fit(FitArgs),
    /// Train a neural-network head and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate methods on the test split into CSV and JSON reports.
    Evaluate(EvaluateArgs),
    /// Run a what-if study (virtual anchors or error scaling) into CSV.
    Montecarlo(MontecarloArgs),
}

#[derive(Args)]
struct GenCabinArgs {
    /// Seat rows.
    #[arg(long, default_value_t = CabinParams::default().rows,
          value_parser = clap::value_parser!(u32).range(1..))]
    rows: u32,
    /// Column letters; the aisle sits after the first half.
    #[arg(long, default_value_t = CabinParams::default().columns)]
    columns: String,
    /// Row pitch in meters.
    #[arg(long, default_value_t = CabinParams::default().pitch)]
    pitch: f64,
    /// Seat-to-seat spacing within a block, meters.
    #[arg(long, default_value_t = CabinParams::default().width_spacing)]
    width_spacing: f64,
    /// Ceiling anchor count (at least 3).
    #[arg(long, default_value_t = CabinParams::default().anchor_count,
          value_parser = clap::value_parser!(u32).range(3..))]
    anchors: u32,
    /// Aisle width in meters.
    #[arg(long, default_value_t = CabinParams::default().aisle_width)]
    aisle_width: f64,
    /// Tag height for the on-seat placement, meters.
    #[arg(long, default_value_t = CabinParams::default().seat_z)]
    seat_z: f64,
    /// Tag height for the headrest placement, meters.
    #[arg(long, default_value_t = CabinParams::default().headrest_z)]
    headrest_z: f64,
    /// Anchor mounting height, meters.
    #[arg(long, default_value_t = CabinParams::default().anchor_z)]
    anchor_z: f64,
}

#[derive(Args)]
struct SimulateArgs {
    /// Layout JSON produced by gen-cabin.
    #[arg(long, value_name = "FILE")]
    layout: PathBuf,
    /// Channel environment to simulate.
    #[arg(long, value_enum)]
    profile: CliProfile,
    /// Repetitions per seat and placement; the last 30% become the test split.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
    reps: u32,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliProfile {
    /// Narrow-body cabin: dense multipath, heavy-tailed ranging error.
    #[value(alias = "aircraft_cabin")]
    Aircraft,
    /// Office-like indoor space with moderate multipath.
    #[value(alias = "indoor_office")]
    Indoor,
    /// Open-field line of sight.
    Outdoor,
}

impl CliProfile {
    fn to_profile(self) -> EnvironmentProfile {
        EnvironmentProfile::by_name(match self {
            CliProfile::Aircraft => ProfileName::AircraftCabin,
            CliProfile::Indoor => ProfileName::IndoorOffice,
            CliProfile::Outdoor => ProfileName::Outdoor,
        })
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, value_name = "FILE")]
    layout: PathBuf,
    /// JSON-Lines dataset produced by simulate.
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    method: CliFitMethod,
    /// Polynomial degree for --method rssi.
    #[arg(long, default_value_t = 3)]
    degree: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliFitMethod {
    /// Per-anchor constant offset.
    Offset,
    /// Per-anchor linear regression.
    Lr,
    /// Polynomial distance-from-power model.
    Rssi,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    layout: PathBuf,
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,
    /// Network head to train.
    #[arg(long, value_enum)]
    variant: CliVariant,
    #[arg(long, default_value_t = 200, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
    epochs: usize,
    #[arg(long, default_value_t = 64, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    /// Hidden layer widths as W1,W2.
    #[arg(long, default_value = "256,128", value_parser = parse_hidden)]
    hidden: (usize, usize),
    /// Fraction of train records held out for validation.
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    /// Epochs without validation improvement before stopping early.
    #[arg(long, default_value_t = 20, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
    patience: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliVariant {
    /// Corrected range for a single anchor's measurement.
    #[value(name = "1a")]
    OneAnchor,
    /// Corrected ranges for all anchors at once.
    Range,
    /// Tag coordinates directly.
    Coord,
    /// Seat label classifier.
    Seat,
}

impl CliVariant {
    fn to_variant(self) -> NnVariant {
        match self {
            CliVariant::OneAnchor => NnVariant::RangeOneAnchor,
            CliVariant::Range => NnVariant::RangeAll,
            CliVariant::Coord => NnVariant::Coord,
            CliVariant::Seat => NnVariant::SeatLabel,
        }
    }
}

fn parse_hidden(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected two widths as W1,W2, got {s:?}"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("hidden width {v:?} is not a positive integer"))
    };
    Ok((parse(a)?, parse(b)?))
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, value_name = "FILE")]
    layout: PathBuf,
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,
    /// Method to evaluate: raw, offset=FILE, lr=FILE, rssi=FILE, or nn=FILE.
    /// Repeat the flag to compare several.
    #[arg(long = "method", value_name = "SPEC", required = true, value_parser = parse_method_spec)]
    methods: Vec<MethodSpec>,
}

#[derive(Clone)]
enum MethodSpec {
    Raw,
    Offset(PathBuf),
    Lr(PathBuf),
    Rssi(PathBuf),
    Nn(PathBuf),
}

fn parse_method_spec(s: &str) -> Result<MethodSpec, String> {
    let (name, path) = match s.split_once('=') {
        Some((n, p)) => (n, Some(PathBuf::from(p))),
        None => (s, None),
    };
    match name {
        "raw" => match path {
            None => Ok(MethodSpec::Raw),
            Some(_) => Err("raw takes no model file".into()),
        },
        "offset" | "lr" | "rssi" | "nn" => {
            let p = path.ok_or_else(|| format!("method {name} needs a model file: {name}=FILE"))?;
            Ok(match name {
                "offset" => MethodSpec::Offset(p),
                "lr" => MethodSpec::Lr(p),
                "rssi" => MethodSpec::Rssi(p),
                _ => MethodSpec::Nn(p),
            })
        }
        _ => Err(format!(
            "unknown method {name:?} (raw, offset=FILE, lr=FILE, rssi=FILE, nn=FILE)"
        )),
    }
}

#[derive(Args)]
struct MontecarloArgs {
    #[arg(long, value_name = "FILE")]
    layout: PathBuf,
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    study: CliStudy,
    /// Virtual anchor counts to sweep (--study anchors).
    #[arg(long, value_delimiter = ',', default_value = "0,5,11,22")]
    counts: Vec<usize>,
    /// Independent anchor placements per count (--study anchors).
    #[arg(long, default_value_t = 10, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
    runs: usize,
    /// Error scaling factors in (0, 1] to sweep (--study scaling).
    #[arg(long, value_delimiter = ',',
          default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")]
    alphas: Vec<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliStudy {
    /// Add virtual anchors and keep each position's best error.
    Anchors,
    /// Shrink every ranging error by a factor and re-solve.
    Scaling,
}

// ── error and exit-code plumbing ────────────────────────────────────────

enum RunError {
    /// Malformed arguments or environment; exits 2 like a parse error.
    Usage(String),
    /// Failure while executing a well-formed request; exits 1.
    Runtime(Error),
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Runtime(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Runtime(Error::Io(e))
    }
}

type RunResult = Result<(), RunError>;

fn require_output(cli: &Cli) -> Result<&Path, RunError> {
    cli.output
        .as_deref()
        .ok_or_else(|| RunError::Usage("this subcommand writes a file; pass --output/-o PATH".into()))
}

/// Applies CABIN_LOCATE_THREADS (0 or unset = automatic) to the global
/// rayon pool. Thread count never changes results, only wall time.
fn init_threads() -> RunResult {
    let Ok(raw) = std::env::var("CABIN_LOCATE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        RunError::Usage(format!("CABIN_LOCATE_THREADS must be a non-negative integer, got {raw:?}"))
    })?;
    if n == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| RunError::Usage(format!("cannot size thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = init_threads().and_then(|_| run(&cli));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(RunError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> RunResult {
    match &cli.command {
        Command::GenCabin(args) => run_gen_cabin(cli, args),
        Command::Simulate(args) => run_simulate(cli, args),
        Command::Fit(args) => run_fit(cli, args),
        Command::Train(args) => run_train(cli, args),
        Command::Evaluate(args) => run_evaluate(cli, args),
        Command::Montecarlo(args) => run_montecarlo(cli, args),
    }
}

// ── subcommands ─────────────────────────────────────────────────────────

fn run_gen_cabin(cli: &Cli, args: &GenCabinArgs) -> RunResult {
    let out = require_output(cli)?;
    let params = CabinParams {
        rows: args.rows,
        columns: args.columns.clone(),
        pitch: args.pitch,
        width_spacing: args.width_spacing,
        anchor_count: args.anchors,
        aisle_width: args.aisle_width,
        seat_z: args.seat_z,
        headrest_z: args.headrest_z,
        anchor_z: args.anchor_z,
    };
    let layout = generate_cabin(&params, cli.seed)?;
    save_layout(&layout, out)?;
    if !cli.quiet {
        println!(
            "layout: {} seats, {} anchors -> {}",
            layout.seats.len(),
            layout.anchors.len(),
            out.display()
        );
    }
    Ok(())
}

fn run_simulate(cli: &Cli, args: &SimulateArgs) -> RunResult {
    let out = require_output(cli)?;
    let layout = load_layout(&args.layout)?;
    let profile = args.profile.to_profile();
    let dataset = generate_dataset(&layout, &profile, args.reps, cli.seed)?;
    save_dataset(&dataset, out)?;
    if !cli.quiet {
        let train_n = dataset.records_in(Split::Train).count();
        let test_n = dataset.records_in(Split::Test).count();
        println!(
            "dataset: {} records ({train_n} train, {test_n} test), profile {} -> {}",
            dataset.records.len(),
            profile.name,
            out.display()
        );
    }
    Ok(())
}

fn load_inputs(layout: &Path, dataset: &Path) -> Result<Dataset, RunError> {
    let layout = load_layout(layout)?;
    Ok(load_dataset(dataset, &layout)?)
}

fn run_fit(cli: &Cli, args: &FitArgs) -> RunResult {
    let out = require_output(cli)?;
    let dataset = load_inputs(&args.layout, &args.dataset)?;
    let model = match args.method {
        CliFitMethod::Offset => SavedModel::from_offset(&fit_offset(&dataset, Split::Train)?),
        CliFitMethod::Lr => SavedModel::from_lr(&fit_lr(&dataset, Split::Train)?),
        CliFitMethod::Rssi => {
            let mut power = Vec::new();
            let mut distance = Vec::new();
            for record in dataset.records_in(Split::Train) {
                for s in &record.samples {
                    power.push(s.first_path_power);
                    distance.push(s.true_range);
                }
            }
            SavedModel::from_rssi(&fit_rssi_poly(&power, &distance, args.degree)?)
        }
    };
    save_model(&model, out)?;
    if !cli.quiet {
        println!("{} model -> {}", model.kind(), out.display());
    }
    Ok(())
}

fn run_train(cli: &Cli, args: &TrainArgs) -> RunResult {
    let out = require_output(cli)?;
    let dataset = load_inputs(&args.layout, &args.dataset)?;
    let config = TrainConfig {
        learning_rate: args.learning_rate,
        batch_size: args.batch_size,
        epochs: args.epochs,
        hidden_dims: args.hidden,
        val_fraction: args.val_fraction,
        patience: args.patience,
        seed: cli.seed,
    };
    config.validate()?;
    let result = train(&dataset, args.variant.to_variant(), &config)?;
    if !cli.quiet {
        println!("epoch,train_loss,val_loss");
        for e in &result.history {
            let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
            println!("{},{},{val}", e.epoch, e.train_loss);
        }
    }
    // Checkpoints are a JSON file plus a sibling .bin; pin the extension so
    // `-o model` and `-o model.json` name the same pair.
    let out = report_path(out, ".json");
    save_checkpoint(&result.model, &out)?;
    if !cli.quiet {
        let test = result
            .test_loss
            .map(|v| format!("{v}"))
            .unwrap_or_else(|| "n/a".into());
        println!(
            "checkpoint ({}) -> {} (weights beside it); final train loss {}, test loss {test}",
            result.model.variant.head_name(),
            out.display(),
            result.final_train_loss
        );
    }
    Ok(())
}

/// `report` -> `report.csv`; a trailing `.csv`/`.json` on the stem is
/// dropped first so passing either full name also works.
fn report_path(stem: &Path, suffix: &str) -> PathBuf {
    let base = match stem.extension().and_then(|e| e.to_str()) {
        Some("csv") | Some("json") => stem.with_extension(""),
        _ => stem.to_path_buf(),
    };
    let mut s = base.into_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn run_evaluate(cli: &Cli, args: &EvaluateArgs) -> RunResult {
    let stem = require_output(cli)?;
    let dataset = load_inputs(&args.layout, &args.dataset)?;
    let mut methods = Vec::new();
    for spec in &args.methods {
        methods.push(match spec {
            MethodSpec::Raw => Method::Raw,
            MethodSpec::Offset(p) => Method::Offset(load_model(p)?.into_offset()?),
            MethodSpec::Lr(p) => Method::Linear(load_model(p)?.into_lr()?),
            MethodSpec::Rssi(p) => Method::Rssi(load_model(p)?.into_rssi()?),
            MethodSpec::Nn(p) => Method::Nn(load_checkpoint(p)?),
        });
    }
    let report = evaluate(&dataset, &methods)?;

    let csv_path = report_path(stem, ".csv");
    let json_path = report_path(stem, ".json");
    std::fs::write(&csv_path, report.to_csv())?;
    std::fs::write(&json_path, report.to_json()?)?;
    if !cli.quiet {
        for row in &report.rows {
            let loc = row
                .localization_error
                .as_ref()
                .map(|s| format!("{:.3} m", s.mean))
                .unwrap_or_else(|| "n/a".into());
            println!(
                "{:<8} {:<9} records {:>5}  mean loc err {loc:>9}  seat acc {:.3}",
                row.method, row.placement, row.records, row.accuracy.seat
            );
        }
        println!("report -> {} and {}", csv_path.display(), json_path.display());
    }
    Ok(())
}

fn run_montecarlo(cli: &Cli, args: &MontecarloArgs) -> RunResult {
    let out = require_output(cli)?;
    let dataset = load_inputs(&args.layout, &args.dataset)?;
    let rows = match args.study {
        CliStudy::Anchors => {
            let noise = fit_base_noise(&dataset)?;
            if !cli.quiet {
                println!(
                    "fitted residual noise: gamma {}, delta {}, xi {}, lambda {}",
                    noise.gamma, noise.delta, noise.xi, noise.lambda
                );
            }
            let config = AugmentationConfig {
                extra_anchor_counts: args.counts.clone(),
                runs_per_count: args.runs,
                noise,
                seed: cli.seed,
            };
            simulate_added_anchors(&dataset, &config)?
        }
        CliStudy::Scaling => {
            let config = ScalingConfig { alphas: args.alphas.clone(), seed: cli.seed };
            simulate_error_scaling(&dataset, &config)?
        }
    };
    std::fs::write(out, results_to_csv(&rows))?;
    if !cli.quiet {
        println!("{} study rows -> {}", rows.len(), out.display());
    }
    Ok(())
}
