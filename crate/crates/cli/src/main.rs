use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::{Command as Process, ExitCode};
use std::time::{Duration, Instant};

use barrier_smc::harness::output::{self, Durations, FitReport, Manifest, CSV_SCHEMA_VERSION};
use barrier_smc::harness::{self, ExperimentConfig, TrialResult};
use barrier_smc::metrics::{fit_gamma, DEFAULT_FLOOR_MULTIPLIER};
use barrier_smc::{Error, Execution};
use clap::{Args, Parser, Subcommand};

/// Barrier-constrained filtering experiments on the stochastic Lorenz 96 model.
#[derive(Parser)]
#[command(name = "barrier-smc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a ground-truth trajectory with its observations.
    Simulate(RunArgs),
    /// Twin-filter total-variation decay and the fit of the contraction constant.
    TvDecay(RunArgs),
    /// NMSE of several filters on common data.
    Nmse(RunArgs),
    /// Time-mean NMSE against state dimension.
    DimSweep(RunArgs),
    /// Fit the contraction constant to an existing TV curve.
    FitGamma(FitArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment description.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `run.n_trials`.
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    /// CSV with a `tv_mean` column.
    #[arg(long = "in")]
    input: PathBuf,
    /// Initial distance; defaults to the first value of the curve.
    #[arg(long)]
    d0: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_FLOOR_MULTIPLIER, conflicts_with = "no_floor")]
    floor_multiplier: f64,
    /// Fit every point instead of stopping at the Monte Carlo floor.
    #[arg(long)]
    no_floor: bool,
    /// Also write the fit as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

const EXIT_CONFIG: u8 = 3;
const EXIT_INVALID: u8 = 4;
const EXIT_IO: u8 = 5;
const EXIT_NUMERICAL: u8 = 6;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Io(_) => EXIT_IO,
        Error::DimensionMismatch { .. }
        | Error::InvalidParameter(_)
        | Error::NotNormalized
        | Error::OutsideInterval { .. } => EXIT_INVALID,
        Error::NonFinite(_)
        | Error::IntegrationFailure { .. }
        | Error::RejectionExhausted { .. }
        | Error::TotalDegeneracy
        | Error::UndefinedNormalization
        | Error::InsufficientDecay { .. } => EXIT_NUMERICAL,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => run(a, "simulate", simulate),
        Command::TvDecay(a) => run(a, "tv-decay", tv_decay),
        Command::Nmse(a) => run(a, "nmse", nmse),
        Command::DimSweep(a) => run(a, "dim-sweep", dim_sweep),
        Command::FitGamma(a) => fit(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("barrier-smc: error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// What an experiment produced: files written and per-trial wall-clock times.
struct Produced {
    outputs: Vec<String>,
    trial_durations: Vec<Duration>,
}

type Experiment = fn(&ExperimentConfig, &Path) -> Result<Produced, Error>;

fn run(args: RunArgs, command: &str, experiment: Experiment) -> Result<(), Error> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.run.n_trials = trials;
    }
    cfg.validate()?;
    if let Some(threads) = args.threads {
        if threads == 0 {
            return Err(Error::invalid("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    fs::create_dir_all(&args.out)?;

    let started = Instant::now();
    let produced = experiment(&cfg, &args.out)?;
    let manifest = Manifest {
        command: command.to_string(),
        csv_schema_version: CSV_SCHEMA_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        git_describe: git_describe(),
        seed: cfg.run.seed,
        threads: rayon::current_num_threads(),
        outputs: produced.outputs,
        durations: Durations {
            total_seconds: started.elapsed().as_secs_f64(),
            trial_seconds: produced
                .trial_durations
                .iter()
                .map(Duration::as_secs_f64)
                .collect(),
        },
        config: cfg,
    };
    output::write_json(create(&args.out.join("manifest.json"))?, &manifest)
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn git_describe() -> String {
    Process::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

fn durations(trials: &[TrialResult]) -> Vec<Duration> {
    trials.iter().map(|t| t.duration).collect()
}

fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Produced, Error> {
    let setup = harness::run_simulation(cfg)?;
    output::write_trajectory(create(&out.join("trajectory.csv"))?, &setup)?;
    output::write_matrix(create(&out.join("observation_matrix.csv"))?, &setup)?;
    Ok(Produced {
        outputs: vec!["trajectory.csv".into(), "observation_matrix.csv".into()],
        trial_durations: Vec::new(),
    })
}

fn tv_decay(cfg: &ExperimentConfig, out: &Path) -> Result<Produced, Error> {
    let result = harness::run_tv_decay_experiment(cfg, Execution::Parallel)?;
    output::write_tv_curve(create(&out.join("tv_curve.csv"))?, &result.curve)?;
    let fit = result.fit?;
    output::write_json(create(&out.join("fit.json"))?, &FitReport::from(fit))?;
    println!("gamma_hat = {:.6} (n_cut = {})", fit.gamma_hat, fit.n_cut);
    Ok(Produced {
        outputs: vec!["tv_curve.csv".into(), "fit.json".into()],
        trial_durations: durations(&result.trials),
    })
}

fn nmse(cfg: &ExperimentConfig, out: &Path) -> Result<Produced, Error> {
    let result = harness::run_nmse_experiment(cfg, Execution::Parallel)?;
    output::write_nmse_table(create(&out.join("nmse.csv"))?, &result)?;
    Ok(Produced {
        outputs: vec!["nmse.csv".into()],
        trial_durations: durations(&result.trials),
    })
}

fn dim_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Produced, Error> {
    let result = harness::run_dimension_sweep(cfg, Execution::Parallel)?;
    output::write_sweep_table(create(&out.join("dim_sweep.csv"))?, &result)?;
    Ok(Produced {
        outputs: vec!["dim_sweep.csv".into()],
        trial_durations: result.trials.iter().map(|(_, t)| t.duration).collect(),
    })
}

fn fit(args: FitArgs) -> Result<(), Error> {
    let file =
        File::open(&args.input).map_err(|e| Error::Io(format!("{}: {e}", args.input.display())))?;
    let curve = output::read_tv_curve(file)?;
    let d0 = match args.d0 {
        Some(d0) => d0,
        None => *curve
            .values
            .first()
            .ok_or_else(|| Error::invalid("TV curve is empty"))?,
    };
    let floor = (!args.no_floor).then_some(args.floor_multiplier);
    let fit = fit_gamma(&curve, d0, floor)?;
    if let Some(path) = &args.out {
        output::write_json(create(path)?, &FitReport::from(fit))?;
    }
    println!("{:.6}", fit.gamma_hat);
    eprintln!("n_cut = {}, d0 = {}", fit.n_cut, fit.d0);
    Ok(())
}
