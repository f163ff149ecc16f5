//! Command-line experiment driver.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{
    autocorrelation, convergence_scan, door_tracking_error, tracking_error, ErrorSeries,
};
use crate::config::{Analysis, ConfigError, ExperimentConfig, SignalSource};
use crate::fleet::{build_fleet, run_door_experiment, run_simulation, ModelErrorMode};
use crate::trace::{TraceError, TraceSet};

/// Fleet simulator for broadcast-controlled thermostatic loads.
#[derive(Debug, Parser)]
#[command(name = "tclsim", version)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a configured experiment and write trace, error and summary files.
    Run(RunArgs),
    /// Re-analyze a previously written trace file.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment configuration file (`section.key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reference signal file, overriding the configured source.
    #[arg(long)]
    signal: Option<PathBuf>,
    /// Number of devices, overriding the config.
    #[arg(long)]
    devices: Option<usize>,
    /// Controller step in seconds, overriding the config.
    #[arg(long = "step-s")]
    step_s: Option<f64>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-device probability of skipping a controller invocation.
    #[arg(long = "skip-prob")]
    skip_prob: Option<f64>,
    /// Mean door openings per device per day (0 disables).
    #[arg(long = "door-rate-per-day")]
    door_rate_per_day: Option<f64>,
    /// Control-model error scenario.
    #[arg(long = "model-error", value_enum)]
    model_error: Option<ModelErrorArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelErrorArg {
    Known,
    Common,
    Random,
}

impl From<ModelErrorArg> for ModelErrorMode {
    fn from(arg: ModelErrorArg) -> Self {
        match arg {
            ModelErrorArg::Known => ModelErrorMode::Known,
            ModelErrorArg::Common => ModelErrorMode::CommonNominal,
            ModelErrorArg::Random => ModelErrorMode::Randomized,
        }
    }
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Trace file written by `tclsim run`.
    trace: PathBuf,
    /// Analysis to perform.
    #[arg(long, value_enum, default_value = "tracking")]
    analysis: AnalysisArg,
    /// Maximum autocorrelation lag.
    #[arg(long = "max-lag", default_value_t = 100)]
    max_lag: usize,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AnalysisArg {
    Tracking,
    Acf,
}

/// Exit status semantics: 0 success, 1 validation failure, 2 runtime failure.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let validation = err.use_stderr();
            let _ = err.print();
            return if validation { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Analyze(args) => cmd_analyze(args),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Signal(#[from] crate::signal::SignalError),
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    InvalidTrace(TraceError),
    #[error(transparent)]
    Sim(#[from] crate::fleet::SimError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Analysis(#[from] crate::analysis::AnalysisError),
    #[error("could not write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
}

impl AppError {
    fn exit_code(&self) -> i32 {
        match self {
            // bad inputs are validation failures; everything after a valid
            // configuration counts as a runtime failure
            AppError::Config(_)
            | AppError::Signal(_)
            | AppError::Validation(_)
            | AppError::InvalidTrace(_) => 1,
            AppError::Sim(_) | AppError::Trace(_) | AppError::Analysis(_)
            | AppError::Write { .. } => 2,
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<(), AppError> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(path) = args.signal {
        cfg.signal_source = SignalSource::Path(path);
    }
    if let Some(n) = args.devices {
        cfg.fleet.n_devices = n;
    }
    if let Some(step) = args.step_s {
        cfg.sim.step_s = step;
    }
    if let Some(seed) = args.seed {
        cfg.fleet.master_seed = seed;
    }
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    if let Some(p) = args.skip_prob {
        cfg.sim.skip_probability = p;
    }
    if let Some(rate) = args.door_rate_per_day {
        cfg.sim.door_profile = (rate > 0.0).then(|| vec![rate / 24.0]);
    }
    if let Some(mode) = args.model_error {
        cfg.fleet.model_error_mode = mode.into();
    }

    let signal = cfg.build_signal()?;
    if signal.horizon() < cfg.sim.horizon_s {
        return Err(AppError::Validation(format!(
            "signal horizon {} s does not cover the simulation horizon {} s \
             (set signal.repeat or shorten sim.horizon_s)",
            signal.horizon(),
            cfg.sim.horizon_s
        )));
    }
    std::fs::create_dir_all(&cfg.output_dir).map_err(|source| AppError::Write {
        path: cfg.output_dir.display().to_string(),
        source,
    })?;

    let seed = cfg.fleet.master_seed;
    let fingerprint = cfg.fingerprint();
    let started = Instant::now();

    let doors_analysis = cfg.analyses.contains(&Analysis::Doors);
    let (trace, baseline) = if doors_analysis {
        let exp = run_door_experiment(&cfg.fleet, &cfg.sim, &signal)?;
        (exp.controlled, Some(exp.baseline))
    } else {
        let mut fleet = build_fleet(&cfg.fleet)?;
        (run_simulation(&mut fleet, &signal, &cfg.sim)?, None)
    };
    let runtime = started.elapsed().as_secs_f64();

    trace.write_csv(cfg.output_dir.join("trace.csv"), seed, fingerprint)?;
    let errors = tracking_error(&trace);
    write_error_series(&cfg.output_dir.join("errors.csv"), &errors, seed, fingerprint)?;

    let mut summary = String::new();
    let _ = writeln!(summary, "# tclsim summary v{}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(summary, "seed={seed}");
    let _ = writeln!(summary, "config_hash={fingerprint:016x}");
    let _ = writeln!(summary, "n_devices={}", trace.n_devices);
    let _ = writeln!(summary, "records={}", trace.len());
    let _ = writeln!(summary, "sum_p0_w={}", trace.sum_p0);
    let _ = writeln!(summary, "std_w_per_device={}", errors.std_w_per_device);
    let _ = writeln!(summary, "energy_clip_events={}", trace.energy_clip_events);
    let _ = writeln!(summary, "power_clip_events={}", trace.power_clip_events);
    let _ = writeln!(summary, "max_band_margin_degc={}", trace.max_band_margin);
    let _ = writeln!(summary, "runtime_s={runtime}");

    for analysis in &cfg.analyses {
        match analysis {
            Analysis::Tracking => {} // errors.csv is always written
            Analysis::Acf => {
                let acf = autocorrelation(&errors.error_w_per_device, cfg.acf_max_lag)?;
                write_acf(&cfg.output_dir.join("acf.csv"), &acf, seed, fingerprint)?;
            }
            Analysis::Convergence => {
                let scan = convergence_scan(
                    &cfg.convergence_n_list,
                    cfg.convergence_repetitions,
                    &cfg.fleet,
                    &cfg.sim,
                    &signal,
                )?;
                let mut out = repro_header(seed, fingerprint);
                out.push_str("n_devices,std_w_per_device\n");
                for row in &scan.rows {
                    let _ = writeln!(out, "{},{}", row.n_devices, row.std_w_per_device);
                }
                if let Some(slope) = scan.loglog_slope {
                    let _ = writeln!(summary, "convergence_loglog_slope={slope}");
                }
                write_text(&cfg.output_dir.join("convergence.csv"), &out)?;
            }
            Analysis::Doors => {
                let baseline = baseline.as_ref().expect("twin run exists for doors");
                baseline.write_csv(cfg.output_dir.join("baseline.csv"), seed, fingerprint)?;
                let door_errors = door_tracking_error(&trace, baseline, &signal)?;
                write_error_series(
                    &cfg.output_dir.join("door_errors.csv"),
                    &door_errors,
                    seed,
                    fingerprint,
                )?;
                let _ = writeln!(
                    summary,
                    "door_tracking_std_w_per_device={}",
                    door_errors.std_w_per_device
                );
            }
        }
    }
    write_text(&cfg.output_dir.join("summary.txt"), &summary)?;
    println!(
        "wrote {} records to {} (std {:.4} W/device, {:.2} s)",
        trace.len(),
        cfg.output_dir.display(),
        errors.std_w_per_device,
        runtime
    );
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), AppError> {
    let trace = TraceSet::read_csv(&args.trace).map_err(AppError::InvalidTrace)?;
    if trace.n_devices == 0 {
        return Err(AppError::Validation(format!(
            "trace {} carries no n_devices header; cannot normalise per appliance",
            args.trace.display()
        )));
    }
    std::fs::create_dir_all(&args.out).map_err(|source| AppError::Write {
        path: args.out.display().to_string(),
        source,
    })?;
    let stem = args
        .trace
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trace".into());
    // analysis outputs inherit the source trace's reproducibility metadata
    let seed = trace.source_seed.unwrap_or(0);
    let fingerprint = trace.source_fingerprint.unwrap_or(0);
    let errors = tracking_error(&trace);
    match args.analysis {
        AnalysisArg::Tracking => {
            let path = args.out.join(format!("{stem}_errors.csv"));
            write_error_series(&path, &errors, seed, fingerprint)?;
            println!(
                "{}: {} records, std {:.6} W/device",
                path.display(),
                errors.error_w_per_device.len(),
                errors.std_w_per_device
            );
        }
        AnalysisArg::Acf => {
            let acf = autocorrelation(&errors.error_w_per_device, args.max_lag)?;
            let path = args.out.join(format!("{stem}_acf.csv"));
            write_acf(&path, &acf, seed, fingerprint)?;
            println!(
                "{}: {} lags, 95% band +/-{:.5}",
                path.display(),
                args.max_lag,
                acf.band
            );
        }
    }
    Ok(())
}

fn repro_header(seed: u64, fingerprint: u64) -> String {
    format!(
        "# tclsim v{}\n# seed={seed}\n# config_hash={fingerprint:016x}\n",
        env!("CARGO_PKG_VERSION")
    )
}

fn write_error_series(
    path: &Path,
    errors: &ErrorSeries,
    seed: u64,
    fingerprint: u64,
) -> Result<(), AppError> {
    let mut out = repro_header(seed, fingerprint);
    out.push_str("time_s,error_w_per_device\n");
    for (t, e) in errors.times.iter().zip(&errors.error_w_per_device) {
        let _ = writeln!(out, "{t},{e}");
    }
    write_text(path, &out)
}

fn write_acf(
    path: &Path,
    acf: &crate::analysis::Autocorrelation,
    seed: u64,
    fingerprint: u64,
) -> Result<(), AppError> {
    let mut out = repro_header(seed, fingerprint);
    out.push_str("lag,acf,significant\n");
    for (lag, value) in acf.acf.iter().enumerate() {
        let _ = writeln!(out, "{lag},{value},{}", u8::from(value.abs() > acf.band));
    }
    write_text(path, &out)
}

fn write_text(path: &Path, text: &str) -> Result<(), AppError> {
    std::fs::write(path, text).map_err(|source| AppError::Write {
        path: path.display().to_string(),
        source,
    })
}
