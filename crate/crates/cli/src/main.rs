use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;
use std::thread;

use clap::{Parser, Subcommand};
use log::info;

use gravcal::estimator::{self, Estimate, Estimator, EstimatorConfig};
use gravcal::evaluate::{self, DEFAULT_HORIZON};
use gravcal::io::{self, LoadedDataset, RunConfig, RunReport};
use gravcal::map_gravity::{self, GravityEstimate};
use gravcal::synth::{self, SCENARIOS};
use gravcal::{so3, Error};

#[derive(Debug, Parser)]
#[command(name = "gravcal", version, about = "Accelerometer intrinsics and gravity direction estimation")]
struct Cli {
    /// Print the default configuration file and exit.
    #[arg(long)]
    print_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Simulate {
        /// Directory receiving imu.csv, poses.csv, truth.csv and meta.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scenario preset; overrides the config file.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Duration in seconds; overrides the preset length.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Run the estimator over a dataset.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        /// JSON report path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Timeseries CSV path; defaults to the report path with a .csv extension.
        #[arg(long)]
        timeseries: Option<PathBuf>,
        /// Run the estimator on a worker thread fed through a channel.
        #[arg(long)]
        threaded: bool,
    },
    /// Compare a report with the dataset's ground truth.
    Evaluate {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Metrics JSON path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// IMU prediction horizon, s.
        #[arg(long, default_value_t = DEFAULT_HORIZON)]
        horizon: f64,
    },
    /// Correct keyframe roll/pitch with the gravity estimates of a report.
    Align {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Corrected keyframe orientations, CSV.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Failure with the process exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_SOLVER: u8 = 4;

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => EXIT_CONFIG,
            Error::Data { .. }
            | Error::Mismatch(_)
            | Error::NonMonotonicTime { .. }
            | Error::Io(_)
            | Error::Json(_) => EXIT_DATA,
            Error::Antipode(_)
            | Error::Coverage { .. }
            | Error::NonPsd(_)
            | Error::RankDeficient(_)
            | Error::UnknownVariable(_)
            | Error::VariableKind(_) => EXIT_SOLVER,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: message.into(),
    }
}

/// Errors reading a dataset are data errors whatever their cause.
fn data_error(e: Error) -> Failure {
    Failure {
        code: EXIT_DATA,
        message: e.to_string(),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn simulate(
    out: &Path,
    config: Option<&Path>,
    scenario: Option<String>,
    seed: Option<u64>,
    duration: Option<f64>,
) -> Result<(), Failure> {
    let mut params = load_config(config)?.scenario;
    if let Some(s) = scenario {
        params.preset = s;
    }
    if let Some(s) = seed {
        params.seed = s;
    }
    if duration.is_some() {
        params.duration = duration;
    }
    if !SCENARIOS.contains(&params.preset.as_str()) {
        return Err(config_error(format!(
            "unknown scenario {:?}; expected one of {SCENARIOS:?}",
            params.preset
        )));
    }
    let config = synth::scenario(&params)?;
    let data = synth::simulate(&config)?;
    io::write_dataset(out, &data)?;
    info!(
        "wrote {} IMU samples and {} poses to {}",
        data.imu.len(),
        data.poses.len(),
        out.display()
    );
    Ok(())
}

fn run_threaded(config: EstimatorConfig, data: &LoadedDataset) -> Result<Vec<Estimate>, Error> {
    let (tx, rx) = mpsc::sync_channel(1024);
    let worker = thread::spawn(move || -> Result<Vec<Estimate>, Error> {
        let mut est = Estimator::new(config, None)?;
        let mut out = Vec::new();
        for m in rx {
            est.add(m)?;
            out.extend(est.drain_estimates());
        }
        est.finish()?;
        out.extend(est.drain_estimates());
        Ok(out)
    });
    for m in estimator::interleave(&data.imu, &data.poses) {
        if tx.send(m).is_err() {
            break;
        }
    }
    drop(tx);
    worker.join().expect("estimator worker panicked")
}

fn estimate(
    data_dir: &Path,
    out: &Path,
    config: Option<&Path>,
    timeseries: Option<PathBuf>,
    threaded: bool,
) -> Result<(), Failure> {
    let config = load_config(config)?;
    let data = io::read_dataset(data_dir).map_err(data_error)?;
    let est_config = config.estimator.clone();
    let estimates = if threaded {
        run_threaded(est_config, &data)?
    } else {
        estimator::run(est_config, None, &data.imu, &data.poses)?
    };
    let report = RunReport::new(
        &estimates,
        config.estimator.gravity_magnitude,
        data.meta.as_ref().map(|m| &m.scenario),
    );
    report.write_json(out)?;
    let ts = timeseries.unwrap_or_else(|| out.with_extension("csv"));
    report.write_timeseries(&ts)?;
    if let Some(s) = &report.summary {
        info!(
            "final errors: gravity {:.4} deg, bias rmse {:.4} m/s^2, sensitivity max {:.5}",
            s.gravity_error_deg, s.bias_rmse, s.sensitivity_max_error
        );
    }
    info!("{} updates written to {}", report.records.len(), out.display());
    Ok(())
}

fn evaluate_cmd(report: &Path, data_dir: &Path, out: Option<&Path>, horizon: f64) -> Result<(), Failure> {
    if !(horizon > 0.0) {
        return Err(config_error("horizon must be positive"));
    }
    let report = RunReport::read_json(report).map_err(data_error)?;
    let data = io::read_dataset(data_dir).map_err(data_error)?;
    let metrics = evaluate::evaluate(&report, &data, horizon)?;
    let text = serde_json::to_string_pretty(&metrics).map_err(Error::from)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text).map_err(Error::from)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn align(report: &Path, data_dir: &Path, out: &Path, config: Option<&Path>) -> Result<(), Failure> {
    let config = load_config(config)?;
    let report = RunReport::read_json(report).map_err(data_error)?;
    let data = io::read_dataset(data_dir).map_err(data_error)?;
    let gravity = report
        .records
        .iter()
        .map(GravityEstimate::try_from)
        .collect::<Result<Vec<_>, _>>()?;
    let (nodes, factors) = map_gravity::capture_keyframes(&data.poses, &gravity)?;
    let constraints = map_gravity::chain_constraints(&nodes, config.align.relative_sigma_deg.to_radians());
    let result = map_gravity::align_keyframes(&nodes, &constraints, &factors, &config.align)?;
    let mut text = String::from("id,t,qw,qx,qy,qz,correction_deg\n");
    for (before, after) in nodes.iter().zip(&result.nodes) {
        let q = so3::to_quaternion_wxyz(&after.r_m);
        let change = so3::log(&(before.r_m.inverse() * after.r_m)).norm().to_degrees();
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            after.id,
            io::format_time(after.t),
            q[0],
            q[1],
            q[2],
            q[3],
            change
        ));
    }
    std::fs::write(out, text).map_err(Error::from)?;
    info!(
        "aligned {} keyframes with {} gravity factors, cost {:.4} -> {:.4}",
        nodes.len(),
        factors.len(),
        result.report.initial_cost,
        result.report.final_cost
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if cli.print_config {
        print!("{}", RunConfig::default().to_toml()?);
        return Ok(());
    }
    match cli.command {
        None => Err(config_error("no subcommand given; see --help")),
        Some(Command::Simulate {
            out,
            config,
            scenario,
            seed,
            duration,
        }) => simulate(&out, config.as_deref(), scenario, seed, duration),
        Some(Command::Estimate {
            data,
            out,
            config,
            timeseries,
            threaded,
        }) => estimate(&data, &out, config.as_deref(), timeseries, threaded),
        Some(Command::Evaluate {
            report,
            data,
            out,
            horizon,
        }) => evaluate_cmd(&report, &data, out.as_deref(), horizon),
        Some(Command::Align {
            report,
            data,
            out,
            config,
        }) => align(&report, &data, &out, config.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
