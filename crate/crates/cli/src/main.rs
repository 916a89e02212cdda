use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use phasecal::config::SystemConfig;
use phasecal::experiments::{
    apply_scale, load_config, run_scenario, write_outputs, RunOptions, Scenario, ScenarioName,
    ScenarioSection,
};
use phasecal::sim::Estimator;
use phasecal::spectral::Beamformer;
use phasecal::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Kalman,
    Direct,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BeamformerArg {
    Conj,
    Zf,
    Both,
}

/// Simulates over-the-air phase calibration for distributed MIMO and writes
/// per-UE spectral efficiency tables.
#[derive(Debug, Parser)]
#[command(name = "phasecal", version)]
struct Args {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// cdf_two_ap, se_vs_frame_length, se_vs_pn_level, se_vs_num_aps or custom.
    /// Falls back to `scenario.name` in the configuration, then `custom`.
    #[arg(long)]
    scenario: Option<String>,
    /// Master seed; overrides `system.master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Trials per grid point; overrides the configuration and --full-scale.
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// 200 trials and 1000 frames per trial.
    #[arg(long)]
    full_scale: bool,
    /// Run only this calibrated estimator.
    #[arg(long, value_enum)]
    estimator: Option<EstimatorArg>,
    #[arg(long, value_enum, default_value = "both")]
    beamformer: BeamformerArg,
}

enum Failure {
    Config(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

fn prepare(args: &Args) -> Result<(SystemConfig, Scenario), Failure> {
    let (mut system, section) = match &args.config {
        Some(p) => load_config(p).map_err(Failure::Config)?,
        None => (SystemConfig::default(), ScenarioSection::default()),
    };
    let name: ScenarioName = match &args.scenario {
        Some(s) => s.parse().map_err(Failure::Config)?,
        None => section.name.unwrap_or(ScenarioName::Custom),
    };
    apply_scale(&mut system, args.full_scale);
    if let Some(t) = args.trials {
        system.trials = t;
    }
    if let Some(s) = args.seed {
        system.master_seed = s;
    }
    system.validate().map_err(Failure::Config)?;
    let mut scenario = Scenario::resolve(name, &system, &section).map_err(Failure::Config)?;
    if let Some(e) = args.estimator {
        scenario.restrict_estimator(match e {
            EstimatorArg::Kalman => Estimator::Kalman,
            EstimatorArg::Direct => Estimator::Direct,
        });
    }
    Ok((system, scenario))
}

fn run(args: &Args) -> Result<(), Failure> {
    let (system, scenario) = prepare(args)?;
    let beamformers = match args.beamformer {
        BeamformerArg::Conj => vec![Beamformer::Conjugate],
        BeamformerArg::Zf => vec![Beamformer::ZeroForcing],
        BeamformerArg::Both => vec![Beamformer::Conjugate, Beamformer::ZeroForcing],
    };
    log::info!(
        "scenario {} with {} grid points x {} trials",
        scenario.name.as_str(),
        scenario.grid.len(),
        system.trials
    );
    let opts = RunOptions {
        beamformers,
        diagnostics: true,
    };
    let (table, diag) = run_scenario(&system, &scenario, &opts)?;
    let written = write_outputs(&args.out, &scenario, &table, diag.as_ref())?;
    for p in written {
        log::info!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
