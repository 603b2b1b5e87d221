use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flsim::scenario::{downsample, load_pointcloud, metrics_for_log, run_scenario, ScenarioConfig, ScenarioError};

#[derive(Parser)]
#[command(name = "flsim", version, about = "Flying Light Speck swarm emulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its logs and metrics.
    Run {
        scenario: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Recompute metrics from a trajectory log.
    Metrics { log: PathBuf, scenario: PathBuf },
    /// Farthest-point downsample a point cloud to `n` points (XYZRGB out).
    Downsample { input: PathBuf, n: usize, output: PathBuf },
    /// Check a scenario file without running it.
    Validate { scenario: PathBuf },
}

fn execute(cli: Cli) -> Result<(), ScenarioError> {
    match cli.command {
        Command::Run { scenario, seed, out } => {
            let mut cfg = ScenarioConfig::load(&scenario)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let output = run_scenario(&cfg)?;
            output.write_to(&out)?;
            print!("{}", output.metrics);
        }
        Command::Metrics { log, scenario } => {
            let cfg = ScenarioConfig::load(&scenario)?;
            let text = std::fs::read_to_string(&log)?;
            print!("{}", metrics_for_log(&text, &cfg)?);
        }
        Command::Downsample { input, n, output } => {
            if n == 0 {
                return Err(ScenarioError::ConfigInvalid("n must be ≥ 1".into()));
            }
            let cloud = load_pointcloud(&input).map_err(|e| ScenarioError::ConfigInvalid(e.to_string()))?;
            std::fs::write(&output, downsample(&cloud, n, 0).to_xyzrgb())?;
        }
        Command::Validate { scenario } => {
            ScenarioConfig::load(&scenario)?.validate()?;
            println!("ok");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
