use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use gi_harness::benchmark::run_single;
use gi_harness::checks::{invariance_check, kalman_check, InvarianceSetup};
use gi_harness::output::{histogram_csv, read_trajectories, to_json, trajectory_csv, write_file};
use gi_harness::{run_benchmark, run_filters, simulate_sde, FilterKind, HarnessError, Result, Scenario, ScenarioConfig};
use log::info;

#[derive(Parser, Debug)]
#[command(name = "gifilter", version, about = "Simulate, filter and benchmark nonlinear diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate truth and observations only
    Simulate(Common),
    /// Run the filters on a simulated or recorded trajectory
    Filter {
        #[command(flatten)]
        common: Common,
        /// Trajectory CSV with truth_* and obs_* columns (simulated when absent)
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Monte Carlo comparison with summary statistics and histograms
    Benchmark(Common),
    /// Compare the filter against a directly coded Kalman filter on a random linear model
    KalmanCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 1024)]
        substeps: usize,
    },
    /// Coordinate-invariance scaling study on the cubic model under a cubic warp
    InvarianceCheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// JSON scenario configuration
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's output.dir, else the current directory)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated subset of gif,ekf
    #[arg(long, value_delimiter = ',')]
    filters: Option<Vec<FilterKind>>,
    #[arg(long)]
    no_collar: bool,
    #[arg(long)]
    no_quadratic: bool,
    /// Flow integration substeps per observation interval
    #[arg(long)]
    substeps: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<(ScenarioConfig, PathBuf)> {
        let mut config = ScenarioConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(filters) = &self.filters {
            config.filters = filters.clone();
        }
        if self.no_collar {
            config.collar_enabled = false;
        }
        if self.no_quadratic {
            config.quadratic_enabled = false;
        }
        if let Some(n) = self.substeps {
            config.n_substeps = n;
        }
        config.validate()?;
        let out = self
            .out
            .clone()
            .or_else(|| config.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        Ok((config, out))
    }
}

fn report(path: &Path) {
    println!("wrote {}", path.display());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(common) => {
            let (config, out) = common.load()?;
            let scenario = Scenario::build(&config.model, config.delta)?;
            let n_obs = config.n_obs / config.runs.runs();
            let trajectories = (0..config.runs.runs())
                .map(|i| {
                    let mut rng = gi_harness::simulate::trajectory_rng(config.seed, i as u64);
                    simulate_sde(&scenario, &config.x0(), config.delta, n_obs, config.sim_substeps, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            report(&write_file(&out, &config.output.trajectory, &trajectory_csv(&trajectories, &[]))?);
        }
        Command::Filter { common, input } => {
            let (config, out) = common.load()?;
            let scenario = Scenario::build(&config.model, config.delta)?;
            let (trajectories, tracks) = match input {
                Some(path) => {
                    let trajectories = read_trajectories(&path, &config.x0())?;
                    let tracks = trajectories
                        .iter()
                        .map(|t| {
                            run_filters(
                                &scenario,
                                t,
                                &config.filters,
                                &config.filter_config(),
                                &config.mu0(),
                                &config.sigma0()?,
                            )
                        })
                        .collect::<Result<Vec<_>>>()?;
                    (trajectories, tracks)
                }
                None => (0..config.runs.runs())
                    .map(|i| run_single(&config, &scenario, i))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .unzip(),
            };
            report(&write_file(&out, &config.output.trajectory, &trajectory_csv(&trajectories, &tracks))?);
        }
        Command::Benchmark(common) => {
            let (config, out) = common.load()?;
            let outcome = run_benchmark(&config)?;
            let o = &config.output;
            report(&write_file(&out, &o.trajectory, &trajectory_csv(&outcome.trajectories, &outcome.tracks))?);
            report(&write_file(&out, &o.summary, &to_json(&outcome.summary)?)?);
            report(&write_file(&out, &o.histogram, &histogram_csv(&outcome.summary))?);
            for s in &outcome.summary.filters {
                println!(
                    "{}: mean {:.6e} median {:.6e} max {:.6e} tail {:.4} ({} cycles, {} aborted)",
                    s.filter,
                    s.mean_abs_error,
                    s.median_abs_error,
                    s.max_abs_error,
                    s.tail_frequency,
                    s.scored_cycles,
                    s.aborted_steps
                );
            }
            if outcome.summary.metadata.truncated {
                return Err(HarnessError::CheckFailed("simulation stopped early; partial results written".into()));
            }
        }
        Command::KalmanCheck { seed, steps, substeps } => {
            let r = kalman_check(seed, steps, substeps)?;
            print!("{}", to_json(&r)?);
            if !r.passed {
                return Err(HarnessError::CheckFailed(format!(
                    "max relative deviation {:e} (mean) / {:e} (covariance) exceeds {:e}",
                    r.max_rel_mean, r.max_rel_cov, r.tolerance
                )));
            }
        }
        Command::InvarianceCheck { seed } => {
            let r = invariance_check(&InvarianceSetup::default(), seed)?;
            print!("{}", to_json(&r)?);
            if !r.passed {
                return Err(HarnessError::CheckFailed(format!(
                    "mismatch ratios {:?} outside {:?}",
                    r.ratios, r.bounds
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    info!("{cli:?}");
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
