use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mlmarket::config::ExperimentConfig;
use mlmarket::report::{ce_fields, oracle_fields, render, sq_fields};
use mlmarket::runner::{rerun_manifest, run_experiment, RunnerOptions};
use mlmarket::{CliError, Result};
use mlmarket_core::analytics::{bad_instance_oracle, ce_risk_bound, sq_risk_bound, CeBoundInputs, SqBoundInputs};
use mlmarket_core::datagen::SyntheticSpec;

#[derive(Parser)]
#[command(name = "mlmarket", version, about = "Multi-learner market simulations with probing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment (or sweep) described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        run: RunFlags,
        /// Overrides `dynamics.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-execute the resolved config stored in a run manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Closed-form report for the two-subpopulation bad-outcome instance.
    Oracle {
        #[arg(long, requires = "c", conflicts_with_all = ["epsilon", "gamma"])]
        alpha: Option<f64>,
        #[arg(long, requires = "alpha")]
        c: Option<f64>,
        #[arg(long, requires = "gamma")]
        epsilon: Option<f64>,
        #[arg(long, requires = "epsilon")]
        gamma: Option<f64>,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
    },
    /// Finite-sample risk bound of a probing learner.
    Bounds {
        #[command(subcommand)]
        loss: BoundsCommand,
    },
}

#[derive(Args)]
struct RunFlags {
    /// Overrides `output.dir`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
    /// Concurrent sweep points (0 = one per core).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    p: f64,
    #[arg(long, default_value_t = 1e-3)]
    lambda: f64,
    /// Probe dataset size; `inf` gives the large-sample limit.
    #[arg(long, default_value_t = 100.0)]
    n: f64,
    #[arg(long, default_value_t = 0.05)]
    kappa_conf: f64,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    radius: f64,
    #[arg(long)]
    norm_theta_star: f64,
}

#[derive(Subcommand)]
enum BoundsCommand {
    /// Squared loss.
    Sq {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        b: f64,
        #[arg(long)]
        y_max: f64,
        #[arg(long)]
        m0: f64,
    },
    /// Cross-entropy loss.
    Ce {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        b_ce: f64,
        #[arg(long)]
        classes: usize,
    },
}

fn runner_options(flags: RunFlags, seed: Option<u64>) -> RunnerOptions {
    RunnerOptions { out_dir: flags.out_dir, seed, jobs: flags.jobs, quiet: flags.quiet }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { config, run, seed } => {
            let cfg = ExperimentConfig::load(&config)?;
            run_experiment(&cfg, &runner_options(run, seed))?;
        }
        Command::Rerun { manifest, run } => {
            rerun_manifest(&manifest, &runner_options(run, None))?;
        }
        Command::Oracle { alpha, c, epsilon, gamma, tau } => {
            let (alpha, c) = match (alpha, c, epsilon, gamma) {
                (Some(a), Some(c), _, _) => (a, c),
                (_, _, Some(e), Some(g)) => match SyntheticSpec::bad_outcome_from_gap(e, g)? {
                    SyntheticSpec::BadOutcome { alpha, c } => (alpha, c),
                    _ => unreachable!(),
                },
                _ => return Err(CliError::Config("give --alpha and --c, or --epsilon and --gamma".into())),
            };
            print!("{}", render(&oracle_fields(&bad_instance_oracle(alpha, c, tau)?)));
        }
        Command::Bounds { loss: BoundsCommand::Sq { common: k, b, y_max, m0 } } => {
            let r = sq_risk_bound(&SqBoundInputs {
                p: k.p,
                lambda: k.lambda,
                n: k.n,
                kappa_conf: k.kappa_conf,
                b,
                epsilon: k.epsilon,
                radius: k.radius,
                y_max,
                m0,
                norm_theta_star: k.norm_theta_star,
            })?;
            print!("{}", render(&sq_fields(&r)));
        }
        Command::Bounds { loss: BoundsCommand::Ce { common: k, b_ce, classes } } => {
            let r = ce_risk_bound(&CeBoundInputs {
                p: k.p,
                lambda: k.lambda,
                n: k.n,
                kappa_conf: k.kappa_conf,
                b_ce,
                epsilon: k.epsilon,
                radius: k.radius,
                classes,
                norm_theta_star: k.norm_theta_star,
            })?;
            print!("{}", render(&ce_fields(&r)));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mlmarket: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
