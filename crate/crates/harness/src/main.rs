use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fahmc_harness::config::ModelSpec;
use fahmc_harness::{experiments, ExperimentConfig, HarnessError, Result};
use serde::Serialize;

/// Federated averaging HMC experiments.
#[derive(Debug, Parser)]
#[command(name = "fahmc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured algorithm and write its trace and samples.
    Run(Common),
    /// Rounds to reach the W2 threshold across dimensions, with a linear fit of rounds² against d.
    DimVsComm(Common),
    /// Marginal error against the reference over a grid of stepsizes.
    SweepStepsize(Common),
    /// Rounds to reach the marginal-error threshold over a grid of sync periods.
    SweepLocal(Common),
    /// Marginal error between two sample files (.csv or .bin).
    Compare {
        samples_a: PathBuf,
        samples_b: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Write the synthetic logistic dataset of a config to data.csv.
    GenLogisticData(Common),
}

fn set_workers(workers: Option<usize>) -> Result<()> {
    #[cfg(feature = "parallel")]
    if let Some(n) = workers {
        if n == 0 {
            return Err(HarnessError::config("--workers", "must be >= 1"));
        }
        // A pool that is already initialised keeps its size.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = workers;
    Ok(())
}

fn load(common: &Common, seed_is_data_seed: bool) -> Result<ExperimentConfig> {
    set_workers(common.workers)?;
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        match (&mut cfg.model, seed_is_data_seed) {
            (ModelSpec::Logistic { data_seed, .. }, true) => *data_seed = seed,
            _ => cfg.federation.seed = seed,
        }
    }
    if let Some(out) = &common.out {
        cfg.output.dir = out.clone();
    }
    Ok(cfg)
}

fn print_json<T: Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("report serializes")
    );
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(c) => {
            let summary = experiments::cmd_run(&load(&c, false)?)?;
            print_json(&summary);
            if !summary.converged {
                return Err(HarnessError::NonConvergence(
                    "stopping threshold not reached within the iteration cap".into(),
                ));
            }
        }
        Command::DimVsComm(c) => print_json(&experiments::cmd_dim_vs_comm(&load(&c, false)?)?),
        Command::SweepStepsize(c) => {
            print_json(&experiments::cmd_sweep_stepsize(&load(&c, false)?)?)
        }
        Command::SweepLocal(c) => print_json(&experiments::cmd_sweep_local(&load(&c, false)?)?),
        Command::Compare {
            samples_a,
            samples_b,
            workers,
        } => {
            set_workers(workers)?;
            print_json(&experiments::cmd_compare(&samples_a, &samples_b)?);
        }
        Command::GenLogisticData(c) => {
            let path = experiments::cmd_gen_logistic_data(&load(&c, true)?)?;
            println!("{}", path.display());
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
