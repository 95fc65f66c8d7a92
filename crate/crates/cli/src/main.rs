//! The `cloudcast` command line. Configuration comes from JSON files plus
//! `--seed`, `--out` and `--jobs`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod dump;
mod error;
mod manifest;

pub const DEFAULT_SEED: u64 = 11;

#[derive(Debug, Parser)]
#[command(name = "cloudcast", version, about = "Two-stage cloud-to-solar-power forecasting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunOpts {
    /// Base seed. Overrides any seed in the configuration file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for every artifact and the run manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads for per-site and per-trial work.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a fleet from a synthesis config and write it to disk.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Train one cloud forecasting model on a dataset.
    TrainCloud {
        #[arg(long)]
        data: PathBuf,
        /// convlstm, cbam or sa.
        #[arg(long)]
        cell: String,
        /// Training spec JSON; defaults to the desk-scale spec for the cell.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Search the 24-point layers x hidden x batch grid around the spec.
        #[arg(long)]
        grid: bool,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Train one solar net per site by random search.
    TrainSolar {
        #[arg(long)]
        data: PathBuf,
        /// mlp, cnn1d or lstm.
        #[arg(long)]
        net: String,
        /// with_clouds or no_clouds.
        #[arg(long)]
        lineage: String,
        /// Random-search trials per site.
        #[arg(long, default_value_t = 1)]
        trials: usize,
        /// Search space JSON; defaults to the published ranges.
        #[arg(long, conflicts_with = "spec")]
        space: Option<PathBuf>,
        /// Fixed net spec JSON; skips the search.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Benchmark trained nets on the test split under each scenario.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        /// Directory holding cloud_<model>.ckpt and solar_<net>_<lineage>_<site>.ckpt files.
        #[arg(long)]
        checkpoints: PathBuf,
        /// Comma-separated scenarios, e.g. ground_truth_clouds,forecasted_clouds:cbam,no_clouds.
        #[arg(long, default_value = "ground_truth_clouds,persistence_clouds,no_clouds")]
        scenarios: String,
        /// Comma-separated solar nets; `persistence` scores the reference itself.
        #[arg(long, default_value = "mlp,cnn1d,lstm")]
        nets: String,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Rebuild report tables and per-step error curves from a per-sample dump.
    Report {
        /// samples.csv written by evaluate or experiment.
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the whole experiment end to end.
    Experiment {
        /// Experiment config JSON.
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// desk or smoke.
        #[arg(long, default_value = "desk")]
        preset: String,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Finite-difference check of every graph op and cell step.
    Gradcheck {
        /// Flip the sign of the tanh backward rule; the suite must fail.
        #[arg(long)]
        inject_fault: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the per-op errors as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { config, run } => commands::generate(&config, &run),
        Command::TrainCloud {
            data,
            cell,
            spec,
            grid,
            run,
        } => commands::train_cloud(&data, &cell, spec.as_deref(), grid, &run),
        Command::TrainSolar {
            data,
            net,
            lineage,
            trials,
            space,
            spec,
            run,
        } => commands::train_solar(&data, &net, &lineage, trials, space.as_deref(), spec.as_deref(), &run),
        Command::Evaluate {
            data,
            checkpoints,
            scenarios,
            nets,
            run,
        } => commands::evaluate(&data, &checkpoints, &scenarios, &nets, &run),
        Command::Report { samples, out } => commands::report(&samples, &out),
        Command::Experiment { config, preset, run } => commands::experiment(config.as_deref(), &preset, &run),
        Command::Gradcheck {
            inject_fault,
            seed,
            out,
        } => commands::gradcheck(inject_fault, seed, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
