//! `satnoma`: train, evaluate and check the terrestrial-satellite caching
//! simulator from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{ExperimentConfig, Preset};

#[derive(Parser, Debug)]
#[command(
    name = "satnoma",
    version,
    about = "Terrestrial-satellite NOMA caching experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON experiment file with optional `preset`, `network`, `train` and
    /// `cache` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Preset the config file is layered on.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    /// Output directory. Multiple seeds get one `seed-<n>` subdirectory each.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Training seed; repeat for several runs.
    #[arg(long = "seed", global = true)]
    seeds: Vec<u64>,
    #[arg(long, global = true)]
    episodes: Option<usize>,
    /// Steps per episode.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Successive interference cancellation for co-cell BS users.
    #[arg(long, global = true)]
    sic: bool,
    /// Add the previous reward to each observation.
    #[arg(long, global = true)]
    extended_obs: bool,
}

/// Which trainer drives the resource stage.
#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Maddpg,
    /// One centralized agent for all users.
    Ddpg,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Resource,
    Cache,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalPolicy {
    Random,
    /// Most popular files; cache stage only.
    Greedy,
    /// Noise-free actors from `--checkpoint`.
    Checkpoint,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn association and power control.
    TrainResource {
        #[arg(long, value_enum, default_value = "maddpg")]
        algorithm: Algorithm,
    },
    /// Learn cache placement under a frozen association and power policy.
    TrainCache {
        /// Resource-stage checkpoint whose actors fix the allocation;
        /// without it users take their nominal facility at `frozen_beta`.
        #[arg(long)]
        allocation: Option<PathBuf>,
    },
    /// Run a fixed or trained policy without learning.
    Eval {
        #[arg(long, value_enum)]
        stage: Stage,
        #[arg(long, value_enum, default_value = "random")]
        policy: EvalPolicy,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Trainer that wrote a resource checkpoint.
        #[arg(long, value_enum, default_value = "maddpg")]
        algorithm: Algorithm,
        /// Resource checkpoint fixing the allocation for the cache stage.
        #[arg(long)]
        allocation: Option<PathBuf>,
    },
    /// Train cache agents and compare them with exhaustive search.
    OracleCompare,
    /// Finite-difference gradient check of every network shape.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Fast invariant suite.
    Selfcheck,
}

impl Command {
    fn default_preset(&self) -> Preset {
        match self {
            Command::OracleCompare => Preset::TinyCache,
            Command::Selfcheck | Command::Gradcheck { .. } => Preset::Desk,
            _ => Preset::Full,
        }
    }
}

fn resolve(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let c = &cli.common;
    let preset = c.preset.unwrap_or_else(|| cli.command.default_preset());
    let mut exp = match &c.config {
        Some(path) => ExperimentConfig::load(path, preset)?,
        None => ExperimentConfig::from_preset(preset),
    };
    if let Some(e) = c.episodes {
        exp.train.episodes = e;
    }
    if let Some(s) = c.steps {
        exp.train.steps_per_episode = s;
    }
    exp.network.sic |= c.sic;
    exp.network.extended_obs |= c.extended_obs;
    Ok(exp)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let exp = resolve(&cli)?;
    let seeds = if cli.common.seeds.is_empty() {
        vec![exp.train.seed]
    } else {
        cli.common.seeds.clone()
    };
    let out = &cli.common.out;
    match cli.command {
        Command::TrainResource { algorithm } => commands::per_seed(&exp, out, &seeds, |e, d| {
            commands::train_resource(e, algorithm, d)
        }),
        Command::TrainCache { allocation } => commands::per_seed(&exp, out, &seeds, |e, d| {
            commands::train_cache(e, allocation.as_deref(), d)
        }),
        Command::Eval {
            stage,
            policy,
            checkpoint,
            algorithm,
            allocation,
        } => {
            let req = commands::EvalRequest {
                stage,
                policy,
                checkpoint,
                algorithm,
                allocation,
                episodes: cli.common.episodes.unwrap_or(20),
            };
            commands::per_seed(&exp, out, &seeds, |e, d| commands::eval(e, &req, d))
        }
        Command::OracleCompare => commands::per_seed(&exp, out, &seeds, commands::oracle_compare),
        Command::Gradcheck { tolerance } => commands::gradcheck(&exp, tolerance),
        Command::Selfcheck => commands::selfcheck(&exp),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("SATNOMA_LOG", "info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
