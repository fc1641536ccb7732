//! Command line entry points.
//!
//! Every subcommand takes `--config <path>` (key/value file), `--seed <int>`
//! (overrides the config seed) and `--out <dir>` (owned exclusively via a
//! lock file for the duration of the run). Exit codes: 0 success, 1
//! validation error, 2 runtime failure.

mod episodes;
mod eval_cmds;
mod halluc_cmd;
mod train_cmds;

pub use episodes::{cmd_synth_episodes, load_episode_dir, load_episodes};
pub use eval_cmds::{cmd_eval_policies, cmd_report, EvalOptions};
pub use halluc_cmd::{cmd_hallucinate, HallucinateOptions};
pub use train_cmds::{cmd_train_halluc, cmd_train_policy};

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};

#[derive(Parser)]
#[command(name = "relume", version, about = "Online overexposure hallucination pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Key/value configuration file; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created, locked for the run).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize corrupted episodes (PFM ground truth, PNG LDR + masks,
    /// plain-text manifests).
    SynthEpisodes {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train the hallucination network (two-phase schedule, optional GAN).
    TrainHalluc {
        #[command(flatten)]
        common: CommonArgs,
        /// Continue from a trainer checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the reference-selection policy with A2C.
    TrainPolicy {
        #[command(flatten)]
        common: CommonArgs,
        /// Continue from a trainer checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate baselines, the learned policy and the a-posteriori search
    /// over an episode directory; writes report.csv and per-episode traces.
    EvalPolicies {
        #[command(flatten)]
        common: CommonArgs,
        /// Episode directory produced by synth-episodes.
        #[arg(long)]
        episodes: PathBuf,
        /// Trained policy checkpoint (adds the `learned` row).
        #[arg(long)]
        policy_checkpoint: Option<PathBuf>,
        /// Hallucination network checkpoint (required in network mode).
        #[arg(long)]
        halluc_checkpoint: Option<PathBuf>,
    },
    /// Causal end-to-end pass over an ordered LDR frame directory.
    Hallucinate {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory of PNG frames named ..._NNN.png with contiguous indices.
        #[arg(long)]
        input: PathBuf,
        /// Reference policy: no-reference | no-push | every-<k> |
        /// random-<p> | always-push | learned.
        #[arg(long, default_value = "always-push")]
        policy: String,
        #[arg(long)]
        policy_checkpoint: Option<PathBuf>,
        #[arg(long)]
        halluc_checkpoint: Option<PathBuf>,
    },
    /// Rebuild the report from exported traces.
    Report {
        #[command(flatten)]
        common: CommonArgs,
        /// Trace directory written by eval-policies.
        #[arg(long)]
        traces: PathBuf,
    },
}

/// Holds the `.lock` file inside an output directory; removed on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Runtime(
                format!("output directory {dir:?} is locked by another run (.lock exists)"),
            )),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.set("seed", &seed.to_string())?;
    }
    config.validate()?;
    Ok(config)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthEpisodes { common } => {
            let config = load_config(&common)?;
            let _lock = DirLock::acquire(&common.out)?;
            cmd_synth_episodes(&config, &common.out)
        }
        Command::TrainHalluc { common, resume } => {
            let config = load_config(&common)?;
            let _lock = DirLock::acquire(&common.out)?;
            cmd_train_halluc(&config, &common.out, resume.as_deref())
        }
        Command::TrainPolicy { common, resume } => {
            let config = load_config(&common)?;
            let _lock = DirLock::acquire(&common.out)?;
            cmd_train_policy(&config, &common.out, resume.as_deref())
        }
        Command::EvalPolicies { common, episodes, policy_checkpoint, halluc_checkpoint } => {
            let config = load_config(&common)?;
            let _lock = DirLock::acquire(&common.out)?;
            let options = EvalOptions {
                episodes_dir: episodes,
                policy_checkpoint,
                halluc_checkpoint,
            };
            cmd_eval_policies(&config, &common.out, &options)
        }
        Command::Hallucinate { common, input, policy, policy_checkpoint, halluc_checkpoint } => {
            let config = load_config(&common)?;
            let _lock = DirLock::acquire(&common.out)?;
            let options = HallucinateOptions {
                input_dir: input,
                policy,
                policy_checkpoint,
                halluc_checkpoint,
            };
            cmd_hallucinate(&config, &common.out, &options)
        }
        Command::Report { common, traces } => {
            let config = load_config(&common)?;
            let _lock = DirLock::acquire(&common.out)?;
            cmd_report(&config, &common.out, &traces)
        }
    }
}

/// Binary entry point: parses arguments, runs, maps errors to exit codes.
pub fn run() {
    let cli = Cli::parse();
    if let Err(err) = dispatch(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
