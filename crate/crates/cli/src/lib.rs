//! Command-line driver: pretraining, span fine-tuning, masking sweeps,
//! gradient checks and run reports, all configured by one JSON file.
//!
//! Exit codes: 0 on success, 2 for configuration or input errors, 3 for
//! numerical divergence or a failed gradient check.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use pmlm::masking::{synthetic_corpus, write_corpus_lines};
use pmlm::training::Mode;

pub mod config;
pub mod error;
pub mod finetune;
pub mod gradcheck;
pub mod pretrain;
pub mod report;
pub mod sweep;

pub use config::{PathsConfig, RunConfig, OUT_DIR_ENV};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "pmlm", version, about = "Position-masking MLM pretraining experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    Baseline,
    Position,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Baseline => Mode::Baseline,
            ModeArg::Position => Mode::Position,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Two-phase MLM pretraining; writes metrics and checkpoints under
    /// out_dir/<mode>-seed<N>-<config hash>/.
    Pretrain {
        config: PathBuf,
        #[arg(long, value_enum, default_value = "position")]
        mode: ModeArg,
        /// Overrides train.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fine-tunes a checkpoint on the synthetic span task.
    Finetune {
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        dropout_grad: finetune::DropoutGrad,
        /// First seed; overrides finetune.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of consecutive seeds.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
    /// Pretrains once per (position-mask percentage, seed) and writes sweep.csv.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.10,0.15")]
        pcts: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        /// First seed; overrides train.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Points trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Finite-difference check of every gradient in a tiny f64 model.
    Gradcheck {
        #[arg(long, value_enum, default_value = "tiny")]
        size: gradcheck::CheckSize,
        #[arg(long, hide = true)]
        inject_bug: bool,
    },
    /// Compares baseline and position runs and exports their curves.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Writes a synthetic text corpus.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4000)]
        lines: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

pub fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Pretrain { config, mode, seed } => pretrain::cmd_pretrain(&config, mode.into(), seed).map(drop),
        Command::Finetune {
            config,
            checkpoint,
            dropout_grad,
            seed,
            seeds,
        } => finetune::cmd_finetune(&config, &checkpoint, dropout_grad, seed, seeds).map(drop),
        Command::Sweep {
            config,
            pcts,
            seeds,
            seed,
            jobs,
        } => {
            let spec = sweep::SweepSpec { pcts, seeds };
            sweep::cmd_sweep(&config, &spec, seed, jobs).map(drop)
        }
        Command::Gradcheck { size, inject_bug } => gradcheck::cmd_gradcheck(size, inject_bug),
        Command::Report { runs, out } => report::cmd_report(&runs, &out).map(drop),
        Command::GenCorpus { out, lines, seed } => {
            write_corpus_lines(&out, &synthetic_corpus(lines, seed)).map_err(|e| CliError::io(&out, e))?;
            println!("wrote {lines} lines to {}", out.display());
            Ok(())
        }
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
