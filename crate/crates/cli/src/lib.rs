//! Batch pipeline behind the `camnoise` binary.
//!
//! Every command reads one JSON [`config::RunConfig`], applies command-line
//! overrides, writes the resolved configuration next to its outputs and
//! exits with 0 on success, 1 on numeric/runtime failure and 2 on
//! configuration or input errors.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use camnoise::data::{ColorSpace, EvalMode};
use camnoise::generator::Variant;
use camnoise::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{Overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "camnoise", version, about = "Camera noise synthesis and evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub tile: Option<usize>,
    #[arg(long, global = true)]
    pub overlap: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, global = true, value_enum)]
    pub space: Option<SpaceArg>,
    /// Generator variant, e.g. CFG_NIN or IMAGE_3C_CONST.
    #[arg(long, global = true)]
    pub variant: Option<Variant>,
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Em1,
    Em2,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SpaceArg {
    Srgb,
    Raw,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build split manifests, or write the synthetic oracle dataset.
    Prepare,
    /// Train or resume (with --checkpoint).
    Train,
    /// Add synthetic noise to images or instance folders.
    Synthesize {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Compare residuals of two instance trees.
    Evaluate { real_dir: PathBuf, synth_dir: PathBuf },
    /// Summarize every report.json below a directory as a markdown table.
    Report { run_dir: PathBuf },
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            tile: self.tile,
            overlap: self.overlap,
            mode: self.mode.map(|m| match m {
                ModeArg::Em1 => EvalMode::Em1,
                ModeArg::Em2 => EvalMode::Em2,
            }),
            space: self.space.map(|s| match s {
                SpaceArg::Srgb => ColorSpace::Srgb,
                SpaceArg::Raw => ColorSpace::Raw,
            }),
            variant: self.variant,
            output_dir: self.output.clone(),
            checkpoint: self.checkpoint.clone(),
            dataset_root: None,
        }
    }

    fn resolve(&self) -> camnoise::Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        base.resolve(&self.overrides())
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerics { .. } | Error::Domain(_) => 1,
        _ => 2,
    }
}

/// Runs one parsed invocation; returns the process exit code.
pub fn run(cli: Cli) -> u8 {
    let result = (|| -> camnoise::Result<()> {
        match &cli.command {
            Command::Report { run_dir } => print!("{}", commands::cmd_report(run_dir)?),
            cmd => {
                let mut cfg = cli.common.resolve()?;
                match cmd {
                    Command::Prepare => {
                        cfg.emit("prepare")?;
                        println!("{}", commands::cmd_prepare(&cfg)?.display());
                    }
                    Command::Train => println!("{}", commands::cmd_train(&mut cfg)?.display()),
                    Command::Synthesize { inputs } => {
                        for d in commands::cmd_synthesize(&cfg, inputs)? {
                            println!("{}", d.display());
                        }
                    }
                    Command::Evaluate { real_dir, synth_dir } => {
                        println!("{}", commands::cmd_evaluate(&cfg, real_dir, synth_dir)?.display())
                    }
                    Command::Report { .. } => unreachable!(),
                }
            }
        }
        Ok(())
    })();
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
