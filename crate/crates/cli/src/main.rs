//! `hybridnas` command-line driver.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error,
//! 3 incomplete evaluation.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hybridnas::analysis::TrainingStrategy;
use hybridnas::config::RunConfig;
use hybridnas::Error;

#[derive(Parser)]
#[command(name = "hybridnas", version, about = "Hybrid architecture search on a desk-scale supernet")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct ConfigArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Override a field, e.g. `--set evolution.pop_size=16`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> hybridnas::Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p, &self.overrides),
            None => RunConfig::parse(&RunConfig::template(), &self.overrides),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the default configuration document.
    Template,
    /// Pretrain and fine-tune the supernet.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evolutionary search on a trained supernet.
    Search {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Supernet checkpoint; defaults to `<output>/supernet.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Continue from `<output>/search.ckpt` if present.
        #[arg(long)]
        resume: bool,
        /// Stop once this many generations are complete.
        #[arg(long, value_name = "GEN")]
        until: Option<usize>,
    },
    /// Simulated throughput ablation over evaluation layouts.
    Bench {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Ranking consistency of supernet training strategies.
    Consistency {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Pretrained supernet for a strategy, e.g. `progressive=run/supernet.ckpt`.
        #[arg(long = "checkpoint", value_name = "STRATEGY=PATH", value_parser = parse_checkpoint)]
        checkpoints: Vec<(TrainingStrategy, PathBuf)>,
        /// Strategies to compare; all by default.
        #[arg(long = "strategy")]
        strategies: Vec<TrainingStrategy>,
    },
    /// Long-format metrics of a search run.
    Report {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Search checkpoint; defaults to `<output>/search.ckpt`.
        #[arg(long)]
        state: Option<PathBuf>,
    },
}

fn parse_checkpoint(s: &str) -> Result<(TrainingStrategy, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or("expected STRATEGY=PATH")?;
    Ok((name.parse().map_err(|e: Error| e.to_string())?, PathBuf::from(path)))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::InvalidConfig(_) | Error::InvalidSpace(_) | Error::InvalidWeights(_)) => 1,
        Some(Error::IncompleteEvaluation(_)) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Template => {
            print!("{}", RunConfig::template());
            Ok(())
        }
        Command::Train { cfg } => commands::train(&cfg),
        Command::Search {
            cfg,
            checkpoint,
            resume,
            until,
        } => commands::search(&cfg, checkpoint, resume, until),
        Command::Bench { cfg } => commands::bench(&cfg),
        Command::Consistency {
            cfg,
            checkpoints,
            strategies,
        } => commands::consistency(&cfg, &checkpoints, &strategies),
        Command::Report { cfg, state } => commands::report(&cfg, state),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
