use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use surrogate_cli::commands::{cmd_attack, cmd_eval, cmd_gen, cmd_run, cmd_train, cmd_uq};
use surrogate_cli::config::ExperimentConfig;
use surrogate_cli::{CliError, Mode};
use surrogate_core::adversarial::AttackMethod;

#[derive(Debug, Parser)]
#[command(name = "surrogate", version, about = "Robust neural surrogates for an elliptic PDE simulator")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate and label the training and test sets.
    Gen,
    /// Train a surrogate.
    Train {
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// Build a perturbed test set from a model's attack directions.
    Attack {
        #[arg(long)]
        method: AttackMethod,
        #[arg(long)]
        eps: f64,
        /// Source model; both when omitted.
        #[arg(long, value_enum)]
        model: Option<Mode>,
    },
    /// MSE, moment and rank-test reports.
    Eval,
    /// Density, perturbation-response and LDA outputs.
    Uq,
    /// The full pipeline.
    Run,
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let path = cli.config.ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let mut cfg = ExperimentConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    match cli.command {
        Command::Gen => cmd_gen(&cfg),
        Command::Train { mode } => cmd_train(&cfg, mode),
        Command::Attack { method, eps, model } => {
            let sources = model.map_or(Mode::ALL.to_vec(), |m| vec![m]);
            sources.into_iter().try_for_each(|m| cmd_attack(&cfg, m, method, eps))
        }
        Command::Eval => cmd_eval(&cfg),
        Command::Uq => cmd_uq(&cfg),
        Command::Run => cmd_run(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
