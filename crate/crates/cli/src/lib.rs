//! Pipeline driver behind the `surrogate` binary.
//!
//! Every command reads an [`config::ExperimentConfig`] and works inside its
//! output directory; [`commands::Artifacts`] names the files exchanged
//! between commands.

pub mod commands;
pub mod config;

use std::fmt;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] surrogate_core::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 1 usage/config, 2 numerical failure, 3 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) => 3,
            CliError::Core(e) if e.is_numerical() => 2,
            CliError::Core(e) if e.is_io() => 3,
            CliError::Core(_) => 1,
        }
    }
}

/// Which surrogate: plain training or adversarial training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ori,
    Adv,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Ori, Mode::Adv];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Ori => "ori",
            Mode::Adv => "adv",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
