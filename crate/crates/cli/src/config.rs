//! Experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use surrogate_core::adversarial::AttackMethod;
use surrogate_core::fields::{GridSpec, KernelParams};
use surrogate_core::simulator::SolverConfig;
use surrogate_core::tensor_net::TrainConfig;
use surrogate_core::uq::McCounts;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Channels of the optional 3x3 convolution front end; 0 disables it.
    #[serde(default)]
    pub conv_channels: usize,
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub l2_lambda: f64,
}

/// Settings of the adversarially trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialSection {
    pub method: AttackMethod,
    pub alpha: f64,
    pub eps_train: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    /// Perturbation magnitude of the evaluation test sets.
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UqSection {
    pub eps_ladder: Vec<f64>,
    pub n_points: usize,
    pub n_dirs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub grid: GridSection,
    #[serde(default)]
    pub kernel: KernelParams,
    #[serde(default)]
    pub solver: SolverConfig,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub adversarial: AdversarialSection,
    pub attack: AttackSection,
    pub uq: UqSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative `out_dir` is resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.out_dir.is_relative() {
            if let Some(parent) = path.parent() {
                cfg.out_dir = parent.join(&cfg.out_dir);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        GridSpec::new(self.grid.nx).map_err(|e| CliError::Config(e.to_string()))?;
        self.kernel.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.solver.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.data.n_train == 0 || self.data.n_test == 0 {
            return bad("data.n_train and data.n_test must be >= 1".into());
        }
        if self.model.hidden.iter().any(|&h| h == 0) {
            return bad("model.hidden widths must be >= 1".into());
        }
        self.train_config(false).validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train_config(true).validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.attack.eps >= 0.0 && self.attack.eps.is_finite()) {
            return bad(format!("attack.eps must be >= 0, got {}", self.attack.eps));
        }
        if self.uq.eps_ladder.is_empty() || self.uq.eps_ladder.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return bad("uq.eps_ladder needs positive entries".into());
        }
        if self.uq.n_points == 0 || self.uq.n_dirs == 0 {
            return bad("uq.n_points and uq.n_dirs must be >= 1".into());
        }
        if self.uq.n_points > self.data.n_test {
            return bad(format!("uq.n_points = {} exceeds data.n_test = {}", self.uq.n_points, self.data.n_test));
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec::new(self.grid.nx).expect("validated")
    }

    pub fn counts(&self) -> McCounts {
        McCounts { n_points: self.uq.n_points, n_dirs: self.uq.n_dirs }
    }

    /// Training settings for the plain (`adversarial = false`) or hardened model.
    pub fn train_config(&self, adversarial: bool) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            seed: self.seed,
            lr: self.train.lr,
            l2_lambda: self.train.l2_lambda,
            alpha: if adversarial { self.adversarial.alpha } else { 1.0 },
            eps_train: self.adversarial.eps_train,
            attack: adversarial.then_some(self.adversarial.method),
        }
    }

    /// SHA-256 of the canonical serialization, excluding the output directory.
    pub fn fingerprint(&self) -> String {
        let canonical = Self { out_dir: PathBuf::new(), ..self.clone() };
        let text = toml::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
