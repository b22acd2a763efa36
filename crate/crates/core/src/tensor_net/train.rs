use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, l2_total_grad, AdamState};
use super::network::{backward_batch, Network};
use crate::adversarial::{self, AttackMethod};
use crate::simulator::LabeledDataset;
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lr: f64,
    /// Weight of the `|theta|^2` penalty.
    pub l2_lambda: f64,
    /// Weight of the clean loss in the adversarial mix.
    pub alpha: f64,
    /// Perturbation magnitude used while training.
    pub eps_train: f64,
    /// `None` trains on the plain loss.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackMethod>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 100,
            seed: 0,
            lr: 1e-3,
            l2_lambda: 1e-5,
            alpha: 0.8,
            eps_train: 0.1,
            attack: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size >= 1
            && self.lr > 0.0
            && (0.0..=1.0).contains(&self.alpha)
            && self.eps_train >= 0.0
            && self.l2_lambda >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid training config {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    /// Mean training objective per epoch (physical units, without the penalty).
    pub trace: Vec<f64>,
}

/// Mini-batch Adam on an arbitrary objective.
///
/// `objective` returns the batch loss and its parameter gradient in physical
/// units; both are rescaled by `1 / output_scale^2` before the penalty is added,
/// so the penalty weight is relative to an O(1) loss.
pub fn fit<F>(mut net: Network, x: &Array2<f64>, y: &Array2<f64>, cfg: &TrainConfig, mut objective: F) -> Result<TrainOutcome>
where
    F: FnMut(&Network, &Array2<f64>, &Array2<f64>) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if y.nrows() != n {
        return Err(Error::LengthMismatch { expected: n, got: y.nrows() });
    }
    let inv_s2 = 1.0 / (net.output_scale() * net.output_scale());
    let mut adam = AdamState::new(net.params().len(), cfg.lr);
    let shuffle_seed = rng::tagged(cfg.seed, "shuffle");
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(shuffle_seed, epoch as u64));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xb = x.select(Axis(0), batch);
            let yb = y.select(Axis(0), batch);
            let (loss, mut grad) = objective(&net, &xb, &yb)?;
            grad.iter_mut().for_each(|g| *g *= inv_s2);
            let grad = l2_total_grad(&grad, net.params(), cfg.l2_lambda)?;
            adam_step(&mut adam, net.params_mut(), &grad)?;
            total += loss * batch.len() as f64;
        }
        trace.push(total / n as f64);
    }
    Ok(TrainOutcome { network: net, trace })
}

/// Trains on a labeled dataset. With an attack method configured this is
/// adversarial training.
pub fn train(net: Network, data: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    if cfg.attack.is_some() {
        return adversarial::adversarial_train(net, data, cfg);
    }
    let x = data.input_matrix();
    let y = data.output_matrix();
    fit(net, &x, &y, cfg, |net, xb, yb| {
        let g = backward_batch(net, xb, yb)?;
        Ok((g.loss, g.param_grad))
    })
}
