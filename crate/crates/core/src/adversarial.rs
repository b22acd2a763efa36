//! Gradient-based perturbation directions and adversarial training.
//!
//! FGSM moves every input coordinate by `eps` along the sign of the loss
//! gradient. FGNM follows the gradient itself, rescaled so its L2 norm equals
//! that of the FGSM step: `delta = eps * |sign(g)|_2 / |g|_2 * g`.
//!
//! Adversarial training minimizes `alpha * J(x) + (1 - alpha) * J(x + delta(x))`
//! where `delta(x)` is recomputed from the current parameters for every
//! mini-batch and treated as a constant when differentiating.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::simulator::LabeledDataset;
use crate::tensor_net::{backward, backward_batch, fit, Network, Tensor, TrainConfig, TrainOutcome};
use crate::{Error, Result};

/// Below this L2 norm a gradient is treated as zero by FGNM.
pub const ZERO_GRADIENT_NORM: f64 = 1e-30;

/// Rows per backward pass when attacking a whole dataset.
const ATTACK_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Fgsm,
    Fgnm,
}

impl AttackMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttackMethod::Fgsm => "fgsm",
            AttackMethod::Fgnm => "fgnm",
        }
    }
}

impl fmt::Display for AttackMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fgsm" => Ok(AttackMethod::Fgsm),
            "fgnm" => Ok(AttackMethod::Fgnm),
            other => Err(Error::InvalidParameter(format!("unknown attack method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    method: AttackMethod,
    eps: f64,
}

impl AttackConfig {
    pub fn new(method: AttackMethod, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("attack eps must be > 0, got {eps}")));
        }
        Ok(Self { method, eps })
    }

    pub fn method(&self) -> AttackMethod {
        self.method
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    delta: Tensor,
    method: AttackMethod,
    eps: f64,
    source: String,
}

impl Perturbation {
    pub fn new(delta: Tensor, method: AttackMethod, eps: f64, source: String) -> Result<Self> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("eps must be >= 0, got {eps}")));
        }
        Ok(Self { delta, method, eps, source })
    }

    pub fn delta(&self) -> &Tensor {
        &self.delta
    }

    pub fn method(&self) -> AttackMethod {
        self.method
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Fingerprint of the network whose gradient produced the perturbation.
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn norm(&self) -> f64 {
        self.delta.l2_norm()
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn fgsm_from_gradient(g: &[f64], eps: f64) -> Vec<f64> {
    g.iter().map(|&v| eps * sign(v)).collect()
}

pub fn fgnm_from_gradient(g: &[f64], eps: f64) -> Result<Vec<f64>> {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm >= ZERO_GRADIENT_NORM) {
        return Err(Error::ZeroGradient);
    }
    let nnz = g.iter().filter(|&&v| v != 0.0).count() as f64;
    let scale = eps * nnz.sqrt() / norm;
    Ok(g.iter().map(|&v| scale * v).collect())
}

/// Direction from a raw input gradient.
pub fn direction_from_gradient(method: AttackMethod, g: &[f64], eps: f64) -> Result<Vec<f64>> {
    match method {
        AttackMethod::Fgsm => Ok(fgsm_from_gradient(g, eps)),
        AttackMethod::Fgnm => fgnm_from_gradient(g, eps),
    }
}

fn direction(net: &Network, x: &Tensor, y: &Tensor, eps: f64, method: AttackMethod) -> Result<Perturbation> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be >= 0, got {eps}")));
    }
    let g = backward(net, x, y)?.input_grad;
    let d = direction_from_gradient(method, g.data(), eps)?;
    Ok(Perturbation {
        delta: Tensor::new(x.shape().to_vec(), d)?,
        method,
        eps,
        source: net.fingerprint(),
    })
}

pub fn fgsm_direction(net: &Network, x: &Tensor, y: &Tensor, eps: f64) -> Result<Perturbation> {
    direction(net, x, y, eps, AttackMethod::Fgsm)
}

pub fn fgnm_direction(net: &Network, x: &Tensor, y: &Tensor, eps: f64) -> Result<Perturbation> {
    direction(net, x, y, eps, AttackMethod::Fgnm)
}

pub fn attack_direction(net: &Network, x: &Tensor, y: &Tensor, cfg: &AttackConfig) -> Result<Perturbation> {
    direction(net, x, y, cfg.eps, cfg.method)
}

/// `x + delta`, no clipping.
pub fn perturb(x: &Tensor, p: &Perturbation) -> Result<Tensor> {
    x.same_shape(p.delta())?;
    let data = x.data().iter().zip(p.delta().data()).map(|(a, d)| a + d).collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Perturbations for every row of a batch.
#[derive(Debug, Clone)]
pub struct BatchAttack {
    pub deltas: Array2<f64>,
    /// Rows whose gradient vanished (FGNM only); their delta is zero.
    pub zero_gradient: Vec<usize>,
}

fn deltas_from_gradients(grads: &Array2<f64>, method: AttackMethod, eps: f64) -> BatchAttack {
    let mut deltas = Array2::zeros(grads.raw_dim());
    let mut zero_gradient = Vec::new();
    for (i, (g, mut d)) in grads.rows().into_iter().zip(deltas.rows_mut()).enumerate() {
        match direction_from_gradient(method, g.as_slice().unwrap(), eps) {
            Ok(v) => d.as_slice_mut().unwrap().copy_from_slice(&v),
            Err(_) => zero_gradient.push(i),
        }
    }
    BatchAttack { deltas, zero_gradient }
}

/// Attacks every row of `x` (targets `y`) with the given method and magnitude.
pub fn attack_batch(net: &Network, x: &Array2<f64>, y: &Array2<f64>, method: AttackMethod, eps: f64) -> Result<BatchAttack> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be >= 0, got {eps}")));
    }
    if x.nrows() != y.nrows() {
        return Err(Error::LengthMismatch { expected: x.nrows(), got: y.nrows() });
    }
    let mut grads = Array2::zeros((x.nrows(), net.input_len()));
    let mut start = 0;
    while start < x.nrows() {
        let end = (start + ATTACK_CHUNK).min(x.nrows());
        let g = backward_batch(net, &x.slice(ndarray::s![start..end, ..]).to_owned(), &y.slice(ndarray::s![start..end, ..]).to_owned())?;
        grads.slice_mut(ndarray::s![start..end, ..]).assign(&g.input_grad);
        start = end;
    }
    Ok(deltas_from_gradients(&grads, method, eps))
}

/// Convex combination of clean and perturbed losses.
pub fn mix_losses(alpha: f64, clean: f64, perturbed: f64) -> f64 {
    alpha * clean + (1.0 - alpha) * perturbed
}

fn reduces_to_plain(cfg: &TrainConfig) -> bool {
    cfg.attack.is_none() || cfg.alpha == 1.0 || cfg.eps_train == 0.0
}

/// Adversarial loss and parameter gradient on a batch.
///
/// When the mix degenerates (`alpha = 1`, `eps_train = 0` or no attack) the
/// plain batch loss and gradient are returned untouched.
pub fn adversarial_loss_grad_batch(net: &Network, x: &Array2<f64>, y: &Array2<f64>, cfg: &TrainConfig) -> Result<(f64, Vec<f64>)> {
    if !(0.0..=1.0).contains(&cfg.alpha) {
        return Err(Error::InvalidParameter(format!("alpha must lie in [0, 1], got {}", cfg.alpha)));
    }
    let clean = backward_batch(net, x, y)?;
    let method = match cfg.attack {
        Some(m) if !reduces_to_plain(cfg) => m,
        _ => return Ok((clean.loss, clean.param_grad)),
    };
    let attack = deltas_from_gradients(&clean.input_grad, method, cfg.eps_train);
    let xp = x + &attack.deltas;
    let pert = backward_batch(net, &xp, y)?;
    let a = cfg.alpha;
    let loss = mix_losses(a, clean.loss, pert.loss);
    let grad = clean
        .param_grad
        .iter()
        .zip(&pert.param_grad)
        .map(|(gc, gp)| a * gc + (1.0 - a) * gp)
        .collect();
    Ok((loss, grad))
}

pub fn adversarial_loss_grad(net: &Network, x: &Tensor, y: &Tensor, cfg: &TrainConfig) -> Result<(f64, Vec<f64>)> {
    if x.shape() != net.input_shape() {
        return Err(Error::ShapeMismatch { expected: net.input_shape().to_vec(), got: x.shape().to_vec() });
    }
    if y.shape() != net.output_shape() {
        return Err(Error::ShapeMismatch { expected: net.output_shape().to_vec(), got: y.shape().to_vec() });
    }
    let xb = Array2::from_shape_vec((1, x.len()), x.data().to_vec()).unwrap();
    let yb = Array2::from_shape_vec((1, y.len()), y.data().to_vec()).unwrap();
    adversarial_loss_grad_batch(net, &xb, &yb, cfg)
}

/// Mini-batch Adam on the adversarial loss plus the L2 penalty.
pub fn adversarial_train(net: Network, data: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let x = data.input_matrix();
    let y = data.output_matrix();
    fit(net, &x, &y, cfg, |net, xb, yb| adversarial_loss_grad_batch(net, xb, yb, cfg))
}

/// Adds each row of `deltas` to the matching row of `x`.
pub fn perturb_batch(x: &Array2<f64>, deltas: &Array2<f64>) -> Result<Array2<f64>> {
    if x.dim() != deltas.dim() {
        return Err(Error::ShapeMismatch {
            expected: vec![x.nrows(), x.ncols()],
            got: vec![deltas.nrows(), deltas.ncols()],
        });
    }
    Ok(x + deltas)
}

/// L2 norm of every row.
pub fn row_norms(m: &Array2<f64>) -> Vec<f64> {
    m.axis_iter(Axis(0)).map(|r| r.dot(&r).sqrt()).collect()
}
