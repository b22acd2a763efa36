use ndarray::Array2;

use crate::tensor_net::Tensor;
use crate::{Error, Result};

/// Per-sample squared errors (mean over output entries) and their natural logs.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleErrors {
    pub se: Vec<f64>,
    /// `ln(se)` for the strictly positive entries, in sample order.
    pub log_se: Vec<f64>,
    /// Number of exact zeros left out of `log_se`.
    pub zero_count: usize,
}

impl SampleErrors {
    pub fn from_se(se: Vec<f64>) -> Self {
        let log_se: Vec<f64> = se.iter().filter(|&&v| v > 0.0).map(|v| v.ln()).collect();
        let zero_count = se.len() - log_se.len();
        Self { se, log_se, zero_count }
    }

    pub fn mean(&self) -> f64 {
        if self.se.is_empty() {
            return 0.0;
        }
        self.se.iter().sum::<f64>() / self.se.len() as f64
    }
}

pub fn per_sample_se(pred: &[Tensor], truth: &[Tensor]) -> Result<SampleErrors> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch { expected: truth.len(), got: pred.len() });
    }
    let mut se = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(truth) {
        p.same_shape(t)?;
        let s: f64 = p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        se.push(s / p.len() as f64);
    }
    Ok(SampleErrors::from_se(se))
}

/// Row-wise version of [`per_sample_se`].
pub fn per_sample_se_rows(pred: &Array2<f64>, truth: &Array2<f64>) -> Result<SampleErrors> {
    if pred.dim() != truth.dim() {
        return Err(Error::ShapeMismatch {
            expected: vec![truth.nrows(), truth.ncols()],
            got: vec![pred.nrows(), pred.ncols()],
        });
    }
    let d = pred.ncols() as f64;
    let se = pred
        .rows()
        .into_iter()
        .zip(truth.rows())
        .map(|(p, t)| p.iter().zip(t.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / d)
        .collect();
    Ok(SampleErrors::from_se(se))
}

/// Elementwise first and raw second moments across samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentArrays {
    pub shape: Vec<usize>,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
}

impl MomentArrays {
    pub fn variance(&self) -> Vec<f64> {
        self.m1.iter().zip(&self.m2).map(|(a, b)| b - a * a).collect()
    }
}

pub fn moments(outputs: &[Tensor]) -> Result<MomentArrays> {
    let first = outputs.first().ok_or(Error::EmptyInput)?;
    let mut m1 = vec![0.0; first.len()];
    let mut m2 = vec![0.0; first.len()];
    for o in outputs {
        first.same_shape(o)?;
        for ((a, b), v) in m1.iter_mut().zip(m2.iter_mut()).zip(o.data()) {
            *a += v;
            *b += v * v;
        }
    }
    let n = outputs.len() as f64;
    m1.iter_mut().for_each(|v| *v /= n);
    m2.iter_mut().for_each(|v| *v /= n);
    Ok(MomentArrays { shape: first.shape().to_vec(), m1, m2 })
}

/// Moments over the rows of a `samples x entries` matrix.
pub fn moments_rows(outputs: &Array2<f64>) -> Result<MomentArrays> {
    if outputs.nrows() == 0 {
        return Err(Error::EmptyInput);
    }
    let n = outputs.nrows() as f64;
    let m1 = outputs.sum_axis(ndarray::Axis(0)) / n;
    let m2 = outputs.mapv(|v| v * v).sum_axis(ndarray::Axis(0)) / n;
    Ok(MomentArrays { shape: vec![outputs.ncols()], m1: m1.to_vec(), m2: m2.to_vec() })
}

/// `|m_model - m_sim|_F / |m_sim|_F`.
pub fn relative_error(m_model: &[f64], m_sim: &[f64]) -> Result<f64> {
    if m_model.len() != m_sim.len() {
        return Err(Error::LengthMismatch { expected: m_sim.len(), got: m_model.len() });
    }
    let denom = m_sim.iter().map(|v| v * v).sum::<f64>().sqrt();
    if denom == 0.0 {
        return Err(Error::ZeroReference);
    }
    let num = m_model.iter().zip(m_sim).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(num / denom)
}
