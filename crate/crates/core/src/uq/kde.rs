use std::f64::consts::PI;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DensityCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    pub n: usize,
}

impl DensityCurve {
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }

    /// Mean of the density, by quadrature on its grid.
    pub fn mean(&self) -> f64 {
        let xf: Vec<f64> = self.grid.iter().zip(&self.density).map(|(x, f)| x * f).collect();
        trapezoid(&self.grid, &xf) / self.integral()
    }
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`.
///
/// Falls back to `sd` when the interquartile range is zero; the result is
/// floored at `1e-12`.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InvalidParameter("bandwidth needs at least two samples".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("bandwidth needs finite samples".into()));
    }
    let (_, sd) = mean_sd(samples);
    if sd == 0.0 {
        return Err(Error::DegenerateSample);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    Ok((0.9 * spread * (samples.len() as f64).powf(-0.2)).max(1e-12))
}

/// Gaussian KDE evaluated on `grid`.
pub fn kde(samples: &[f64], grid: &[f64], h: f64) -> Result<DensityCurve> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("bandwidth must be > 0, got {h}")));
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let norm = 1.0 / (sorted.len() as f64 * h * (2.0 * PI).sqrt());
    // kernels beyond 9 bandwidths contribute below 1e-17 of their peak
    let reach = 9.0 * h;
    let density = grid
        .iter()
        .map(|&t| {
            let lo = sorted.partition_point(|&x| x < t - reach);
            let hi = sorted.partition_point(|&x| x <= t + reach);
            let s: f64 = sorted[lo..hi].iter().map(|&x| (-0.5 * ((t - x) / h).powi(2)).exp()).sum();
            norm * s
        })
        .collect();
    Ok(DensityCurve { grid: grid.to_vec(), density, bandwidth: h, n: samples.len() })
}

/// Evaluation grid shared by several samples, each with its bandwidth.
///
/// The grid covers `mean +/- 10 (sd + h)` and `[min - 9h, max + 9h]` of every
/// sample, with spacing at most half the smallest bandwidth (capped at 20001
/// points, at least 512).
pub fn common_grid(sets: &[(&[f64], f64)]) -> Result<Vec<f64>> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut h_min = f64::INFINITY;
    for &(s, h) in sets {
        if s.is_empty() {
            continue;
        }
        let (mean, sd) = mean_sd(s);
        let mn = s.iter().copied().fold(f64::INFINITY, f64::min);
        let mx = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        lo = lo.min(mean - 10.0 * (sd + h)).min(mn - 9.0 * h);
        hi = hi.max(mean + 10.0 * (sd + h)).max(mx + 9.0 * h);
        h_min = h_min.min(h);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::EmptyInput);
    }
    let n = (((hi - lo) / (0.5 * h_min)).ceil() as usize + 1).clamp(512, 20001);
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n).map(|i| lo + i as f64 * step).collect())
}
