//! Log-normal Gaussian-process random fields on a regular unit-square grid.
//!
//! The log-modulus is a zero-mean GP with squared-exponential covariance
//! `k(s, s') = sigma2 * exp(-|s - s'|^2 / (2 l^2))`, sampled exactly through a
//! dense Cholesky factor of the grid covariance.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Retries after the first failed factorization.
const MAX_JITTER_RETRIES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    nx: usize,
}

impl GridSpec {
    pub fn new(nx: usize) -> Result<Self> {
        if nx < 3 {
            return Err(Error::InvalidParameter(format!("grid needs nx >= 3, got {nx}")));
        }
        Ok(Self { nx })
    }

    /// Grid points per side, boundary included.
    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn len(&self) -> usize {
        self.nx * self.nx
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.nx - 1) as f64
    }

    /// Coordinate of grid index `i` along either axis.
    pub fn coord(&self, i: usize) -> f64 {
        i as f64 / (self.nx - 1) as f64
    }

    /// Physical location `(x, y)` of the flat row-major index `p`.
    pub fn point(&self, p: usize) -> (f64, f64) {
        (self.coord(p % self.nx), self.coord(p / self.nx))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub sigma2: f64,
    pub length: f64,
    pub jitter: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            sigma2: 1.0,
            length: 0.5,
            jitter: 1e-10,
        }
    }
}

impl KernelParams {
    pub fn new(sigma2: f64, length: f64) -> Result<Self> {
        let p = Self {
            sigma2,
            length,
            jitter: 1e-10 * sigma2,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.length > 0.0 && self.jitter >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kernel needs sigma2 > 0, length > 0, jitter >= 0; got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn eval(&self, r2: f64) -> f64 {
        self.sigma2 * (-r2 / (2.0 * self.length * self.length)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    LogModulus,
    Modulus,
    Solution,
}

/// A scalar field on the grid, row-major: `values[row * nx + col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    grid: GridSpec,
    values: Vec<f64>,
    kind: FieldKind,
}

impl GridField {
    pub fn new(grid: GridSpec, values: Vec<f64>, kind: FieldKind) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if kind == FieldKind::Modulus && values.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidParameter(
                "modulus field must be strictly positive".into(),
            ));
        }
        Ok(Self { grid, values, kind })
    }

    pub fn constant(grid: GridSpec, value: f64, kind: FieldKind) -> Result<Self> {
        Self::new(grid, vec![value; grid.len()], kind)
    }

    pub(crate) fn new_unchecked(grid: GridSpec, values: Vec<f64>, kind: FieldKind) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values, kind }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.grid.nx + col]
    }
}

/// Squared-exponential covariance between all pairs of grid points.
pub fn build_covariance(grid: GridSpec, params: &KernelParams) -> DMatrix<f64> {
    let n = grid.len();
    let pts: Vec<(f64, f64)> = (0..n).map(|p| grid.point(p)).collect();
    let mut k = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = params.sigma2;
        for j in 0..i {
            let dx = pts[i].0 - pts[j].0;
            let dy = pts[i].1 - pts[j].1;
            let v = params.eval(dx * dx + dy * dy);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Lower Cholesky factor of `K + jitter * I`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    lower: DMatrix<f64>,
    jitter: f64,
    source: Option<KernelParams>,
}

impl CholeskyFactor {
    /// Covariance of `grid` under `params`, factorized with the params' jitter.
    pub fn for_grid(grid: GridSpec, params: &KernelParams) -> Result<Self> {
        params.validate()?;
        let k = build_covariance(grid, params);
        let mut f = cholesky_with_jitter(&k, params.jitter)?;
        f.source = Some(*params);
        Ok(f)
    }

    /// Wraps an explicit lower-triangular matrix (no validation beyond squareness).
    pub fn from_lower(lower: DMatrix<f64>) -> Result<Self> {
        if lower.nrows() != lower.ncols() {
            return Err(Error::ShapeMismatch {
                expected: vec![lower.nrows(), lower.nrows()],
                got: vec![lower.nrows(), lower.ncols()],
            });
        }
        Ok(Self {
            lower,
            jitter: 0.0,
            source: None,
        })
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// Jitter that was actually added to the diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn source_params(&self) -> Option<&KernelParams> {
        self.source.as_ref()
    }
}

/// Factorizes `k + jitter * I`, doubling the jitter on failure up to ten times.
///
/// A zero starting jitter is replaced by `1e-10` times the mean diagonal on the
/// first retry, since doubling zero would never change anything.
pub fn cholesky_with_jitter(k: &DMatrix<f64>, jitter: f64) -> Result<CholeskyFactor> {
    let n = k.nrows();
    if n != k.ncols() {
        return Err(Error::ShapeMismatch {
            expected: vec![n, n],
            got: vec![n, k.ncols()],
        });
    }
    if !(jitter >= 0.0) {
        return Err(Error::InvalidParameter(format!("jitter must be >= 0, got {jitter}")));
    }
    let mean_diag = if n == 0 { 1.0 } else { k.diagonal().mean().abs().max(f64::MIN_POSITIVE) };
    let mut j = jitter;
    for attempt in 0..=MAX_JITTER_RETRIES {
        let mut a = k.clone();
        for i in 0..n {
            a[(i, i)] += j;
        }
        if let Some(ch) = a.cholesky() {
            let lower = ch.unpack();
            if lower.diagonal().iter().all(|&d| d > 0.0) {
                return Ok(CholeskyFactor {
                    lower,
                    jitter: j,
                    source: None,
                });
            }
        }
        if attempt < MAX_JITTER_RETRIES {
            j = if j > 0.0 { 2.0 * j } else { 1e-10 * mean_diag };
        }
    }
    Err(Error::NotPositiveDefinite { jitter: j })
}

/// Draws `log E = L z` with `z` i.i.d. standard normal.
pub fn sample_log_field<R: Rng + ?Sized>(factor: &CholeskyFactor, rng: &mut R) -> Result<GridField> {
    let n = factor.dim();
    let nx = (n as f64).sqrt().round() as usize;
    if nx * nx != n {
        return Err(Error::InvalidParameter(format!(
            "factor dimension {n} is not a square grid"
        )));
    }
    let grid = GridSpec::new(nx)?;
    let z: DVector<f64> = DVector::from_iterator(n, (0..n).map(|_| rng.sample(StandardNormal)));
    let v = factor.lower() * z;
    Ok(GridField::new_unchecked(grid, v.iter().copied().collect(), FieldKind::LogModulus))
}

/// Elementwise exponential of a log-modulus field.
pub fn exp_field(f: &GridField) -> Result<GridField> {
    if f.kind != FieldKind::LogModulus {
        return Err(Error::InvalidParameter(format!(
            "exp_field expects a log-modulus field, got {:?}",
            f.kind
        )));
    }
    let values: Vec<f64> = f.values.iter().map(|v| v.exp()).collect();
    GridField::new(f.grid, values, FieldKind::Modulus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;

    fn frob(m: &DMatrix<f64>) -> f64 {
        m.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn grid_rejects_tiny() {
        assert!(GridSpec::new(2).is_err());
        assert!(GridSpec::new(3).is_ok());
        let g = GridSpec::new(5).unwrap();
        assert_eq!(g.coord(4), 1.0);
        assert_eq!(g.point(6), (0.25, 0.25));
    }

    #[test]
    fn covariance_diagonal_and_values() {
        let p = KernelParams { sigma2: 2.5, length: 0.5, jitter: 0.0 };
        let g = GridSpec::new(4).unwrap();
        let k = build_covariance(g, &p);
        for i in 0..g.len() {
            assert_eq!(k[(i, i)], 2.5);
        }
        assert_eq!(k, k.transpose());
        assert!(k.iter().all(|&v| v > 0.0 && v <= 2.5));
    }

    #[test]
    fn kernel_at_one_length_scale() {
        let p = KernelParams { sigma2: 1.0, length: 0.3, jitter: 0.0 };
        assert_relative_eq!(p.eval(0.09), (-0.5f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(p.eval(0.09), 0.6065306597, epsilon = 1e-9);
    }

    #[test]
    fn corner_pair_on_coarsest_grid() {
        // nx = 3: corners (0,0) and (1,1) are sqrt(2) apart
        let p = KernelParams { sigma2: 1.0, length: 0.5, jitter: 0.0 };
        let g = GridSpec::new(3).unwrap();
        let k = build_covariance(g, &p);
        assert_relative_eq!(k[(0, 8)], (-4.0f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(k[(0, 8)], 0.01831563889, epsilon = 1e-10);
    }

    #[test]
    fn cholesky_identity_and_hand_case() {
        let f = cholesky_with_jitter(&DMatrix::identity(3, 3), 0.0).unwrap();
        assert_eq!(f.lower(), &DMatrix::<f64>::identity(3, 3));

        let k = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let f = cholesky_with_jitter(&k, 0.0).unwrap();
        let l = f.lower();
        assert_relative_eq!(l[(0, 0)], 2.0, epsilon = 1e-15);
        assert_relative_eq!(l[(1, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(l[(1, 1)], 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(l[(0, 1)], 0.0);
    }

    #[test]
    fn cholesky_rank_deficient_with_jitter() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = cholesky_with_jitter(&k, 1e-6).unwrap();
        assert!(f.lower().diagonal().iter().all(|&d| d > 0.0));
        let mut target = k.clone();
        for i in 0..2 {
            target[(i, i)] += f.jitter();
        }
        let rec = f.lower() * f.lower().transpose();
        assert!(frob(&(rec - target)) / frob(&k) <= 1e-8);
    }

    #[test]
    fn cholesky_zero_jitter_escalates() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = cholesky_with_jitter(&k, 0.0).unwrap();
        assert!(f.jitter() > 0.0);
    }

    #[test]
    fn cholesky_indefinite_fails() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            cholesky_with_jitter(&k, 1e-12),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn grid_factor_reconstructs() {
        let g = GridSpec::new(12).unwrap();
        let p = KernelParams::default();
        let k = build_covariance(g, &p);
        let f = CholeskyFactor::for_grid(g, &p).unwrap();
        let mut target = k.clone();
        for i in 0..g.len() {
            target[(i, i)] += f.jitter();
        }
        let rec = f.lower() * f.lower().transpose();
        assert!(frob(&(rec - target)) / frob(&k) <= 1e-8);
        let l = f.lower();
        for r in 0..g.len() {
            assert!(l[(r, r)] > 0.0);
            for c in r + 1..g.len() {
                assert_eq!(l[(r, c)], 0.0);
            }
        }
    }

    #[test]
    fn zero_factor_gives_zero_field() {
        let f = CholeskyFactor::from_lower(DMatrix::zeros(9, 9)).unwrap();
        let s = sample_log_field(&f, &mut rng::stream(1, 0)).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.0));
        assert_eq!(s.kind(), FieldKind::LogModulus);
    }

    #[test]
    fn sampling_is_seeded() {
        let f = CholeskyFactor::for_grid(GridSpec::new(5).unwrap(), &KernelParams::default()).unwrap();
        let a = sample_log_field(&f, &mut rng::stream(3, 9)).unwrap();
        let b = sample_log_field(&f, &mut rng::stream(3, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn marginal_variance_monte_carlo() {
        let f = CholeskyFactor::for_grid(GridSpec::new(4).unwrap(), &KernelParams::default()).unwrap();
        let mut r = rng::stream(11, 0);
        let m = 10_000;
        let vals: Vec<f64> = (0..m)
            .map(|_| sample_log_field(&f, &mut r).unwrap().values()[5])
            .collect();
        let mean = vals.iter().sum::<f64>() / m as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        assert!((0.94..=1.06).contains(&var), "variance {var}");
    }

    #[test]
    fn exp_field_values() {
        let g = GridSpec::new(3).unwrap();
        let mut v = vec![0.0; 9];
        v[1] = 1.0;
        v[2] = -(2f64.ln());
        let f = GridField::new(g, v, FieldKind::LogModulus).unwrap();
        let e = exp_field(&f).unwrap();
        assert_eq!(e.kind(), FieldKind::Modulus);
        assert_eq!(e.values()[0], 1.0);
        assert_relative_eq!(e.values()[1], std::f64::consts::E, epsilon = 1e-15);
        assert_relative_eq!(e.values()[2], 0.5, epsilon = 1e-15);
        assert!(exp_field(&e).is_err());
    }

    #[test]
    fn modulus_must_be_positive() {
        let g = GridSpec::new(3).unwrap();
        assert!(GridField::new(g, vec![0.0; 9], FieldKind::Modulus).is_err());
        assert!(GridField::new(g, vec![1.0; 8], FieldKind::Modulus).is_err());
    }
}
