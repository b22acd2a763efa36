//! Ground-truth simulator: `-div(E grad u) = f` on the unit square with
//! clamped (zero Dirichlet) boundary, discretized by the 5-point flux-form
//! finite-difference scheme and solved with Jacobi-preconditioned CG.

use nalgebra::DMatrix;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::fields::{self, CholeskyFactor, FieldKind, GridField, GridSpec, KernelParams};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Relative residual tolerance `|b - A u| / |b|`.
    pub tol: f64,
    /// Iteration cap; `None` means ten times the number of unknowns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    /// Constant transversal load.
    pub load: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: None,
            load: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == Some(0) || !self.load.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "solver needs tol > 0, max_iter >= 1 and a finite load; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Five-point operator on the interior nodes, scaled by `h^2`.
///
/// Face coefficients are arithmetic means of the two adjacent nodal values.
struct FluxOperator {
    m: usize,
    diag: Vec<f64>,
    /// Coupling to the east neighbour (col + 1); zero on the last interior column.
    east: Vec<f64>,
    /// Coupling to the north neighbour (row + 1); zero on the last interior row.
    north: Vec<f64>,
}

impl FluxOperator {
    fn new(e: &GridField) -> Self {
        let nx = e.grid().nx();
        let m = nx - 2;
        let ev = e.values();
        let at = |r: usize, c: usize| ev[r * nx + c];
        let mut diag = vec![0.0; m * m];
        let mut east = vec![0.0; m * m];
        let mut north = vec![0.0; m * m];
        for r in 1..nx - 1 {
            for c in 1..nx - 1 {
                let p = (r - 1) * m + (c - 1);
                let ctr = at(r, c);
                let fe = 0.5 * (ctr + at(r, c + 1));
                let fw = 0.5 * (ctr + at(r, c - 1));
                let fn_ = 0.5 * (ctr + at(r + 1, c));
                let fs = 0.5 * (ctr + at(r - 1, c));
                diag[p] = fe + fw + fn_ + fs;
                if c < nx - 2 {
                    east[p] = fe;
                }
                if r < nx - 2 {
                    north[p] = fn_;
                }
            }
        }
        Self { m, diag, east, north }
    }

    fn len(&self) -> usize {
        self.m * self.m
    }

    fn apply(&self, u: &[f64], out: &mut [f64]) {
        let m = self.m;
        for p in 0..m * m {
            let (r, c) = (p / m, p % m);
            let mut v = self.diag[p] * u[p];
            if c + 1 < m {
                v -= self.east[p] * u[p + 1];
            }
            if c > 0 {
                v -= self.east[p - 1] * u[p - 1];
            }
            if r + 1 < m {
                v -= self.north[p] * u[p + m];
            }
            if r > 0 {
                v -= self.north[p - m] * u[p - m];
            }
            out[p] = v;
        }
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut a = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            for i in 0..n {
                a[(i, j)] = col[i];
            }
            e[j] = 0.0;
        }
        a
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_modulus(e: &GridField) -> Result<()> {
    if e.kind() != FieldKind::Modulus {
        return Err(Error::InvalidParameter(format!(
            "solver expects a modulus field, got {:?}",
            e.kind()
        )));
    }
    Ok(())
}

/// Dense interior system matrix (scaled by `h^2`); intended for small grids.
pub fn assemble_dense(e: &GridField) -> Result<DMatrix<f64>> {
    check_modulus(e)?;
    Ok(FluxOperator::new(e).to_dense())
}

/// Relative residual `|b - A u| / |b|` of a full-grid solution against `e` and `load`.
pub fn relative_residual(e: &GridField, u: &GridField, load: f64) -> Result<f64> {
    check_modulus(e)?;
    if u.grid() != e.grid() {
        return Err(Error::ShapeMismatch {
            expected: vec![e.grid().nx(); 2],
            got: vec![u.grid().nx(); 2],
        });
    }
    let op = FluxOperator::new(e);
    let nx = e.grid().nx();
    let m = op.m;
    let h2 = e.grid().spacing().powi(2);
    let interior: Vec<f64> = (0..m * m)
        .map(|p| u.values()[(p / m + 1) * nx + p % m + 1])
        .collect();
    let mut au = vec![0.0; m * m];
    op.apply(&interior, &mut au);
    let b = load * h2;
    let rr: f64 = au.iter().map(|v| (b - v).powi(2)).sum::<f64>().sqrt();
    let bn = (b * b * (m * m) as f64).sqrt();
    Ok(if bn == 0.0 { rr } else { rr / bn })
}

/// Solves for the clamped solution field given a strictly positive modulus.
pub fn solve_elliptic(e: &GridField, cfg: &SolverConfig) -> Result<GridField> {
    check_modulus(e)?;
    cfg.validate()?;
    let grid = e.grid();
    let nx = grid.nx();
    let op = FluxOperator::new(e);
    let n = op.len();
    let mut full = vec![0.0; grid.len()];
    let b_val = cfg.load * grid.spacing().powi(2);
    if b_val == 0.0 {
        return Ok(GridField::new_unchecked(grid, full, FieldKind::Solution));
    }

    let b = vec![b_val; n];
    let b_norm = dot(&b, &b).sqrt();
    let max_iter = cfg.max_iter.unwrap_or(10 * n).max(1);

    // PCG with Jacobi preconditioner
    let mut x = vec![0.0; n];
    let mut r = b.clone();
    let mut z: Vec<f64> = r.iter().zip(&op.diag).map(|(ri, d)| ri / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut res = 1.0;
    let mut converged = false;
    for _ in 0..max_iter {
        op.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = dot(&r, &r).sqrt() / b_norm;
        if res <= cfg.tol {
            converged = true;
            break;
        }
        for i in 0..n {
            z[i] = r[i] / op.diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if !converged {
        return Err(Error::SolverDiverged {
            iterations: max_iter,
            residual: res,
        });
    }

    let m = op.m;
    for (q, v) in x.into_iter().enumerate() {
        full[(q / m + 1) * nx + q % m + 1] = v;
    }
    Ok(GridField::new_unchecked(grid, full, FieldKind::Solution))
}

/// Queries the simulator at a log-modulus input.
pub fn simulate(log_field: &GridField, cfg: &SolverConfig) -> Result<GridField> {
    let e = fields::exp_field(log_field)?;
    solve_elliptic(&e, cfg)
}

/// Queries the simulator for many raw (row-major) log-modulus inputs.
pub fn simulate_batch(
    grid: GridSpec,
    inputs: &[Vec<f64>],
    cfg: &SolverConfig,
    exec: Execution,
) -> Result<Vec<GridField>> {
    exec.try_map(inputs.len(), |i| {
        let f = GridField::new(grid, inputs[i].clone(), FieldKind::LogModulus)
            .map_err(|e| e.at_sample(i))?;
        simulate(&f, cfg).map_err(|e| e.at_sample(i))
    })
}

/// Generation and provenance metadata stored next to a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub nx: usize,
    pub seed: u64,
    pub count: usize,
    pub kernel: KernelParams,
    pub solver: SolverConfig,
    pub byte_order: String,
    /// Fingerprint of the experiment configuration that produced the file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<String>,
    /// Set for perturbed datasets produced by an attack.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackProvenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackProvenance {
    pub method: String,
    pub eps: f64,
    pub source_model: String,
    pub source_dataset: String,
    /// Indices (into the source dataset) of samples without an adversarial direction.
    pub skipped: Vec<usize>,
    /// Index into the source dataset of each stored sample.
    pub source_index: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Vec<GridField>,
    pub outputs: Vec<GridField>,
    pub meta: DatasetMeta,
}

impl LabeledDataset {
    pub fn new(inputs: Vec<GridField>, outputs: Vec<GridField>, meta: DatasetMeta) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(Error::LengthMismatch {
                expected: inputs.len(),
                got: outputs.len(),
            });
        }
        Ok(Self { inputs, outputs, meta })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.meta.nx)
    }

    /// Inputs as a `samples x grid points` matrix.
    pub fn input_matrix(&self) -> Array2<f64> {
        stack(&self.inputs)
    }

    pub fn output_matrix(&self) -> Array2<f64> {
        stack(&self.outputs)
    }

    /// Keeps the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut meta = self.meta.clone();
        meta.count = indices.len();
        Self {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            outputs: indices.iter().map(|&i| self.outputs[i].clone()).collect(),
            meta,
        }
    }
}

fn stack(fields: &[GridField]) -> Array2<f64> {
    let d = fields.first().map_or(0, |f| f.values().len());
    let mut m = Array2::zeros((fields.len(), d));
    for (mut row, f) in m.rows_mut().into_iter().zip(fields) {
        row.as_slice_mut().unwrap().copy_from_slice(f.values());
    }
    m
}

pub fn generate_dataset(
    n: usize,
    grid: GridSpec,
    kp: &KernelParams,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<LabeledDataset> {
    generate_dataset_with(Execution::default(), n, grid, kp, cfg, seed)
}

/// Draws `n` i.i.d. GP inputs and labels them with the simulator. Sample `i`
/// uses its own random stream, so the result does not depend on `exec`.
pub fn generate_dataset_with(
    exec: Execution,
    n: usize,
    grid: GridSpec,
    kp: &KernelParams,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::InvalidParameter("dataset needs at least one sample".into()));
    }
    cfg.validate()?;
    let factor = CholeskyFactor::for_grid(grid, kp)?;
    let base = rng::tagged(seed, "gp-field");
    let pairs = exec.try_map(n, |i| {
        let mut r = rng::stream(base, i as u64);
        let x = fields::sample_log_field(&factor, &mut r).map_err(|e| e.at_sample(i))?;
        let y = simulate(&x, cfg).map_err(|e| e.at_sample(i))?;
        Ok::<_, Error>((x, y))
    })?;
    let (inputs, outputs) = pairs.into_iter().unzip();
    LabeledDataset::new(
        inputs,
        outputs,
        DatasetMeta {
            nx: grid.nx(),
            seed,
            count: n,
            kernel: *kp,
            solver: *cfg,
            byte_order: "little".into(),
            config: None,
            attack: None,
        },
    )
}
