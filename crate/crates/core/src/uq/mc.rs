use ndarray::{Array2, Axis};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use super::errors::{per_sample_se_rows, SampleErrors};
use super::kde::{common_grid, kde, silverman_bandwidth, DensityCurve};
use crate::adversarial::{attack_batch, AttackMethod, Perturbation};
use crate::exec::Execution;
use crate::simulator::{simulate_batch, LabeledDataset, SolverConfig};
use crate::tensor_net::{forward_batch, Network, Tensor};
use crate::{rng, Error, Result};

/// Isotropic Gaussian direction rescaled to L2 norm `norm`.
pub fn matched_norm_noise<R: Rng + ?Sized>(d: usize, norm: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let zn = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if zn > 0.0 {
            return z.into_iter().map(|v| norm * v / zn).collect();
        }
    }
}

/// `x + eta` with `eta` uniform in direction and `|eta|_2 = |reference|_2`.
pub fn random_perturb_matched_norm(x: &Tensor, reference: &Perturbation, seed: u64) -> Result<Tensor> {
    x.same_shape(reference.delta())?;
    let norm = reference.norm();
    if !(norm > 0.0) {
        return Err(Error::ZeroReference);
    }
    let eta = matched_norm_noise(x.len(), norm, &mut rng::stream(seed, 0));
    Tensor::new(x.shape().to_vec(), x.data().iter().zip(&eta).map(|(a, b)| a + b).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McCounts {
    pub n_points: usize,
    pub n_dirs: usize,
}

impl Default for McCounts {
    fn default() -> Self {
        Self { n_points: 50, n_dirs: 100 }
    }
}

#[derive(Debug, Clone)]
pub struct McDensityResult {
    pub eps: f64,
    /// Test-set indices that were perturbed.
    pub indices: Vec<usize>,
    /// Drawn indices dropped because their gradient vanished.
    pub skipped: Vec<usize>,
    pub se_clean: SampleErrors,
    pub se_rand: SampleErrors,
    pub se_fgnm: SampleErrors,
    pub se_fgsm: SampleErrors,
    pub f_rand: DensityCurve,
    pub f_fgnm: DensityCurve,
    pub f_fgsm: DensityCurve,
}

/// Monte Carlo comparison of surrogate errors under random versus adversarial
/// perturbations of equal norm.
///
/// `n_points` test inputs are drawn without replacement. Each gets `n_dirs`
/// matched-norm random perturbations plus one FGNM and one FGSM perturbation;
/// every perturbed input is relabeled by the simulator. The three `log(SE)`
/// samples are smoothed by Gaussian KDE on a common grid.
pub fn mc_density_experiment(
    net: &Network,
    test: &LabeledDataset,
    solver: &SolverConfig,
    eps: f64,
    counts: McCounts,
    seed: u64,
    exec: Execution,
) -> Result<McDensityResult> {
    if counts.n_points == 0 || counts.n_dirs == 0 {
        return Err(Error::InvalidParameter("MC experiment needs n_points, n_dirs >= 1".into()));
    }
    if test.len() < counts.n_points {
        return Err(Error::InvalidParameter(format!(
            "test subset has {} samples, need {}",
            test.len(),
            counts.n_points
        )));
    }
    let grid = test.grid()?;
    let mut drawn = index::sample(&mut rng::stream(rng::tagged(seed, "mc-points"), 0), test.len(), counts.n_points).into_vec();
    drawn.sort_unstable();
    let sub = test.subset(&drawn);
    let x = sub.input_matrix();
    let y = sub.output_matrix();

    let fgnm = attack_batch(net, &x, &y, AttackMethod::Fgnm, eps)?;
    let fgsm = attack_batch(net, &x, &y, AttackMethod::Fgsm, eps)?;
    let keep: Vec<usize> = (0..drawn.len()).filter(|i| !fgnm.zero_gradient.contains(i)).collect();
    let skipped: Vec<usize> = fgnm.zero_gradient.iter().map(|&i| drawn[i]).collect();
    if keep.is_empty() {
        return Err(Error::ZeroGradient);
    }

    let noise_seed = rng::tagged(seed, "mc-directions");
    let n_dirs = counts.n_dirs;
    // per kept point: n_dirs random inputs, then the FGNM and FGSM inputs
    let per_point = exec.try_map(keep.len(), |k| {
        let i = keep[k];
        let xi = x.row(i);
        let d_fgnm = fgnm.deltas.row(i);
        let norm = d_fgnm.dot(&d_fgnm).sqrt();
        let mut r = rng::stream(noise_seed, drawn[i] as u64);
        let mut inputs: Vec<Vec<f64>> = (0..n_dirs)
            .map(|_| {
                let eta = matched_norm_noise(xi.len(), norm, &mut r);
                xi.iter().zip(&eta).map(|(a, b)| a + b).collect()
            })
            .collect();
        inputs.push(xi.iter().zip(d_fgnm.iter()).map(|(a, b)| a + b).collect());
        inputs.push(xi.iter().zip(fgsm.deltas.row(i).iter()).map(|(a, b)| a + b).collect());
        let outputs = simulate_batch(grid, &inputs, solver, Execution::Sequential).map_err(|e| e.at_sample(drawn[i]))?;
        Ok::<_, Error>((inputs, outputs))
    })?;

    let rows = keep.len() * (n_dirs + 2);
    let d_in = x.ncols();
    let d_out = y.ncols();
    let mut xp = Array2::zeros((rows, d_in));
    let mut yp = Array2::zeros((rows, d_out));
    for (k, (inputs, outputs)) in per_point.iter().enumerate() {
        for (j, (inp, out)) in inputs.iter().zip(outputs).enumerate() {
            let r = k * (n_dirs + 2) + j;
            xp.row_mut(r).as_slice_mut().unwrap().copy_from_slice(inp);
            yp.row_mut(r).as_slice_mut().unwrap().copy_from_slice(out.values());
        }
    }
    let pred = forward_batch(net, &xp)?;
    let se_all = per_sample_se_rows(&pred, &yp)?.se;

    let mut rand_se = Vec::with_capacity(keep.len() * n_dirs);
    let mut fgnm_se = Vec::with_capacity(keep.len());
    let mut fgsm_se = Vec::with_capacity(keep.len());
    for k in 0..keep.len() {
        let base = k * (n_dirs + 2);
        rand_se.extend_from_slice(&se_all[base..base + n_dirs]);
        fgnm_se.push(se_all[base + n_dirs]);
        fgsm_se.push(se_all[base + n_dirs + 1]);
    }
    let kept = sub.subset(&keep);
    let clean_pred = forward_batch(net, &kept.input_matrix())?;
    let se_clean = per_sample_se_rows(&clean_pred, &kept.output_matrix())?;

    let se_rand = SampleErrors::from_se(rand_se);
    let se_fgnm = SampleErrors::from_se(fgnm_se);
    let se_fgsm = SampleErrors::from_se(fgsm_se);
    let h_rand = silverman_bandwidth(&se_rand.log_se)?;
    let h_fgnm = silverman_bandwidth(&se_fgnm.log_se)?;
    let h_fgsm = silverman_bandwidth(&se_fgsm.log_se)?;
    let grid_pts = common_grid(&[(&se_rand.log_se, h_rand), (&se_fgnm.log_se, h_fgnm), (&se_fgsm.log_se, h_fgsm)])?;
    Ok(McDensityResult {
        eps,
        indices: keep.iter().map(|&i| drawn[i]).collect(),
        skipped,
        f_rand: kde(&se_rand.log_se, &grid_pts, h_rand)?,
        f_fgnm: kde(&se_fgnm.log_se, &grid_pts, h_fgnm)?,
        f_fgsm: kde(&se_fgsm.log_se, &grid_pts, h_fgsm)?,
        se_clean,
        se_rand,
        se_fgnm,
        se_fgsm,
    })
}

/// Output change under input perturbation, as seen by the simulator and by a surrogate.
#[derive(Debug, Clone)]
pub struct PerturbationResponse {
    /// `SE(F(x'), F(x))` per sample.
    pub simulator: SampleErrors,
    /// `SE(F_hat(x'), F_hat(x))` per sample.
    pub model: SampleErrors,
}

pub fn perturbation_response(
    net: &Network,
    x: &Array2<f64>,
    y_sim: &Array2<f64>,
    x_pert: &Array2<f64>,
    y_sim_pert: &Array2<f64>,
) -> Result<PerturbationResponse> {
    if x.dim() != x_pert.dim() || x.len_of(Axis(0)) != y_sim.nrows() {
        return Err(Error::ShapeMismatch {
            expected: vec![x.nrows(), x.ncols()],
            got: vec![x_pert.nrows(), x_pert.ncols()],
        });
    }
    let simulator = per_sample_se_rows(y_sim_pert, y_sim)?;
    let model = per_sample_se_rows(&forward_batch(net, x_pert)?, &forward_batch(net, x)?)?;
    Ok(PerturbationResponse { simulator, model })
}
