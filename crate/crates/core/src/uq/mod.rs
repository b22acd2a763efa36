//! Uncertainty quantification and robustness statistics.

mod errors;
mod kde;
mod lda;
mod mc;
mod rank;

pub use errors::{moments, moments_rows, per_sample_se, per_sample_se_rows, relative_error, MomentArrays, SampleErrors};
pub use kde::{common_grid, kde, silverman_bandwidth, trapezoid, DensityCurve};
pub use lda::{lda_project, lda_project_labeled, tercile_labels};
pub use mc::{
    matched_norm_noise, mc_density_experiment, perturbation_response, random_perturb_matched_norm, McCounts,
    McDensityResult, PerturbationResponse,
};
pub use rank::{mann_whitney_u, mann_whitney_u_with, RankMethod, RankTestResult};
