//! Robust neural surrogates for an elliptic-PDE simulator.
//!
//! The crate is organised along the experiment pipeline:
//!
//! - [`fields`]: log-normal Gaussian-process input fields on a unit-square grid.
//! - [`simulator`]: the ground-truth finite-difference solver for `-div(E grad u) = f`
//!   and labeled dataset generation.
//! - [`tensor_net`]: a small dense/convolutional network engine with reverse-mode
//!   gradients for both parameters and inputs, Adam and mini-batch training.
//! - [`adversarial`]: FGSM/FGNM perturbation directions and the mixed adversarial loss.
//! - [`uq`]: squared errors, moments, KDE, Mann-Whitney U and LDA projections.
//! - [`io`]: on-disk formats for datasets, models and comma-separated reports.
//!
//! Data-parallel loops go through [`exec::Execution`], which uses rayon when the
//! `parallel` feature is enabled and runs sequentially otherwise. Results are
//! assembled in index order either way, so outputs do not depend on the policy.

pub mod adversarial;
pub mod error;
pub mod exec;
pub mod fields;
pub mod io;
pub mod rng;
pub mod simulator;
pub mod tensor_net;
pub mod uq;

pub use error::{Error, Result};
