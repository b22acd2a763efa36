//! Elliptic solver against a series solution and structural properties.

use std::f64::consts::PI;

use surrogate_core::exec::Execution;
use surrogate_core::fields::{FieldKind, GridField, GridSpec, KernelParams};
use surrogate_core::simulator::{
    assemble_dense, generate_dataset_with, relative_residual, simulate, solve_elliptic, SolverConfig,
};

/// Series solution of -lap(u) = 1 on the unit square with u = 0 on the boundary.
fn series(x: f64, y: f64) -> f64 {
    let mut s = 0.0;
    for m in (1..400).step_by(2) {
        for n in (1..400).step_by(2) {
            let (mf, nf) = (m as f64, n as f64);
            s += 16.0 / (PI.powi(4) * mf * nf * (mf * mf + nf * nf)) * (mf * PI * x).sin() * (nf * PI * y).sin();
        }
    }
    s
}

fn unit_center(nx: usize) -> f64 {
    let grid = GridSpec::new(nx).unwrap();
    let e = GridField::constant(grid, 1.0, FieldKind::Modulus).unwrap();
    let u = solve_elliptic(&e, &SolverConfig { tol: 1e-12, ..SolverConfig::default() }).unwrap();
    u.at(nx / 2, nx / 2)
}

#[test]
fn series_oracle_value() {
    assert!((series(0.5, 0.5) - 0.073671).abs() < 5e-6);
}

#[test]
fn center_value_and_second_order_convergence() {
    let exact = series(0.5, 0.5);
    let e33 = (unit_center(33) - exact).abs();
    let e65 = (unit_center(65) - exact).abs();
    assert!((unit_center(65) - 0.073671).abs() <= 0.02 * 0.073671);
    let ratio = e33 / e65;
    assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn solution_is_symmetric_for_symmetric_modulus() {
    let grid = GridSpec::new(21).unwrap();
    let nx = grid.nx();
    let values: Vec<f64> = (0..grid.len())
        .map(|p| {
            let (x, y) = grid.point(p);
            1.0 + (x - 0.5).powi(2) + (y - 0.5).powi(2)
        })
        .collect();
    let e = GridField::new(grid, values, FieldKind::Modulus).unwrap();
    let u = solve_elliptic(&e, &SolverConfig { tol: 1e-12, ..SolverConfig::default() }).unwrap();
    let scale = u.values().iter().cloned().fold(0.0, f64::max);
    for r in 0..nx {
        for c in 0..nx {
            let v = u.at(r, c);
            for w in [u.at(c, r), u.at(nx - 1 - r, c), u.at(r, nx - 1 - c)] {
                assert!((v - w).abs() <= 1e-9 * scale);
            }
        }
    }
}

#[test]
fn operator_is_symmetric_positive_definite() {
    let data = generate_dataset_with(Execution::Sequential, 1, GridSpec::new(7).unwrap(), &KernelParams::default(), &SolverConfig::default(), 3).unwrap();
    let e = surrogate_core::fields::exp_field(&data.inputs[0]).unwrap();
    let a = assemble_dense(&e).unwrap();
    assert!((&a - a.transpose()).abs().max() < 1e-14);
    assert!(a.clone().symmetric_eigen().eigenvalues.min() > 0.0);
}

#[test]
fn random_fields_satisfy_maximum_principle_and_residual_bound() {
    let cfg = SolverConfig::default();
    let data = generate_dataset_with(Execution::Parallel, 12, GridSpec::new(16).unwrap(), &KernelParams::default(), &cfg, 21).unwrap();
    for (x, u) in data.inputs.iter().zip(&data.outputs) {
        assert!(u.values().iter().all(|&v| v >= 0.0));
        let nx = u.grid().nx();
        for i in 0..nx {
            for v in [u.at(0, i), u.at(nx - 1, i), u.at(i, 0), u.at(i, nx - 1)] {
                assert_eq!(v, 0.0);
            }
        }
        let e = surrogate_core::fields::exp_field(x).unwrap();
        assert!(relative_residual(&e, u, cfg.load).unwrap() <= 10.0 * cfg.tol);
        assert_eq!(&simulate(x, &cfg).unwrap(), u);
    }
}
