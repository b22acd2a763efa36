//! Statistical routines against independent oracles.

use itertools::Itertools;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use surrogate_core::adversarial::{AttackMethod, Perturbation};
use surrogate_core::tensor_net::{mse_loss, Tensor};
use surrogate_core::uq::{
    common_grid, kde, lda_project, lda_project_labeled, mann_whitney_u, mann_whitney_u_with, matched_norm_noise,
    moments, per_sample_se, random_perturb_matched_norm, relative_error, silverman_bandwidth, RankMethod,
    SampleErrors,
};

/// One-sided exact p by listing every split of the pooled ranks.
fn enumerate_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().sorted_by(f64::total_cmp).collect();
    let u_of = |idx: &[usize]| -> f64 {
        let rank_sum: f64 = idx.iter().map(|&i| (i + 1) as f64).sum();
        rank_sum - (idx.len() * (idx.len() + 1)) as f64 / 2.0
    };
    let observed = {
        let idx: Vec<usize> = a.iter().map(|v| pooled.iter().position(|p| p == v).unwrap()).collect();
        u_of(&idx)
    };
    let mut hit = 0usize;
    let mut total = 0usize;
    for c in (0..pooled.len()).combinations(a.len()) {
        total += 1;
        if u_of(&c) >= observed {
            hit += 1;
        }
    }
    hit as f64 / total as f64
}

#[test]
fn exact_p_matches_enumeration_and_normal_approximation_is_close() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let shift = r.random_range(0.0..1.5);
        let a: Vec<f64> = (0..8).map(|_| r.sample::<f64, _>(StandardNormal) + shift).collect();
        let b: Vec<f64> = (0..8).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let exact = mann_whitney_u_with(&a, &b, Some(RankMethod::Exact)).unwrap();
        let approx = mann_whitney_u_with(&a, &b, Some(RankMethod::NormalApprox)).unwrap();
        assert_eq!(exact.method, RankMethod::Exact);
        assert!((exact.p_value - enumerate_p(&a, &b)).abs() < 1e-12);
        assert!((exact.p_value - approx.p_value).abs() <= 0.02, "{} vs {}", exact.p_value, approx.p_value);
        assert_eq!(exact.u_statistic + exact.u_complement(), 64.0);
    }
}

#[test]
fn smallest_exact_case() {
    let t = mann_whitney_u(&[3.0, 4.0], &[1.0, 2.0]).unwrap();
    assert_eq!(t.u_statistic, 4.0);
    assert!((t.p_value - 1.0 / 6.0).abs() < 1e-15);
    assert_eq!(t.alternative(), "greater");
}

#[test]
fn large_groups_detect_a_shift() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let a: Vec<f64> = (0..500).map(|_| r.sample::<f64, _>(StandardNormal) + 0.3).collect();
    let b: Vec<f64> = (0..500).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    let t = mann_whitney_u(&a, &b).unwrap();
    assert_eq!(t.method, RankMethod::NormalApprox);
    assert!(t.p_value < 1e-3);
    assert!(mann_whitney_u(&b, &a).unwrap().p_value > 0.99);
}

proptest! {
    #[test]
    fn shifting_group_a_up_never_raises_p(
        a in prop::collection::vec(-5.0f64..5.0, 1..15),
        b in prop::collection::vec(-5.0f64..5.0, 1..15),
        c in 0.01f64..3.0,
    ) {
        let p0 = mann_whitney_u(&a, &b).unwrap();
        let shifted: Vec<f64> = a.iter().map(|v| v + c).collect();
        let p1 = mann_whitney_u_with(&shifted, &b, Some(p0.method)).unwrap();
        prop_assert!(p1.p_value <= p0.p_value + 1e-12);
        prop_assert!((0.0..=1.0).contains(&p0.p_value));
        prop_assert_eq!(p0.u_statistic + p0.u_complement(), (a.len() * b.len()) as f64);
    }

    #[test]
    fn kde_integrates_to_one(samples in prop::collection::vec(-50.0f64..50.0, 2..60)) {
        prop_assume!(samples.iter().any(|&v| v != samples[0]));
        let h = silverman_bandwidth(&samples).unwrap();
        let grid = common_grid(&[(&samples, h)]).unwrap();
        let d = kde(&samples, &grid, h).unwrap();
        prop_assert!(d.density.iter().all(|&v| v >= 0.0));
        prop_assert!((d.integral() - 1.0).abs() <= 0.01);
    }

    #[test]
    fn relative_error_is_homogeneous(
        m in prop::collection::vec(0.1f64..5.0, 1..20),
        c in -4.0f64..4.0,
        seed in 0u64..1000,
    ) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let delta: Vec<f64> = m.iter().map(|_| r.sample(StandardNormal)).collect();
        let base = relative_error(&m.iter().zip(&delta).map(|(a, d)| a + d).collect::<Vec<_>>(), &m).unwrap();
        let scaled = relative_error(&m.iter().zip(&delta).map(|(a, d)| a + c * d).collect::<Vec<_>>(), &m).unwrap();
        prop_assert!((scaled - c.abs() * base).abs() <= 1e-12 * (1.0 + base));
    }

    #[test]
    fn moments_satisfy_jensen(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 4), 1..30)) {
        let ts: Vec<Tensor> = rows.iter().map(|r| Tensor::vector(r.clone())).collect();
        let m = moments(&ts).unwrap();
        for j in 0..4 {
            prop_assert!(m.m2[j] - m.m1[j] * m.m1[j] >= -1e-12 * m.m2[j].max(1.0));
        }
    }
}

#[test]
fn variance_matches_two_pass() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let ts: Vec<Tensor> = (0..40).map(|_| Tensor::vector((0..6).map(|_| r.random_range(-2.0..3.0)).collect())).collect();
    let m = moments(&ts).unwrap();
    for (j, v) in m.variance().iter().enumerate() {
        let mean = ts.iter().map(|t| t.data()[j]).sum::<f64>() / 40.0;
        let two_pass = ts.iter().map(|t| (t.data()[j] - mean).powi(2)).sum::<f64>() / 40.0;
        assert!((v - two_pass).abs() <= 1e-12);
    }
}

#[test]
fn mean_se_equals_batch_mse() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let pred: Vec<Tensor> = (0..7).map(|_| Tensor::vector((0..5).map(|_| r.sample(StandardNormal)).collect())).collect();
    let truth: Vec<Tensor> = (0..7).map(|_| Tensor::vector((0..5).map(|_| r.sample(StandardNormal)).collect())).collect();
    let se = per_sample_se(&pred, &truth).unwrap();
    let cat = |v: &[Tensor]| Tensor::vector(v.iter().flat_map(|t| t.data().to_vec()).collect());
    assert!((se.mean() - mse_loss(&cat(&pred), &cat(&truth)).unwrap()).abs() < 1e-14);
}

#[test]
fn silverman_on_standard_normal_and_rate() {
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let draw = |n: usize, r: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| r.sample(StandardNormal)).collect() };
    let h = silverman_bandwidth(&draw(1000, &mut r)).unwrap();
    assert!((h - 0.226).abs() < 0.02, "{h}");
    let reps = 200;
    let (mut h1, mut h2) = (0.0, 0.0);
    for _ in 0..reps {
        h1 += silverman_bandwidth(&draw(400, &mut r)).unwrap() / reps as f64;
        h2 += silverman_bandwidth(&draw(800, &mut r)).unwrap() / reps as f64;
    }
    assert!((h2 / h1 - 2f64.powf(-0.2)).abs() < 0.01);
}

#[test]
fn kde_single_sample_peak() {
    for &h in &[0.05, 0.3, 2.0] {
        let d = kde(&[0.0], &[0.0], h).unwrap();
        assert!((d.density[0] - 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt())).abs() < 1e-10);
    }
}

#[test]
fn matched_norm_perturbations_are_direction_free() {
    let d = 64;
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let reference: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
    let rn = reference.iter().map(|v| v * v).sum::<f64>().sqrt();
    let draws = 10_000;
    let mut cos_sum = 0.0;
    for _ in 0..draws {
        let eta = matched_norm_noise(d, rn, &mut r);
        let en = eta.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((en - rn).abs() <= 1e-12 * rn);
        cos_sum += eta.iter().zip(&reference).map(|(a, b)| a * b).sum::<f64>() / (en * rn);
    }
    assert!((cos_sum / draws as f64).abs() <= 3.0 / (d as f64).sqrt());
}

#[test]
fn random_perturbation_is_seeded() {
    let x = Tensor::vector(vec![1.0; 10]);
    let p = Perturbation::new(Tensor::vector(vec![0.1; 10]), AttackMethod::Fgnm, 0.1, "test".into()).unwrap();
    let a = random_perturb_matched_norm(&x, &p, 9).unwrap();
    assert_eq!(a, random_perturb_matched_norm(&x, &p, 9).unwrap());
    let eta: f64 = a.data().iter().map(|v| (v - 1.0).powi(2)).sum::<f64>().sqrt();
    assert!((eta - p.norm()).abs() <= 1e-12);
}

fn clusters(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let centers = [[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]];
    let mut f = Vec::new();
    let mut l = Vec::new();
    for (c, ctr) in centers.iter().enumerate() {
        for _ in 0..20 {
            f.push(vec![ctr[0] + noise.sample(&mut r), ctr[1] + noise.sample(&mut r)]);
            l.push(c);
        }
    }
    (f, l)
}

#[test]
fn lda_separates_clusters() {
    let (f, l) = clusters(1);
    let z = lda_project_labeled(&f, &l).unwrap();
    let mut means = [[0.0; 2]; 3];
    for (p, &c) in z.iter().zip(&l) {
        means[c][0] += p[0] / 20.0;
        means[c][1] += p[1] / 20.0;
    }
    let mut within = 0.0;
    for (p, &c) in z.iter().zip(&l) {
        within += ((p[0] - means[c][0]).powi(2) + (p[1] - means[c][1]).powi(2)) / 60.0;
    }
    let sd = within.sqrt();
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let dist = ((means[a][0] - means[b][0]).powi(2) + (means[a][1] - means[b][1]).powi(2)).sqrt();
        assert!(dist > 5.0 * sd, "{dist} vs {sd}");
    }
}

fn pairwise(z: &[[f64; 2]]) -> Vec<f64> {
    z.iter()
        .tuple_combinations()
        .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
        .collect()
}

#[test]
fn lda_is_rotation_invariant() {
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let d = 5;
    let f: Vec<Vec<f64>> = (0..30).map(|i| (0..d).map(|j| r.sample::<f64, _>(StandardNormal) + (i % 3 * j) as f64).collect()).collect();
    let se = SampleErrors::from_se((0..30).map(|i| (1 + i % 3) as f64 + 0.01 * i as f64).collect());
    let q = nalgebra::DMatrix::<f64>::from_fn(d, d, |_, _| r.sample(StandardNormal)).qr().q();
    let rotated: Vec<Vec<f64>> = f.iter().map(|v| (&q * nalgebra::DVector::from_column_slice(v)).iter().copied().collect()).collect();
    let a = pairwise(&lda_project(&f, &se).unwrap());
    let b = pairwise(&lda_project(&rotated, &se).unwrap());
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-8 * (1.0 + x.abs()), "{x} vs {y}");
    }
}

#[test]
fn lda_is_deterministic_under_duplication() {
    let (f, l) = clusters(2);
    let z = lda_project_labeled(&f, &l).unwrap();
    assert_eq!(z, lda_project_labeled(&f, &l).unwrap());
    let f2: Vec<Vec<f64>> = f.iter().chain(&f).cloned().collect();
    let l2: Vec<usize> = l.iter().chain(&l).copied().collect();
    let z2 = lda_project_labeled(&f2, &l2).unwrap();
    for i in 0..z.len() {
        for k in 0..2 {
            assert!((z[i][k] - z2[i][k]).abs() <= 1e-8 * (1.0 + z[i][k].abs()));
            assert!((z2[i][k] - z2[i + z.len()][k]).abs() <= 1e-8 * (1.0 + z[i][k].abs()));
        }
    }
}
