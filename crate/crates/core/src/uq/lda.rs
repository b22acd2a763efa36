use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::errors::SampleErrors;
use crate::{Error, Result};

const MAX_PCA_COMPONENTS: usize = 50;
const N_CLASSES: usize = 3;

/// Class 0/1/2 for the lower/middle/upper third of the squared errors
/// (ties broken by sample order).
pub fn tercile_labels(se: &[f64]) -> Vec<usize> {
    let n = se.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se[a].total_cmp(&se[b]));
    let mut labels = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        labels[i] = rank * N_CLASSES / n;
    }
    labels
}

/// 2-d LDA coordinates of `features`, with classes given by SE terciles.
pub fn lda_project(features: &[Vec<f64>], se: &SampleErrors) -> Result<Vec<[f64; 2]>> {
    if features.len() != se.se.len() {
        return Err(Error::LengthMismatch { expected: features.len(), got: se.se.len() });
    }
    lda_project_labeled(features, &tercile_labels(&se.se))
}

/// PCA pre-reduction to `min(50, n - 3)` components, then three-class LDA on
/// the ridge-regularized within-class scatter `S_W + gamma I` with
/// `gamma = 1e-6 trace(S_W) / dim`. Returns each sample's coordinates on the
/// two leading discriminant directions, scaled to unit pooled within-class
/// variance and oriented so the upper class projects above the lower one.
pub fn lda_project_labeled(features: &[Vec<f64>], labels: &[usize]) -> Result<Vec<[f64; 2]>> {
    let n = features.len();
    if labels.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: labels.len() });
    }
    let mut class_size = [0usize; N_CLASSES];
    for &l in labels {
        if l >= N_CLASSES {
            return Err(Error::DegenerateClasses(format!("label {l} out of range")));
        }
        class_size[l] += 1;
    }
    if class_size.iter().any(|&c| c < 3) {
        return Err(Error::DegenerateClasses(format!("every class needs at least 3 samples, got {class_size:?}")));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) || d == 0 {
        return Err(Error::ShapeMismatch { expected: vec![n, d], got: vec![n, 0] });
    }

    let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
    let mean = x.row_mean();
    let xc = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let k = MAX_PCA_COMPONENTS.min(n - 3).min(d);
    if k < 2 {
        return Err(Error::DegenerateClasses(format!("only {k} principal components available")));
    }
    let z = pca_scores(&xc, k);

    let mut means = vec![DVector::<f64>::zeros(k); N_CLASSES];
    for (i, &l) in labels.iter().enumerate() {
        means[l] += z.row(i).transpose();
    }
    for (m, &c) in means.iter_mut().zip(&class_size) {
        *m /= c as f64;
    }
    let mut sw = DMatrix::<f64>::zeros(k, k);
    for (i, &l) in labels.iter().enumerate() {
        let dv = z.row(i).transpose() - &means[l];
        sw += &dv * dv.transpose();
    }
    // scores are centered, so the global mean is zero
    let mut sb = DMatrix::<f64>::zeros(k, k);
    for (m, &c) in means.iter().zip(&class_size) {
        sb += (c as f64) * (m * m.transpose());
    }
    let gamma = 1e-6 * sw.trace() / k as f64;
    let mut a = sw;
    for i in 0..k {
        a[(i, i)] += gamma.max(f64::MIN_POSITIVE);
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::DegenerateClasses("within-class scatter is singular".into()))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::DegenerateClasses("within-class scatter is singular".into()))?;
    let m = &l_inv * &sb * l_inv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let order = descending(eig.eigenvalues.as_slice());
    let lt_inv = l_inv.transpose();
    let w1 = &lt_inv * eig.eigenvectors.column(order[0]);
    let w2 = &lt_inv * eig.eigenvectors.column(order[1]);
    // unit pooled within-class variance along each axis, upper class on the positive side
    let scale = (n as f64).sqrt();
    let orient = |p: DVector<f64>| {
        let class_mean = |c: usize| {
            labels.iter().zip(p.iter()).filter(|(l, _)| **l == c).map(|(_, v)| v).sum::<f64>() / class_size[c] as f64
        };
        let s = if class_mean(N_CLASSES - 1) < class_mean(0) { -scale } else { scale };
        p * s
    };
    let p1 = orient(&z * w1);
    let p2 = orient(&z * w2);
    Ok((0..n).map(|i| [p1[i], p2[i]]).collect())
}

fn descending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Scores of centered data on its `k` leading principal axes.
fn pca_scores(xc: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let (n, d) = xc.shape();
    if d <= n {
        let cov = xc.transpose() * xc;
        let eig = SymmetricEigen::new(cov);
        let order = descending(eig.eigenvalues.as_slice());
        let v = DMatrix::from_fn(d, k, |i, j| eig.eigenvectors[(i, order[j])]);
        xc * v
    } else {
        // Gram route: scores are u_j * sqrt(lambda_j)
        let gram = xc * xc.transpose();
        let eig = SymmetricEigen::new(gram);
        let order = descending(eig.eigenvalues.as_slice());
        DMatrix::from_fn(n, k, |i, j| eig.eigenvectors[(i, order[j])] * eig.eigenvalues[order[j]].max(0.0).sqrt())
    }
}
