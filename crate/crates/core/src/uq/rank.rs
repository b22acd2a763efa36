use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::{Error, Result};

/// Largest group size for which the exact null distribution is used.
const EXACT_MAX: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMethod {
    Exact,
    NormalApprox,
}

/// One-sided Mann-Whitney test with alternative "group a is stochastically greater".
#[derive(Debug, Clone, PartialEq)]
pub struct RankTestResult {
    /// `U` of group a: pairs `(a_i, b_j)` with `a_i > b_j`, ties counting one half.
    pub u_statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
    pub method: RankMethod,
}

impl RankTestResult {
    /// The complementary statistic `U_b = n1 n2 - U_a`.
    pub fn u_complement(&self) -> f64 {
        (self.n1 * self.n2) as f64 - self.u_statistic
    }

    pub fn alternative(&self) -> &'static str {
        "greater"
    }
}

pub fn mann_whitney_u(group_a: &[f64], group_b: &[f64]) -> Result<RankTestResult> {
    mann_whitney_u_with(group_a, group_b, None)
}

/// Like [`mann_whitney_u`], optionally forcing the p-value method. Forcing
/// `Exact` with ties or groups larger than 8 is rejected.
pub fn mann_whitney_u_with(group_a: &[f64], group_b: &[f64], method: Option<RankMethod>) -> Result<RankTestResult> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::EmptyGroup);
    }
    if group_a.iter().chain(group_b).any(|v| v.is_nan()) {
        return Err(Error::InvalidParameter("rank test input contains NaN".into()));
    }
    let (n1, n2) = (group_a.len(), group_b.len());
    let n = n1 + n2;

    let mut pooled: Vec<(f64, bool)> = group_a.iter().map(|&v| (v, true)).chain(group_b.iter().map(|&v| (v, false))).collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));

    // midranks and the tie term sum(t^3 - t)
    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let t = (j - i) as f64;
        let midrank = (i + 1 + j) as f64 / 2.0;
        rank_sum_a += midrank * pooled[i..j].iter().filter(|p| p.1).count() as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let u = rank_sum_a - (n1 * (n1 + 1)) as f64 / 2.0;
    let has_ties = tie_term > 0.0;

    let exact_ok = n1 <= EXACT_MAX && n2 <= EXACT_MAX && !has_ties;
    let method = match method {
        Some(RankMethod::Exact) if !exact_ok => {
            return Err(Error::InvalidParameter("exact p-value needs tie-free groups of size <= 8".into()))
        }
        Some(m) => m,
        None if exact_ok => RankMethod::Exact,
        None => RankMethod::NormalApprox,
    };
    let p_value = match method {
        RankMethod::Exact => exact_upper_tail(n1, n2, u.round() as usize),
        RankMethod::NormalApprox => normal_upper_tail(n1, n2, u, tie_term),
    };
    Ok(RankTestResult { u_statistic: u, p_value: p_value.clamp(0.0, 1.0), n1, n2, method })
}

/// `P(U >= u)` under the null, from the frequency recursion
/// `f(m, n, u) = f(m - 1, n, u - n) + f(m, n - 1, u)`.
fn exact_upper_tail(n1: usize, n2: usize, u: usize) -> f64 {
    // freq[a][b] is the distribution of U for group sizes (a, b)
    let mut freq: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); n2 + 1]; n1 + 1];
    for a in 0..=n1 {
        for b in 0..=n2 {
            let mut f = vec![0.0; a * b + 1];
            if a == 0 || b == 0 {
                f[0] = 1.0;
            } else {
                for (k, slot) in f.iter_mut().enumerate() {
                    let from_a = if k >= b { freq[a - 1][b].get(k - b).copied().unwrap_or(0.0) } else { 0.0 };
                    let from_b = freq[a][b - 1].get(k).copied().unwrap_or(0.0);
                    *slot = from_a + from_b;
                }
            }
            freq[a][b] = f;
        }
    }
    let dist = &freq[n1][n2];
    let total: f64 = dist.iter().sum();
    let tail: f64 = dist.get(u..).map_or(0.0, |t| t.iter().sum());
    tail / total
}

/// Normal approximation with tie-corrected variance and a 0.5 continuity correction.
fn normal_upper_tail(n1: usize, n2: usize, u: f64, tie_term: f64) -> f64 {
    let (a, b) = (n1 as f64, n2 as f64);
    let n = a + b;
    let mean = a * b / 2.0;
    let var = a * b / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if !(var > 0.0) {
        // every observation tied: no evidence either way
        return if u > mean { 0.0 } else { 1.0 };
    }
    let z = (u - mean - 0.5) / var.sqrt();
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}
