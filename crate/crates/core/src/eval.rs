//! Evaluation metrics: empirical Wasserstein-2 against ground-truth CDPO
//! samples, average log-probability of joint potential outcomes, and
//! aggregation over runs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{project, PODataset};
use crate::exec::Exec;
use crate::genmodels::{GenerativeModel, ModelError};
use crate::rng;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("point sets differ in size ({0} vs {1})")]
    UnequalSizes(usize, usize),
    #[error("point sets must be nonempty")]
    Empty,
    #[error("points differ in dimension")]
    Dimension,
    #[error("dataset has no ground-truth CDPO sampler")]
    NoGroundTruth,
    #[error("dataset has no joint potential-outcome columns")]
    NoJointPo,
    #[error("no values to aggregate")]
    NoValues,
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Optimal assignment for a square cost matrix (row-major `n × n`),
/// minimizing total cost. Returns the column assigned to each row.
pub fn assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    // shortest augmenting paths with row/column potentials, 1-based
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        out[p[j] - 1] = j - 1;
    }
    out
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_sets(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(EvalError::UnequalSizes(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::Empty);
    }
    let d = a[0].len();
    if a.iter().chain(b).any(|p| p.len() != d) {
        return Err(EvalError::Dimension);
    }
    Ok(d)
}

/// W2 through the general assignment solver, for any dimension.
pub fn w2_assignment(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    check_sets(a, b)?;
    let n = a.len();
    let mut cost = Vec::with_capacity(n * n);
    for pa in a {
        for pb in b {
            cost.push(sq_dist(pa, pb));
        }
    }
    let assign = assignment(&cost, n);
    let total: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok((total / n as f64).max(0.0).sqrt())
}

/// Empirical W2 between equal-size point sets: quantile coupling in one
/// dimension, exact optimal assignment otherwise.
pub fn empirical_w2(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let d = check_sets(a, b)?;
    if d != 1 {
        return w2_assignment(a, b);
    }
    let mut xa: Vec<f64> = a.iter().map(|p| p[0]).collect();
    let mut xb: Vec<f64> = b.iter().map(|p| p[0]).collect();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let total: f64 = xa.iter().zip(&xb).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((total / xa.len() as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    W2,
    LogProb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// Mean ± standard error.
    MeanSe,
    /// Median ± standard deviation.
    MedianStd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub convention: Convention,
    pub center: f64,
    pub spread: f64,
    pub n: usize,
    pub non_finite: usize,
}

/// Aggregates the finite entries of `values`; non-finite entries are
/// counted and excluded.
pub fn aggregate_runs(values: &[f64], convention: Convention) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(EvalError::NoValues);
    }
    let mut finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let non_finite = values.len() - finite.len();
    if finite.is_empty() {
        return Err(EvalError::NoValues);
    }
    let k = finite.len() as f64;
    let mean = finite.iter().sum::<f64>() / k;
    let std = if finite.len() > 1 {
        (finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    let (center, spread) = match convention {
        Convention::MeanSe => (mean, std / k.sqrt()),
        Convention::MedianStd => {
            finite.sort_by(f64::total_cmp);
            let m = finite.len();
            let med = if m % 2 == 1 {
                finite[m / 2]
            } else {
                0.5 * (finite[m / 2 - 1] + finite[m / 2])
            };
            (med, std)
        }
    };
    Ok(Aggregate {
        convention,
        center,
        spread,
        n: finite.len(),
        non_finite,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub metric: Metric,
    pub arm: u8,
    /// Per-test-point values.
    #[serde(with = "crate::nullable::vec")]
    pub values: Vec<f64>,
    pub aggregate: Aggregate,
    /// Samples per side (W2 only).
    pub p: Option<usize>,
    pub seed: u64,
}

/// Which covariates the evaluated model conditions on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Conditioning {
    FullX,
    Masked,
}

fn model_input(ds: &PODataset, row: usize, cond: Conditioning) -> Vec<f64> {
    let x = &ds.samples[row].x;
    match cond {
        Conditioning::FullX => x.clone(),
        Conditioning::Masked => project(x, &ds.v_mask),
    }
}

/// Mean W2 between `p` model draws and `p` ground-truth draws at each of
/// the first `n_points` test covariates. The reference law is the CDPO at
/// the full test covariate `x_i`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_w2(
    model: &GenerativeModel,
    ds: &PODataset,
    a: u8,
    p: usize,
    n_points: usize,
    cond: Conditioning,
    seed: u64,
    exec: Exec,
) -> Result<EvalResult> {
    let gt = ds.ground_truth.as_ref().ok_or(EvalError::NoGroundTruth)?;
    let n = n_points.min(ds.len());
    if n == 0 || p == 0 {
        return Err(EvalError::Empty);
    }
    let per_point = exec.map(n, |i| -> Result<f64> {
        let mut r = rng::stream(rng::derive_seed(seed, i as u64), a as u64);
        let x = &ds.samples[i].x;
        let truth = gt.sample(x, a, p, &mut r);
        let draws = model.sample(&model_input(ds, i, cond), a, p, &mut r)?;
        empirical_w2(&truth, &draws)
    });
    let values = per_point.into_iter().collect::<Result<Vec<f64>>>()?;
    let aggregate = aggregate_runs(&values, Convention::MeanSe)?;
    Ok(EvalResult {
        metric: Metric::W2,
        arm: a,
        values,
        aggregate,
        p: Some(p),
        seed,
    })
}

/// Reference W2 between two independent ground-truth samples at the same
/// covariates (the self-distance floor of [`evaluate_w2`]).
pub fn self_distance_w2(ds: &PODataset, a: u8, p: usize, n_points: usize, seed: u64, exec: Exec) -> Result<EvalResult> {
    let gt = ds.ground_truth.as_ref().ok_or(EvalError::NoGroundTruth)?;
    let n = n_points.min(ds.len());
    if n == 0 || p == 0 {
        return Err(EvalError::Empty);
    }
    let values = exec
        .map(n, |i| {
            let mut r = rng::stream(rng::derive_seed(seed, i as u64), 2 + a as u64);
            let x = &ds.samples[i].x;
            empirical_w2(&gt.sample(x, a, p, &mut r), &gt.sample(x, a, p, &mut r))
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    let aggregate = aggregate_runs(&values, Convention::MeanSe)?;
    Ok(EvalResult {
        metric: Metric::W2,
        arm: a,
        values,
        aggregate,
        p: Some(p),
        seed,
    })
}

/// Mean of `log p̂_a(y_i[a] | v_i)` over test rows with joint PO columns.
pub fn avg_log_prob(model: &GenerativeModel, ds: &PODataset, a: u8, cond: Conditioning) -> Result<EvalResult> {
    if !model.family().has_density() {
        return Err(EvalError::Model(ModelError::Capability(format!(
            "log-prob evaluation needs an explicit conditional density; {} models only provide samples (use a CNF)",
            model.family()
        ))));
    }
    let po = ds.joint_po.as_ref().ok_or(EvalError::NoJointPo)?;
    let values = po
        .iter()
        .enumerate()
        .map(|(i, j)| model.log_density(j.arm(a), &model_input(ds, i, cond), a))
        .collect::<std::result::Result<Vec<f64>, _>>()?;
    let aggregate = aggregate_runs(&values, Convention::MeanSe)?;
    Ok(EvalResult {
        metric: Metric::LogProb,
        arm: a,
        values,
        aggregate,
        p: None,
        seed: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_w2_values() {
        let a = vec![vec![0.0, 1.0], vec![2.0, 3.0]];
        assert_eq!(empirical_w2(&a, &a).unwrap(), 0.0);
        assert_eq!(empirical_w2(&[vec![0.0]], &[vec![1.0]]).unwrap(), 1.0);
        assert!(matches!(
            empirical_w2(&[vec![0.0]], &[vec![1.0], vec![2.0]]),
            Err(EvalError::UnequalSizes(1, 2))
        ));
    }

    #[test]
    fn assignment_small_case() {
        // classic 3x3 example with optimum 0->1, 1->0, 2->2
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = assignment(&cost, 3);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i * 3 + j]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn aggregation_examples() {
        let a = aggregate_runs(&[1.0, 1.0, 1.0], Convention::MeanSe).unwrap();
        assert_eq!((a.center, a.spread), (1.0, 0.0));
        let a = aggregate_runs(&[0.0, 2.0], Convention::MeanSe).unwrap();
        assert!((a.center - 1.0).abs() < 1e-15 && (a.spread - 1.0).abs() < 1e-15);
        let a = aggregate_runs(&[1.0, 2.0, 100.0], Convention::MedianStd).unwrap();
        assert_eq!(a.center, 2.0);
        let a = aggregate_runs(&[1.0, f64::NAN, 3.0, f64::INFINITY], Convention::MeanSe).unwrap();
        assert_eq!((a.n, a.non_finite, a.center), (2, 2, 2.0));
        assert!(aggregate_runs(&[], Convention::MeanSe).is_err());
    }
}
