//! Stage-1 nuisance estimates: a conditional outcome model on the full
//! covariates and a propensity classifier.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::sigmoid;
use crate::data::PODataset;
use crate::genmodels::{spline, Checkpoint, GenerativeModel, HeadSpec, ModelError};
use crate::nn::{Conditioner, ConditionerSpec, Restriction};
use crate::rng::{self, Rng};

pub const DEFAULT_CLIP_FLOOR: f64 = 0.1;

#[derive(Debug, Error)]
pub enum NuisanceError {
    #[error("dataset is empty")]
    Empty,
    #[error("treatment arm {0} has no observations; both arms are required")]
    SingleArm(u8),
    #[error("probability {p} at index {index} is degenerate for label {label}")]
    Degenerate { index: usize, p: f64, label: u8 },
    #[error("probabilities and labels differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("no outcome model has been fitted")]
    NoOutcomeModel,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `max(p, floor)`, capped at 1.
pub fn clip_propensity(p: f64, floor: f64) -> f64 {
    p.max(floor).min(1.0)
}

/// `P(A = a | x)` from `P(A = 1 | x)`.
pub fn arm_propensity(pi1: f64, a: u8) -> f64 {
    if a == 1 {
        pi1
    } else {
        1.0 - pi1
    }
}

/// Mean binary cross-entropy.
pub fn bce_loss(probs: &[f64], labels: &[u8]) -> Result<f64, NuisanceError> {
    if probs.len() != labels.len() {
        return Err(NuisanceError::Length(probs.len(), labels.len()));
    }
    if probs.is_empty() {
        return Err(NuisanceError::Empty);
    }
    let mut total = 0.0;
    for (i, (&p, &y)) in probs.iter().zip(labels).enumerate() {
        let bad = (p <= 0.0 && y == 1) || (p >= 1.0 && y == 0) || p.is_nan();
        if bad {
            return Err(NuisanceError::Degenerate { index: i, p, label: y });
        }
        total -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total / probs.len() as f64)
}

/// Logistic network `x ↦ P(A = 1 | x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropensityNet {
    pub cond: Conditioner,
    pub params: Vec<f64>,
}

impl PropensityNet {
    pub fn new(d_x: usize, hidden: usize, layers: usize, seed: u64) -> Self {
        let cond = Conditioner::new(ConditionerSpec {
            in_dim: d_x,
            out_dim: 1,
            hidden,
            layers,
            restriction: Restriction::Full,
            noise_std: 0.0,
        });
        let params = cond.init(&[0.0], &mut rng::stream(seed, 0xBCE));
        PropensityNet { cond, params }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.cond.eval(&self.params, x)[0])
    }

    /// Binary cross-entropy of one row and its parameter gradient
    /// (accumulated into `grad`).
    pub fn bce_grad(&self, x: &[f64], label: u8, grad: &mut [f64]) -> f64 {
        let (out, cache) = self.cond.forward(&self.params, x, None);
        let logit = out[0];
        let p = sigmoid(logit);
        self.cond.backward(&self.params, &cache, &[p - label as f64], grad);
        // softplus form keeps the loss finite for saturated logits
        crate::autodiff::softplus(logit) - label as f64 * logit
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Propensity {
    Network(PropensityNet),
    /// Constant `P(A = 1)`.
    Constant(f64),
}

impl Propensity {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Propensity::Network(n) => n.predict(x),
            Propensity::Constant(p) => *p,
        }
    }
}

/// Frozen stage-1 estimates η̂ = (ξ̂_a, π̂_a).
#[derive(Clone, Debug)]
pub struct NuisanceEstimates {
    pub outcome_model: Option<GenerativeModel>,
    pub propensity: Propensity,
    pub clip_floor: f64,
}

impl NuisanceEstimates {
    pub fn new(outcome_model: Option<GenerativeModel>, propensity: Propensity, clip_floor: f64) -> Self {
        let outcome_model = outcome_model.map(|mut m| {
            m.freeze();
            m
        });
        NuisanceEstimates {
            outcome_model,
            propensity,
            clip_floor,
        }
    }

    /// Unclipped `π̂_1(x)`.
    pub fn raw_propensity(&self, x: &[f64]) -> f64 {
        self.propensity.predict(x)
    }

    /// Clipped `π̂_a(x)`; the complement is taken before clipping.
    pub fn predict_propensity(&self, x: &[f64], a: u8) -> f64 {
        clip_propensity(arm_propensity(self.raw_propensity(x), a), self.clip_floor)
    }

    pub fn outcome(&self) -> Result<&GenerativeModel, NuisanceError> {
        self.outcome_model.as_ref().ok_or(NuisanceError::NoOutcomeModel)
    }

    /// Draws from ξ̂_a(· | x); `count = 0` gives no draws.
    pub fn sample_pseudo_outcome(&self, x: &[f64], a: u8, count: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>, NuisanceError> {
        if count == 0 {
            return Ok(Vec::new());
        }
        Ok(self.outcome()?.sample(x, a, count, rng)?)
    }

    /// Weighted nodes `(ω_k, y_k)` with `Σ ω_k f(y_k) ≈ E_{ξ̂_a(·|x)} f(Y)`.
    ///
    /// Available for one-dimensional CNF outcome models only: Gauss-Legendre
    /// on every spline bin plus unit-width panels over the identity tails.
    pub fn pseudo_quadrature(&self, x: &[f64], a: u8, nodes_per_panel: usize) -> Result<Vec<(f64, Vec<f64>)>, NuisanceError> {
        let m = self.outcome()?;
        let spec = match &m.config.head {
            HeadSpec::Cnf(s) if s.d_y == 1 => s.clone(),
            _ => {
                return Err(ModelError::Capability(
                    "quadrature pseudo-outcomes need a one-dimensional CNF outcome model".into(),
                )
                .into())
            }
        };
        let theta = m.condition(x, a)?;
        let shape = spec.shape();
        let ns = shape.n_params();
        let sp = &theta[..ns];
        let (shift, log_scale) = (theta[ns], theta[ns + 1]);
        let mut edges = Vec::new();
        const TAIL: f64 = 40.0;
        let b = shape.bound;
        let mut t = -b - TAIL;
        while t < -b {
            edges.push(t);
            t += 1.0;
        }
        edges.extend(spline::knot_positions(shape, sp));
        let mut t = b + 1.0;
        while t <= b + TAIL {
            edges.push(t);
            t += 1.0;
        }
        let gl = GaussLegendre::new(NonZeroUsize::new(nodes_per_panel.max(1)).expect("nonzero"));
        let mut out = Vec::with_capacity((edges.len() - 1) * nodes_per_panel);
        for w in edges.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let half = 0.5 * (hi - lo);
            for &(node, weight) in gl.as_node_weight_pairs() {
                let xv = lo + half * (node + 1.0);
                let (z, ld) = spline::forward(shape, sp, xv);
                let dens = (-0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln() + ld).exp();
                let u = shift + log_scale.exp() * xv;
                out.push((weight * half * dens, m.scaler.inverse(&[u])));
            }
        }
        Ok(out)
    }

    pub fn outcome_hash(&self) -> Option<String> {
        self.outcome_model.as_ref().map(|m| m.param_hash())
    }

    pub fn to_checkpoint(&self) -> NuisanceCheckpoint {
        NuisanceCheckpoint {
            outcome: self.outcome_model.as_ref().map(|m| m.to_checkpoint(None)),
            propensity: self.propensity.clone(),
            clip_floor: self.clip_floor,
        }
    }

    pub fn from_checkpoint(ck: &NuisanceCheckpoint) -> Result<Self, NuisanceError> {
        let outcome = ck.outcome.as_ref().map(GenerativeModel::from_checkpoint).transpose()?;
        Ok(NuisanceEstimates::new(outcome, ck.propensity.clone(), ck.clip_floor))
    }
}

/// Serialized nuisance estimates: model checkpoint plus propensity block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuisanceCheckpoint {
    pub outcome: Option<Checkpoint>,
    pub propensity: Propensity,
    pub clip_floor: f64,
}

pub fn check_both_arms(ds: &PODataset) -> Result<(), NuisanceError> {
    if ds.is_empty() {
        return Err(NuisanceError::Empty);
    }
    let counts = ds.arm_counts();
    for a in 0..2u8 {
        if counts[a as usize] == 0 {
            return Err(NuisanceError::SingleArm(a));
        }
    }
    Ok(())
}

/// Empirical-frequency nuisance tables for a discrete toy DGP.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularNuisance {
    /// `pi1[x]`.
    pub pi1: Vec<f64>,
    /// `xi[a][x][y]`.
    pub xi: [Vec<Vec<f64>>; 2],
}

impl TabularNuisance {
    /// Frequencies from `(x, a, y)` index triples. Cells never observed fall
    /// back to uniform.
    pub fn fit(samples: &[(usize, u8, usize)], nx: usize, ny: usize) -> Self {
        let mut n_xa = vec![[0usize; 2]; nx];
        let mut n_xay = [vec![vec![0usize; ny]; nx], vec![vec![0usize; ny]; nx]];
        for &(x, a, y) in samples {
            n_xa[x][a as usize] += 1;
            n_xay[a as usize][x][y] += 1;
        }
        let pi1 = n_xa
            .iter()
            .map(|c| {
                let tot = c[0] + c[1];
                if tot == 0 {
                    0.5
                } else {
                    c[1] as f64 / tot as f64
                }
            })
            .collect();
        let xi = [0usize, 1].map(|a| {
            (0..nx)
                .map(|x| {
                    let tot = n_xa[x][a];
                    (0..ny)
                        .map(|y| {
                            if tot == 0 {
                                1.0 / ny as f64
                            } else {
                                n_xay[a][x][y] as f64 / tot as f64
                            }
                        })
                        .collect()
                })
                .collect()
        });
        TabularNuisance { pi1, xi }
    }

    /// Total-variation distances `(propensity, outcome)` to exact tables,
    /// each weighted by `p_x` (and averaged over arms for the outcome).
    pub fn tv_error(&self, p_x: &[f64], pi1: &[f64], xi: &[Vec<Vec<f64>>; 2]) -> (f64, f64) {
        let mut tv_pi = 0.0;
        let mut tv_xi = 0.0;
        for (x, &px) in p_x.iter().enumerate() {
            tv_pi += px * (self.pi1[x] - pi1[x]).abs();
            for a in 0..2 {
                let d: f64 = self.xi[a][x].iter().zip(&xi[a][x]).map(|(p, q)| (p - q).abs()).sum();
                tv_xi += 0.25 * px * d;
            }
        }
        (tv_pi, tv_xi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_table() {
        assert_eq!(clip_propensity(0.05, 0.1), 0.1);
        assert_eq!(clip_propensity(0.5, 0.1), 0.5);
        let n = NuisanceEstimates::new(None, Propensity::Constant(0.97), 0.1);
        assert_eq!(n.predict_propensity(&[0.0], 0), 0.1);
        assert_eq!(n.predict_propensity(&[0.0], 1), 0.97);
        assert_eq!(arm_propensity(0.97, 0) + arm_propensity(0.97, 1), 1.0);
    }

    #[test]
    fn bce_values() {
        assert!((bce_loss(&[0.5, 0.5], &[1, 0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(bce_loss(&[1.0 - 1e-6, 1e-6], &[1, 0]).unwrap() < 1e-5);
        assert!((bce_loss(&[0.9, 0.1], &[1, 0]).unwrap() - 0.105_360_515_657_826_3).abs() < 1e-12);
        assert!(matches!(bce_loss(&[0.0], &[1]), Err(NuisanceError::Degenerate { index: 0, .. })));
        assert!(matches!(bce_loss(&[1.0], &[0]), Err(NuisanceError::Degenerate { .. })));
    }

    #[test]
    fn propensity_bce_gradient_matches_finite_differences() {
        let mut net = PropensityNet::new(2, 4, 1, 3);
        let x = [0.3, -1.2];
        let mut g = vec![0.0; net.params.len()];
        net.bce_grad(&x, 1, &mut g);
        let base = net.params.clone();
        for i in 0..base.len() {
            let h = 1e-6;
            net.params = base.clone();
            net.params[i] += h;
            let lp = -net.predict(&x).ln();
            net.params = base.clone();
            net.params[i] -= h;
            let lm = -net.predict(&x).ln();
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn zero_count_gives_no_draws() {
        let n = NuisanceEstimates::new(None, Propensity::Constant(0.5), 0.1);
        let mut r = rng::stream(0, 0);
        assert!(n.sample_pseudo_outcome(&[0.0], 1, 0, &mut r).unwrap().is_empty());
    }
}
