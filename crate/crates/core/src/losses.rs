//! Batch estimators of the plug-in, RA, IPTW and GDR risks.
//!
//! All values are in maximize orientation: they estimate `E log g`. For
//! CGANs the same objective is ascended by the discriminator and descended by
//! the generator (see [`GenerativeModel::ascent_signs`]).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{project, PODataset};
use crate::exec::Exec;
use crate::genmodels::{GenerativeModel, ModelError, Term};
use crate::nuisance::{NuisanceError, NuisanceEstimates};
use crate::rng::{self, Rng};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("{0} loss requires {1}")]
    MissingNuisance(LossKind, &'static str),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("{0}")]
    Mask(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nuisance(#[from] NuisanceError),
}

pub type Result<T> = std::result::Result<T, LossError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[serde(rename = "plugin")]
    PlugIn,
    Ra,
    Iptw,
    Gdr,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::PlugIn, LossKind::Ra, LossKind::Iptw, LossKind::Gdr];

    pub fn needs_outcome_nuisance(self) -> bool {
        matches!(self, LossKind::Ra | LossKind::Gdr)
    }

    pub fn needs_propensity(self) -> bool {
        matches!(self, LossKind::Iptw | LossKind::Gdr)
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::PlugIn => "plugin",
            LossKind::Ra => "ra",
            LossKind::Iptw => "iptw",
            LossKind::Gdr => "gdr",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "plugin" => Ok(LossKind::PlugIn),
            "ra" => Ok(LossKind::Ra),
            "iptw" => Ok(LossKind::Iptw),
            "gdr" => Ok(LossKind::Gdr),
            other => Err(format!("unknown learner `{other}`")),
        }
    }
}

/// How the integral over ξ̂_a(· | x) is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PseudoMode {
    /// `n_mc` fresh draws per row and batch.
    Sample,
    /// Deterministic Gauss-Legendre rule (1-D CNF nuisances only).
    Quadrature { nodes_per_panel: usize },
}

/// Everything a loss needs besides the target model.
#[derive(Clone, Copy)]
pub struct LossContext<'a> {
    pub kind: LossKind,
    pub ds: &'a PODataset,
    /// Covariate subset V fed to the target; ignored by the plug-in loss.
    pub mask: &'a [usize],
    pub nuisance: Option<&'a NuisanceEstimates>,
    pub n_mc: usize,
    pub pseudo: PseudoMode,
}

impl<'a> LossContext<'a> {
    pub fn new(kind: LossKind, ds: &'a PODataset, nuisance: Option<&'a NuisanceEstimates>) -> Self {
        LossContext {
            kind,
            ds,
            mask: &ds.v_mask,
            nuisance,
            n_mc: 1,
            pseudo: PseudoMode::Sample,
        }
    }

    fn check(&self) -> Result<()> {
        let nuis = self.nuisance;
        if self.kind.needs_propensity() && nuis.is_none() {
            return Err(LossError::MissingNuisance(self.kind, "a propensity estimate"));
        }
        if self.kind.needs_outcome_nuisance() && nuis.and_then(|n| n.outcome_model.as_ref()).is_none() {
            return Err(LossError::MissingNuisance(self.kind, "an outcome nuisance model"));
        }
        Ok(())
    }

    /// Conditioning input of the target model for a row.
    pub fn target_input(&self, row: usize) -> Vec<f64> {
        let x = &self.ds.samples[row].x;
        if self.kind == LossKind::PlugIn {
            x.clone()
        } else {
            project(x, self.mask)
        }
    }

    /// `(w, 1 - w)` for a row and arm.
    pub fn weights(&self, row: usize, a: u8) -> (f64, f64) {
        let s = &self.ds.samples[row];
        let ind = if s.a == a { 1.0 } else { 0.0 };
        let w = match self.kind {
            LossKind::PlugIn | LossKind::Ra => ind,
            LossKind::Iptw | LossKind::Gdr => {
                if ind == 0.0 {
                    0.0
                } else {
                    let nuis = self.nuisance.expect("checked");
                    1.0 / nuis.predict_propensity(&s.x, a)
                }
            }
        };
        let comp = match self.kind {
            LossKind::Ra | LossKind::Gdr => 1.0 - w,
            LossKind::PlugIn | LossKind::Iptw => 0.0,
        };
        (w, comp)
    }

    /// Weighted outcomes for one row and arm: the factual outcome with
    /// weight `w` followed by pseudo-outcomes sharing `1 - w`.
    pub fn plan(&self, row: usize, a: u8, rng: &mut Rng) -> Result<RowPlan> {
        let (w, comp) = self.weights(row, a);
        let s = &self.ds.samples[row];
        let mut terms = vec![(w, s.y.clone())];
        let mut pseudo = Vec::new();
        if comp != 0.0 {
            let nuis = self.nuisance.expect("checked");
            match self.pseudo {
                PseudoMode::Sample => {
                    let n = self.n_mc.max(1);
                    for y in nuis.sample_pseudo_outcome(&s.x, a, n, rng)? {
                        terms.push((comp / n as f64, y.clone()));
                        pseudo.push(y);
                    }
                }
                PseudoMode::Quadrature { nodes_per_panel } => {
                    for (wq, y) in nuis.pseudo_quadrature(&s.x, a, nodes_per_panel)? {
                        terms.push((comp * wq, y));
                    }
                }
            }
        }
        Ok(RowPlan {
            weight: w,
            complement: comp,
            terms,
            pseudo,
        })
    }
}

#[derive(Clone, Debug)]
pub struct RowPlan {
    pub weight: f64,
    pub complement: f64,
    /// `(coefficient, outcome)` pairs.
    pub terms: Vec<(f64, Vec<f64>)>,
    /// Sampled pseudo-outcomes (empty under quadrature).
    pub pseudo: Vec<Vec<f64>>,
}

impl RowPlan {
    fn as_terms(&self) -> Vec<Term<'_>> {
        self.terms.iter().map(|(c, y)| Term { coef: *c, y }).collect()
    }
}

#[derive(Clone, Debug)]
pub struct BatchLossValue {
    pub value: f64,
    pub weights: Vec<f64>,
    pub complements: Vec<f64>,
    pub pseudo_outcomes: Vec<Vec<Vec<f64>>>,
}

fn row_rng(seed: u64, j: usize, a: u8) -> Rng {
    rng::stream(rng::derive_seed(seed, j as u64), a as u64)
}

/// Evaluation-mode batch value `P_n{...}` for arm `a`.
pub fn evaluate_loss(model: &GenerativeModel, ctx: &LossContext<'_>, rows: &[usize], a: u8, seed: u64) -> Result<BatchLossValue> {
    ctx.check()?;
    if rows.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let mut out = BatchLossValue {
        value: 0.0,
        weights: Vec::with_capacity(rows.len()),
        complements: Vec::with_capacity(rows.len()),
        pseudo_outcomes: Vec::with_capacity(rows.len()),
    };
    for (j, &i) in rows.iter().enumerate() {
        let mut r = row_rng(seed, j, a);
        let plan = ctx.plan(i, a, &mut r)?;
        let v = model.row_value(&ctx.target_input(i), a, &plan.as_terms(), 1, &mut r)?;
        out.value += v;
        out.weights.push(plan.weight);
        out.complements.push(plan.complement);
        out.pseudo_outcomes.push(plan.pseudo);
    }
    out.value /= rows.len() as f64;
    Ok(out)
}

pub fn plugin_loss(model: &GenerativeModel, ds: &PODataset, rows: &[usize], a: u8, seed: u64) -> Result<BatchLossValue> {
    evaluate_loss(model, &LossContext::new(LossKind::PlugIn, ds, None), rows, a, seed)
}

pub fn iptw_loss(model: &GenerativeModel, nuis: &NuisanceEstimates, ds: &PODataset, rows: &[usize], a: u8, seed: u64) -> Result<BatchLossValue> {
    evaluate_loss(model, &LossContext::new(LossKind::Iptw, ds, Some(nuis)), rows, a, seed)
}

pub fn ra_loss(
    model: &GenerativeModel,
    nuis: &NuisanceEstimates,
    ds: &PODataset,
    rows: &[usize],
    a: u8,
    n_mc: usize,
    seed: u64,
) -> Result<BatchLossValue> {
    let mut ctx = LossContext::new(LossKind::Ra, ds, Some(nuis));
    ctx.n_mc = n_mc;
    evaluate_loss(model, &ctx, rows, a, seed)
}

pub fn gdr_loss(
    model: &GenerativeModel,
    nuis: &NuisanceEstimates,
    ds: &PODataset,
    rows: &[usize],
    a: u8,
    n_mc: usize,
    seed: u64,
) -> Result<BatchLossValue> {
    let mut ctx = LossContext::new(LossKind::Gdr, ds, Some(nuis));
    ctx.n_mc = n_mc;
    evaluate_loss(model, &ctx, rows, a, seed)
}

/// Batch objective summed over `arms` and its gradient with respect to the
/// target's parameters (maximize orientation). Nuisances only enter through
/// weights and pseudo-outcomes, so no gradient reaches them.
pub fn batch_gradient(
    model: &GenerativeModel,
    params: &[f64],
    ctx: &LossContext<'_>,
    rows: &[usize],
    arms: &[u8],
    train: bool,
    seed: u64,
    exec: Exec,
) -> Result<(f64, Vec<f64>)> {
    ctx.check()?;
    if rows.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let n = model.n_params();
    let per_row = exec.map(rows.len(), |j| -> Result<(f64, Vec<f64>)> {
        let i = rows[j];
        let input = ctx.target_input(i);
        let mut value = 0.0;
        let mut grad = vec![0.0; n];
        for &a in arms {
            let mut r = row_rng(seed, j, a);
            let plan = ctx.plan(i, a, &mut r)?;
            let terms = plan.as_terms();
            if terms.iter().all(|t| t.coef == 0.0) {
                continue;
            }
            let rg = model.row_grad_with(params, &input, a, &terms, 1, train, &mut r)?;
            value += rg.value;
            for (g, d) in grad.iter_mut().zip(rg.grad) {
                *g += d;
            }
        }
        Ok((value, grad))
    });
    let scale = 1.0 / rows.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; n];
    for r in per_row {
        let (v, g) = r?;
        value += v;
        for (acc, d) in grad.iter_mut().zip(g) {
            *acc += d;
        }
    }
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((value * scale, grad))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub relative_difference: f64,
    pub iptw_norm: f64,
    pub tolerance: f64,
    pub holds: bool,
}

/// Compares stage-2 GDR and IPTW gradients for arm `a` with the target
/// evaluated at `target` (typically a copy of the frozen outcome nuisance).
///
/// The pseudo-outcome integral uses the deterministic quadrature rule, so
/// this requires a one-dimensional CNF nuisance.
pub fn iptw_equivalence_check(
    target: &GenerativeModel,
    nuis: &NuisanceEstimates,
    ds: &PODataset,
    rows: &[usize],
    a: u8,
    tolerance: f64,
) -> Result<EquivalenceReport> {
    let identity = ds.v_mask.len() == ds.d_x && ds.v_mask.iter().enumerate().all(|(i, &m)| i == m);
    if !identity {
        return Err(LossError::Mask("IPTW equivalence requires V = X".into()));
    }
    let mut gdr = LossContext::new(LossKind::Gdr, ds, Some(nuis));
    gdr.pseudo = PseudoMode::Quadrature { nodes_per_panel: 16 };
    let iptw = LossContext::new(LossKind::Iptw, ds, Some(nuis));
    let (_, g_gdr) = batch_gradient(target, target.params(), &gdr, rows, &[a], false, 0, Exec::Sequential)?;
    let (_, g_iptw) = batch_gradient(target, target.params(), &iptw, rows, &[a], false, 0, Exec::Sequential)?;
    let diff = g_gdr.iter().zip(&g_iptw).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm = g_iptw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rel = if norm > 0.0 { diff / norm } else { f64::INFINITY };
    Ok(EquivalenceReport {
        relative_difference: rel,
        iptw_norm: norm,
        tolerance,
        holds: norm > 0.0 && rel <= tolerance,
    })
}
