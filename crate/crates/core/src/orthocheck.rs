//! Exact checks of the risk identities, Neyman-orthogonality and double
//! robustness on enumerable DGPs.
//!
//! Every risk here is a population quantity computed by exact summation over
//! a [`ToyTables`] law. Target models are tabular exponential families
//! `g_θ(y | v) ∝ exp(θ_v · φ(y))` on a coarsening `v = V(x)`, so all learners
//! reduce to `max_g Σ_{v,y} C(v, y) log g(y | v)` for a loss-specific weight
//! table `C`, solved by damped Newton iteration.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{enumerate_toy_dgp, DataError, DiscreteToyDGP, ToyTables};
use crate::exec::Exec;
use crate::losses::LossKind;
use crate::nuisance::TabularNuisance;
use crate::rng::{self, Rng};

#[derive(Debug, Error)]
pub enum OrthoError {
    #[error("not enumerable: {0}")]
    NotEnumerable(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid perturbation: {0}")]
    InvalidPerturbation(String),
    #[error("solver did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T> = std::result::Result<T, OrthoError>;

pub const SOLVER_TOL: f64 = 1e-12;
const SOLVER_MAX_ITER: usize = 200;
pub const DEFAULT_STEP: f64 = 1e-3;
/// Absolute floor on the cross-derivative tolerance: the cancellation error of
/// a four-point stencil at the default step.
const CANCELLATION_FLOOR: f64 = 1e-9;

/// Maps each covariate index to a target conditioning index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coarsening {
    pub v_of_x: Vec<usize>,
    pub nv: usize,
}

impl Coarsening {
    pub fn identity(nx: usize) -> Self {
        Coarsening {
            v_of_x: (0..nx).collect(),
            nv: nx,
        }
    }

    /// `v = x mod nv`.
    pub fn modulo(nx: usize, nv: usize) -> Self {
        Coarsening {
            v_of_x: (0..nx).map(|x| x % nv).collect(),
            nv,
        }
    }

    pub fn p_v(&self, p_x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.nv];
        for (x, &px) in p_x.iter().enumerate() {
            p[self.v_of_x[x]] += px;
        }
        p
    }
}

/// Exponential family over `{0, .., ny-1}` with sufficient statistics `φ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularClass {
    pub ny: usize,
    /// `features[y][k]`
    pub features: Vec<Vec<f64>>,
}

impl TabularClass {
    /// The whole simplex (indicator features for `y = 1..ny`).
    pub fn full(ny: usize) -> Self {
        let features = (0..ny)
            .map(|y| (1..ny).map(|k| if y == k { 1.0 } else { 0.0 }).collect())
            .collect();
        TabularClass { ny, features }
    }

    /// Polynomial features `z, z², .., z^degree` of `z = 2y/(ny-1) - 1`.
    pub fn polynomial(ny: usize, degree: usize) -> Self {
        let features = (0..ny)
            .map(|y| {
                let z = if ny > 1 { 2.0 * y as f64 / (ny - 1) as f64 - 1.0 } else { 0.0 };
                (1..=degree).map(|k| z.powi(k as i32)).collect()
            })
            .collect();
        TabularClass { ny, features }
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, |f| f.len())
    }

    pub fn density(&self, theta: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .features
            .iter()
            .map(|f| f.iter().zip(theta).map(|(a, b)| a * b).sum())
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }

    fn objective(&self, c: &[f64], theta: &[f64]) -> f64 {
        self.density(theta).iter().zip(c).map(|(g, c)| c * g.ln()).sum()
    }

    /// `argmax_θ Σ_y c_y log g_θ(y)`; requires `Σ c_y > 0`.
    pub fn fit(&self, c: &[f64]) -> Result<Vec<f64>> {
        if c.len() != self.ny {
            return Err(OrthoError::Dimension(format!("{} weights for {} outcomes", c.len(), self.ny)));
        }
        let total: f64 = c.iter().sum();
        if !(total > 0.0) {
            return Err(OrthoError::DegenerateFit(format!("total weight {total} is not positive")));
        }
        let k = self.dim();
        let target: DVector<f64> =
            DVector::from_fn(k, |j, _| (0..self.ny).map(|y| c[y] * self.features[y][j]).sum::<f64>() / total);
        let mut theta = vec![0.0; k];
        let mut value = self.objective(c, &theta);
        for _ in 0..SOLVER_MAX_ITER {
            let g = self.density(&theta);
            let mean = DVector::from_fn(k, |j, _| (0..self.ny).map(|y| g[y] * self.features[y][j]).sum());
            let grad = &target - &mean;
            if grad.amax() <= SOLVER_TOL {
                return Ok(theta);
            }
            let cov = DMatrix::from_fn(k, k, |i, j| {
                (0..self.ny)
                    .map(|y| g[y] * (self.features[y][i] - mean[i]) * (self.features[y][j] - mean[j]))
                    .sum()
            });
            let dir = match cov.cholesky() {
                Some(ch) => ch.solve(&grad),
                None => grad.clone(),
            };
            let mut step = 1.0;
            loop {
                let cand: Vec<f64> = theta.iter().zip(dir.iter()).map(|(t, d)| t + step * d).collect();
                let v = self.objective(c, &cand);
                if v >= value - 1e-15 * value.abs() || step < 1e-12 {
                    theta = cand;
                    value = v;
                    break;
                }
                step *= 0.5;
            }
            if !theta.iter().all(|t| t.is_finite()) {
                break;
            }
        }
        let g = self.density(&theta);
        let grad_norm = (0..k)
            .map(|j| (target[j] - (0..self.ny).map(|y| g[y] * self.features[y][j]).sum::<f64>()).abs())
            .fold(0.0, f64::max);
        Err(OrthoError::NoConvergence {
            iterations: SOLVER_MAX_ITER,
            grad_norm,
        })
    }
}

/// Conditional density table `dens[v][y]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularTarget {
    pub dens: Vec<Vec<f64>>,
}

impl TabularTarget {
    pub fn from_class(class: &TabularClass, thetas: &[Vec<f64>]) -> Self {
        TabularTarget {
            dens: thetas.iter().map(|t| class.density(t)).collect(),
        }
    }

    /// Random member of `class` with parameters uniform in `[-scale, scale]`.
    pub fn random(class: &TabularClass, nv: usize, scale: f64, rng: &mut Rng) -> Self {
        let thetas: Vec<Vec<f64>> = (0..nv)
            .map(|_| (0..class.dim()).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect())
            .collect();
        Self::from_class(class, &thetas)
    }

    /// `(1 - t) self + t other`.
    pub fn mix(&self, other: &TabularTarget, t: f64) -> Self {
        TabularTarget {
            dens: self
                .dens
                .iter()
                .zip(&other.dens)
                .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (1.0 - t) * p + t * q).collect())
                .collect(),
        }
    }

    /// `Σ_v p(v) Σ_y (self - other)²`.
    pub fn sq_distance(&self, other: &TabularTarget, p_v: &[f64]) -> f64 {
        self.dens
            .iter()
            .zip(&other.dens)
            .zip(p_v)
            .map(|((a, b), pv)| pv * a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>())
            .sum()
    }

    pub fn max_abs_difference(&self, other: &TabularTarget) -> f64 {
        self.dens
            .iter()
            .zip(&other.dens)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max)
    }
}

/// Exact nuisance tables of a law.
pub fn true_nuisance(t: &ToyTables) -> TabularNuisance {
    TabularNuisance {
        pi1: t.pi.iter().map(|p| p[1]).collect(),
        xi: t.xi.clone(),
    }
}

fn arm_pi(eta: &TabularNuisance, x: usize, a: u8) -> f64 {
    if a == 1 {
        eta.pi1[x]
    } else {
        1.0 - eta.pi1[x]
    }
}

/// The weighted combination `ŵ(ξ - ξ̂) + ξ̂` for arm `a`.
#[derive(Clone, Debug, PartialEq)]
pub struct DRPseudoDistribution {
    pub a: u8,
    /// `table[x][a_obs][y]`
    pub table: Vec<[Vec<f64>; 2]>,
    /// Sign of the correction term; `-1` is a deliberate mutation.
    pub correction_sign: f64,
}

impl DRPseudoDistribution {
    pub fn new(t: &ToyTables, eta_hat: &TabularNuisance, a: u8) -> Self {
        Self::with_sign(t, eta_hat, a, 1.0)
    }

    pub fn with_sign(t: &ToyTables, eta_hat: &TabularNuisance, a: u8, correction_sign: f64) -> Self {
        let ai = a as usize;
        let table = (0..t.nx)
            .map(|x| {
                let pi_hat = arm_pi(eta_hat, x, a);
                [0u8, 1].map(|a_obs| {
                    let w = if a_obs == a { 1.0 / pi_hat } else { 0.0 };
                    (0..t.ny)
                        .map(|y| {
                            let xi_hat = eta_hat.xi[ai][x][y];
                            correction_sign * w * (t.xi[ai][x][y] - xi_hat) + xi_hat
                        })
                        .collect()
                })
            })
            .collect();
        DRPseudoDistribution {
            a,
            table,
            correction_sign,
        }
    }

    pub fn mass(&self, x: usize, a_obs: u8) -> f64 {
        self.table[x][a_obs as usize].iter().sum()
    }

    /// `E[ξ̃ | X = x]` under the true treatment law.
    pub fn averaged(&self, t: &ToyTables, x: usize) -> Vec<f64> {
        (0..t.ny)
            .map(|y| t.pi[x][0] * self.table[x][0][y] + t.pi[x][1] * self.table[x][1][y])
            .collect()
    }
}

/// Weight table `C[v][y]` such that the population risk of `kind` under the
/// true law with nuisance `eta_hat` is `Σ C log g`.
pub fn risk_weights(
    t: &ToyTables,
    coarse: &Coarsening,
    kind: LossKind,
    a: u8,
    eta_hat: &TabularNuisance,
) -> Vec<Vec<f64>> {
    risk_weights_signed(t, coarse, kind, a, eta_hat, 1.0)
}

pub fn risk_weights_signed(
    t: &ToyTables,
    coarse: &Coarsening,
    kind: LossKind,
    a: u8,
    eta_hat: &TabularNuisance,
    correction_sign: f64,
) -> Vec<Vec<f64>> {
    let ai = a as usize;
    let mut c = vec![vec![0.0; t.ny]; coarse.nv];
    let dr = (kind == LossKind::Gdr).then(|| DRPseudoDistribution::with_sign(t, eta_hat, a, correction_sign));
    for x in 0..t.nx {
        let v = coarse.v_of_x[x];
        let pi = t.pi[x][ai];
        let pi_hat = arm_pi(eta_hat, x, a);
        let row: Vec<f64> = match kind {
            LossKind::PlugIn => t.xi[ai][x].iter().map(|xi| pi * xi).collect(),
            LossKind::Ra => (0..t.ny)
                .map(|y| pi * t.xi[ai][x][y] + (1.0 - pi) * eta_hat.xi[ai][x][y])
                .collect(),
            LossKind::Iptw => t.xi[ai][x].iter().map(|xi| pi / pi_hat * xi).collect(),
            LossKind::Gdr => dr.as_ref().expect("built for gdr").averaged(t, x),
        };
        for y in 0..t.ny {
            c[v][y] += t.p_x[x] * row[y];
        }
    }
    c
}

pub fn risk_value(c: &[Vec<f64>], g: &TabularTarget) -> f64 {
    c.iter()
        .zip(&g.dens)
        .map(|(cv, gv)| cv.iter().zip(gv).map(|(c, g)| c * g.ln()).sum::<f64>())
        .sum()
}

/// Maximizer of `Σ C log g` over `class`, one conditioning value at a time.
pub fn solve_target(class: &TabularClass, c: &[Vec<f64>]) -> Result<TabularTarget> {
    let thetas = c.iter().map(|cv| class.fit(cv)).collect::<Result<Vec<_>>>()?;
    Ok(TabularTarget::from_class(class, &thetas))
}

fn check_target(t: &ToyTables, coarse: &Coarsening, g: &TabularTarget) -> Result<()> {
    if coarse.v_of_x.len() != t.nx || g.dens.len() != coarse.nv || g.dens.iter().any(|d| d.len() != t.ny) {
        return Err(OrthoError::Dimension("target table does not match the DGP".into()));
    }
    if g.dens.iter().flatten().any(|p| !(*p > 0.0)) {
        return Err(OrthoError::DegenerateFit("target density must be positive".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    /// Expectation over the potential-outcome law.
    pub definition: f64,
    /// Outcome-regression form.
    pub regression: f64,
    /// Inverse-propensity-weighted form.
    pub iptw: f64,
    pub max_difference: f64,
}

/// The target risk of `g` computed three ways by exact summation.
pub fn risk_identification_check(
    dgp: &DiscreteToyDGP,
    coarse: &Coarsening,
    g: &TabularTarget,
    a: u8,
) -> Result<IdentificationReport> {
    if dgp.po_joint.is_none() {
        return Err(OrthoError::NotEnumerable("potential-outcome table is missing".into()));
    }
    let t = enumerate_toy_dgp(dgp)?;
    check_target(&t, coarse, g)?;
    let ai = a as usize;
    let lg = |x: usize, y: usize| g.dens[coarse.v_of_x[x]][y].ln();
    let mut definition = 0.0;
    let mut regression = 0.0;
    for x in 0..t.nx {
        let cdpo = dgp.cdpo_from_po(a, x).expect("checked");
        for y in 0..t.ny {
            definition += t.p_x[x] * cdpo[y] * lg(x, y);
            regression += t.p_x[x] * t.xi[ai][x][y] * lg(x, y);
        }
    }
    let iptw: f64 = t
        .cells
        .iter()
        .filter(|c| c.1 == a)
        .map(|&(x, _, y, p)| p / t.pi[x][ai] * lg(x, y))
        .sum();
    let vals = [definition, regression, iptw];
    let max_difference = vals
        .iter()
        .flat_map(|u| vals.iter().map(move |v| (u - v).abs()))
        .fold(0.0, f64::max);
    Ok(IdentificationReport {
        definition,
        regression,
        iptw,
        max_difference,
    })
}

/// Negative conditional entropy `Σ_x p(x) Σ_y ξ log ξ` of arm `a`.
pub fn negative_conditional_entropy(t: &ToyTables, a: u8) -> f64 {
    (0..t.nx)
        .map(|x| t.p_x[x] * t.xi[a as usize][x].iter().map(|p| p * p.ln()).sum::<f64>())
        .sum()
}

/// `E[IF]` under the true law, where the influence function of the target
/// risk is built from nuisance `eta`. Zero when `eta` is exact; otherwise the
/// bias of the one-step corrected risk.
pub fn eif_mean(t: &ToyTables, coarse: &Coarsening, g: &TabularTarget, a: u8, eta: &TabularNuisance) -> f64 {
    let ai = a as usize;
    let lg = |x: usize, y: usize| g.dens[coarse.v_of_x[x]][y].ln();
    let m = |x: usize| -> f64 { (0..t.ny).map(|y| eta.xi[ai][x][y] * lg(x, y)).sum() };
    let truth = risk_value(&risk_weights(t, coarse, LossKind::Ra, a, &true_nuisance(t)), g);
    t.cells
        .iter()
        .map(|&(x, a_obs, y, p)| {
            let w = if a_obs == a { 1.0 / arm_pi(eta, x, a) } else { 0.0 };
            let mx = m(x);
            p * (w * (lg(x, y) - mx) + mx - truth)
        })
        .sum()
}

pub fn eif_mean_zero_check(t: &ToyTables, coarse: &Coarsening, g: &TabularTarget, a: u8) -> f64 {
    eif_mean(t, coarse, g, a, &true_nuisance(t)).abs()
}

/// Which nuisance components move along the path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Components {
    Both,
    OutcomeOnly,
    PropensityOnly,
}

/// Directions `g - g*` and `η̂ - η`, the latter restricted to `components`,
/// with step magnitude used for both `t` and `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationSpec {
    pub g_endpoint: TabularTarget,
    pub eta_endpoint: TabularNuisance,
    pub components: Components,
    pub step: f64,
}

/// `η + s(η̂ - η)` on the selected components.
pub fn interpolate_nuisance(
    eta: &TabularNuisance,
    eta_hat: &TabularNuisance,
    s: f64,
    components: Components,
) -> Result<TabularNuisance> {
    let move_pi = components != Components::OutcomeOnly;
    let move_xi = components != Components::PropensityOnly;
    let lerp = |p: f64, q: f64| p + s * (q - p);
    let pi1: Vec<f64> = if move_pi {
        eta.pi1.iter().zip(&eta_hat.pi1).map(|(p, q)| lerp(*p, *q)).collect()
    } else {
        eta.pi1.clone()
    };
    if pi1.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(OrthoError::InvalidPerturbation(format!("propensity leaves (0, 1) at s = {s}")));
    }
    let xi = if move_xi {
        [0, 1].map(|a| {
            eta.xi[a]
                .iter()
                .zip(&eta_hat.xi[a])
                .map(|(r, q)| r.iter().zip(q).map(|(p, q)| lerp(*p, *q)).collect())
                .collect()
        })
    } else {
        eta.xi.clone()
    };
    if xi.iter().flatten().flatten().any(|p: &f64| *p < 0.0) {
        return Err(OrthoError::InvalidPerturbation(format!("outcome density negative at s = {s}")));
    }
    Ok(TabularNuisance { pi1, xi })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeEstimate {
    /// Central difference at the coarse step.
    pub value: f64,
    pub steps: [f64; 2],
    pub extrapolated: f64,
    /// `|D_h - D_{h/2}| / 3`.
    pub error: f64,
}

/// Mixed central difference of `f` at the origin.
pub fn cross_difference(f: impl Fn(f64, f64) -> Result<f64>, h: f64) -> Result<f64> {
    Ok((f(h, h)? - f(h, -h)? - f(-h, h)? + f(-h, -h)?) / (4.0 * h * h))
}

pub fn richardson_cross(f: impl Fn(f64, f64) -> Result<f64>, h: f64) -> Result<DerivativeEstimate> {
    if !(h > 0.0) {
        return Err(OrthoError::InvalidPerturbation(format!("step must be positive, got {h}")));
    }
    let d1 = cross_difference(&f, h)?;
    let d2 = cross_difference(&f, h / 2.0)?;
    Ok(DerivativeEstimate {
        value: d1,
        steps: [h, h / 2.0],
        extrapolated: (4.0 * d2 - d1) / 3.0,
        error: (d1 - d2).abs() / 3.0,
    })
}

/// `D_η D_g L(g*, η)[g - g*, η̂ - η]` for the risk of `kind`.
pub fn pathwise_cross_derivative(
    t: &ToyTables,
    coarse: &Coarsening,
    g_star: &TabularTarget,
    spec: &PerturbationSpec,
    kind: LossKind,
    a: u8,
) -> Result<DerivativeEstimate> {
    pathwise_cross_derivative_signed(t, coarse, g_star, spec, kind, a, 1.0)
}

pub fn pathwise_cross_derivative_signed(
    t: &ToyTables,
    coarse: &Coarsening,
    g_star: &TabularTarget,
    spec: &PerturbationSpec,
    kind: LossKind,
    a: u8,
    correction_sign: f64,
) -> Result<DerivativeEstimate> {
    check_target(t, coarse, g_star)?;
    check_target(t, coarse, &spec.g_endpoint)?;
    let eta = true_nuisance(t);
    let f = |tt: f64, s: f64| -> Result<f64> {
        let eta_s = interpolate_nuisance(&eta, &spec.eta_endpoint, s, spec.components)?;
        let c = risk_weights_signed(t, coarse, kind, a, &eta_s, correction_sign);
        Ok(risk_value(&c, &g_star.mix(&spec.g_endpoint, tt)))
    };
    richardson_cross(f, spec.step)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub loss: LossKind,
    pub components: Components,
    pub epsilons: Vec<f64>,
    pub sq_distances: Vec<f64>,
    /// Least-squares slope of `log ‖ĝ - g*‖²` on `log ε`; absent when some
    /// distance is exactly zero.
    pub slope: Option<f64>,
    pub max_abs_difference: f64,
}

pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 || xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Re-solves the target under nuisances `η + ε(η̂ - η)` for each `ε` and
/// records the squared distance to the exact-nuisance optimum.
#[allow(clippy::too_many_arguments)]
pub fn remainder_scaling_study(
    t: &ToyTables,
    coarse: &Coarsening,
    class: &TabularClass,
    kind: LossKind,
    a: u8,
    eta_endpoint: &TabularNuisance,
    components: Components,
    epsilons: &[f64],
    correction_sign: f64,
) -> Result<ScalingReport> {
    if epsilons.len() < 3 {
        return Err(OrthoError::DegenerateFit(format!("{} grid points, need at least 3", epsilons.len())));
    }
    let eta = true_nuisance(t);
    let p_v = coarse.p_v(&t.p_x);
    let g_star = solve_target(class, &risk_weights_signed(t, coarse, kind, a, &eta, correction_sign))?;
    let mut sq = Vec::with_capacity(epsilons.len());
    let mut max_abs: f64 = 0.0;
    for &eps in epsilons {
        let eta_eps = interpolate_nuisance(&eta, eta_endpoint, eps, components)?;
        let g_hat = solve_target(class, &risk_weights_signed(t, coarse, kind, a, &eta_eps, correction_sign))?;
        sq.push(g_hat.sq_distance(&g_star, &p_v));
        max_abs = max_abs.max(g_hat.max_abs_difference(&g_star));
    }
    Ok(ScalingReport {
        loss: kind,
        components,
        epsilons: epsilons.to_vec(),
        slope: log_log_slope(epsilons, &sq),
        sq_distances: sq,
        max_abs_difference: max_abs,
    })
}

/// Random nuisance tables with `pi1 ∈ [overlap, 1 - overlap]` and outcome
/// probabilities bounded away from zero.
pub fn random_nuisance(nx: usize, ny: usize, overlap: f64, rng: &mut Rng) -> TabularNuisance {
    let pi1 = (0..nx)
        .map(|_| overlap + (1.0 - 2.0 * overlap) * rng.random::<f64>())
        .collect();
    let xi = [0, 1].map(|_| {
        (0..nx)
            .map(|_| {
                let raw: Vec<f64> = (0..ny).map(|_| 0.2 + rng.random::<f64>()).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|p| p / s).collect()
            })
            .collect()
    });
    TabularNuisance { pi1, xi }
}

// ---------------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    #[serde(with = "crate::nullable")]
    pub value: f64,
    /// Inclusive bounds the value must respect.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub pass: bool,
    pub error: Option<String>,
}

impl CheckRecord {
    pub fn at_most(name: impl Into<String>, value: f64, upper: f64) -> Self {
        Self::within(name, value, None, Some(upper))
    }

    pub fn at_least(name: impl Into<String>, value: f64, lower: f64) -> Self {
        Self::within(name, value, Some(lower), None)
    }

    pub fn within(name: impl Into<String>, value: f64, lower: Option<f64>, upper: Option<f64>) -> Self {
        let pass = value.is_finite() && lower.is_none_or(|l| value >= l) && upper.is_none_or(|u| value <= u);
        CheckRecord {
            name: name.into(),
            value,
            lower,
            upper,
            pass,
            error: None,
        }
    }

    fn failed(name: impl Into<String>, err: &OrthoError) -> Self {
        log::warn!("orthocheck: {err}");
        CheckRecord {
            name: name.into(),
            value: f64::NAN,
            lower: None,
            upper: None,
            pass: false,
            error: Some(err.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub seed: u64,
    pub n_dgps: usize,
    pub nx: usize,
    pub ny: usize,
    pub nv: usize,
    pub degree: usize,
    pub overlap: f64,
    pub step: f64,
    pub epsilons: Vec<f64>,
    /// Flips the sign of the GDR correction term (mutation test hook).
    pub inject_sign_error: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 0,
            n_dgps: 5,
            nx: 6,
            ny: 5,
            nv: 3,
            degree: 2,
            overlap: 0.2,
            step: DEFAULT_STEP,
            epsilons: vec![0.02, 0.04, 0.08, 0.16],
            inject_sign_error: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OrthoReport {
    pub seed: u64,
    pub records: Vec<CheckRecord>,
}

impl OrthoReport {
    pub fn all_passed(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRecord> {
        self.records.iter().filter(|r| !r.pass)
    }
}

fn push(records: &mut Vec<CheckRecord>, name: String, r: Result<CheckRecord>) {
    match r {
        Ok(rec) => records.push(rec),
        Err(e) => records.push(CheckRecord::failed(name, &e)),
    }
}

fn dgp_checks(cfg: &SuiteConfig, i: usize) -> Vec<CheckRecord> {
    let sign = if cfg.inject_sign_error { -1.0 } else { 1.0 };
    let mut rng = rng::stream(rng::derive_seed(cfg.seed, i as u64), 0x0C7A);
    let dgp = DiscreteToyDGP::random(cfg.nx, cfg.ny, cfg.overlap, &mut rng);
    let mut out = Vec::new();
    let t = match enumerate_toy_dgp(&dgp) {
        Ok(t) => t,
        Err(e) => {
            out.push(CheckRecord::failed(format!("dgp{i}/enumerate"), &e.into()));
            return out;
        }
    };
    let coarse = Coarsening::modulo(cfg.nx, cfg.nv);
    let class = TabularClass::polynomial(cfg.ny, cfg.degree);
    let g = TabularTarget::random(&class, cfg.nv, 1.0, &mut rng);
    let eta_hat = random_nuisance(cfg.nx, cfg.ny, cfg.overlap, &mut rng);
    let a = (i % 2) as u8;

    let name = format!("dgp{i}/risk_identification");
    push(
        &mut out,
        name.clone(),
        risk_identification_check(&dgp, &coarse, &g, a).map(|r| CheckRecord::at_most(name, r.max_difference, 1e-12)),
    );
    out.push(CheckRecord::at_most(
        format!("dgp{i}/eif_mean_zero"),
        eif_mean_zero_check(&t, &coarse, &g, a),
        1e-12,
    ));

    let eta = true_nuisance(&t);
    let cross = |kind: LossKind, components: Components| -> Result<DerivativeEstimate> {
        let g_star = solve_target(&class, &risk_weights_signed(&t, &coarse, kind, a, &eta, sign))?;
        let spec = PerturbationSpec {
            g_endpoint: g.clone(),
            eta_endpoint: eta_hat.clone(),
            components,
            step: cfg.step,
        };
        pathwise_cross_derivative_signed(&t, &coarse, &g_star, &spec, kind, a, sign)
    };
    let gdr = cross(LossKind::Gdr, Components::Both);
    let name = format!("dgp{i}/gdr_cross_derivative");
    push(
        &mut out,
        name.clone(),
        gdr.as_ref()
            .map(|d| CheckRecord::at_most(name, d.extrapolated.abs(), 10.0 * d.error.max(CANCELLATION_FLOOR)))
            .map_err(|e| OrthoError::DegenerateFit(e.to_string())),
    );
    let name = format!("dgp{i}/ra_outcome_cross_derivative");
    let ra = cross(LossKind::Ra, Components::OutcomeOnly).map(|d| {
        let floor = gdr.as_ref().map_or(0.0, |g| g.extrapolated.abs());
        CheckRecord::at_least(name.clone(), d.extrapolated.abs(), 10.0 * d.error.max(floor))
    });
    push(&mut out, name, ra);

    for (label, components) in [
        ("propensity_only", Components::PropensityOnly),
        ("outcome_only", Components::OutcomeOnly),
    ] {
        let name = format!("dgp{i}/double_robust_{label}");
        let r = remainder_scaling_study(
            &t,
            &coarse,
            &class,
            LossKind::Gdr,
            a,
            &eta_hat,
            components,
            &cfg.epsilons,
            sign,
        )
        .map(|r| CheckRecord::at_most(name.clone(), r.max_abs_difference, 1e-8));
        push(&mut out, name, r);
    }
    out
}

/// GDR and RA remainder studies with both nuisances perturbed, on the
/// suite's scaling DGP.
pub fn scaling_studies(cfg: &SuiteConfig) -> Result<Vec<ScalingReport>> {
    let sign = if cfg.inject_sign_error { -1.0 } else { 1.0 };
    let mut rng = rng::stream(rng::derive_seed(cfg.seed, 0), 0x0C7A);
    let dgp = DiscreteToyDGP::random(cfg.nx, cfg.ny, cfg.overlap, &mut rng);
    let t = enumerate_toy_dgp(&dgp)?;
    let coarse = Coarsening::modulo(cfg.nx, cfg.nv);
    let class = TabularClass::polynomial(cfg.ny, cfg.degree);
    let mut drng = rng::stream(cfg.seed, 0x5CA1E);
    let eta_hat = random_nuisance(cfg.nx, cfg.ny, cfg.overlap, &mut drng);
    [LossKind::Gdr, LossKind::Ra]
        .into_iter()
        .map(|kind| remainder_scaling_study(&t, &coarse, &class, kind, 0, &eta_hat, Components::Both, &cfg.epsilons, sign))
        .collect()
}

fn scaling_checks(cfg: &SuiteConfig) -> Vec<CheckRecord> {
    match scaling_studies(cfg) {
        Ok(reports) => reports
            .iter()
            .map(|r| {
                let (lo, hi) = if r.loss == LossKind::Gdr { (3.5, 4.5) } else { (1.5, 2.5) };
                CheckRecord::within(
                    format!("scaling/{}_slope", r.loss),
                    r.slope.unwrap_or(f64::NAN),
                    Some(lo),
                    Some(hi),
                )
            })
            .collect(),
        Err(e) => vec![CheckRecord::failed("scaling/study", &e)],
    }
}

/// Runs every check on `n_dgps` random enumerable DGPs plus the remainder
/// scaling study.
pub fn run_suite(cfg: &SuiteConfig, exec: Exec) -> OrthoReport {
    let mut records: Vec<CheckRecord> = exec.map(cfg.n_dgps, |i| dgp_checks(cfg, i)).into_iter().flatten().collect();
    records.extend(scaling_checks(cfg));
    OrthoReport {
        seed: cfg.seed,
        records,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(seed: u64) -> (DiscreteToyDGP, ToyTables) {
        let dgp = DiscreteToyDGP::random(4, 3, 0.2, &mut rng::stream(seed, 1));
        let t = enumerate_toy_dgp(&dgp).unwrap();
        (dgp, t)
    }

    #[test]
    fn full_class_fit_recovers_normalized_weights() {
        let class = TabularClass::full(4);
        let c = [0.1, 0.4, 0.2, 0.3];
        let g = class.density(&class.fit(&c).unwrap());
        for (p, q) in g.iter().zip(&c) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn polynomial_fit_matches_moments() {
        let class = TabularClass::polynomial(5, 2);
        let c = [0.05, 0.3, 0.1, 0.35, 0.2];
        let g = class.density(&class.fit(&c).unwrap());
        for k in 0..2 {
            let lhs: f64 = (0..5).map(|y| c[y] * class.features[y][k]).sum();
            let rhs: f64 = (0..5).map(|y| g[y] * class.features[y][k]).sum();
            assert!((lhs - rhs).abs() < 1e-11);
        }
    }

    #[test]
    fn fit_rejects_nonpositive_mass() {
        assert!(TabularClass::full(2).fit(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn missing_po_table_is_rejected() {
        let (mut dgp, _) = toy(1);
        dgp.po_joint = None;
        let g = TabularTarget {
            dens: vec![vec![1.0 / 3.0; 3]; 4],
        };
        assert!(matches!(
            risk_identification_check(&dgp, &Coarsening::identity(4), &g, 0),
            Err(OrthoError::NotEnumerable(_))
        ));
    }

    #[test]
    fn true_outcome_gives_negative_entropy() {
        let (dgp, t) = toy(2);
        for a in 0..2u8 {
            let g = TabularTarget {
                dens: t.xi[a as usize].clone(),
            };
            let r = risk_identification_check(&dgp, &Coarsening::identity(4), &g, a).unwrap();
            assert!((r.regression - negative_conditional_entropy(&t, a)).abs() < 1e-12);
        }
    }

    #[test]
    fn pseudo_distribution_reduces_to_truth_at_true_nuisance() {
        let (_, t) = toy(3);
        let dr = DRPseudoDistribution::new(&t, &true_nuisance(&t), 1);
        for x in 0..t.nx {
            let avg = dr.averaged(&t, x);
            for y in 0..t.ny {
                assert!((avg[y] - t.xi[1][x][y]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn pseudo_distribution_rows_have_unit_mass() {
        let (_, t) = toy(4);
        let eta_hat = random_nuisance(t.nx, t.ny, 0.2, &mut rng::stream(4, 2));
        let dr = DRPseudoDistribution::new(&t, &eta_hat, 0);
        for x in 0..t.nx {
            for a_obs in 0..2 {
                assert!((dr.mass(x, a_obs) - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn richardson_is_exact_on_polynomials() {
        let d = richardson_cross(|t, s| Ok(3.0 * t * s + t * t * t * s + t * s * s * s), 0.1).unwrap();
        assert!((d.extrapolated - 3.0).abs() < 1e-10);
    }

    #[test]
    fn gdr_cross_difference_shrinks_quadratically() {
        let (_, t) = toy(5);
        let coarse = Coarsening::modulo(4, 2);
        let class = TabularClass::polynomial(3, 1);
        let mut r = rng::stream(5, 3);
        let g = TabularTarget::random(&class, 2, 1.0, &mut r);
        let eta_hat = random_nuisance(4, 3, 0.2, &mut r);
        let g_star = solve_target(&class, &risk_weights(&t, &coarse, LossKind::Gdr, 1, &true_nuisance(&t))).unwrap();
        let spec = PerturbationSpec {
            g_endpoint: g,
            eta_endpoint: eta_hat,
            components: Components::Both,
            step: 1e-2,
        };
        let d = pathwise_cross_derivative(&t, &coarse, &g_star, &spec, LossKind::Gdr, 1).unwrap();
        let ratio = d.value / cross_difference(
            |tt, s| {
                let eta_s = interpolate_nuisance(&true_nuisance(&t), &spec.eta_endpoint, s, spec.components)?;
                Ok(risk_value(&risk_weights(&t, &coarse, LossKind::Gdr, 1, &eta_s), &g_star.mix(&spec.g_endpoint, tt)))
            },
            5e-3,
        )
        .unwrap();
        assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn iptw_is_orthogonal_when_class_contains_truth() {
        let (_, t) = toy(6);
        let coarse = Coarsening::identity(4);
        let class = TabularClass::full(3);
        let mut r = rng::stream(6, 4);
        let g = TabularTarget::random(&class, 4, 1.0, &mut r);
        let eta_hat = random_nuisance(4, 3, 0.2, &mut r);
        let g_star = solve_target(&class, &risk_weights(&t, &coarse, LossKind::Iptw, 0, &true_nuisance(&t))).unwrap();
        let spec = PerturbationSpec {
            g_endpoint: g,
            eta_endpoint: eta_hat,
            components: Components::Both,
            step: DEFAULT_STEP,
        };
        let d = pathwise_cross_derivative(&t, &coarse, &g_star, &spec, LossKind::Iptw, 0).unwrap();
        assert!(d.extrapolated.abs() <= 10.0 * d.error.max(CANCELLATION_FLOOR), "{d:?}");
    }

    #[test]
    fn scaling_needs_three_points() {
        let (_, t) = toy(7);
        let r = remainder_scaling_study(
            &t,
            &Coarsening::identity(4),
            &TabularClass::full(3),
            LossKind::Gdr,
            0,
            &true_nuisance(&t),
            Components::Both,
            &[0.1, 0.2],
            1.0,
        );
        assert!(matches!(r, Err(OrthoError::DegenerateFit(_))));
    }

    #[test]
    fn default_suite_passes_and_sign_error_is_caught() {
        let cfg = SuiteConfig::default();
        let report = run_suite(&cfg, Exec::Sequential);
        let failures: Vec<_> = report.failures().collect();
        assert!(report.all_passed(), "{failures:#?}");
        let bad = run_suite(
            &SuiteConfig {
                inject_sign_error: true,
                ..cfg
            },
            Exec::Sequential,
        );
        assert!(bad.failures().any(|r| r.name.ends_with("gdr_cross_derivative")));
    }
}
