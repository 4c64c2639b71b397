//! Observational datasets: the noisy-moons benchmark generator, enumerable
//! discrete DGPs used as exact oracles, tabular file IO and covariate masking.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::sigmoid;
use crate::rng::{self, Rng};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: {msg}")]
    Schema { row: usize, msg: String },
    #[error("joint probability table is not normalized (total mass {0})")]
    Unnormalized(f64),
    #[error("covariate index {index} out of range for d_x = {d_x}")]
    MaskOutOfRange { index: usize, d_x: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationalSample {
    pub x: Vec<f64>,
    pub a: u8,
    pub y: Vec<f64>,
}

/// Ground-truth sampler for `P(Y[a] | X = x)`.
pub trait CdpoSampler: Send + Sync {
    fn sample(&self, x: &[f64], a: u8, count: usize, rng: &mut Rng) -> Vec<Vec<f64>>;
}

/// Joint potential outcomes `(y[0], y[1])` of one row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointPo {
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

impl JointPo {
    pub fn arm(&self, a: u8) -> &[f64] {
        if a == 0 {
            &self.y0
        } else {
            &self.y1
        }
    }
}

#[derive(Clone)]
pub struct PODataset {
    pub samples: Vec<ObservationalSample>,
    pub d_x: usize,
    pub d_y: usize,
    pub joint_po: Option<Vec<JointPo>>,
    pub ground_truth: Option<Arc<dyn CdpoSampler>>,
    pub v_mask: Vec<usize>,
}

impl fmt::Debug for PODataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PODataset")
            .field("n", &self.samples.len())
            .field("d_x", &self.d_x)
            .field("d_y", &self.d_y)
            .field("joint_po", &self.joint_po.is_some())
            .field("ground_truth", &self.ground_truth.is_some())
            .field("v_mask", &self.v_mask)
            .finish()
    }
}

impl PODataset {
    pub fn new(samples: Vec<ObservationalSample>, joint_po: Option<Vec<JointPo>>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| DataError::InvalidConfig("empty dataset".into()))?;
        let (d_x, d_y) = (first.x.len(), first.y.len());
        if d_x == 0 || d_y == 0 {
            return Err(DataError::Dimension("d_x and d_y must be at least 1".into()));
        }
        for (row, s) in samples.iter().enumerate() {
            if s.x.len() != d_x || s.y.len() != d_y {
                return Err(DataError::Schema {
                    row,
                    msg: "inconsistent dimensions".into(),
                });
            }
            if s.a > 1 {
                return Err(DataError::Schema {
                    row,
                    msg: format!("treatment must be 0 or 1, got {}", s.a),
                });
            }
            if s.x.iter().chain(&s.y).any(|v| !v.is_finite()) {
                return Err(DataError::Schema {
                    row,
                    msg: "non-finite value".into(),
                });
            }
        }
        if let Some(po) = &joint_po {
            if po.len() != samples.len() {
                return Err(DataError::Dimension("joint PO rows differ from samples".into()));
            }
            if po.iter().any(|p| p.y0.len() != d_y || p.y1.len() != d_y) {
                return Err(DataError::Dimension("joint PO columns must have length d_y".into()));
            }
        }
        Ok(PODataset {
            samples,
            d_x,
            d_y,
            joint_po,
            ground_truth: None,
            v_mask: (0..d_x).collect(),
        })
    }

    pub fn with_ground_truth(mut self, sampler: Arc<dyn CdpoSampler>) -> Self {
        self.ground_truth = Some(sampler);
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn arm_counts(&self) -> [usize; 2] {
        let n1 = self.samples.iter().filter(|s| s.a == 1).count();
        [self.samples.len() - n1, n1]
    }

    /// Rows selected by index, keeping ground truth and mask.
    pub fn subset(&self, idx: &[usize]) -> PODataset {
        PODataset {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            d_x: self.d_x,
            d_y: self.d_y,
            joint_po: self
                .joint_po
                .as_ref()
                .map(|po| idx.iter().map(|&i| po[i].clone()).collect()),
            ground_truth: self.ground_truth.clone(),
            v_mask: self.v_mask.clone(),
        }
    }

    pub fn set_v_mask(&mut self, mask: Vec<usize>) -> Result<()> {
        validate_mask(&mask, self.d_x)?;
        self.v_mask = mask;
        Ok(())
    }

    /// Conditioning view over this dataset's own mask.
    pub fn view(&self) -> ConditioningView<'_> {
        ConditioningView {
            ds: self,
            mask: self.v_mask.clone(),
        }
    }
}

fn validate_mask(mask: &[usize], d_x: usize) -> Result<()> {
    if mask.is_empty() {
        return Err(DataError::InvalidConfig("empty covariate mask".into()));
    }
    for &i in mask {
        if i >= d_x {
            return Err(DataError::MaskOutOfRange { index: i, d_x });
        }
    }
    Ok(())
}

/// Target models condition on `v = x[mask]`; nuisance models always read the
/// full `x`.
#[derive(Clone, Debug)]
pub struct ConditioningView<'a> {
    ds: &'a PODataset,
    mask: Vec<usize>,
}

pub fn apply_v_mask<'a>(ds: &'a PODataset, mask: &[usize]) -> Result<ConditioningView<'a>> {
    validate_mask(mask, ds.d_x)?;
    Ok(ConditioningView {
        ds,
        mask: mask.to_vec(),
    })
}

impl<'a> ConditioningView<'a> {
    pub fn dataset(&self) -> &'a PODataset {
        self.ds
    }

    pub fn mask(&self) -> &[usize] {
        &self.mask
    }

    pub fn d_v(&self) -> usize {
        self.mask.len()
    }

    pub fn is_identity(&self) -> bool {
        self.mask.len() == self.ds.d_x && self.mask.iter().enumerate().all(|(i, &m)| i == m)
    }

    pub fn v(&self, row: usize) -> Vec<f64> {
        project(&self.ds.samples[row].x, &self.mask)
    }

    pub fn x(&self, row: usize) -> &'a [f64] {
        &self.ds.samples[row].x
    }
}

pub fn project(x: &[f64], mask: &[usize]) -> Vec<f64> {
    mask.iter().map(|&i| x[i]).collect()
}

// ---------------------------------------------------------------------------
// Noisy moons
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoonsConfig {
    pub n_train: usize,
    pub n_test: usize,
    /// Std of the Gaussian jitter on covariates and on the pre-rotation
    /// outcome point.
    pub noise_scale: f64,
    /// Mean rotation angle (radians) for a = 0 and a = 1.
    pub angle_mean: [f64; 2],
    /// Std of the rotation angle for a = 0 and a = 1; 0 gives a point mass.
    pub angle_std: [f64; 2],
    /// Logistic assignment rule `logit P(A=1|x) = intercept + coef · x`.
    pub propensity_intercept: f64,
    pub propensity_coef: [f64; 2],
    /// Assignment probabilities are squeezed into `[overlap, 1 - overlap]`.
    pub overlap: f64,
    pub seed: u64,
}

impl Default for MoonsConfig {
    fn default() -> Self {
        MoonsConfig {
            n_train: 2000,
            n_test: 1000,
            noise_scale: 0.1,
            angle_mean: [-PI / 6.0, PI / 3.0],
            angle_std: [0.3, 0.6],
            propensity_intercept: -0.25,
            propensity_coef: [1.5, -2.0],
            overlap: 0.05,
            seed: 0,
        }
    }
}

impl MoonsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 {
            return Err(DataError::InvalidConfig("n_train must be positive".into()));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(DataError::InvalidConfig("noise_scale must be nonnegative".into()));
        }
        if self.angle_std.iter().any(|s| !(*s >= 0.0)) {
            return Err(DataError::InvalidConfig("angle_std must be nonnegative".into()));
        }
        if !(self.overlap > 0.0 && self.overlap < 0.5) {
            return Err(DataError::InvalidConfig("overlap must lie in (0, 0.5)".into()));
        }
        Ok(())
    }

    /// Analytic `P(A = 1 | x)`.
    pub fn propensity(&self, x: &[f64]) -> f64 {
        let logit = self.propensity_intercept
            + self.propensity_coef[0] * x[0]
            + self.propensity_coef[1] * x[1];
        self.overlap + (1.0 - 2.0 * self.overlap) * sigmoid(logit)
    }
}

/// Exact sampler of the moons potential outcomes: the jittered covariate
/// point rotated by a treatment-dependent Gaussian angle.
#[derive(Clone, Debug)]
pub struct MoonsSampler {
    pub cfg: MoonsConfig,
}

impl MoonsSampler {
    fn draw(&self, x: &[f64], a: u8, rng: &mut Rng) -> Vec<f64> {
        let a = a as usize;
        let phi = self.cfg.angle_mean[a] + self.cfg.angle_std[a] * rng::normal(rng);
        let px = x[0] + self.cfg.noise_scale * rng::normal(rng);
        let py = x[1] + self.cfg.noise_scale * rng::normal(rng);
        let (s, c) = phi.sin_cos();
        vec![c * px - s * py, s * px + c * py]
    }
}

impl CdpoSampler for MoonsSampler {
    fn sample(&self, x: &[f64], a: u8, count: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        (0..count).map(|_| self.draw(x, a, rng)).collect()
    }
}

fn moon_point(rng: &mut Rng, noise: f64) -> Vec<f64> {
    let u: f64 = rng.random::<f64>() * PI;
    let (x, y) = if rng.random::<bool>() {
        (u.cos(), u.sin())
    } else {
        (1.0 - u.cos(), 0.5 - u.sin())
    };
    vec![x + noise * rng::normal(rng), y + noise * rng::normal(rng)]
}

fn moons_rows(cfg: &MoonsConfig, n: usize, rng: &mut Rng) -> (Vec<ObservationalSample>, Vec<JointPo>) {
    let sampler = MoonsSampler { cfg: cfg.clone() };
    let mut samples = Vec::with_capacity(n);
    let mut po = Vec::with_capacity(n);
    for _ in 0..n {
        let x = moon_point(rng, cfg.noise_scale);
        let p1 = cfg.propensity(&x);
        let a = u8::from(rng.random::<f64>() < p1);
        let y0 = sampler.draw(&x, 0, rng);
        let y1 = sampler.draw(&x, 1, rng);
        let y = if a == 0 { y0.clone() } else { y1.clone() };
        samples.push(ObservationalSample { x, a, y });
        po.push(JointPo { y0, y1 });
    }
    (samples, po)
}

/// Train/test pair drawn from the moons DGP.
#[derive(Clone, Debug)]
pub struct MoonsData {
    pub train: PODataset,
    pub test: PODataset,
}

pub fn generate_moons_dataset(cfg: &MoonsConfig) -> Result<MoonsData> {
    cfg.validate()?;
    let sampler: Arc<dyn CdpoSampler> = Arc::new(MoonsSampler { cfg: cfg.clone() });
    let mut rng_train = rng::stream(cfg.seed, 1);
    let mut rng_test = rng::stream(cfg.seed, 2);
    let (s, p) = moons_rows(cfg, cfg.n_train, &mut rng_train);
    let train = PODataset::new(s, Some(p))?.with_ground_truth(sampler.clone());
    let test = if cfg.n_test > 0 {
        let (s, p) = moons_rows(cfg, cfg.n_test, &mut rng_test);
        PODataset::new(s, Some(p))?.with_ground_truth(sampler)
    } else {
        // keep the shape of an empty split
        PODataset {
            samples: vec![],
            d_x: 2,
            d_y: 2,
            joint_po: Some(vec![]),
            ground_truth: Some(sampler),
            v_mask: vec![0, 1],
        }
    };
    Ok(MoonsData { train, test })
}

// ---------------------------------------------------------------------------
// Enumerable discrete DGPs
// ---------------------------------------------------------------------------

/// Finite DGP over `X × {0,1} × Y`, stored as the joint `P(x, a, y)`.
///
/// When built from potential-outcome tables the joint law of
/// `(X, Y[0], Y[1])` is retained so the causal estimand can be computed
/// without going through identification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteToyDGP {
    pub x_support: Vec<f64>,
    pub y_support: Vec<f64>,
    /// `joint[(x * 2 + a) * ny + y]`
    pub joint: Vec<f64>,
    /// `po_joint[(x * ny + y0) * ny + y1] = P(X=x, Y[0]=y0, Y[1]=y1)`
    pub po_joint: Option<Vec<f64>>,
}

/// Exact marginal and conditional tables of a [`DiscreteToyDGP`].
#[derive(Clone, Debug, PartialEq)]
pub struct ToyTables {
    pub nx: usize,
    pub ny: usize,
    pub p_x: Vec<f64>,
    /// `pi[x][a] = P(A=a | X=x)`
    pub pi: Vec<[f64; 2]>,
    /// `xi[a][x][y] = P(Y=y | X=x, A=a)`
    pub xi: [Vec<Vec<f64>>; 2],
    /// All `(x, a, y, probability)` cells with positive mass.
    pub cells: Vec<(usize, u8, usize, f64)>,
}

const NORMALIZATION_TOL: f64 = 1e-12;

impl DiscreteToyDGP {
    pub fn nx(&self) -> usize {
        self.x_support.len()
    }

    pub fn ny(&self) -> usize {
        self.y_support.len()
    }

    pub fn p(&self, x: usize, a: u8, y: usize) -> f64 {
        self.joint[(x * 2 + a as usize) * self.ny() + y]
    }

    /// Builds the observational joint from `P(X)`, `P(A=1|X)` and the joint
    /// law of the potential outcomes given `X` (unconfoundedness and
    /// consistency hold by construction).
    pub fn from_potential_outcomes(
        x_support: Vec<f64>,
        y_support: Vec<f64>,
        p_x: &[f64],
        pi1: &[f64],
        po_given_x: &[Vec<Vec<f64>>],
    ) -> Result<Self> {
        let (nx, ny) = (x_support.len(), y_support.len());
        if p_x.len() != nx || pi1.len() != nx || po_given_x.len() != nx {
            return Err(DataError::Dimension("tables disagree with supports".into()));
        }
        let mut joint = vec![0.0; nx * 2 * ny];
        let mut po_joint = vec![0.0; nx * ny * ny];
        for x in 0..nx {
            for y0 in 0..ny {
                for y1 in 0..ny {
                    let q = po_given_x[x][y0][y1];
                    po_joint[(x * ny + y0) * ny + y1] = p_x[x] * q;
                    joint[(x * 2) * ny + y0] += p_x[x] * (1.0 - pi1[x]) * q;
                    joint[(x * 2 + 1) * ny + y1] += p_x[x] * pi1[x] * q;
                }
            }
        }
        let dgp = DiscreteToyDGP {
            x_support,
            y_support,
            joint,
            po_joint: Some(po_joint),
        };
        dgp.check_normalized()?;
        Ok(dgp)
    }

    /// Random DGP with `P(A=1|x) ∈ [overlap, 1 - overlap]` and all outcome
    /// probabilities bounded away from zero.
    pub fn random(nx: usize, ny: usize, overlap: f64, rng: &mut Rng) -> Self {
        let x_support = (0..nx).map(|i| i as f64).collect();
        let y_support = (0..ny).map(|i| i as f64).collect();
        let p_x = normalized((0..nx).map(|_| 0.5 + rng.random::<f64>()).collect());
        let pi1: Vec<f64> = (0..nx)
            .map(|_| overlap + (1.0 - 2.0 * overlap) * rng.random::<f64>())
            .collect();
        let po: Vec<Vec<Vec<f64>>> = (0..nx)
            .map(|_| {
                let flat = normalized((0..ny * ny).map(|_| 0.2 + rng.random::<f64>()).collect());
                flat.chunks(ny).map(|c| c.to_vec()).collect()
            })
            .collect();
        Self::from_potential_outcomes(x_support, y_support, &p_x, &pi1, &po)
            .expect("random tables are consistent")
    }

    pub fn check_normalized(&self) -> Result<()> {
        if self.joint.len() != self.nx() * 2 * self.ny() {
            return Err(DataError::Dimension("joint table has wrong length".into()));
        }
        if self.joint.iter().any(|p| !(*p >= 0.0)) {
            return Err(DataError::InvalidConfig("negative probability".into()));
        }
        let total: f64 = self.joint.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(DataError::Unnormalized(total));
        }
        Ok(())
    }

    /// True CDPO `P(Y[a] = y | X = x)` from the potential-outcome table, when
    /// present.
    pub fn cdpo_from_po(&self, a: u8, x: usize) -> Option<Vec<f64>> {
        let po = self.po_joint.as_ref()?;
        let ny = self.ny();
        let px: f64 = po[x * ny * ny..(x + 1) * ny * ny].iter().sum();
        let mut out = vec![0.0; ny];
        for y0 in 0..ny {
            for y1 in 0..ny {
                let p = po[(x * ny + y0) * ny + y1];
                out[if a == 0 { y0 } else { y1 }] += p / px;
            }
        }
        Some(out)
    }
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|p| p / s).collect()
}

pub fn enumerate_toy_dgp(dgp: &DiscreteToyDGP) -> Result<ToyTables> {
    dgp.check_normalized()?;
    let (nx, ny) = (dgp.nx(), dgp.ny());
    let mut p_x = vec![0.0; nx];
    let mut pi = vec![[0.0; 2]; nx];
    let mut xi = [vec![vec![0.0; ny]; nx], vec![vec![0.0; ny]; nx]];
    let mut cells = Vec::new();
    for x in 0..nx {
        let mut p_xa = [0.0; 2];
        for a in 0..2u8 {
            for y in 0..ny {
                let p = dgp.p(x, a, y);
                p_xa[a as usize] += p;
                if p > 0.0 {
                    cells.push((x, a, y, p));
                }
            }
        }
        p_x[x] = p_xa[0] + p_xa[1];
        if p_x[x] <= 0.0 {
            return Err(DataError::InvalidConfig(format!("x = {x} has zero mass")));
        }
        for a in 0..2usize {
            pi[x][a] = p_xa[a] / p_x[x];
            if p_xa[a] <= 0.0 {
                return Err(DataError::InvalidConfig(format!(
                    "overlap violated at x = {x}, a = {a}"
                )));
            }
            for y in 0..ny {
                xi[a][x][y] = dgp.p(x, a as u8, y) / p_xa[a];
            }
        }
    }
    Ok(ToyTables {
        nx,
        ny,
        p_x,
        pi,
        xi,
        cells,
    })
}

/// Draws `n` index-coded observations `(x, a, y)` from a discrete DGP.
pub fn sample_toy(dgp: &DiscreteToyDGP, n: usize, rng: &mut Rng) -> Vec<(usize, u8, usize)> {
    let ny = dgp.ny();
    let mut cdf = Vec::with_capacity(dgp.joint.len());
    let mut acc = 0.0;
    for p in &dgp.joint {
        acc += p;
        cdf.push(acc);
    }
    (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            let k = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            let y = k % ny;
            let xa = k / ny;
            (xa / 2, (xa % 2) as u8, y)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Tabular IO
// ---------------------------------------------------------------------------

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn save_tabular_dataset(ds: &PODataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..ds.d_x).map(|i| format!("x_{i}")).collect();
    header.push("a".into());
    header.extend((0..ds.d_y).map(|i| format!("y_{i}")));
    if ds.joint_po.is_some() {
        header.extend((0..ds.d_y).map(|i| format!("y0_{i}")));
        header.extend((0..ds.d_y).map(|i| format!("y1_{i}")));
    }
    w.write_record(&header)?;
    for (i, s) in ds.samples.iter().enumerate() {
        let mut rec: Vec<String> = s.x.iter().map(|v| fmt_f64(*v)).collect();
        rec.push(s.a.to_string());
        rec.extend(s.y.iter().map(|v| fmt_f64(*v)));
        if let Some(po) = &ds.joint_po {
            rec.extend(po[i].y0.iter().map(|v| fmt_f64(*v)));
            rec.extend(po[i].y1.iter().map(|v| fmt_f64(*v)));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn indexed_columns(header: &csv::StringRecord, prefix: &str) -> Vec<usize> {
    let mut cols = Vec::new();
    for k in 0.. {
        match header.iter().position(|h| h == format!("{prefix}_{k}")) {
            Some(c) => cols.push(c),
            None => break,
        }
    }
    cols
}

/// Reads a dataset written by [`save_tabular_dataset`] (or any file with the
/// same columns, in any order).
pub fn load_tabular_dataset(path: &Path) -> Result<PODataset> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let xc = indexed_columns(&header, "x");
    let yc = indexed_columns(&header, "y");
    if xc.is_empty() {
        return Err(DataError::MissingColumn("x_0".into()));
    }
    if yc.is_empty() {
        return Err(DataError::MissingColumn("y_0".into()));
    }
    let ac = header
        .iter()
        .position(|h| h == "a")
        .ok_or_else(|| DataError::MissingColumn("a".into()))?;
    let y0c = indexed_columns(&header, "y0");
    let y1c = indexed_columns(&header, "y1");
    let has_po = !y0c.is_empty() || !y1c.is_empty();
    if has_po && (y0c.len() != yc.len() || y1c.len() != yc.len()) {
        return Err(DataError::MissingColumn(format!(
            "joint PO columns y0_*/y1_* must both have {} entries",
            yc.len()
        )));
    }
    let mut samples = Vec::new();
    let mut po = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64> {
            let name = &header[c];
            let v: f64 = rec[c].trim().parse().map_err(|_| DataError::Schema {
                row,
                msg: format!("column `{name}`: cannot parse `{}`", &rec[c]),
            })?;
            if !v.is_finite() {
                return Err(DataError::Schema {
                    row,
                    msg: format!("column `{name}`: non-finite value"),
                });
            }
            Ok(v)
        };
        let a: u8 = match rec[ac].trim().parse::<i64>() {
            Ok(0) => 0,
            Ok(1) => 1,
            _ => {
                return Err(DataError::Schema {
                    row,
                    msg: format!("treatment column must be 0 or 1, got `{}`", &rec[ac]),
                })
            }
        };
        let x = xc.iter().map(|&c| num(c)).collect::<Result<Vec<_>>>()?;
        let y = yc.iter().map(|&c| num(c)).collect::<Result<Vec<_>>>()?;
        if has_po {
            po.push(JointPo {
                y0: y0c.iter().map(|&c| num(c)).collect::<Result<Vec<_>>>()?,
                y1: y1c.iter().map(|&c| num(c)).collect::<Result<Vec<_>>>()?,
            });
        }
        samples.push(ObservationalSample { x, a, y });
    }
    PODataset::new(samples, has_po.then_some(po))
}
