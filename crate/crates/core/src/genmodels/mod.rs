//! Conditional generative models behind a shared hypernetwork interface.
//!
//! A [`GenerativeModel`] maps `(v, a)` through one or two [`Conditioner`]s to
//! the parameter vector θ of a family-specific head, then exposes sampling,
//! the per-sample log-generative term, and its gradient with respect to all
//! trainable parameters.

pub mod cdm;
pub mod cgan;
pub mod cnf;
pub mod cvae;
pub mod spline;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::{Scalar, Tape};
use crate::nn::{Conditioner, ConditionerSpec, ForwardCache, Restriction, Standardizer};
use crate::rng::{self, Rng};

pub use cdm::CdmSpec;
pub use cgan::CganSpec;
pub use cnf::CnfSpec;
pub use cvae::CvaeSpec;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("sample count must be positive")]
    InvalidCount,
    #[error("{0}")]
    Capability(String),
    #[error("model is frozen; parameter updates are not permitted")]
    Frozen,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Cnf,
    Cgan,
    Cvae,
    Cdm,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Cnf, Family::Cgan, Family::Cvae, Family::Cdm];

    pub fn has_density(self) -> bool {
        self == Family::Cnf
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Cnf => "cnf",
            Family::Cgan => "cgan",
            Family::Cvae => "cvae",
            Family::Cdm => "cdm",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cnf" => Ok(Family::Cnf),
            "cgan" => Ok(Family::Cgan),
            "cvae" => Ok(Family::Cvae),
            "cdm" => Ok(Family::Cdm),
            other => Err(format!("unknown model family `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum HeadSpec {
    Cnf(CnfSpec),
    Cgan(CganSpec),
    Cvae(CvaeSpec),
    Cdm(CdmSpec),
}

impl HeadSpec {
    pub fn family(&self) -> Family {
        match self {
            HeadSpec::Cnf(_) => Family::Cnf,
            HeadSpec::Cgan(_) => Family::Cgan,
            HeadSpec::Cvae(_) => Family::Cvae,
            HeadSpec::Cdm(_) => Family::Cdm,
        }
    }

    pub fn default_for(family: Family, d_y: usize) -> Self {
        match family {
            Family::Cnf => HeadSpec::Cnf(CnfSpec {
                d_y,
                ..Default::default()
            }),
            Family::Cgan => HeadSpec::Cgan(CganSpec {
                d_y,
                ..Default::default()
            }),
            Family::Cvae => HeadSpec::Cvae(CvaeSpec {
                d_y,
                ..Default::default()
            }),
            Family::Cdm => HeadSpec::Cdm(CdmSpec {
                d_y,
                ..Default::default()
            }),
        }
    }

    pub fn d_y(&self) -> usize {
        match self {
            HeadSpec::Cnf(s) => s.d_y,
            HeadSpec::Cgan(s) => s.d_y,
            HeadSpec::Cvae(s) => s.d_y,
            HeadSpec::Cdm(s) => s.d_y,
        }
    }

    /// `(θ length, default θ, ascent sign)` per conditioner.
    fn heads(&self) -> Vec<(usize, Vec<f64>, f64)> {
        match self {
            HeadSpec::Cnf(s) => vec![(s.n_theta(), s.default_theta(), 1.0)],
            HeadSpec::Cgan(s) => vec![
                (s.n_gen(), s.default_gen(), -1.0),
                (s.n_disc(), s.default_disc(), 1.0),
            ],
            HeadSpec::Cvae(s) => vec![(s.n_theta(), s.default_theta(), 1.0)],
            HeadSpec::Cdm(s) => vec![(s.n_theta(), s.default_theta(), 1.0)],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            HeadSpec::Cnf(s) => s.d_y >= 1 && s.shape().is_valid(),
            HeadSpec::Cgan(s) => s.d_y >= 1 && s.hidden >= 1,
            HeadSpec::Cvae(s) => s.d_y >= 1 && s.d_z >= 1 && s.hidden >= 1,
            HeadSpec::Cdm(s) => s.d_y >= 1 && s.hidden >= 1 && s.is_valid(),
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidConfig(format!("degenerate head specification {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub head: HeadSpec,
    /// Dimension of the conditioning covariates (without the treatment).
    pub cond_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub restriction: Restriction,
    /// Std of conditioner noise regularization.
    pub noise_x: f64,
    /// Std of outcome noise regularization (CNF only).
    pub noise_y: f64,
}

impl ModelConfig {
    pub fn new(family: Family, cond_dim: usize, d_y: usize) -> Self {
        ModelConfig {
            head: HeadSpec::default_for(family, d_y),
            cond_dim,
            hidden: 15,
            layers: 1,
            restriction: Restriction::Full,
            noise_x: 0.0,
            noise_y: 0.0,
        }
    }

    pub fn family(&self) -> Family {
        self.head.family()
    }
}

#[derive(Clone, Debug, PartialEq)]
struct NetSlot {
    cond: Conditioner,
    params: Range<usize>,
    theta: Range<usize>,
    sign: f64,
}

/// Value of `E_Z log g_a(y, Z | v)` for one outcome.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogGenTerm {
    pub value: f64,
    /// True when no latent marginalization is involved (CNF).
    pub exact: bool,
}

/// One weighted outcome entering a row objective.
#[derive(Clone, Copy, Debug)]
pub struct Term<'a> {
    pub coef: f64,
    pub y: &'a [f64],
}

#[derive(Clone, Debug)]
pub struct RowGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct GenerativeModel {
    pub config: ModelConfig,
    pub scaler: Standardizer,
    params: Vec<f64>,
    nets: Vec<NetSlot>,
    schedule: Option<cdm::Schedule>,
    frozen: bool,
}

impl GenerativeModel {
    pub fn new(config: ModelConfig, scaler: Standardizer, seed: u64) -> Result<Self> {
        let (nets, n) = Self::layout(&config)?;
        let mut rng = rng::stream(seed, 0xC0DE);
        let mut params = vec![0.0; n];
        for (slot, (_, default, _)) in nets.iter().zip(config.head.heads()) {
            let init = slot.cond.init(&default, &mut rng);
            params[slot.params.clone()].copy_from_slice(&init);
        }
        Self::assemble(config, scaler, params, nets)
    }

    fn assemble(config: ModelConfig, scaler: Standardizer, params: Vec<f64>, nets: Vec<NetSlot>) -> Result<Self> {
        if scaler.mean.len() != config.head.d_y() {
            return Err(ModelError::InvalidConfig("scaler dimension differs from d_y".into()));
        }
        let schedule = match &config.head {
            HeadSpec::Cdm(s) => Some(s.schedule()),
            _ => None,
        };
        Ok(GenerativeModel {
            config,
            scaler,
            params,
            nets,
            schedule,
            frozen: false,
        })
    }

    fn layout(config: &ModelConfig) -> Result<(Vec<NetSlot>, usize)> {
        config.head.validate()?;
        if config.cond_dim == 0 {
            return Err(ModelError::InvalidConfig("conditioning dimension must be >= 1".into()));
        }
        let mut nets = Vec::new();
        let mut p_off = 0;
        let mut t_off = 0;
        for (n_theta, _, sign) in config.head.heads() {
            let cond = Conditioner::new(ConditionerSpec {
                in_dim: config.cond_dim + 1,
                out_dim: n_theta,
                hidden: config.hidden,
                layers: config.layers,
                restriction: config.restriction,
                noise_std: config.noise_x,
            });
            let np = cond.n_params();
            nets.push(NetSlot {
                cond,
                params: p_off..p_off + np,
                theta: t_off..t_off + n_theta,
                sign,
            });
            p_off += np;
            t_off += n_theta;
        }
        Ok((nets, p_off))
    }

    pub fn family(&self) -> Family {
        self.config.family()
    }

    pub fn d_y(&self) -> usize {
        self.config.head.d_y()
    }

    pub fn cond_dim(&self) -> usize {
        self.config.cond_dim
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn n_theta(&self) -> usize {
        self.nets.last().map_or(0, |s| s.theta.end)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn params_mut(&mut self) -> Result<&mut [f64]> {
        if self.frozen {
            return Err(ModelError::Frozen);
        }
        Ok(&mut self.params)
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.params.len() {
            return Err(ModelError::Dimension {
                expected: self.params.len(),
                got: p.len(),
            });
        }
        self.params_mut()?.copy_from_slice(p);
        Ok(())
    }

    /// Conditioner parameter counts, in θ order.
    pub fn conditioner_param_counts(&self) -> Vec<usize> {
        self.nets.iter().map(|s| s.cond.n_params()).collect()
    }

    pub fn conditioner_layer_counts(&self) -> Vec<usize> {
        self.nets.iter().map(|s| s.cond.n_layers()).collect()
    }

    /// +1 for parameters that ascend the objective, −1 for those that
    /// descend it (the CGAN generator).
    pub fn ascent_signs(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.params.len()];
        for s in &self.nets {
            out[s.params.clone()].iter_mut().for_each(|v| *v = s.sign);
        }
        out
    }

    pub fn param_hash(&self) -> String {
        hash_params(&self.params)
    }

    fn check_input(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.config.cond_dim {
            return Err(ModelError::Dimension {
                expected: self.config.cond_dim,
                got: v.len(),
            });
        }
        Ok(())
    }

    fn cond_input(v: &[f64], a: u8) -> Vec<f64> {
        let mut input = v.to_vec();
        input.push(a as f64);
        input
    }

    fn theta_with(&self, params: &[f64], v: &[f64], a: u8, mut noise: Option<&mut Rng>) -> (Vec<f64>, Vec<ForwardCache>) {
        let input = Self::cond_input(v, a);
        let mut theta = Vec::with_capacity(self.n_theta());
        let mut caches = Vec::with_capacity(self.nets.len());
        for s in &self.nets {
            let (t, c) = s.cond.forward(&params[s.params.clone()], &input, noise.as_deref_mut());
            theta.extend(t);
            caches.push(c);
        }
        (theta, caches)
    }

    /// Head parameters θ(v, a) in evaluation mode.
    pub fn condition(&self, v: &[f64], a: u8) -> Result<Vec<f64>> {
        self.check_input(v)?;
        Ok(self.theta_with(&self.params, v, a, None).0)
    }

    /// Head parameters with training-mode noise injection.
    pub fn condition_train(&self, v: &[f64], a: u8, rng: &mut Rng) -> Result<Vec<f64>> {
        self.check_input(v)?;
        Ok(self.theta_with(&self.params, v, a, Some(rng)).0)
    }

    fn theta_split<'a, T>(&self, theta: &'a [T]) -> (&'a [T], &'a [T]) {
        if self.nets.len() == 2 {
            theta.split_at(self.nets[0].theta.end)
        } else {
            (theta, &theta[theta.len()..])
        }
    }

    /// Log-generative term of one standardized outcome as a function of θ.
    pub fn head_log_term<T: Scalar>(&self, theta: &[T], u: &[f64], rng: &mut Rng) -> T {
        let log_det = self.scaler.log_det();
        match &self.config.head {
            HeadSpec::Cnf(s) => s.log_density(theta, u) + log_det,
            HeadSpec::Cgan(s) => {
                let (g, d) = self.theta_split(theta);
                let (real, fake) = s.log_term_parts(g, d, u, rng);
                real + fake
            }
            HeadSpec::Cvae(s) => s.elbo_term(theta, u, rng) + log_det,
            HeadSpec::Cdm(s) => s.elbo_term(self.schedule.as_ref().expect("cdm schedule"), theta, u, rng),
        }
    }

    /// Value and θ-gradient of [`Self::head_log_term`].
    pub fn head_log_term_grad(&self, theta: &[f64], u: &[f64], rng: &mut Rng) -> (f64, Vec<f64>) {
        let tape = Tape::with_capacity(4096);
        let th = tape.vars(theta);
        let out = self.head_log_term(&th, u, rng);
        let g = tape.gradient(out);
        (out.value(), g.wrt_all(&th))
    }

    /// `E_Z log g_a(y, Z | v)`, averaged over `n_mc` latent draws.
    pub fn log_gen_term(&self, y: &[f64], v: &[f64], a: u8, n_mc: usize, rng: &mut Rng) -> Result<LogGenTerm> {
        if n_mc == 0 {
            return Err(ModelError::InvalidConfig("n_mc must be >= 1".into()));
        }
        let theta = self.condition(v, a)?;
        let u = self.scaler.forward(y);
        let exact = self.family() == Family::Cnf;
        let reps = if exact { 1 } else { n_mc };
        let value = (0..reps).map(|_| self.head_log_term(&theta, &u, rng)).sum::<f64>() / reps as f64;
        if !value.is_finite() {
            return Err(ModelError::NonFinite(format!("{} log-generative term", self.family())));
        }
        Ok(LogGenTerm { value, exact })
    }

    /// Exact conditional log-density (CNF only).
    pub fn log_density(&self, y: &[f64], v: &[f64], a: u8) -> Result<f64> {
        match &self.config.head {
            HeadSpec::Cnf(s) => {
                let theta = self.condition(v, a)?;
                let u = self.scaler.forward(y);
                Ok(s.log_density(&theta, &u) + self.scaler.log_det())
            }
            _ => Err(ModelError::Capability(format!(
                "{} models do not provide an explicit conditional density; log-prob evaluation requires a CNF",
                self.family()
            ))),
        }
    }

    /// Draws from the model's conditional law given `(v, a)`.
    pub fn sample(&self, v: &[f64], a: u8, count: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
        if count == 0 {
            return Err(ModelError::InvalidCount);
        }
        let theta = self.condition(v, a)?;
        Ok((0..count).map(|_| self.sample_from_theta(&theta, rng)).collect())
    }

    pub fn sample_from_theta(&self, theta: &[f64], rng: &mut Rng) -> Vec<f64> {
        let u = match &self.config.head {
            HeadSpec::Cnf(s) => s.sample(theta, rng),
            HeadSpec::Cgan(s) => s.sample(self.theta_split(theta).0, rng),
            HeadSpec::Cvae(s) => s.sample(theta, rng),
            HeadSpec::Cdm(s) => s.sample(self.schedule.as_ref().expect("cdm schedule"), theta, rng),
        };
        self.scaler.inverse(&u)
    }

    /// CGAN discriminator probability `d_a(y | v)`.
    pub fn discriminator(&self, y: &[f64], v: &[f64], a: u8) -> Result<f64> {
        match &self.config.head {
            HeadSpec::Cgan(s) => {
                let theta = self.condition(v, a)?;
                let (_, d) = self.theta_split(&theta);
                let u = self.scaler.forward(y);
                Ok(crate::autodiff::sigmoid(s.logit_const(d, &u)))
            }
            _ => Err(ModelError::Capability("only CGAN models have a discriminator".into())),
        }
    }

    /// Value and full-parameter gradient of
    /// `Σ_k coef_k · mean_m log g(y_k, Z_m | v)` for one row.
    ///
    /// Latent draws are shared across the terms of a row (common random
    /// numbers). With `train` set, conditioner noise and (for CNFs) outcome
    /// noise regularization are applied.
    pub fn row_grad(&self, v: &[f64], a: u8, terms: &[Term<'_>], n_mc: usize, train: bool, rng: &mut Rng) -> Result<RowGrad> {
        self.row_grad_with(&self.params, v, a, terms, n_mc, train, rng)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn row_grad_with(
        &self,
        params: &[f64],
        v: &[f64],
        a: u8,
        terms: &[Term<'_>],
        n_mc: usize,
        train: bool,
        rng: &mut Rng,
    ) -> Result<RowGrad> {
        self.check_input(v)?;
        let n_mc = n_mc.max(1);
        let mut noise_rng = rng::stream(rng::derive_seed(rand::Rng::random::<u64>(rng), 1), 0);
        let (theta, caches) = self.theta_with(params, v, a, train.then_some(&mut noise_rng));
        let noise_y = if train && self.family() == Family::Cnf {
            self.config.noise_y
        } else {
            0.0
        };
        let us: Vec<Vec<f64>> = terms
            .iter()
            .map(|t| {
                let mut u = self.scaler.forward(t.y);
                if noise_y > 0.0 {
                    for x in &mut u {
                        *x += noise_y * rng::normal(&mut noise_rng);
                    }
                }
                u
            })
            .collect();
        let tape = Tape::with_capacity(4096);
        let th = tape.vars(&theta);
        let mut total = tape.zero();
        let reps = if self.family() == Family::Cnf { 1 } else { n_mc };
        for _ in 0..reps {
            let base = rng.clone();
            let mut last = base.clone();
            for (t, u) in terms.iter().zip(&us) {
                if t.coef == 0.0 {
                    continue;
                }
                let mut r = base.clone();
                let lt = self.head_log_term(&th, u, &mut r);
                total = total + lt * (t.coef / reps as f64);
                last = r;
            }
            *rng = last;
            // advance so the next replicate sees fresh latents
            let _ = rand::Rng::random::<u64>(rng);
        }
        let value = total.value();
        if !value.is_finite() {
            return Err(ModelError::NonFinite(format!("{} row objective", self.family())));
        }
        let g = tape.gradient(total);
        let dtheta = g.wrt_all(&th);
        let mut grad = vec![0.0; params.len()];
        for (s, cache) in self.nets.iter().zip(&caches) {
            s.cond.backward(
                &params[s.params.clone()],
                cache,
                &dtheta[s.theta.clone()],
                &mut grad[s.params.clone()],
            );
        }
        Ok(RowGrad { value, grad })
    }

    /// Value of the row objective in evaluation mode, with the same latent
    /// sharing as [`Self::row_grad`].
    pub fn row_value(&self, v: &[f64], a: u8, terms: &[Term<'_>], n_mc: usize, rng: &mut Rng) -> Result<f64> {
        let theta = self.condition(v, a)?;
        let reps = if self.family() == Family::Cnf { 1 } else { n_mc.max(1) };
        let us: Vec<Vec<f64>> = terms.iter().map(|t| self.scaler.forward(t.y)).collect();
        let mut total = 0.0;
        for _ in 0..reps {
            let base = rng.clone();
            let mut last = base.clone();
            for (t, u) in terms.iter().zip(&us) {
                if t.coef == 0.0 {
                    continue;
                }
                let mut r = base.clone();
                total += t.coef * self.head_log_term(&theta, u, &mut r) / reps as f64;
                last = r;
            }
            *rng = last;
            let _ = rand::Rng::random::<u64>(rng);
        }
        if !total.is_finite() {
            return Err(ModelError::NonFinite(format!("{} row objective", self.family())));
        }
        Ok(total)
    }

    pub fn to_checkpoint(&self, ema: Option<&[f64]>) -> Checkpoint {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA,
            family: self.family(),
            config: self.config.clone(),
            scaler: self.scaler.clone(),
            params: self.params.clone(),
            ema_params: ema.map(|e| e.to_vec()),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.schema_version != CHECKPOINT_SCHEMA {
            return Err(ModelError::Checkpoint(format!(
                "unsupported schema version {}",
                ck.schema_version
            )));
        }
        if ck.family != ck.config.family() {
            return Err(ModelError::Checkpoint("family tag disagrees with configuration".into()));
        }
        let (nets, n) = Self::layout(&ck.config)?;
        if ck.params.len() != n {
            return Err(ModelError::Checkpoint(format!(
                "expected {n} parameters, found {}",
                ck.params.len()
            )));
        }
        Self::assemble(ck.config.clone(), ck.scaler.clone(), ck.params.clone(), nets)
    }
}

pub fn hash_params(p: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in p {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub const CHECKPOINT_SCHEMA: u32 = 1;

/// Self-describing serialized model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub family: Family,
    pub config: ModelConfig,
    pub scaler: Standardizer,
    pub params: Vec<f64>,
    pub ema_params: Option<Vec<f64>>,
}
