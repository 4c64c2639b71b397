//! Two-stage training: nuisance fitting, then the target model on a chosen
//! learner loss, with an exponential moving average of target weights.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::PODataset;
use crate::exec::Exec;
use crate::genmodels::{CdmSpec, CganSpec, CnfSpec, CvaeSpec, Family, GenerativeModel, HeadSpec, ModelConfig, ModelError};
use crate::losses::{batch_gradient, LossContext, LossError, LossKind};
use crate::nn::{Restriction, Standardizer};
use crate::nuisance::{check_both_arms, NuisanceError, NuisanceEstimates, Propensity, PropensityNet};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::rng::{self, Rng};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{stage} diverged at epoch {epoch}: {detail}")]
    Diverged { stage: &'static str, epoch: usize, detail: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Nuisance(#[from] NuisanceError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmaState {
    pub shadow: Vec<f64>,
    pub lambda: f64,
}

impl EmaState {
    pub fn new(lambda: f64, init: &[f64]) -> Result<Self> {
        if !(0.0..1.0).contains(&lambda) {
            return Err(TrainError::Config(format!("ema_lambda must lie in [0, 1), got {lambda}")));
        }
        Ok(EmaState {
            shadow: init.to_vec(),
            lambda,
        })
    }

    /// `shadow ← λ·shadow + (1 − λ)·live`.
    pub fn update(&mut self, live: &[f64]) -> Result<()> {
        if live.len() != self.shadow.len() {
            return Err(TrainError::Dimension {
                expected: self.shadow.len(),
                got: live.len(),
            });
        }
        let l = self.lambda;
        for (s, &v) in self.shadow.iter_mut().zip(live) {
            *s = l * *s + (1.0 - l) * v;
        }
        Ok(())
    }
}

pub fn ema_update(mut state: EmaState, live: &[f64]) -> Result<EmaState> {
    state.update(live)?;
    Ok(state)
}

/// Training hyperparameters. Head specifications left unset take the
/// per-family defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learner: LossKind,
    pub family: Family,
    pub nuisance: StageConfig,
    pub target: StageConfig,
    pub nuisance_head: Option<HeadSpec>,
    pub target_head: Option<HeadSpec>,
    pub hidden: usize,
    pub layers: usize,
    pub propensity_hidden: usize,
    /// Std of conditioner noise (both stages).
    pub noise_x: f64,
    pub nuisance_noise_y: f64,
    pub target_noise_y: f64,
    pub ema_lambda: f64,
    pub n_mc: usize,
    pub seed: u64,
    pub target_restriction: Restriction,
    pub clip_floor: f64,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::for_family(Family::Cnf, LossKind::Gdr)
    }
}

pub const DEFAULT_EPOCHS: usize = 100;

impl TrainConfig {
    pub fn for_family(family: Family, learner: LossKind) -> Self {
        let (n_lr, t_opt) = match family {
            Family::Cnf => (0.005, OptimizerConfig::adamw(0.001)),
            Family::Cgan => (0.001, OptimizerConfig::adamw(1e-4)),
            Family::Cvae => (0.005, OptimizerConfig::sgd(0.001)),
            Family::Cdm => (0.005, OptimizerConfig::sgd(0.005)),
        };
        TrainConfig {
            learner,
            family,
            nuisance: StageConfig {
                optimizer: OptimizerConfig::sgd(n_lr),
                batch_size: 32,
                epochs: DEFAULT_EPOCHS,
            },
            target: StageConfig {
                optimizer: t_opt,
                batch_size: 64,
                epochs: DEFAULT_EPOCHS,
            },
            nuisance_head: None,
            target_head: None,
            hidden: 15,
            layers: 1,
            propensity_hidden: 15,
            noise_x: 0.0,
            nuisance_noise_y: 0.05,
            target_noise_y: 0.1,
            ema_lambda: 0.995,
            n_mc: 1,
            seed: 0,
            target_restriction: Restriction::Full,
            clip_floor: crate::nuisance::DEFAULT_CLIP_FLOOR,
            exec: Exec::default(),
        }
    }

    /// Sets both stages' epoch count.
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.nuisance.epochs = epochs;
        self.target.epochs = epochs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.ema_lambda) {
            return Err(TrainError::Config(format!("ema_lambda must lie in [0, 1), got {}", self.ema_lambda)));
        }
        for (name, s) in [("nuisance", &self.nuisance), ("target", &self.target)] {
            if s.epochs == 0 {
                return Err(TrainError::Config(format!("{name} epochs must be > 0")));
            }
            if s.batch_size == 0 {
                return Err(TrainError::Config(format!("{name} batch_size must be > 0")));
            }
            if !(s.optimizer.lr > 0.0) {
                return Err(TrainError::Config(format!("{name} learning rate must be > 0")));
            }
        }
        if self.n_mc == 0 {
            return Err(TrainError::Config("n_mc must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.clip_floor) {
            return Err(TrainError::Config("clip_floor must lie in [0, 1)".into()));
        }
        for h in [&self.nuisance_head, &self.target_head].into_iter().flatten() {
            if h.family() != self.family {
                return Err(TrainError::Config(format!(
                    "head specification for {} given for a {} run",
                    h.family(),
                    self.family
                )));
            }
        }
        Ok(())
    }

    pub fn nuisance_head_for(&self, d_y: usize) -> HeadSpec {
        let h = self.nuisance_head.clone().unwrap_or(match self.family {
            Family::Cnf => HeadSpec::Cnf(CnfSpec::default()),
            Family::Cgan => HeadSpec::Cgan(CganSpec { d_y, hidden: 10 }),
            Family::Cvae => HeadSpec::Cvae(CvaeSpec::default()),
            Family::Cdm => HeadSpec::Cdm(CdmSpec {
                hidden: 15,
                ..Default::default()
            }),
        });
        with_d_y(h, d_y)
    }

    pub fn target_head_for(&self, d_y: usize) -> HeadSpec {
        let h = self.target_head.clone().unwrap_or(match self.family {
            Family::Cnf => match self.nuisance_head_for(d_y) {
                HeadSpec::Cnf(s) => HeadSpec::Cnf(s),
                _ => unreachable!(),
            },
            Family::Cgan => HeadSpec::Cgan(CganSpec { d_y, hidden: 5 }),
            Family::Cvae => HeadSpec::Cvae(CvaeSpec {
                d_y,
                d_z: 3,
                hidden: 10,
            }),
            Family::Cdm => HeadSpec::Cdm(CdmSpec {
                steps: 100,
                hidden: 10,
                ..Default::default()
            }),
        });
        with_d_y(h, d_y)
    }

    /// Configuration of the outcome nuisance (full covariates).
    pub fn nuisance_model(&self, d_x: usize, d_y: usize) -> ModelConfig {
        ModelConfig {
            head: self.nuisance_head_for(d_y),
            cond_dim: d_x,
            hidden: self.hidden,
            layers: self.layers,
            restriction: Restriction::Full,
            noise_x: self.noise_x,
            noise_y: self.nuisance_noise_y,
        }
    }
}

fn with_d_y(h: HeadSpec, d_y: usize) -> HeadSpec {
    match h {
        HeadSpec::Cnf(s) => HeadSpec::Cnf(CnfSpec { d_y, ..s }),
        HeadSpec::Cgan(s) => HeadSpec::Cgan(CganSpec { d_y, ..s }),
        HeadSpec::Cvae(s) => HeadSpec::Cvae(CvaeSpec { d_y, ..s }),
        HeadSpec::Cdm(s) => HeadSpec::Cdm(CdmSpec { d_y, ..s }),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean batch objective (maximize orientation).
    pub objective: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub history: Vec<EpochStats>,
    pub ema: Option<EmaState>,
}

/// Shuffled mini-batch epochs. `step` performs one parameter update and
/// returns the batch objective; EMA and divergence checks happen here.
#[allow(clippy::too_many_arguments)]
pub fn run_epochs<S, E>(
    model: &mut GenerativeModel,
    n_rows: usize,
    stage: &StageConfig,
    ema_lambda: Option<f64>,
    seed: u64,
    stage_name: &'static str,
    mut step: S,
    mut after_epoch: E,
) -> Result<FitResult>
where
    S: FnMut(&mut GenerativeModel, &mut Optimizer, &[usize], u64) -> Result<f64>,
    E: FnMut(usize, &GenerativeModel, Option<&EmaState>),
{
    if n_rows == 0 {
        return Err(TrainError::Config("no training rows".into()));
    }
    let mut opt = Optimizer::new(stage.optimizer.clone(), model.n_params());
    let mut ema = ema_lambda.map(|l| EmaState::new(l, model.params())).transpose()?;
    let mut order: Vec<usize> = (0..n_rows).collect();
    let mut rng = rng::stream(seed, 0x5EED);
    let mut history = Vec::with_capacity(stage.epochs);
    for epoch in 1..=stage.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(stage.batch_size) {
            let bseed = rng.random::<u64>();
            let value = step(model, &mut opt, batch, bseed).map_err(|e| match e {
                TrainError::Model(ModelError::NonFinite(what)) | TrainError::Loss(LossError::Model(ModelError::NonFinite(what))) => {
                    TrainError::Diverged {
                        stage: stage_name,
                        epoch,
                        detail: format!("non-finite {what}"),
                    }
                }
                other => other,
            })?;
            if !value.is_finite() || model.params().iter().any(|p| !p.is_finite()) {
                return Err(TrainError::Diverged {
                    stage: stage_name,
                    epoch,
                    detail: "non-finite loss or parameters".into(),
                });
            }
            if let Some(e) = ema.as_mut() {
                e.update(model.params())?;
            }
            total += value;
            batches += 1;
        }
        let objective = total / batches as f64;
        log::debug!("{stage_name} epoch {epoch}: objective {objective:.5}");
        history.push(EpochStats { epoch, objective });
        after_epoch(epoch, model, ema.as_ref());
    }
    Ok(FitResult { history, ema })
}

/// One simultaneous update of all target parameters on a loss batch.
///
/// Parameters flagged for ascent move up the objective and the rest (the CGAN
/// generator) move down. For CGANs, discriminator saturation on the batch's
/// factual outcomes is logged as a warning.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut GenerativeModel,
    opt: &mut Optimizer,
    ctx: &LossContext<'_>,
    rows: &[usize],
    arms: &[u8],
    seed: u64,
    exec: Exec,
) -> Result<f64> {
    let (value, grad) = batch_gradient(model, model.params(), ctx, rows, arms, true, seed, exec)?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(ModelError::NonFinite("gradient".into()).into());
    }
    let descent: Vec<f64> = grad.iter().zip(model.ascent_signs()).map(|(g, s)| -s * g).collect();
    opt.step(model.params_mut()?, &descent);
    if model.family() == Family::Cgan {
        let probe = &rows[..rows.len().min(4)];
        let sat = discriminator_saturation(model, ctx, probe)?;
        if sat > 0 {
            log::warn!("discriminator saturated on {sat} of {} probed outcomes", probe.len());
        }
    }
    Ok(value)
}

/// Adversarial update for a CGAN target: discriminator ascent and generator
/// descent on the weighted objective. Returns `(objective, saturated count)`.
pub fn adversarial_step(
    model: &mut GenerativeModel,
    opt: &mut Optimizer,
    ctx: &LossContext<'_>,
    rows: &[usize],
    arms: &[u8],
    seed: u64,
) -> Result<(f64, usize)> {
    if model.family() != Family::Cgan {
        return Err(ModelError::Capability("adversarial steps apply to CGAN models only".into()).into());
    }
    let v = train_step(model, opt, ctx, rows, arms, seed, Exec::Sequential)?;
    Ok((v, discriminator_saturation(model, ctx, rows)?))
}

/// Count of factual outcomes where `d(y)` is within 1e-6 of 0 or 1.
pub fn discriminator_saturation(model: &GenerativeModel, ctx: &LossContext<'_>, rows: &[usize]) -> Result<usize> {
    let mut n = 0;
    for &i in rows {
        let s = &ctx.ds.samples[i];
        let d = model.discriminator(&s.y, &ctx.target_input(i), s.a)?;
        if !(1e-6..=1.0 - 1e-6).contains(&d) {
            n += 1;
        }
    }
    Ok(n)
}

fn fit_scaler(ds: &PODataset) -> Standardizer {
    Standardizer::fit(ds.samples.iter().map(|s| s.y.as_slice()), ds.d_y)
}

/// Fits a propensity network by binary cross-entropy.
pub fn fit_propensity(ds: &PODataset, cfg: &TrainConfig) -> Result<PropensityNet> {
    check_both_arms(ds)?;
    let mut net = PropensityNet::new(ds.d_x, cfg.propensity_hidden, cfg.layers, rng::derive_seed(cfg.seed, 2));
    let mut opt = Optimizer::new(cfg.nuisance.optimizer.clone(), net.params.len());
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = rng::stream(cfg.seed, 0xB0B);
    for epoch in 1..=cfg.nuisance.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.nuisance.batch_size) {
            propensity_step(&mut net, &mut opt, ds, batch, epoch)?;
        }
    }
    Ok(net)
}

fn propensity_step(net: &mut PropensityNet, opt: &mut Optimizer, ds: &PODataset, batch: &[usize], epoch: usize) -> Result<f64> {
    let mut grad = vec![0.0; net.params.len()];
    let mut loss = 0.0;
    for &i in batch {
        let s = &ds.samples[i];
        loss += net.bce_grad(&s.x, s.a, &mut grad);
    }
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::Diverged {
            stage: "propensity",
            epoch,
            detail: "non-finite cross-entropy".into(),
        });
    }
    opt.step(&mut net.params, &grad);
    Ok(loss * scale)
}

/// Stage 1: the outcome model on the plug-in loss over full covariates,
/// jointly for both arms, co-trained with the propensity network. The
/// returned estimates are frozen.
pub fn fit_nuisance(ds: &PODataset, cfg: &TrainConfig) -> Result<(NuisanceEstimates, Vec<EpochStats>)> {
    check_both_arms(ds)?;
    cfg.validate()?;
    let mut model = GenerativeModel::new(cfg.nuisance_model(ds.d_x, ds.d_y), fit_scaler(ds), rng::derive_seed(cfg.seed, 1))?;
    let mut net = PropensityNet::new(ds.d_x, cfg.propensity_hidden, cfg.layers, rng::derive_seed(cfg.seed, 2));
    let mut popt = Optimizer::new(cfg.nuisance.optimizer.clone(), net.params.len());
    let ctx = LossContext::new(LossKind::PlugIn, ds, None);
    let epoch_counter = std::cell::Cell::new(1);
    let fit = run_epochs(
        &mut model,
        ds.len(),
        &cfg.nuisance,
        None,
        rng::derive_seed(cfg.seed, 3),
        "nuisance",
        |m, opt, rows, seed| {
            let v = train_step(m, opt, &ctx, rows, &[0, 1], seed, cfg.exec)?;
            propensity_step(&mut net, &mut popt, ds, rows, epoch_counter.get())?;
            Ok(v)
        },
        |e, _, _| epoch_counter.set(e + 1),
    )?;
    Ok((
        NuisanceEstimates::new(Some(model), Propensity::Network(net), cfg.clip_floor),
        fit.history,
    ))
}

#[derive(Clone, Debug)]
pub struct TrainedLearner {
    pub learner: LossKind,
    pub nuisance: Option<NuisanceEstimates>,
    /// Target with its final live weights.
    pub target: GenerativeModel,
    pub ema: EmaState,
    pub nuisance_history: Vec<EpochStats>,
    pub target_history: Vec<EpochStats>,
}

impl TrainedLearner {
    /// Frozen target carrying the EMA weights, used for evaluation.
    pub fn eval_model(&self) -> GenerativeModel {
        let mut m = self.target.clone();
        m.set_params(&self.ema.shadow).expect("EMA dimension matches live parameters");
        m.freeze();
        m
    }

    /// Conditioning covariates expected by the target: full `x` for the
    /// plug-in learner, `v` otherwise.
    pub fn conditions_on_full_x(&self) -> bool {
        self.learner == LossKind::PlugIn
    }
}

/// Runs the learner end to end. Plug-in and IPTW learners are single-stage
/// (IPTW fits a propensity network first); RA and GDR fit the nuisances,
/// freeze them and train the target on both arms jointly.
pub fn train_two_stage(ds: &PODataset, cfg: &TrainConfig) -> Result<TrainedLearner> {
    train_two_stage_with(ds, cfg, |_, _, _| {})
}

pub fn train_two_stage_with<E>(ds: &PODataset, cfg: &TrainConfig, after_epoch: E) -> Result<TrainedLearner>
where
    E: FnMut(usize, &GenerativeModel, Option<&EmaState>),
{
    cfg.validate()?;
    check_both_arms(ds)?;
    let d_v = ds.v_mask.len();
    let (nuisance, nuisance_history) = match cfg.learner {
        LossKind::PlugIn => (None, Vec::new()),
        LossKind::Iptw => (
            Some(NuisanceEstimates::new(None, Propensity::Network(fit_propensity(ds, cfg)?), cfg.clip_floor)),
            Vec::new(),
        ),
        LossKind::Ra | LossKind::Gdr => {
            let (n, h) = fit_nuisance(ds, cfg)?;
            (Some(n), h)
        }
    };
    let (model_cfg, stage) = match cfg.learner {
        LossKind::PlugIn | LossKind::Iptw => {
            let mut m = cfg.nuisance_model(ds.d_x, ds.d_y);
            m.restriction = cfg.target_restriction;
            if cfg.learner == LossKind::Iptw {
                m.cond_dim = d_v;
            }
            (m, &cfg.nuisance)
        }
        LossKind::Ra | LossKind::Gdr => (
            ModelConfig {
                head: cfg.target_head_for(ds.d_y),
                cond_dim: d_v,
                hidden: cfg.hidden,
                layers: cfg.layers,
                restriction: cfg.target_restriction,
                noise_x: cfg.noise_x,
                noise_y: cfg.target_noise_y,
            },
            &cfg.target,
        ),
    };
    let mut target = GenerativeModel::new(model_cfg, fit_scaler(ds), rng::derive_seed(cfg.seed, 4))?;
    let mut ctx = LossContext::new(cfg.learner, ds, nuisance.as_ref());
    ctx.n_mc = cfg.n_mc;
    let fit = run_epochs(
        &mut target,
        ds.len(),
        stage,
        Some(cfg.ema_lambda),
        rng::derive_seed(cfg.seed, 5),
        "target",
        |m, opt, rows, seed| train_step(m, opt, &ctx, rows, &[0, 1], seed, cfg.exec),
        after_epoch,
    )?;
    Ok(TrainedLearner {
        learner: cfg.learner,
        nuisance,
        target,
        ema: fit.ema.expect("target runs keep an EMA"),
        nuisance_history,
        target_history: fit.history,
    })
}

/// Declared tuning ranges for the stage-1 models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpace {
    pub lr: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub noise_x: Vec<f64>,
    pub noise_y: Vec<f64>,
    /// Family-specific flexibility knob: knots (CNF), hidden width (CGAN,
    /// CDM) or latent dimension (CVAE).
    pub flexibility: Vec<usize>,
}

impl GridSpace {
    pub fn for_family(family: Family) -> Self {
        let noise = vec![0.0, 0.01, 0.05, 0.1];
        let (lr, flexibility) = match family {
            Family::Cnf => (vec![0.001, 0.005], vec![5, 10, 20]),
            Family::Cgan => (vec![0.001, 0.0001, 0.0005], vec![5, 10, 15, 20, 25]),
            Family::Cvae => (vec![0.01, 0.001, 0.005, 0.0001, 0.0005], vec![3, 5, 7]),
            Family::Cdm => (vec![0.01, 0.001, 0.005, 0.0001, 0.0005], vec![10, 15, 20]),
        };
        GridSpace {
            lr,
            batch_size: vec![32, 64],
            noise_x: noise.clone(),
            noise_y: if family == Family::Cnf { noise } else { vec![0.0] },
            flexibility,
        }
    }
}

/// `n` stage-1 configurations drawn uniformly from `space`.
pub fn random_grid(base: &TrainConfig, space: &GridSpace, n: usize, seed: u64) -> Vec<TrainConfig> {
    let mut rng = rng::stream(seed, 0x6121D);
    fn pick<T: Copy>(rng: &mut Rng, v: &[T]) -> T {
        v[rng.random_range(0..v.len())]
    }
    (0..n)
        .map(|_| {
            let mut c = base.clone();
            c.nuisance.optimizer.lr = pick(&mut rng, &space.lr);
            c.nuisance.batch_size = pick(&mut rng, &space.batch_size);
            c.noise_x = pick(&mut rng, &space.noise_x);
            c.nuisance_noise_y = pick(&mut rng, &space.noise_y);
            let f = pick(&mut rng, &space.flexibility);
            c.nuisance_head = Some(match base.nuisance_head_for(1) {
                HeadSpec::Cnf(s) => HeadSpec::Cnf(CnfSpec { n_knots: f, ..s }),
                HeadSpec::Cgan(s) => HeadSpec::Cgan(CganSpec { hidden: f, ..s }),
                HeadSpec::Cvae(s) => HeadSpec::Cvae(CvaeSpec { d_z: f, ..s }),
                HeadSpec::Cdm(s) => HeadSpec::Cdm(CdmSpec { hidden: f, ..s }),
            });
            c
        })
        .collect()
}
