//! First-order optimizers operating on flat parameter vectors.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    AdamW,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the step direction to this Euclidean norm when exceeded.
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::sgd(0.005)
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr,
            momentum: 0.9,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(10.0),
        }
    }

    pub fn adamw(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::AdamW,
            weight_decay: 0.01,
            ..OptimizerConfig::sgd(lr)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, n: usize) -> Self {
        Optimizer {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One descent step along `grad` (gradient of a minimized objective).
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len(), "gradient length mismatch");
        assert_eq!(params.len(), self.m.len(), "optimizer state length mismatch");
        let c = &self.config;
        let scale = match c.clip_norm {
            Some(max) => {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.t += 1;
        match c.kind {
            OptimizerKind::Sgd => {
                for ((p, &g), m) in params.iter_mut().zip(grad).zip(&mut self.m) {
                    let g = g * scale + c.weight_decay * *p;
                    *m = c.momentum * *m + g;
                    *p -= c.lr * *m;
                }
            }
            OptimizerKind::AdamW => {
                let b1t = 1.0 - c.beta1.powi(self.t as i32);
                let b2t = 1.0 - c.beta2.powi(self.t as i32);
                for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
                    let g = g * scale;
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    let mh = *m / b1t;
                    let vh = *v / b2t;
                    *p -= c.lr * (mh / (vh.sqrt() + c.eps) + c.weight_decay * *p);
                }
            }
        }
    }
}
