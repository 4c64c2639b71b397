//! Fully-connected conditioning networks with a hand-written backward pass.
//!
//! A [`Conditioner`] is the hypernetwork trunk: `(v, a) ↦ θ`, where θ is the
//! parameter vector of a generative head. It is only a layout; parameters
//! live in the owning model's flat vector.

use serde::{Deserialize, Serialize};

use crate::autodiff::{elu, elu_grad};
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Restriction {
    #[default]
    Full,
    /// A single affine map from conditioning input to head parameters.
    Linear,
}

impl std::str::FromStr for Restriction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Restriction::Full),
            "linear" => Ok(Restriction::Linear),
            other => Err(format!("unknown restriction '{other}' (expected full or linear)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Hidden width d_h.
    pub hidden: usize,
    /// Hidden layers per sub-network (L).
    pub layers: usize,
    pub restriction: Restriction,
    /// Std σ_x of the Gaussian noise injected after FC1 in training mode.
    pub noise_std: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
    activation: bool,
}

impl Layer {
    fn n_params(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conditioner {
    pub spec: ConditionerSpec,
    layers: Vec<Layer>,
    /// Index of the layer after whose activation noise is injected.
    noise_after: Option<usize>,
    n_params: usize,
}

/// Intermediate values kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Conditioner {
    pub fn new(spec: ConditionerSpec) -> Self {
        let mut dims = Vec::new();
        match spec.restriction {
            Restriction::Linear => dims.push((spec.in_dim, spec.out_dim, false)),
            Restriction::Full => {
                let l = spec.layers.max(1);
                // FC1
                let mut prev = spec.in_dim;
                for _ in 0..l {
                    dims.push((prev, spec.hidden, true));
                    prev = spec.hidden;
                }
                // FC2
                for _ in 0..l {
                    dims.push((prev, spec.hidden, true));
                }
                dims.push((prev, spec.out_dim, false));
            }
        }
        let mut offset = 0;
        let layers: Vec<Layer> = dims
            .into_iter()
            .map(|(fan_in, fan_out, activation)| {
                let l = Layer {
                    fan_in,
                    fan_out,
                    offset,
                    activation,
                };
                offset += l.n_params();
                l
            })
            .collect();
        let noise_after = match spec.restriction {
            Restriction::Full => Some(spec.layers.max(1) - 1),
            Restriction::Linear => None,
        };
        Conditioner {
            spec,
            layers,
            noise_after,
            n_params: offset,
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Weights for hidden layers are scaled-uniform; the output layer starts
    /// small with its bias set to `out_bias`, so a fresh model sits near the
    /// head's default parameters.
    pub fn init(&self, out_bias: &[f64], rng: &mut Rng) -> Vec<f64> {
        use rand::Rng as _;
        assert_eq!(out_bias.len(), self.spec.out_dim);
        let mut p = vec![0.0; self.n_params];
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let bound = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
            let scale = if li == last { 0.1 } else { 1.0 };
            for w in &mut p[l.offset..l.offset + l.fan_in * l.fan_out] {
                *w = scale * bound * (2.0 * rng.random::<f64>() - 1.0);
            }
            if li == last {
                let b0 = l.offset + l.fan_in * l.fan_out;
                p[b0..b0 + l.fan_out].copy_from_slice(out_bias);
            }
        }
        p
    }

    /// Forward pass. Passing an RNG enables training-mode noise injection.
    pub fn forward(&self, params: &[f64], input: &[f64], noise: Option<&mut Rng>) -> (Vec<f64>, ForwardCache) {
        debug_assert_eq!(params.len(), self.n_params);
        debug_assert_eq!(input.len(), self.spec.in_dim);
        let mut cache = ForwardCache::default();
        let mut h = input.to_vec();
        let mut noise = noise;
        for (li, l) in self.layers.iter().enumerate() {
            let w = &params[l.offset..l.offset + l.fan_in * l.fan_out];
            let b = &params[l.offset + l.fan_in * l.fan_out..l.offset + l.n_params()];
            let mut z = b.to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * l.fan_in..(o + 1) * l.fan_in];
                *zo += row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
            }
            let mut out: Vec<f64> = if l.activation {
                z.iter().map(|&v| elu(v)).collect()
            } else {
                z.clone()
            };
            if Some(li) == self.noise_after && self.spec.noise_std > 0.0 {
                if let Some(r) = noise.as_deref_mut() {
                    for o in &mut out {
                        *o += self.spec.noise_std * rng::normal(r);
                    }
                }
            }
            cache.inputs.push(std::mem::replace(&mut h, out));
            cache.pre.push(z);
        }
        (h, cache)
    }

    pub fn eval(&self, params: &[f64], input: &[f64]) -> Vec<f64> {
        self.forward(params, input, None).0
    }

    /// Accumulates `∂(d_out · output)/∂params` into `grad`.
    pub fn backward(&self, params: &[f64], cache: &ForwardCache, d_out: &[f64], grad: &mut [f64]) {
        let mut delta = d_out.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            if l.activation {
                for (d, &z) in delta.iter_mut().zip(&cache.pre[li]) {
                    *d *= elu_grad(z);
                }
            }
            let input = &cache.inputs[li];
            let w0 = l.offset;
            let b0 = l.offset + l.fan_in * l.fan_out;
            for o in 0..l.fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                grad[b0 + o] += d;
                let g = &mut grad[w0 + o * l.fan_in..w0 + (o + 1) * l.fan_in];
                for (gi, &xi) in g.iter_mut().zip(input) {
                    *gi += d * xi;
                }
            }
            if li > 0 {
                let w = &params[w0..b0];
                let mut prev = vec![0.0; l.fan_in];
                for o in 0..l.fan_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, &wi) in prev.iter_mut().zip(&w[o * l.fan_in..(o + 1) * l.fan_in]) {
                        *p += d * wi;
                    }
                }
                delta = prev;
            }
        }
    }
}

/// Fixed per-dimension affine standardization of outcomes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(d: usize) -> Self {
        Standardizer {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>, d: usize) -> Self {
        let mut n = 0.0;
        let mut s = vec![0.0; d];
        let mut ss = vec![0.0; d];
        for r in rows {
            n += 1.0;
            for k in 0..d {
                s[k] += r[k];
                ss[k] += r[k] * r[k];
            }
        }
        if n < 2.0 {
            return Self::identity(d);
        }
        let mean: Vec<f64> = s.iter().map(|v| v / n).collect();
        let std = (0..d)
            .map(|k| {
                let var = (ss[k] / n - mean[k] * mean[k]).max(0.0);
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn forward(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn inverse(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| m + s * v)
            .collect()
    }

    /// `log |det ∂u/∂y|`.
    pub fn log_det(&self) -> f64 {
        -self.std.iter().map(|s| s.ln()).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(restriction: Restriction) -> ConditionerSpec {
        ConditionerSpec {
            in_dim: 3,
            out_dim: 4,
            hidden: 5,
            layers: 1,
            restriction,
            noise_std: 0.0,
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let c = Conditioner::new(spec(Restriction::Full));
        let mut r = rng::stream(0, 0);
        let mut p = c.init(&[0.1, 0.2, 0.3, 0.4], &mut r);
        for v in p.iter_mut() {
            *v += 0.3 * rng::normal(&mut r);
        }
        let x = [0.3, -0.7, 1.0];
        let d_out = [0.5, -1.0, 0.25, 2.0];
        let f = |p: &[f64]| -> f64 {
            c.eval(p, &x).iter().zip(&d_out).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = c.forward(&p, &x, None);
        let mut g = vec![0.0; c.n_params()];
        c.backward(&p, &cache, &d_out, &mut g);
        for i in 0..p.len() {
            let h = 1e-6;
            let mut pp = p.clone();
            pp[i] += h;
            let mut pm = p.clone();
            pm[i] -= h;
            let fd = (f(&pp) - f(&pm)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn linear_restriction_is_one_affine_layer() {
        let c = Conditioner::new(spec(Restriction::Linear));
        assert_eq!(c.n_layers(), 1);
        assert_eq!(c.n_params(), (3 + 1) * 4);
    }

    #[test]
    fn noise_only_in_training_mode() {
        let mut s = spec(Restriction::Full);
        s.noise_std = 0.0;
        let c = Conditioner::new(s.clone());
        let mut r = rng::stream(1, 0);
        let p = c.init(&[0.0; 4], &mut r);
        let x = [0.1, 0.2, 0.3];
        let train = c.forward(&p, &x, Some(&mut rng::stream(5, 5))).0;
        assert_eq!(train, c.eval(&p, &x));

        s.noise_std = 0.1;
        let c = Conditioner::new(s);
        let train = c.forward(&p, &x, Some(&mut rng::stream(5, 5))).0;
        assert_ne!(train, c.eval(&p, &x));
        assert_eq!(c.eval(&p, &x), c.eval(&p, &x));
    }

    #[test]
    fn standardizer_round_trip() {
        let rows = [vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 10.0]];
        let s = Standardizer::fit(rows.iter().map(|r| r.as_slice()), 2);
        let u = s.forward(&rows[1]);
        assert!(u.iter().all(|v| v.abs() < 1e-12));
        let back = s.inverse(&s.forward(&rows[2]));
        assert!((back[1] - 10.0).abs() < 1e-12);
    }
}
