//! Conditional diffusion head: DDPM-style Gaussian forward process with a
//! linear β schedule and a one-hidden-layer ε-network on
//! `[z_t, time embedding]`.

use serde::{Deserialize, Serialize};

use rand::Rng as _;

use crate::autodiff::{affine, affine_const, Scalar};
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdmSpec {
    pub d_y: usize,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// ε-net hidden width.
    pub hidden: usize,
    /// Sinusoidal time-embedding dimension (even).
    pub d_t: usize,
}

impl Default for CdmSpec {
    fn default() -> Self {
        CdmSpec {
            d_y: 2,
            steps: 100,
            beta_start: 1e-4,
            beta_end: 0.2,
            hidden: 10,
            d_t: 20,
        }
    }
}

/// Precomputed schedule; index `t - 1` holds step `t ∈ 1..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub beta: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl CdmSpec {
    pub fn is_valid(&self) -> bool {
        self.steps >= 1
            && self.d_t % 2 == 0
            && self.beta_start >= 0.0
            && self.beta_end < 1.0
            && self.beta_start <= self.beta_end
    }

    pub fn schedule(&self) -> Schedule {
        let t = self.steps;
        let beta: Vec<f64> = (0..t)
            .map(|i| {
                if t == 1 {
                    self.beta_end
                } else {
                    self.beta_start + (self.beta_end - self.beta_start) * i as f64 / (t - 1) as f64
                }
            })
            .collect();
        let mut alpha_bar = Vec::with_capacity(t);
        let mut acc = 1.0;
        for b in &beta {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Schedule { beta, alpha_bar }
    }

    fn in_dim(&self) -> usize {
        self.d_y + self.d_t
    }

    pub fn n_theta(&self) -> usize {
        let h = self.hidden;
        h * self.in_dim() + h + self.d_y * h + self.d_y
    }

    pub fn default_theta(&self) -> Vec<f64> {
        let mut th = vec![0.0; self.n_theta()];
        let n = self.hidden * self.in_dim();
        for (k, w) in th[..n].iter_mut().enumerate() {
            *w = 0.3 * ((k as f64 + 1.0) * 0.77).sin();
        }
        th
    }

    pub fn time_embedding(&self, t: usize) -> Vec<f64> {
        let half = self.d_t / 2;
        let mut out = Vec::with_capacity(self.d_t);
        for k in 0..half {
            let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
            out.push((t as f64 * freq).sin());
        }
        for k in 0..half {
            let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
            out.push((t as f64 * freq).cos());
        }
        out
    }

    /// ε̂(z_t, t).
    pub fn denoise<T: Scalar>(&self, th: &[T], z_t: &[f64], t: usize) -> Vec<T> {
        let h = self.hidden;
        let n_in = self.in_dim();
        let mut input = z_t.to_vec();
        input.extend(self.time_embedding(t));
        let w1 = &th[..h * n_in];
        let b1 = &th[h * n_in..h * n_in + h];
        let o = h * n_in + h;
        let w2 = &th[o..o + self.d_y * h];
        let b2 = &th[o + self.d_y * h..o + self.d_y * h + self.d_y];
        let hid: Vec<T> = affine_const(w1, b1, &input).into_iter().map(|v| v.elu()).collect();
        affine(w2, b2, &hid)
    }

    /// Draws `z_t ~ q(z_t | u)` and returns it with the noise used.
    pub fn diffuse(&self, schedule: &Schedule, u: &[f64], t: usize, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
        let ab = schedule.alpha_bar[t - 1];
        let eps = rng::normals(rng, self.d_y);
        let z = u
            .iter()
            .zip(&eps)
            .map(|(y, e)| ab.sqrt() * y + (1.0 - ab).sqrt() * e)
            .collect();
        (z, eps)
    }

    /// Single-sample ELBO surrogate `-½‖ε - ε̂(z_t, t)‖²` with `t` uniform on
    /// `1..=T`.
    pub fn elbo_term<T: Scalar>(&self, schedule: &Schedule, th: &[T], u: &[f64], rng: &mut Rng) -> T {
        let t = rng.random_range(1..=self.steps);
        let (z, eps) = self.diffuse(schedule, u, t, rng);
        let pred = self.denoise(th, &z, t);
        let mut acc = th[0].lift(0.0);
        for (p, e) in pred.into_iter().zip(eps) {
            acc = acc - (p * -1.0 + e).square() * 0.5;
        }
        acc
    }

    /// Ancestral sampling from `z_T ~ N(0, I)`; the final step adds no noise.
    pub fn sample(&self, schedule: &Schedule, th: &[f64], rng: &mut Rng) -> Vec<f64> {
        let mut z = rng::normals(rng, self.d_y);
        for t in (1..=self.steps).rev() {
            let beta = schedule.beta[t - 1];
            let ab = schedule.alpha_bar[t - 1];
            let eps = self.denoise(th, &z, t);
            let coef = beta / (1.0 - ab).sqrt();
            let inv_sqrt_alpha = 1.0 / (1.0 - beta).sqrt();
            for (zi, ei) in z.iter_mut().zip(&eps) {
                *zi = inv_sqrt_alpha * (*zi - coef * ei);
            }
            if t > 1 {
                let ab_prev = schedule.alpha_bar[t - 2];
                let var = beta * (1.0 - ab_prev) / (1.0 - ab);
                let sd = var.sqrt();
                for zi in z.iter_mut() {
                    *zi += sd * rng::normal(rng);
                }
            }
        }
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_process_reaches_standard_normal() {
        let spec = CdmSpec {
            d_y: 1,
            ..Default::default()
        };
        let sch = spec.schedule();
        let mut r = rng::stream(11, 0);
        let n = 100_000;
        let mut s = 0.0;
        let mut ss = 0.0;
        for _ in 0..n {
            let (z, _) = spec.diffuse(&sch, &[1.0], spec.steps, &mut r);
            s += z[0];
            ss += z[0] * z[0];
        }
        let mean = s / n as f64;
        let var = ss / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn single_step_sample_is_deterministic_in_terminal_noise() {
        let spec = CdmSpec {
            d_y: 2,
            steps: 1,
            beta_start: 0.5,
            beta_end: 0.5,
            hidden: 4,
            d_t: 4,
        };
        let sch = spec.schedule();
        let mut th = vec![0.0; spec.n_theta()];
        let n = th.len();
        th[n - 2] = 0.3;
        th[n - 1] = -0.6;
        let mut r1 = rng::stream(4, 0);
        let mut r2 = rng::stream(4, 0);
        let s = spec.sample(&sch, &th, &mut r1);
        let z = rng::normals(&mut r2, 2);
        let eps = spec.denoise(&th, &z, 1);
        assert_eq!(eps, vec![0.3, -0.6]);
        for k in 0..2 {
            let expect = (z[k] - 0.5 / 0.5f64.sqrt() * eps[k]) / 0.5f64.sqrt();
            assert!((s[k] - expect).abs() < 1e-15);
        }
    }
}
