//! Conditional VAE head with Gaussian encoder and decoder, each a
//! one-hidden-layer network plus a linear skip path. The log-generative term
//! is the single-sample reparameterized ELBO integrand.

use serde::{Deserialize, Serialize};

use crate::autodiff::{affine, affine_const, Scalar};
use crate::rng::{self, Rng};

const LOG_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvaeSpec {
    pub d_y: usize,
    pub d_z: usize,
    /// Hidden width of encoder and decoder (d_e/d).
    pub hidden: usize,
}

impl Default for CvaeSpec {
    fn default() -> Self {
        CvaeSpec {
            d_y: 2,
            d_z: 3,
            hidden: 10,
        }
    }
}

/// Offsets of the parameter blocks inside θ.
#[derive(Clone, Copy, Debug)]
pub struct CvaeLayout {
    pub enc_w: usize,
    pub enc_b: usize,
    pub mu_w: usize,
    pub mu_b: usize,
    pub mu_skip: usize,
    pub ls_w: usize,
    pub ls_b: usize,
    pub dec_w: usize,
    pub dec_b: usize,
    pub out_w: usize,
    pub out_b: usize,
    pub out_skip: usize,
    pub log_sigma_y: usize,
    pub total: usize,
}

impl CvaeSpec {
    pub fn layout(&self) -> CvaeLayout {
        let (h, y, z) = (self.hidden, self.d_y, self.d_z);
        let mut o = 0;
        let mut take = |n: usize| {
            let s = o;
            o += n;
            s
        };
        let enc_w = take(h * y);
        let enc_b = take(h);
        let mu_w = take(z * h);
        let mu_b = take(z);
        let mu_skip = take(z * y);
        let ls_w = take(z * h);
        let ls_b = take(z);
        let dec_w = take(h * z);
        let dec_b = take(h);
        let out_w = take(y * h);
        let out_b = take(y);
        let out_skip = take(y * z);
        let log_sigma_y = take(y);
        CvaeLayout {
            enc_w,
            enc_b,
            mu_w,
            mu_b,
            mu_skip,
            ls_w,
            ls_b,
            dec_w,
            dec_b,
            out_w,
            out_b,
            out_skip,
            log_sigma_y,
            total: o,
        }
    }

    pub fn n_theta(&self) -> usize {
        self.layout().total
    }

    pub fn default_theta(&self) -> Vec<f64> {
        let l = self.layout();
        let (h, y, z) = (self.hidden, self.d_y, self.d_z);
        let mut th = vec![0.0; l.total];
        for (k, w) in th[l.enc_w..l.enc_w + h * y].iter_mut().enumerate() {
            *w = 0.5 * ((k as f64 + 1.0) * 1.1).sin();
        }
        for (k, w) in th[l.dec_w..l.dec_w + h * z].iter_mut().enumerate() {
            *w = 0.5 * ((k as f64 + 1.0) * 0.7).cos();
        }
        for i in 0..y.min(z) {
            th[l.out_skip + i * z + i] = 1.0;
        }
        for v in &mut th[l.log_sigma_y..l.log_sigma_y + y] {
            *v = 0.5f64.ln();
        }
        th
    }

    /// Encoder mean and log-std for `q(z | u)`.
    pub fn encode<T: Scalar>(&self, th: &[T], u: &[f64]) -> (Vec<T>, Vec<T>) {
        let l = self.layout();
        let (h, y, z) = (self.hidden, self.d_y, self.d_z);
        let hid: Vec<T> = affine_const(&th[l.enc_w..l.enc_w + h * y], &th[l.enc_b..l.enc_b + h], u)
            .into_iter()
            .map(|v| v.elu())
            .collect();
        let mu_lin = affine(&th[l.mu_w..l.mu_w + z * h], &th[l.mu_b..l.mu_b + z], &hid);
        let zero = vec![th[0].lift(0.0); z];
        let mu_skip = affine_const(&th[l.mu_skip..l.mu_skip + z * y], &zero, u);
        let mu = mu_lin.into_iter().zip(mu_skip).map(|(a, b)| a + b).collect();
        let ls = affine(&th[l.ls_w..l.ls_w + z * h], &th[l.ls_b..l.ls_b + z], &hid);
        (mu, ls)
    }

    /// Decoder mean and log-std for `p(u | z)`.
    pub fn decode<T: Scalar>(&self, th: &[T], z: &[T]) -> (Vec<T>, Vec<T>) {
        let l = self.layout();
        let (h, y, zd) = (self.hidden, self.d_y, self.d_z);
        let hid: Vec<T> = affine(&th[l.dec_w..l.dec_w + h * zd], &th[l.dec_b..l.dec_b + h], z)
            .into_iter()
            .map(|v| v.elu())
            .collect();
        let mean = affine(&th[l.out_w..l.out_w + y * h], &th[l.out_b..l.out_b + y], &hid);
        let zero = vec![th[0].lift(0.0); y];
        let skip = affine(&th[l.out_skip..l.out_skip + y * zd], &zero, z);
        let mean = mean.into_iter().zip(skip).map(|(a, b)| a + b).collect();
        (mean, th[l.log_sigma_y..l.log_sigma_y + y].to_vec())
    }

    /// `log p(u, z) - log q(z | u)` with `z = μ_q + σ_q ε`, ε from `rng`.
    pub fn elbo_term<T: Scalar>(&self, th: &[T], u: &[f64], rng: &mut Rng) -> T {
        let eps = rng::normals(rng, self.d_z);
        let (mu, ls) = self.encode(th, u);
        let z: Vec<T> = mu
            .iter()
            .zip(&ls)
            .zip(&eps)
            .map(|((&m, &s), &e)| m + s.exp() * e)
            .collect();
        let (mean, lsy) = self.decode(th, &z);
        let mut acc = th[0].lift(0.0);
        for ((&m, &s), &uv) in mean.iter().zip(&lsy).zip(u) {
            let r = (m * -1.0 + uv) * (s * -1.0).exp();
            acc = acc - r.square() * 0.5 - s - LOG_SQRT_2PI;
        }
        for &zv in &z {
            acc = acc - zv.square() * 0.5 - LOG_SQRT_2PI;
        }
        for (&s, &e) in ls.iter().zip(&eps) {
            acc = acc + s + 0.5 * e * e + LOG_SQRT_2PI;
        }
        acc
    }

    pub fn sample(&self, th: &[f64], rng: &mut Rng) -> Vec<f64> {
        let z = rng::normals(rng, self.d_z);
        let (mean, lsy) = self.decode(th, &z);
        mean.iter()
            .zip(&lsy)
            .map(|(m, s)| {
                let sd = s.exp();
                if sd == 0.0 {
                    *m
                } else {
                    m + sd * rng::normal(rng)
                }
            })
            .collect()
    }
}
