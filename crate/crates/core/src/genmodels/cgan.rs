//! Conditional GAN heads: a one-hidden-layer generator `z ↦ y` and a
//! one-hidden-layer discriminator `y ↦ (0, 1)`, each with a linear skip
//! path. Parameters come from two separate conditioners.

use serde::{Deserialize, Serialize};

use crate::autodiff::{affine, affine_const, Scalar};
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CganSpec {
    pub d_y: usize,
    /// Hidden width of generator and discriminator (d_g/d).
    pub hidden: usize,
}

impl Default for CganSpec {
    fn default() -> Self {
        CganSpec { d_y: 2, hidden: 10 }
    }
}

impl CganSpec {
    /// Latent dimension equals the outcome dimension.
    pub fn d_z(&self) -> usize {
        self.d_y
    }

    pub fn n_gen(&self) -> usize {
        let (h, z, y) = (self.hidden, self.d_z(), self.d_y);
        h * z + h + y * h + y + y * z
    }

    pub fn n_disc(&self) -> usize {
        let (h, y) = (self.hidden, self.d_y);
        h * y + h + h + 1 + y
    }

    pub fn default_gen(&self) -> Vec<f64> {
        let (h, z, y) = (self.hidden, self.d_z(), self.d_y);
        let mut th = vec![0.0; self.n_gen()];
        for (k, w) in th[..h * z].iter_mut().enumerate() {
            *w = 0.5 * ((k as f64 + 1.0) * 0.9).sin();
        }
        let skip = h * z + h + y * h + y;
        for i in 0..y.min(z) {
            th[skip + i * z + i] = 1.0;
        }
        th
    }

    pub fn default_disc(&self) -> Vec<f64> {
        let (h, y) = (self.hidden, self.d_y);
        let mut th = vec![0.0; self.n_disc()];
        for (k, w) in th[..h * y].iter_mut().enumerate() {
            *w = 0.5 * ((k as f64 + 1.0) * 1.7).cos();
        }
        th
    }

    pub fn generate<T: Scalar>(&self, gen: &[T], z: &[f64]) -> Vec<T> {
        let (h, zd, y) = (self.hidden, self.d_z(), self.d_y);
        let mut o = 0;
        let w1 = &gen[o..o + h * zd];
        o += h * zd;
        let b1 = &gen[o..o + h];
        o += h;
        let w2 = &gen[o..o + y * h];
        o += y * h;
        let b2 = &gen[o..o + y];
        o += y;
        let s = &gen[o..o + y * zd];
        let hid: Vec<T> = affine_const(w1, b1, z).into_iter().map(|v| v.elu()).collect();
        let out = affine(w2, b2, &hid);
        let zero = vec![b2[0].lift(0.0); y];
        let skip = affine_const(s, &zero, z);
        out.into_iter().zip(skip).map(|(a, b)| a + b).collect()
    }

    /// Discriminator logit for a (variable) outcome.
    pub fn logit<T: Scalar>(&self, disc: &[T], y: &[T]) -> T {
        let (h, yd) = (self.hidden, self.d_y);
        let mut o = 0;
        let w1 = &disc[o..o + h * yd];
        o += h * yd;
        let b1 = &disc[o..o + h];
        o += h;
        let w2 = &disc[o..o + h];
        o += h;
        let b2 = disc[o];
        o += 1;
        let s = &disc[o..o + yd];
        let hid: Vec<T> = affine(w1, b1, y).into_iter().map(|v| v.elu()).collect();
        let mut acc = b2;
        for (&w, &v) in w2.iter().zip(&hid) {
            acc = acc + w * v;
        }
        for (&w, &v) in s.iter().zip(y) {
            acc = acc + w * v;
        }
        acc
    }

    pub fn logit_const<T: Scalar>(&self, disc: &[T], y: &[f64]) -> T {
        let yv: Vec<T> = y.iter().map(|&v| disc[0].lift(v)).collect();
        self.logit(disc, &yv)
    }

    /// `(log d(y), log(1 - d(f(z))))` for `z ~ N(0, I)` drawn from `rng`.
    pub fn log_term_parts<T: Scalar>(&self, gen: &[T], disc: &[T], u: &[f64], rng: &mut Rng) -> (T, T) {
        let z = rng::normals(rng, self.d_z());
        let real = self.logit_const(disc, u).log_sigmoid();
        let fake_y = self.generate(gen, &z);
        let fake = (self.logit(disc, &fake_y) * -1.0).log_sigmoid();
        (real, fake)
    }

    pub fn sample(&self, gen: &[f64], rng: &mut Rng) -> Vec<f64> {
        let z = rng::normals(rng, self.d_z());
        self.generate(gen, &z)
    }
}
