//! Monotone rational-quadratic splines on `[-B, B]` with identity (linear)
//! tails.
//!
//! Parameters per dimension: `K` width logits, `K` height logits and `K - 1`
//! unconstrained interior derivatives. All-zero parameters give the identity
//! map.

use crate::autodiff::Scalar;

const MIN_BIN: f64 = 1e-3;
const MIN_DERIV: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplineShape {
    pub knots: usize,
    pub bound: f64,
}

impl SplineShape {
    pub fn n_params(&self) -> usize {
        3 * self.knots - 1
    }

    pub fn is_valid(&self) -> bool {
        self.knots >= 2 && self.bound > 0.0 && self.bound.is_finite() && (MIN_BIN * self.knots as f64) < 1.0
    }
}

/// Offset so that raw derivative 0 maps to derivative 1.
fn deriv_shift() -> f64 {
    ((1.0 - MIN_DERIV).exp() - 1.0).ln()
}

struct Knots<T> {
    xs: Vec<T>,
    ys: Vec<T>,
    ds: Vec<T>,
}

fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().map(|l| l.val()).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<T> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s = crate::autodiff::sum(&e);
    e.into_iter().map(|v| v / s).collect()
}

fn cumulative<T: Scalar>(fracs: &[T], bound: f64, anchor: T) -> Vec<T> {
    let k = fracs.len();
    let scale = 1.0 - MIN_BIN * k as f64;
    let mut out = Vec::with_capacity(k + 1);
    out.push(anchor.lift(-bound));
    let mut acc = anchor.lift(0.0);
    for (i, &f) in fracs.iter().enumerate() {
        acc = acc + (f * scale + MIN_BIN);
        if i + 1 == k {
            out.push(anchor.lift(bound));
        } else {
            out.push(acc * (2.0 * bound) - bound);
        }
    }
    out
}

fn knots<T: Scalar>(shape: SplineShape, p: &[T]) -> Knots<T> {
    let k = shape.knots;
    let w = softmax(&p[..k]);
    let h = softmax(&p[k..2 * k]);
    let xs = cumulative(&w, shape.bound, p[0]);
    let ys = cumulative(&h, shape.bound, p[0]);
    let mut ds = Vec::with_capacity(k + 1);
    ds.push(p[0].lift(1.0));
    let shift = deriv_shift();
    for &r in &p[2 * k..3 * k - 1] {
        ds.push((r + shift).softplus() + MIN_DERIV);
    }
    ds.push(p[0].lift(1.0));
    Knots { xs, ys, ds }
}

/// Knot locations on the input axis (`K + 1` values from `-B` to `B`).
pub fn knot_positions(shape: SplineShape, p: &[f64]) -> Vec<f64> {
    knots(shape, p).xs
}

fn bin_index(edges: &[f64], v: f64) -> usize {
    // edges has K + 1 entries; returns k with edges[k] <= v < edges[k+1]
    let k = edges.partition_point(|&e| e <= v);
    k.saturating_sub(1).min(edges.len() - 2)
}

/// Forward map `x ↦ y` and `log dy/dx`.
pub fn forward<T: Scalar>(shape: SplineShape, p: &[T], x: T) -> (T, T) {
    let b = shape.bound;
    let xv = x.val();
    if !(xv > -b && xv < b) {
        return (x, x.lift(0.0));
    }
    let kn = knots(shape, p);
    let edges: Vec<f64> = kn.xs.iter().map(|v| v.val()).collect();
    let k = bin_index(&edges, xv);
    let (x0, x1) = (kn.xs[k], kn.xs[k + 1]);
    let (y0, y1) = (kn.ys[k], kn.ys[k + 1]);
    let (d0, d1) = (kn.ds[k], kn.ds[k + 1]);
    let w = x1 - x0;
    let h = y1 - y0;
    let s = h / w;
    let xi = (x - x0) / w;
    let om = xi * (xi * -1.0 + 1.0); // ξ(1-ξ)
    let denom = s + (d1 + d0 - s * 2.0) * om;
    let num = h * (s * xi.square() + d0 * om);
    let y = y0 + num / denom;
    let one_m = xi * -1.0 + 1.0;
    let dnum = s.square() * (d1 * xi.square() + s * om * 2.0 + d0 * one_m.square());
    let logdet = dnum.ln() - denom.ln() * 2.0;
    (y, logdet)
}

/// Inverse map `y ↦ x` (plain values; used for sampling).
pub fn inverse(shape: SplineShape, p: &[f64], y: f64) -> f64 {
    let b = shape.bound;
    if !(y > -b && y < b) {
        return y;
    }
    let kn = knots(shape, p);
    let k = bin_index(&kn.ys, y);
    let (x0, x1) = (kn.xs[k], kn.xs[k + 1]);
    let (y0, y1) = (kn.ys[k], kn.ys[k + 1]);
    let (d0, d1) = (kn.ds[k], kn.ds[k + 1]);
    let w = x1 - x0;
    let h = y1 - y0;
    let s = h / w;
    let dy = y - y0;
    let c2 = d1 + d0 - 2.0 * s;
    let a = h * (s - d0) + dy * c2;
    let bq = h * d0 - dy * c2;
    let c = -s * dy;
    let disc = (bq * bq - 4.0 * a * c).max(0.0);
    let xi = (2.0 * c) / (-bq - disc.sqrt());
    x0 + xi.clamp(0.0, 1.0) * w
}
