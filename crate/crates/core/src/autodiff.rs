//! Minimal reverse-mode automatic differentiation over scalars.
//!
//! Every generative head evaluates its per-sample log-generative term on a
//! [`Tape`]; the conditioner networks consume the resulting gradient with
//! respect to the head parameters through their own hand-written backward
//! pass. Each node stores at most two parents together with the local partial
//! derivatives computed during the forward sweep.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
}

/// Wengert list recording a scalar computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to one value on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    val: f64,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}: {})", self.idx, self.val)
    }
}

/// Adjoints of every node with respect to one output.
pub struct Gradient {
    adjoints: Vec<f64>,
}

impl Gradient {
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        self.adjoints[v.idx as usize]
    }

    pub fn wrt_all(&self, vars: &[Var<'_>]) -> Vec<f64> {
        vars.iter().map(|v| self.wrt(*v)).collect()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_capacity(1024)
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(n)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, val: f64, parents: [u32; 2], partials: [f64; 2]) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        nodes.push(Node { parents, partials });
        Var {
            tape: self,
            idx,
            val,
        }
    }

    /// Independent input.
    pub fn var(&self, val: f64) -> Var<'_> {
        self.push(val, [NONE, NONE], [0.0, 0.0])
    }

    pub fn vars(&self, vals: &[f64]) -> Vec<Var<'_>> {
        vals.iter().map(|&v| self.var(v)).collect()
    }

    /// A constant is stored as a leaf whose adjoint is simply never read.
    pub fn constant(&self, val: f64) -> Var<'_> {
        self.var(val)
    }

    pub fn zero(&self) -> Var<'_> {
        self.constant(0.0)
    }

    fn unary(&self, a: Var<'_>, val: f64, da: f64) -> Var<'_> {
        self.push(val, [a.idx, NONE], [da, 0.0])
    }

    fn binary(&self, a: Var<'_>, b: Var<'_>, val: f64, da: f64, db: f64) -> Var<'_> {
        self.push(val, [a.idx, b.idx], [da, db])
    }

    /// Sum of a slice; empty input yields a zero constant.
    pub fn sum<'t>(&'t self, xs: &[Var<'t>]) -> Var<'t> {
        let mut it = xs.iter();
        match it.next() {
            None => self.zero(),
            Some(&first) => it.fold(first, |acc, &x| acc + x),
        }
    }

    /// Dot product of a variable slice with another variable slice.
    pub fn dot<'t>(&'t self, a: &[Var<'t>], b: &[Var<'t>]) -> Var<'t> {
        debug_assert_eq!(a.len(), b.len());
        let mut acc: Option<Var<'t>> = None;
        for (&x, &y) in a.iter().zip(b) {
            let p = x * y;
            acc = Some(match acc {
                None => p,
                Some(s) => s + p,
            });
        }
        acc.unwrap_or_else(|| self.zero())
    }

    /// Dot product of variables with plain coefficients.
    pub fn dot_const<'t>(&'t self, a: &[Var<'t>], b: &[f64]) -> Var<'t> {
        debug_assert_eq!(a.len(), b.len());
        let mut acc: Option<Var<'t>> = None;
        for (&x, &y) in a.iter().zip(b) {
            let p = x * y;
            acc = Some(match acc {
                None => p,
                Some(s) => s + p,
            });
        }
        acc.unwrap_or_else(|| self.zero())
    }

    /// Reverse sweep from `output`.
    pub fn gradient(&self, output: Var<'_>) -> Gradient {
        let nodes = self.nodes.borrow();
        let n = output.idx as usize + 1;
        let mut adj = vec![0.0; nodes.len()];
        adj[output.idx as usize] = 1.0;
        for i in (0..n).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            let node = nodes[i];
            for k in 0..2 {
                let p = node.parents[k];
                if p != NONE {
                    adj[p as usize] += g * node.partials[k];
                }
            }
        }
        Gradient { adjoints: adj }
    }
}

impl<'t> Var<'t> {
    #[inline]
    pub fn value(&self) -> f64 {
        self.val
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn exp(self) -> Self {
        let v = self.val.exp();
        self.tape.unary(self, v, v)
    }

    pub fn ln(self) -> Self {
        self.tape.unary(self, self.val.ln(), 1.0 / self.val)
    }

    pub fn sqrt(self) -> Self {
        let v = self.val.sqrt();
        self.tape.unary(self, v, 0.5 / v)
    }

    pub fn square(self) -> Self {
        self.tape.unary(self, self.val * self.val, 2.0 * self.val)
    }

    pub fn tanh(self) -> Self {
        let v = self.val.tanh();
        self.tape.unary(self, v, 1.0 - v * v)
    }

    pub fn sigmoid(self) -> Self {
        let v = sigmoid(self.val);
        self.tape.unary(self, v, v * (1.0 - v))
    }

    /// log(1 + exp(x)), evaluated stably.
    pub fn softplus(self) -> Self {
        self.tape
            .unary(self, softplus(self.val), sigmoid(self.val))
    }

    /// log σ(x) = −softplus(−x).
    pub fn log_sigmoid(self) -> Self {
        self.tape
            .unary(self, -softplus(-self.val), sigmoid(-self.val))
    }

    pub fn elu(self) -> Self {
        if self.val > 0.0 {
            self.tape.unary(self, self.val, 1.0)
        } else {
            let e = self.val.exp();
            self.tape.unary(self, e - 1.0, e)
        }
    }

    pub fn powi(self, n: i32) -> Self {
        let v = self.val.powi(n);
        let d = n as f64 * self.val.powi(n - 1);
        self.tape.unary(self, v, d)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
pub fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.tape.binary(self, rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.tape.binary(self, rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.tape
            .binary(self, rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.val;
        let v = self.val * inv;
        self.tape.binary(self, rhs, v, inv, -v * inv)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.tape.unary(self, -self.val, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self {
        self.tape.unary(self, self.val + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Self {
        self.tape.unary(self, self.val - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self {
        self.tape.unary(self, self.val * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Self {
        self.tape.unary(self, self.val / rhs, 1.0 / rhs)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs + self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        rhs.tape.unary(rhs, self - rhs.val, -1.0)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs * self
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let v = self / rhs.val;
        rhs.tape.unary(rhs, v, -v / rhs.val)
    }
}

/// Arithmetic shared by plain `f64` and tape variables, so each generative
/// head is written once and evaluated either fast (sampling, evaluation) or
/// on a tape (training gradients).
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn val(&self) -> f64;
    /// A constant living wherever `self` lives.
    fn lift(&self, c: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn square(self) -> Self;
    fn tanh(self) -> Self;
    fn softplus(self) -> Self;
    fn log_sigmoid(self) -> Self;
    fn elu(self) -> Self;
}

impl Scalar for f64 {
    fn val(&self) -> f64 {
        *self
    }
    fn lift(&self, c: f64) -> Self {
        c
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn square(self) -> Self {
        self * self
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn softplus(self) -> Self {
        softplus(self)
    }
    fn log_sigmoid(self) -> Self {
        -softplus(-self)
    }
    fn elu(self) -> Self {
        elu(self)
    }
}

impl<'t> Scalar for Var<'t> {
    fn val(&self) -> f64 {
        self.val
    }
    fn lift(&self, c: f64) -> Self {
        self.tape.constant(c)
    }
    fn exp(self) -> Self {
        Var::exp(self)
    }
    fn ln(self) -> Self {
        Var::ln(self)
    }
    fn sqrt(self) -> Self {
        Var::sqrt(self)
    }
    fn square(self) -> Self {
        Var::square(self)
    }
    fn tanh(self) -> Self {
        Var::tanh(self)
    }
    fn softplus(self) -> Self {
        Var::softplus(self)
    }
    fn log_sigmoid(self) -> Self {
        Var::log_sigmoid(self)
    }
    fn elu(self) -> Self {
        Var::elu(self)
    }
}

/// `b + W x` with `W` row-major `(b.len(), x.len())` and variable input.
pub fn affine<T: Scalar>(w: &[T], b: &[T], x: &[T]) -> Vec<T> {
    let n = x.len();
    debug_assert_eq!(w.len(), b.len() * n);
    b.iter()
        .enumerate()
        .map(|(o, &bo)| {
            w[o * n..(o + 1) * n]
                .iter()
                .zip(x)
                .fold(bo, |acc, (&wi, &xi)| acc + wi * xi)
        })
        .collect()
}

/// `b + W x` with a plain input vector.
pub fn affine_const<T: Scalar>(w: &[T], b: &[T], x: &[f64]) -> Vec<T> {
    let n = x.len();
    debug_assert_eq!(w.len(), b.len() * n);
    b.iter()
        .enumerate()
        .map(|(o, &bo)| {
            w[o * n..(o + 1) * n]
                .iter()
                .zip(x)
                .fold(bo, |acc, (&wi, &xi)| acc + wi * xi)
        })
        .collect()
}

/// `W x` without bias; `W` row-major `(rows, x.len())`.
pub fn matvec<T: Scalar>(w: &[T], x: &[T], rows: usize) -> Vec<T> {
    let n = x.len();
    (0..rows)
        .map(|o| {
            let r = &w[o * n..(o + 1) * n];
            r[1..]
                .iter()
                .zip(&x[1..])
                .fold(r[0] * x[0], |acc, (&wi, &xi)| acc + wi * xi)
        })
        .collect()
}

pub fn sum<T: Scalar>(xs: &[T]) -> T {
    let mut it = xs.iter();
    let first = *it.next().expect("sum of empty slice");
    it.fold(first, |a, &b| a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn elementary_derivatives_match_finite_differences() {
        let fs: Vec<(fn(Var<'_>) -> Var<'_>, fn(f64) -> f64)> = vec![
            (|v| v.exp(), |x| x.exp()),
            (|v| v.ln(), |x| x.ln()),
            (|v| v.sqrt(), |x| x.sqrt()),
            (|v| v.tanh(), |x| x.tanh()),
            (|v| v.sigmoid(), sigmoid),
            (|v| v.softplus(), softplus),
            (|v| v.log_sigmoid(), |x| sigmoid(x).ln()),
            (|v| v.elu(), elu),
            (|v| v.powi(3), |x| x.powi(3)),
            (|v| 2.0 / v, |x| 2.0 / x),
            (|v| 3.0 - v * v, |x| 3.0 - x * x),
        ];
        for x in [0.3, 1.7, -0.4] {
            for (g, f) in &fs {
                if x <= 0.0 && (f(0.25).is_nan() || f(-0.4).is_nan()) {
                    continue;
                }
                let tape = Tape::new();
                let v = tape.var(x);
                let out = g(v);
                let grad = tape.gradient(out);
                let expect = fd(f, x);
                if expect.is_finite() {
                    assert!((grad.wrt(v) - expect).abs() < 1e-6, "x={x}");
                }
            }
        }
    }

    #[test]
    fn shared_subexpressions_accumulate() {
        let tape = Tape::new();
        let x = tape.var(2.0);
        let y = tape.var(3.0);
        let z = x * y + x * x / y;
        let g = tape.gradient(z);
        assert!((g.wrt(x) - (3.0 + 4.0 / 3.0)).abs() < 1e-12);
        assert!((g.wrt(y) - (2.0 - 4.0 / 9.0)).abs() < 1e-12);
        assert!((z.value() - (6.0 + 4.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn dot_and_sum() {
        let tape = Tape::new();
        let a = tape.vars(&[1.0, 2.0, 3.0]);
        let s = tape.dot_const(&a, &[0.5, -1.0, 2.0]) + tape.sum(&a);
        let g = tape.gradient(s);
        assert_eq!(g.wrt_all(&a), vec![1.5, 0.0, 3.0]);
    }
}
