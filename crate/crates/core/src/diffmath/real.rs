use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::tape::Var;

/// Scalar arithmetic shared by plain `f64` evaluation and recorded [`Var`]s.
///
/// Every numerical routine in the crate is written once against this trait,
/// so the value of a recorded computation is produced by exactly the same
/// floating-point operations as its plain evaluation.
pub trait Real:
    Copy
    + Debug
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
    fn cst(c: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn square(self) -> Self;
    /// `ln(1 + e^x)`.
    fn softplus(self) -> Self;
    /// `1 / (1 + e^-x)`.
    fn sigmoid(self) -> Self;
    /// `ln(1 - e^x)` for `x < 0`.
    fn ln_1m_exp(self) -> Self;

    /// Picks the smaller operand by value. The derivative follows the chosen
    /// branch; ties go to `self`.
    fn min(self, other: Self) -> Self {
        if self.value() <= other.value() {
            self
        } else {
            other
        }
    }

    fn max(self, other: Self) -> Self {
        if self.value() >= other.value() {
            self
        } else {
            other
        }
    }
}

fn softplus_f64(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn ln_1m_exp_f64(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

impl Real for f64 {
    #[inline]
    fn cst(c: f64) -> Self {
        c
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn square(self) -> Self {
        self * self
    }
    #[inline]
    fn softplus(self) -> Self {
        softplus_f64(self)
    }
    #[inline]
    fn sigmoid(self) -> Self {
        sigmoid_f64(self)
    }
    #[inline]
    fn ln_1m_exp(self) -> Self {
        ln_1m_exp_f64(self)
    }
}

impl Real for Var<'_> {
    fn cst(c: f64) -> Self {
        Var::constant(c)
    }
    fn value(self) -> f64 {
        Var::value(&self)
    }
    fn exp(self) -> Self {
        let e = self.value().exp();
        self.unary(e, e)
    }
    fn ln(self) -> Self {
        let x = self.value();
        self.unary(x.ln(), 1.0 / x)
    }
    fn sqrt(self) -> Self {
        let s = self.value().sqrt();
        self.unary(s, 0.5 / s)
    }
    fn tanh(self) -> Self {
        let t = self.value().tanh();
        self.unary(t, 1.0 - t * t)
    }
    fn square(self) -> Self {
        let x = self.value();
        self.unary(x * x, 2.0 * x)
    }
    fn softplus(self) -> Self {
        let x = self.value();
        self.unary(softplus_f64(x), sigmoid_f64(x))
    }
    fn sigmoid(self) -> Self {
        let s = sigmoid_f64(self.value());
        self.unary(s, s * (1.0 - s))
    }
    fn ln_1m_exp(self) -> Self {
        let x = self.value();
        self.unary(ln_1m_exp_f64(x), -1.0 / (-x).exp_m1())
    }
}

/// Sum of a slice; zero for an empty slice.
pub fn sum<T: Real>(xs: &[T]) -> T {
    let mut it = xs.iter().copied();
    match it.next() {
        None => T::cst(0.0),
        Some(first) => it.fold(first, |acc, x| acc + x),
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    assert_eq!(a.len(), b.len(), "dot: length mismatch");
    let mut acc = T::cst(0.0);
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        acc = if i == 0 { x * y } else { acc + x * y };
    }
    acc
}

/// Running sums `[x_0, x_0 + x_1, ...]`.
pub fn cumsum<T: Real>(xs: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(xs.len());
    let mut acc: Option<T> = None;
    for &x in xs {
        let next = match acc {
            None => x,
            Some(a) => a + x,
        };
        out.push(next);
        acc = Some(next);
    }
    out
}

/// `ln Σ e^{x_i}` with the maximum factored out.
///
/// The shift is taken as a constant: the gradient of the shifted form is
/// the softmax regardless of the shift, so no derivative flows through it.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    assert!(!xs.is_empty(), "log_sum_exp of empty slice");
    let m = xs
        .iter()
        .map(|x| x.value())
        .fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return T::cst(m);
    }
    let shifted: Vec<T> = xs.iter().map(|&x| (x - m).exp()).collect();
    sum(&shifted).ln() + m
}

/// `ln((1/n) Σ e^{x_i})`.
pub fn log_mean_exp<T: Real>(xs: &[T]) -> T {
    log_sum_exp(xs) - (xs.len() as f64).ln()
}

/// Normalized exponentials.
pub fn softmax<T: Real>(xs: &[T]) -> Vec<T> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|&x| (x - lse).exp()).collect()
}
