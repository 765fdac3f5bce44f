//! Gaussian log-densities on [`Real`] scalars.

use super::real::Real;
use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Variance argument of [`gaussian_logpdf`].
#[derive(Debug, Clone, Copy)]
pub enum Variance<'a, T> {
    /// Same variance on every coordinate.
    Scalar(T),
    /// One variance per coordinate.
    Diag(&'a [T]),
}

/// `Σ_i [-½ ln(2π v_i) - (y_i - m_i)² / (2 v_i)]`, checked.
pub fn gaussian_logpdf<T: Real>(y: &[T], mean: &[T], var: Variance<'_, T>) -> Result<T> {
    if y.len() != mean.len() {
        return Err(Error::DimensionMismatch {
            context: "gaussian_logpdf mean",
            expected: y.len(),
            got: mean.len(),
        });
    }
    match var {
        Variance::Scalar(v) => {
            if !(v.value() > 0.0) {
                return Err(Error::Domain(format!("variance must be > 0, got {}", v.value())));
            }
            Ok(iso_normal_logpdf(y, mean, v))
        }
        Variance::Diag(v) => {
            if v.len() != y.len() {
                return Err(Error::DimensionMismatch {
                    context: "gaussian_logpdf variance",
                    expected: y.len(),
                    got: v.len(),
                });
            }
            if let Some(bad) = v.iter().find(|x| !(x.value() > 0.0)) {
                return Err(Error::Domain(format!(
                    "variance must be > 0, got {}",
                    bad.value()
                )));
            }
            Ok(diag_normal_logpdf(y, mean, v))
        }
    }
}

/// Diagonal-covariance normal log-density. Lengths must agree.
pub fn diag_normal_logpdf<T: Real>(y: &[T], mean: &[T], var: &[T]) -> T {
    debug_assert_eq!(y.len(), mean.len());
    debug_assert_eq!(y.len(), var.len());
    let mut acc = T::cst(0.0);
    for i in 0..y.len() {
        let r = y[i] - mean[i];
        let term = (var[i] * std::f64::consts::TAU).ln() * -0.5 - r.square() / (var[i] * 2.0);
        acc = if i == 0 { term } else { acc + term };
    }
    acc
}

/// Isotropic normal log-density `N(y; mean, v Id)`.
pub fn iso_normal_logpdf<T: Real>(y: &[T], mean: &[T], var: T) -> T {
    debug_assert_eq!(y.len(), mean.len());
    let mut sq = T::cst(0.0);
    for i in 0..y.len() {
        let r = (y[i] - mean[i]).square();
        sq = if i == 0 { r } else { sq + r };
    }
    (var * std::f64::consts::TAU).ln() * (-0.5 * y.len() as f64) - sq / (var * 2.0)
}

/// `N(y; 0, Id)`.
pub fn std_normal_logpdf<T: Real>(y: &[T]) -> T {
    let mut sq = T::cst(0.0);
    for (i, &v) in y.iter().enumerate() {
        sq = if i == 0 { v.square() } else { sq + v.square() };
    }
    sq * -0.5 - 0.5 * LN_2PI * y.len() as f64
}

/// Mean-field Gaussian `N(mean, diag(std²))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Real> DiagGaussian<T> {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Location-scale map `mean + std ⊙ u`.
    pub fn reparam(&self, u: &[f64]) -> Vec<T> {
        assert_eq!(u.len(), self.dim(), "noise dimension");
        self.mean
            .iter()
            .zip(&self.std)
            .zip(u)
            .map(|((&m, &s), &e)| m + s * e)
            .collect()
    }

    pub fn log_density(&self, z: &[T]) -> T {
        assert_eq!(z.len(), self.dim(), "latent dimension");
        let mut acc = T::cst(0.0);
        for i in 0..z.len() {
            let r = (z[i] - self.mean[i]) / self.std[i];
            let term = r.square() * -0.5 - self.std[i].ln() - 0.5 * LN_2PI;
            acc = if i == 0 { term } else { acc + term };
        }
        acc
    }

    /// `∇_z ln N(z; mean, diag(std²)) = -(z - mean) / std²`.
    pub fn grad_log_density(&self, z: &[T]) -> Vec<T> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((&zi, &m), &s)| -(zi - m) / s.square())
            .collect()
    }
}
