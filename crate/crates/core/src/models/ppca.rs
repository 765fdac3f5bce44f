use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffmath::{std_normal_logpdf, BlockSource, Real, LN_2PI};
use crate::error::{Error, Result};

/// Probabilistic PCA: `z ~ N(0, Id_d)`, `x | z ~ N(θ0 + θ1 z, σ² Id_p)`.
///
/// `theta1` is stored row-major with shape `p × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ppca<T> {
    pub theta0: Vec<T>,
    pub theta1: Vec<T>,
    pub p: usize,
    pub d: usize,
    pub sigma: f64,
}

pub const THETA0: &str = "theta0";
pub const THETA1: &str = "theta1";

impl<T: Real> Ppca<T> {
    /// Residual `x - θ0 - θ1 z`.
    fn residual(&self, x: &[f64], z: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.p, "observation dimension");
        assert_eq!(z.len(), self.d, "latent dimension");
        (0..self.p)
            .map(|i| {
                let row = &self.theta1[i * self.d..(i + 1) * self.d];
                let mut m = self.theta0[i];
                for (w, &zj) in row.iter().zip(z) {
                    m = m + *w * zj;
                }
                -(m - x[i])
            })
            .collect()
    }

    fn log_lik_from_residual(&self, r: &[T]) -> T {
        let s2 = self.sigma * self.sigma;
        let mut sq = T::cst(0.0);
        for (i, &ri) in r.iter().enumerate() {
            sq = if i == 0 { ri.square() } else { sq + ri.square() };
        }
        sq * (-0.5 / s2) - 0.5 * self.p as f64 * (LN_2PI + s2.ln())
    }

    pub fn log_joint(&self, x: &[f64], z: &[T]) -> T {
        let r = self.residual(x, z);
        std_normal_logpdf(z) + self.log_lik_from_residual(&r)
    }

    /// `(ln p(x, z), ∇_z ln p(x, z))` with `∇ = -z + θ1ᵀ r / σ²`.
    pub fn log_joint_and_grad(&self, x: &[f64], z: &[T]) -> (T, Vec<T>) {
        let r = self.residual(x, z);
        let lp = std_normal_logpdf(z) + self.log_lik_from_residual(&r);
        let inv_s2 = 1.0 / (self.sigma * self.sigma);
        let grad = (0..self.d)
            .map(|j| {
                let mut acc = -z[j];
                for (i, &ri) in r.iter().enumerate() {
                    acc = acc + self.theta1[i * self.d + j] * ri * inv_s2;
                }
                acc
            })
            .collect();
        (lp, grad)
    }
}

impl Ppca<f64> {
    pub fn new(theta0: Vec<f64>, theta1: Vec<f64>, d: usize, sigma: f64) -> Result<Self> {
        let p = theta0.len();
        if theta1.len() != p * d {
            return Err(Error::DimensionMismatch {
                context: "ppca theta1",
                expected: p * d,
                got: theta1.len(),
            });
        }
        if !(sigma > 0.0) {
            return Err(Error::Domain(format!("sigma must be > 0, got {sigma}")));
        }
        Ok(Self {
            theta0,
            theta1,
            p,
            d,
            sigma,
        })
    }

    /// Random model with standard-normal entries scaled by `scale`.
    pub fn random<R: Rng + ?Sized>(p: usize, d: usize, sigma: f64, scale: f64, rng: &mut R) -> Self {
        let theta0 = (0..p).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let theta1 = (0..p * d)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            theta0,
            theta1,
            p,
            d,
            sigma,
        }
    }

    pub fn loading(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.p, self.d, &self.theta1)
    }

    /// Replaces the loading by one with mutually orthogonal columns of the
    /// same norms (Gram-Schmidt), which makes the posterior covariance
    /// diagonal.
    pub fn orthogonalize_columns(&mut self) -> Result<()> {
        let w = self.loading();
        let mut cols: Vec<DVector<f64>> = Vec::with_capacity(self.d);
        for j in 0..self.d {
            let orig = w.column(j).into_owned();
            let norm = orig.norm();
            let mut c = orig;
            for prev in &cols {
                let proj = prev.dot(&c) / prev.norm_squared();
                c -= prev * proj;
            }
            let n = c.norm();
            if n <= 1e-12 * norm.max(1.0) {
                return Err(Error::Domain("loading is rank deficient".into()));
            }
            cols.push(c * (norm / n));
        }
        for i in 0..self.p {
            for j in 0..self.d {
                self.theta1[i * self.d + j] = cols[j][i];
            }
        }
        Ok(())
    }

    /// `ln N(x; θ0, θ1 θ1ᵀ + σ² Id_p)`.
    pub fn exact_log_evidence(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.p {
            return Err(Error::DimensionMismatch {
                context: "exact_log_evidence",
                expected: self.p,
                got: x.len(),
            });
        }
        let w = self.loading();
        let cov = &w * w.transpose() + DMatrix::identity(self.p, self.p) * self.sigma.powi(2);
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::Domain("marginal covariance is not positive definite".into()))?;
        let r = DVector::from_iterator(self.p, x.iter().zip(&self.theta0).map(|(a, b)| a - b));
        let sol = chol.solve(&r);
        let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(-0.5 * (self.p as f64 * LN_2PI + logdet + r.dot(&sol)))
    }

    /// Conjugate posterior `N(μ, Σ)` with `Σ = (Id + θ1ᵀθ1/σ²)⁻¹` and
    /// `μ = Σ θ1ᵀ (x - θ0) / σ²`.
    pub fn exact_posterior(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        assert_eq!(x.len(), self.p, "observation dimension");
        let w = self.loading();
        let s2 = self.sigma.powi(2);
        let precision = DMatrix::identity(self.d, self.d) + w.transpose() * &w / s2;
        let cov = precision
            .cholesky()
            .expect("posterior precision is positive definite")
            .inverse();
        let r = DVector::from_iterator(self.p, x.iter().zip(&self.theta0).map(|(a, b)| a - b));
        let mean = &cov * w.transpose() * r / s2;
        (mean, cov)
    }

    pub fn sample_data<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..self.d).map(|_| rng.sample(StandardNormal)).collect();
                let r = self.residual(&vec![0.0; self.p], &z);
                r.iter()
                    .map(|m| -m + self.sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }

    pub fn blocks(&self) -> Vec<(&'static str, Vec<f64>)> {
        vec![(THETA0, self.theta0.clone()), (THETA1, self.theta1.clone())]
    }

    pub fn rebuild<U: Real>(&self, src: &impl BlockSource<U>) -> Ppca<U> {
        let theta0 = src.block(THETA0).to_vec();
        let theta1 = src.block(THETA1).to_vec();
        assert_eq!(theta0.len(), self.p);
        assert_eq!(theta1.len(), self.p * self.d);
        Ppca {
            theta0,
            theta1,
            p: self.p,
            d: self.d,
            sigma: self.sigma,
        }
    }

    /// `‖θ0 - θ0*‖² + ‖θ1 - θ1*‖²`.
    pub fn squared_error(&self, truth: &Ppca<f64>) -> f64 {
        let e0: f64 = self.theta0.iter().zip(&truth.theta0).map(|(a, b)| (a - b).powi(2)).sum();
        let e1: f64 = self.theta1.iter().zip(&truth.theta1).map(|(a, b)| (a - b).powi(2)).sum();
        e0 + e1
    }
}
