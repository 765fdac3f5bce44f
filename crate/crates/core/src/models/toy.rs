use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffmath::{std_normal_logpdf, BlockSource, Real, LN_2PI};
use crate::error::{Error, Result};

/// Hierarchical toy model for one datapoint: `z ~ N(0, Id_d)`,
/// `x | z ~ N(ξ (‖z‖² + ζ), σ²)` with scalar `x`.
///
/// A dataset of `N` points has `N·d` latent coordinates; its joint density is
/// the sum of the per-point terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Toy<T> {
    pub xi: T,
    pub zeta: T,
    pub sigma: f64,
    pub latent_dim: usize,
}

pub const XI: &str = "xi";
pub const ZETA: &str = "zeta";

impl<T: Real> Toy<T> {
    fn mean(&self, z: &[T]) -> T {
        let mut sq = T::cst(0.0);
        for (i, &zi) in z.iter().enumerate() {
            sq = if i == 0 { zi.square() } else { sq + zi.square() };
        }
        self.xi * (sq + self.zeta)
    }

    pub fn log_joint(&self, x: &[f64], z: &[T]) -> T {
        self.log_joint_and_grad(x, z).0
    }

    /// `∇_z = -z + 2 ξ (x - m) z / σ²` where `m = ξ(‖z‖² + ζ)`.
    pub fn log_joint_and_grad(&self, x: &[f64], z: &[T]) -> (T, Vec<T>) {
        assert_eq!(x.len(), 1, "toy observations are scalar");
        assert_eq!(z.len(), self.latent_dim, "latent dimension");
        let s2 = self.sigma * self.sigma;
        let r = -(self.mean(z) - x[0]);
        let lp = std_normal_logpdf(z) + r.square() * (-0.5 / s2) - 0.5 * (LN_2PI + s2.ln());
        let coef = self.xi * r * (2.0 / s2);
        let grad = z.iter().map(|&zi| coef * zi - zi).collect();
        (lp, grad)
    }
}

impl Toy<f64> {
    pub fn new(xi: f64, zeta: f64, sigma: f64, latent_dim: usize) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::Domain(format!("sigma must be > 0, got {sigma}")));
        }
        if latent_dim == 0 {
            return Err(Error::Contract("latent dimension must be >= 1".into()));
        }
        Ok(Self {
            xi,
            zeta,
            sigma,
            latent_dim,
        })
    }

    /// Defaults used by the desk-scale studies: ξ = 1, ζ = 0, σ = 0.1, d = 2.
    pub fn default_2d() -> Self {
        Self::new(1.0, 0.0, 0.1, 2).expect("valid defaults")
    }

    /// Draws `(x_i, z_i)` pairs; returns observations and the latents.
    pub fn sample_data<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut xs = Vec::with_capacity(n);
        let mut zs = Vec::with_capacity(n);
        for _ in 0..n {
            let z: Vec<f64> = (0..self.latent_dim).map(|_| rng.sample(StandardNormal)).collect();
            let m = self.mean(&z);
            xs.push(vec![m + self.sigma * rng.sample::<f64, _>(StandardNormal)]);
            zs.push(z);
        }
        (xs, zs)
    }

    pub fn blocks(&self) -> Vec<(&'static str, Vec<f64>)> {
        vec![(XI, vec![self.xi]), (ZETA, vec![self.zeta])]
    }

    pub fn rebuild<U: Real>(&self, src: &impl BlockSource<U>) -> Toy<U> {
        Toy {
            xi: src.block(XI)[0],
            zeta: src.block(ZETA)[0],
            sigma: self.sigma,
            latent_dim: self.latent_dim,
        }
    }

    pub fn squared_error(&self, truth: &Toy<f64>) -> f64 {
        (self.xi - truth.xi).powi(2) + (self.zeta - truth.zeta).powi(2)
    }
}
