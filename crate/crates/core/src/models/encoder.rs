use crate::diffmath::{BlockSource, DiagGaussian, Real};
use crate::error::{Error, Result};

use super::ppca::Ppca;

/// Mean-field Gaussian family with affine maps of the observation:
/// `μ(x) = A x + b`, `σ(x) = exp(C x + d)`.
///
/// `a` and `c` are row-major `d × p`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineEncoder<T> {
    pub a: Vec<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
    pub log_std_bias: Vec<T>,
    pub d: usize,
    pub p: usize,
}

pub const ENC_A: &str = "enc.a";
pub const ENC_B: &str = "enc.b";
pub const ENC_C: &str = "enc.c";
pub const ENC_D: &str = "enc.d";

fn affine<T: Real>(w: &[T], bias: &[T], x: &[f64], p: usize) -> Vec<T> {
    bias.iter()
        .enumerate()
        .map(|(i, &b)| {
            let row = &w[i * p..(i + 1) * p];
            row.iter().zip(x).fold(b, |acc, (&wij, &xj)| acc + wij * xj)
        })
        .collect()
}

impl<T: Real> AffineEncoder<T> {
    pub fn encode(&self, x: &[f64]) -> DiagGaussian<T> {
        assert_eq!(x.len(), self.p, "observation dimension");
        let mean = affine(&self.a, &self.b, x, self.p);
        let std = affine(&self.c, &self.log_std_bias, x, self.p)
            .into_iter()
            .map(|s| s.exp())
            .collect();
        DiagGaussian { mean, std }
    }

    /// `V_{φ,x}(u0) = μ(x) + σ(x) ⊙ u0`.
    pub fn reparam_sample(&self, x: &[f64], u0: &[f64]) -> Vec<T> {
        self.encode(x).reparam(u0)
    }

    pub fn log_q(&self, x: &[f64], z: &[T]) -> T {
        self.encode(x).log_density(z)
    }
}

impl AffineEncoder<f64> {
    /// All-zero parameters: `q(z|x) = N(0, Id)` for every `x`.
    pub fn standard(d: usize, p: usize) -> Self {
        Self {
            a: vec![0.0; d * p],
            b: vec![0.0; d],
            c: vec![0.0; d * p],
            log_std_bias: vec![0.0; d],
            d,
            p,
        }
    }

    pub fn new(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>, log_std_bias: Vec<f64>) -> Result<Self> {
        let d = b.len();
        if d == 0 {
            return Err(Error::Contract("latent dimension must be >= 1".into()));
        }
        let p = a.len() / d;
        for (ctx, got, want) in [
            ("encoder A", a.len(), d * p),
            ("encoder C", c.len(), d * p),
            ("encoder log-std bias", log_std_bias.len(), d),
        ] {
            if got != want {
                return Err(Error::DimensionMismatch {
                    context: ctx,
                    expected: want,
                    got,
                });
            }
        }
        Ok(Self {
            a,
            b,
            c,
            log_std_bias,
            d,
            p,
        })
    }

    /// Encoder whose mean is the exact pPCA posterior mean and whose scales
    /// are the inverse square roots of the posterior precision diagonal.
    /// This is the KL(q‖p)-optimal mean-field approximation.
    pub fn mean_field_posterior(model: &Ppca<f64>) -> Self {
        let w = model.loading();
        let s2 = model.sigma.powi(2);
        let precision = nalgebra::DMatrix::identity(model.d, model.d) + w.transpose() * &w / s2;
        let cov = precision
            .clone()
            .cholesky()
            .expect("posterior precision is positive definite")
            .inverse();
        let gain = &cov * w.transpose() / s2;
        let mut a = Vec::with_capacity(model.d * model.p);
        for i in 0..model.d {
            for j in 0..model.p {
                a.push(gain[(i, j)]);
            }
        }
        let b: Vec<f64> = (0..model.d)
            .map(|i| -(0..model.p).map(|j| gain[(i, j)] * model.theta0[j]).sum::<f64>())
            .collect();
        let log_std_bias = (0..model.d).map(|i| -0.5 * precision[(i, i)].ln()).collect();
        Self {
            a,
            b,
            c: vec![0.0; model.d * model.p],
            log_std_bias,
            d: model.d,
            p: model.p,
        }
    }

    /// Encoder equal to the exact posterior. Requires a diagonal posterior
    /// covariance, i.e. a loading with orthogonal columns.
    pub fn exact_posterior(model: &Ppca<f64>) -> Result<Self> {
        let w = model.loading();
        let gram = w.transpose() * &w;
        let scale = gram.diagonal().amax().max(1.0);
        for i in 0..model.d {
            for j in 0..model.d {
                if i != j && gram[(i, j)].abs() > 1e-10 * scale {
                    return Err(Error::Domain(
                        "posterior covariance is not diagonal; orthogonalize the loading".into(),
                    ));
                }
            }
        }
        Ok(Self::mean_field_posterior(model))
    }

    /// Multiplies every scale by `factor`.
    pub fn inflate(mut self, factor: f64) -> Self {
        for v in &mut self.log_std_bias {
            *v += factor.ln();
        }
        self
    }

    pub fn blocks(&self) -> Vec<(&'static str, Vec<f64>)> {
        vec![
            (ENC_A, self.a.clone()),
            (ENC_B, self.b.clone()),
            (ENC_C, self.c.clone()),
            (ENC_D, self.log_std_bias.clone()),
        ]
    }

    pub fn rebuild<U: Real>(&self, src: &impl BlockSource<U>) -> AffineEncoder<U> {
        AffineEncoder {
            a: src.block(ENC_A).to_vec(),
            b: src.block(ENC_B).to_vec(),
            c: src.block(ENC_C).to_vec(),
            log_std_bias: src.block(ENC_D).to_vec(),
            d: self.d,
            p: self.p,
        }
    }
}
