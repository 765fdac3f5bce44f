use serde::{Deserialize, Serialize};

use super::{AffineEncoder, Model, Ppca, Toy};
use crate::error::Result;

/// JSON layout of a model, tagged by `type`.
///
/// ```json
/// {"type": "ppca", "theta0": [..p], "theta1": [..p*d row-major], "p": 4, "d": 2, "sigma": 0.7}
/// {"type": "toy", "xi": 1.0, "zeta": 0.0, "sigma": 0.1, "latent_dim": 2}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ModelFixture {
    Ppca {
        theta0: Vec<f64>,
        theta1: Vec<f64>,
        p: usize,
        d: usize,
        sigma: f64,
    },
    Toy {
        xi: f64,
        zeta: f64,
        sigma: f64,
        latent_dim: usize,
    },
}

impl From<&Model<f64>> for ModelFixture {
    fn from(m: &Model<f64>) -> Self {
        match m {
            Model::Ppca(m) => ModelFixture::Ppca {
                theta0: m.theta0.clone(),
                theta1: m.theta1.clone(),
                p: m.p,
                d: m.d,
                sigma: m.sigma,
            },
            Model::Toy(m) => ModelFixture::Toy {
                xi: m.xi,
                zeta: m.zeta,
                sigma: m.sigma,
                latent_dim: m.latent_dim,
            },
        }
    }
}

impl ModelFixture {
    /// Validating conversion into a model.
    pub fn build(&self) -> Result<Model<f64>> {
        Ok(match self {
            ModelFixture::Ppca {
                theta0,
                theta1,
                p,
                d,
                sigma,
            } => {
                let m = Ppca::new(theta0.clone(), theta1.clone(), *d, *sigma)?;
                if m.p != *p {
                    return Err(crate::Error::DimensionMismatch {
                        context: "ppca fixture p",
                        expected: *p,
                        got: m.p,
                    });
                }
                Model::Ppca(m)
            }
            ModelFixture::Toy {
                xi,
                zeta,
                sigma,
                latent_dim,
            } => Model::Toy(Toy::new(*xi, *zeta, *sigma, *latent_dim)?),
        })
    }
}

/// JSON layout of the affine encoder (`a`, `c` row-major `d × p`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderFixture {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d_vec: Vec<f64>,
}

impl From<&AffineEncoder<f64>> for EncoderFixture {
    fn from(e: &AffineEncoder<f64>) -> Self {
        Self {
            a: e.a.clone(),
            b: e.b.clone(),
            c: e.c.clone(),
            d_vec: e.log_std_bias.clone(),
        }
    }
}

impl EncoderFixture {
    pub fn build(&self) -> Result<AffineEncoder<f64>> {
        AffineEncoder::new(self.a.clone(), self.b.clone(), self.c.clone(), self.d_vec.clone())
    }
}

/// Model, encoder and kernel parameters of a fitted problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedFixture {
    pub model: ModelFixture,
    pub encoder: EncoderFixture,
    pub eta: Vec<f64>,
    pub betas: Vec<f64>,
}
