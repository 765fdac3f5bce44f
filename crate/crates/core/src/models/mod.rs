//! Target generative models, the affine mean-field encoder, and closed-form
//! evidence for the linear-Gaussian case.

mod encoder;
mod fixture;
mod ppca;
mod toy;

pub use encoder::{AffineEncoder, ENC_A, ENC_B, ENC_C, ENC_D};
pub use fixture::{EncoderFixture, FittedFixture, ModelFixture};
pub use ppca::{Ppca, THETA0, THETA1};
pub use toy::{Toy, XI, ZETA};

use crate::diffmath::{BlockSource, Real};

/// A latent-variable model `p_θ(x, z)` for one datapoint.
#[derive(Debug, Clone, PartialEq)]
pub enum Model<T> {
    Ppca(Ppca<T>),
    Toy(Toy<T>),
}

impl<T: Real> Model<T> {
    pub fn latent_dim(&self) -> usize {
        match self {
            Model::Ppca(m) => m.d,
            Model::Toy(m) => m.latent_dim,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            Model::Ppca(m) => m.p,
            Model::Toy(_) => 1,
        }
    }

    pub fn log_joint(&self, x: &[f64], z: &[T]) -> T {
        match self {
            Model::Ppca(m) => m.log_joint(x, z),
            Model::Toy(m) => m.log_joint(x, z),
        }
    }

    pub fn log_joint_and_grad(&self, x: &[f64], z: &[T]) -> (T, Vec<T>) {
        match self {
            Model::Ppca(m) => m.log_joint_and_grad(x, z),
            Model::Toy(m) => m.log_joint_and_grad(x, z),
        }
    }

    /// Joint density of a dataset of i.i.d. pairs `(x_i, z_i)`.
    pub fn log_joint_dataset(&self, xs: &[Vec<f64>], zs: &[Vec<T>]) -> T {
        assert_eq!(xs.len(), zs.len(), "one latent per observation");
        let mut acc = T::cst(0.0);
        for (i, (x, z)) in xs.iter().zip(zs).enumerate() {
            let lp = self.log_joint(x, z);
            acc = if i == 0 { lp } else { acc + lp };
        }
        acc
    }
}

impl Model<f64> {
    pub fn blocks(&self) -> Vec<(&'static str, Vec<f64>)> {
        match self {
            Model::Ppca(m) => m.blocks(),
            Model::Toy(m) => m.blocks(),
        }
    }

    pub fn rebuild<U: Real>(&self, src: &impl BlockSource<U>) -> Model<U> {
        match self {
            Model::Ppca(m) => Model::Ppca(m.rebuild(src)),
            Model::Toy(m) => Model::Toy(m.rebuild(src)),
        }
    }

    /// Squared parameter error against a reference model of the same kind.
    pub fn squared_error(&self, truth: &Model<f64>) -> f64 {
        match (self, truth) {
            (Model::Ppca(a), Model::Ppca(b)) => a.squared_error(b),
            (Model::Toy(a), Model::Toy(b)) => a.squared_error(b),
            _ => panic!("squared_error between different model kinds"),
        }
    }
}
