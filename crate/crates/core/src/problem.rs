//! Everything an estimator reads: model, encoder, schedule and step sizes,
//! with a mapping to and from named parameter blocks.

use crate::annealing::{Schedule, SCHEDULE};
use crate::diffmath::{BlockSource, ParamSet, ParameterBlock, Real};
use crate::error::{Error, Result};
use crate::models::{AffineEncoder, Model};

/// Block holding `log η`; step sizes are `exp` of it so they stay positive.
pub const LOG_ETA: &str = "log_eta";

/// Which groups of blocks are differentiated or trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub model: bool,
    pub encoder: bool,
    pub eta: bool,
    pub schedule: bool,
}

impl Trainable {
    pub const ALL: Self = Self {
        model: true,
        encoder: true,
        eta: true,
        schedule: true,
    };
    pub const NONE: Self = Self {
        model: false,
        encoder: false,
        eta: false,
        schedule: false,
    };
    pub const MODEL_AND_ENCODER: Self = Self {
        model: true,
        encoder: true,
        eta: false,
        schedule: false,
    };
    pub const ENCODER: Self = Self {
        model: false,
        encoder: true,
        eta: false,
        schedule: false,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem<T> {
    pub model: Model<T>,
    pub encoder: AffineEncoder<T>,
    pub schedule: Schedule<T>,
    pub log_eta: Vec<T>,
}

impl<T: Real> Problem<T> {
    pub fn eta(&self) -> Vec<T> {
        self.log_eta.iter().map(|v| v.exp()).collect()
    }

    pub fn betas(&self) -> Vec<T> {
        self.schedule.betas()
    }

    pub fn latent_dim(&self) -> usize {
        self.model.latent_dim()
    }
}

impl Problem<f64> {
    pub fn new(
        model: Model<f64>,
        encoder: AffineEncoder<f64>,
        schedule: Schedule<f64>,
        eta: &[f64],
    ) -> Result<Self> {
        let d = model.latent_dim();
        for (ctx, got, want) in [
            ("encoder latent dimension", encoder.d, d),
            ("encoder observation dimension", encoder.p, model.obs_dim()),
            ("step-size dimension", eta.len(), d),
        ] {
            if got != want {
                return Err(Error::DimensionMismatch {
                    context: ctx,
                    expected: want,
                    got,
                });
            }
        }
        if eta.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::Domain("step sizes must be > 0".into()));
        }
        schedule.validate()?;
        Ok(Self {
            model,
            encoder,
            schedule,
            log_eta: eta.iter().map(|e| e.ln()).collect(),
        })
    }

    pub fn k(&self) -> usize {
        self.schedule.k
    }

    pub fn set_eta(&mut self, eta: &[f64]) {
        assert_eq!(eta.len(), self.log_eta.len(), "step-size dimension");
        self.log_eta = eta.iter().map(|e| e.ln()).collect();
    }

    /// Blocks in a fixed order: model, encoder, `log_eta`, schedule.
    pub fn param_set(&self, t: Trainable) -> ParamSet {
        let mut ps = ParamSet::new();
        let mut push = |name: &str, values: Vec<f64>, on: bool| {
            ps.push(ParameterBlock::new(name, values, on))
                .expect("block names are distinct");
        };
        for (name, v) in self.model.blocks() {
            push(name, v, t.model);
        }
        for (name, v) in self.encoder.blocks() {
            push(name, v, t.encoder);
        }
        push(LOG_ETA, self.log_eta.clone(), t.eta);
        if !self.schedule.raw.is_empty() {
            push(SCHEDULE, self.schedule.raw.clone(), t.schedule);
        }
        ps
    }

    pub fn rebuild<U: Real>(&self, src: &impl BlockSource<U>) -> Problem<U> {
        Problem {
            model: self.model.rebuild(src),
            encoder: self.encoder.rebuild(src),
            schedule: self.schedule.rebuild(src),
            log_eta: src.block(LOG_ETA).to_vec(),
        }
    }

    /// Copy with every block taken from `ps`.
    pub fn with_params(&self, ps: &ParamSet) -> Self {
        self.rebuild(ps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Ppca;

    #[test]
    fn round_trip_through_blocks() {
        let m = Model::Ppca(Ppca::new(vec![0.1, 0.2, 0.3], vec![1.0, 0.5, -0.3, 0.8, 0.2, 0.1], 2, 0.7).unwrap());
        let e = AffineEncoder::standard(2, 3);
        let s = Schedule::new(crate::annealing::ScheduleKind::Sigmoidal, 4).unwrap();
        let p = Problem::new(m, e, s, &[0.1, 0.2]).unwrap();
        let ps = p.param_set(Trainable::ALL);
        assert_eq!(p.with_params(&ps), p);
        assert_eq!(ps.trainable_len(), 3 + 6 + 16 + 2 + 1);
        assert!(Problem::new(p.model.clone(), p.encoder.clone(), p.schedule.clone(), &[0.1]).is_err());
    }
}
