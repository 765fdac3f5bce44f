//! Temperature ladders `0 = β_0 < … < β_K = 1` and the geometric bridge
//! `log γ_k = (1 - β_k) log q + β_k log p`.

use serde::{Deserialize, Serialize};

use crate::diffmath::{cumsum, softmax, BlockSource, DiagGaussian, Real};
use crate::error::{Error, Result};
use crate::models::{AffineEncoder, Model};

/// Name of the parameter block holding raw schedule parameters.
pub const SCHEDULE: &str = "schedule";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Fixed,
    Sigmoidal,
    Learnable,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "sigmoidal" => Ok(Self::Sigmoidal),
            "learnable" => Ok(Self::Learnable),
            other => Err(Error::Contract(format!("unknown schedule `{other}`"))),
        }
    }
}

/// An annealing schedule with `K` transitions.
///
/// `raw` is empty for the fixed ladder, holds one unconstrained value with
/// `δ = softplus(raw)` for the sigmoidal ladder, and `K` unconstrained logits
/// for the learnable ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule<T> {
    pub kind: ScheduleKind,
    pub k: usize,
    pub raw: Vec<T>,
}

/// `softplus⁻¹(1)`, the raw value giving `δ = 1`.
pub fn sigmoidal_raw_for_unit_delta() -> f64 {
    (std::f64::consts::E - 1.0).ln()
}

impl<T: Real> Schedule<T> {
    /// `β_0, …, β_K`. Endpoints are exact constants.
    pub fn betas(&self) -> Vec<T> {
        let k = self.k;
        let mut out = Vec::with_capacity(k + 1);
        out.push(T::cst(0.0));
        match self.kind {
            ScheduleKind::Fixed => {
                for i in 1..k {
                    out.push(T::cst(i as f64 / k as f64));
                }
            }
            ScheduleKind::Sigmoidal => {
                let delta = self.raw[0].softplus();
                let tilde = |i: usize| (delta * (2.0 * i as f64 / k as f64 - 1.0)).sigmoid();
                let lo = tilde(0);
                let span = tilde(k) - lo;
                for i in 1..k {
                    out.push((tilde(i) - lo) / span);
                }
            }
            ScheduleKind::Learnable => {
                let inc = cumsum(&softmax(&self.raw));
                out.extend_from_slice(&inc[..k - 1]);
            }
        }
        if k >= 1 {
            out.push(T::cst(1.0));
        }
        out
    }

    /// `δ` of a sigmoidal schedule.
    pub fn delta(&self) -> Option<T> {
        (self.kind == ScheduleKind::Sigmoidal).then(|| self.raw[0].softplus())
    }
}

impl Schedule<f64> {
    pub fn fixed(k: usize) -> Result<Self> {
        check_k(k)?;
        Ok(Self {
            kind: ScheduleKind::Fixed,
            k,
            raw: Vec::new(),
        })
    }

    /// Sigmoidal ladder from the raw parameter (`δ = softplus(raw)`).
    pub fn sigmoidal(k: usize, raw_delta: f64) -> Result<Self> {
        check_k(k)?;
        Ok(Self {
            kind: ScheduleKind::Sigmoidal,
            k,
            raw: vec![raw_delta],
        })
    }

    /// Sigmoidal ladder with a given `δ > 0`.
    pub fn sigmoidal_with_delta(k: usize, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::Domain(format!("delta must be > 0, got {delta}")));
        }
        // softplus⁻¹(δ) = ln(e^δ - 1), written stably.
        let raw = if delta > 30.0 {
            delta + (-(-delta).exp()).ln_1p()
        } else {
            delta.exp_m1().ln()
        };
        Self::sigmoidal(k, raw)
    }

    pub fn learnable(raw: Vec<f64>) -> Result<Self> {
        let k = raw.len();
        check_k(k)?;
        Ok(Self {
            kind: ScheduleKind::Learnable,
            k,
            raw,
        })
    }

    /// Default initialization per kind: `δ = 1` for sigmoidal, equal logits
    /// (hence `k/K`) for learnable.
    pub fn new(kind: ScheduleKind, k: usize) -> Result<Self> {
        match kind {
            ScheduleKind::Fixed => Self::fixed(k),
            ScheduleKind::Sigmoidal => Self::sigmoidal(k, sigmoidal_raw_for_unit_delta()),
            ScheduleKind::Learnable => Self::learnable(vec![0.0; k]),
        }
    }

    pub fn rebuild<U: Real>(&self, src: &impl BlockSource<U>) -> Schedule<U> {
        Schedule {
            kind: self.kind,
            k: self.k,
            raw: if self.raw.is_empty() {
                Vec::new()
            } else {
                src.block(SCHEDULE).to_vec()
            },
        }
    }

    /// Checks `β_0 = 0`, `β_K = 1` and strict monotonicity.
    pub fn validate(&self) -> Result<()> {
        let b = self.betas();
        if b[0] != 0.0 || b[self.k] != 1.0 {
            return Err(Error::Contract("schedule endpoints must be 0 and 1".into()));
        }
        if b.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Contract("schedule must be strictly increasing".into()));
        }
        Ok(())
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        Err(Error::Contract("number of transitions K must be >= 1".into()))
    } else {
        Ok(())
    }
}

/// Both endpoint log-densities and their `z`-gradients at one point.
#[derive(Debug, Clone)]
pub struct BridgeEval<T> {
    pub log_q: T,
    pub log_p: T,
    pub grad_q: Vec<T>,
    pub grad_p: Vec<T>,
}

impl<T: Real> BridgeEval<T> {
    pub fn log_gamma(&self, beta: T) -> T {
        self.log_q * (-beta + 1.0) + self.log_p * beta
    }

    pub fn grad_log_gamma(&self, beta: T) -> Vec<T> {
        let w = -beta + 1.0;
        self.grad_q
            .iter()
            .zip(&self.grad_p)
            .map(|(&gq, &gp)| gq * w + gp * beta)
            .collect()
    }
}

/// The bridge between `q_φ(·|x)` and `p_θ(x, ·)` for one observation.
#[derive(Debug, Clone)]
pub struct Bridge<'a, T> {
    pub model: &'a Model<T>,
    pub q: DiagGaussian<T>,
    pub x: &'a [f64],
}

impl<'a, T: Real> Bridge<'a, T> {
    pub fn new(model: &'a Model<T>, encoder: &AffineEncoder<T>, x: &'a [f64]) -> Self {
        Self {
            model,
            q: encoder.encode(x),
            x,
        }
    }

    pub fn dim(&self) -> usize {
        self.q.dim()
    }

    pub fn eval(&self, z: &[T]) -> BridgeEval<T> {
        let (log_p, grad_p) = self.model.log_joint_and_grad(self.x, z);
        BridgeEval {
            log_q: self.q.log_density(z),
            log_p,
            grad_q: self.q.grad_log_density(z),
            grad_p,
        }
    }

    /// `log γ_k(z)` under the ladder `betas`.
    pub fn log_gamma(&self, betas: &[T], k: usize, z: &[T]) -> Result<T> {
        let beta = beta_at(betas, k)?;
        Ok(self.eval(z).log_gamma(beta))
    }

    /// `∇_z log γ_k(z)`.
    pub fn grad_log_gamma(&self, betas: &[T], k: usize, z: &[T]) -> Result<Vec<T>> {
        let beta = beta_at(betas, k)?;
        Ok(self.eval(z).grad_log_gamma(beta))
    }
}

fn beta_at<T: Real>(betas: &[T], k: usize) -> Result<T> {
    betas.get(k).copied().ok_or_else(|| {
        Error::Contract(format!(
            "bridge index {k} out of range 0..={}",
            betas.len().saturating_sub(1)
        ))
    })
}
