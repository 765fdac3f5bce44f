//! Evidence estimators: single-sample ELBO, importance weighted bound,
//! sequential importance sampling with unadjusted Langevin moves, and
//! annealed importance sampling with Metropolis-adjusted moves.
//!
//! Each estimator is generic over [`Real`], so the same code yields plain
//! log-weights and differentiable ones.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{StandardNormal, StandardUniform};
use serde::{Deserialize, Serialize};

use crate::annealing::Bridge;
use crate::diffmath::{log_mean_exp, Real};
use crate::error::{Error, Result};
use crate::kernels::{
    langevin_map, mala_log_accept, metropolis, rwm_log_accept, rwm_propose, ula_log_density,
    AcceptRule, State,
};
use crate::problem::Problem;
use crate::rng;

/// Pre-drawn randomness of one chain.
///
/// Draw order from the chain's stream: `u0` (d normals), then for each
/// `k = 1..=K` the noise `u_k` (d normals) followed by one uniform `v_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainNoise {
    pub u0: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<f64>,
}

impl ChainNoise {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, d: usize, k: usize) -> Self {
        let mut normals = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
        let u0 = normals(d);
        let mut u = Vec::with_capacity(k);
        let mut v = Vec::with_capacity(k);
        for _ in 0..k {
            u.push((0..d).map(|_| rng.sample(StandardNormal)).collect());
            v.push(rng.sample(StandardUniform));
        }
        Self { u0, u, v }
    }

    /// Noise of chain `index` under `seed`.
    pub fn for_chain(seed: u64, index: u64, d: usize, k: usize) -> Self {
        Self::draw(&mut rng::stream(seed, index), d, k)
    }
}

/// `n` reparameterization noises for one importance-weighted estimate.
pub fn particle_noise(seed: u64, index: u64, d: usize, n: usize) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, index);
    (0..n)
        .map(|_| (0..d).map(|_| r.sample(StandardNormal)).collect())
        .collect()
}

/// Transition used inside annealed importance sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AisKernel {
    /// Langevin proposal with Metropolis correction.
    Mala,
    /// Random walk with `Σ^{1/2} = √(2η)`.
    Rwm,
}

/// Where the accept bits of an AIS run come from.
#[derive(Debug, Clone, Copy)]
pub enum AcceptSource<'a> {
    /// Compare each `v_k` of the chain noise with the acceptance probability.
    Draw,
    /// Reuse recorded bits, holding the discrete path fixed.
    Replay(&'a [bool]),
}

/// One chain realization.
///
/// For SIS and AIS, `z` holds `z_0..z_K` and `u` the noises `u_1..u_K`.
/// For the single-sample and importance-weighted bounds, `z` holds the
/// particles and `u` is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub z: Vec<Vec<T>>,
    pub u: Vec<Vec<f64>>,
    /// Accept bits `a_1..a_K` (AIS only).
    pub accepted: Vec<bool>,
    pub log_w: T,
    /// `Σ_k log α^{a_k}` (AIS only; zero otherwise).
    pub log_a: T,
    /// Per-step acceptance probability; for SIS the probability the
    /// corresponding Metropolis test would have had.
    pub accept_probs: Vec<f64>,
}

impl<T: Real> Trajectory<T> {
    pub fn to_f64(&self) -> Trajectory<f64> {
        Trajectory {
            z: self
                .z
                .iter()
                .map(|z| z.iter().map(|v| v.value()).collect())
                .collect(),
            u: self.u.clone(),
            accepted: self.accepted.clone(),
            log_w: self.log_w.value(),
            log_a: self.log_a.value(),
            accept_probs: self.accept_probs.clone(),
        }
    }

    pub fn accept_count(&self) -> usize {
        self.accepted.iter().filter(|&&a| a).count()
    }

    pub fn mean_accept_prob(&self) -> f64 {
        if self.accept_probs.is_empty() {
            return f64::NAN;
        }
        self.accept_probs.iter().sum::<f64>() / self.accept_probs.len() as f64
    }

    pub fn last(&self) -> &[T] {
        self.z.last().expect("non-empty trajectory")
    }
}

/// `log p(x, V(u0)) - log q(V(u0) | x)`.
pub fn elbo_vae<T: Real>(p: &Problem<T>, x: &[f64], u0: &[f64]) -> T {
    let q = p.encoder.encode(x);
    let z = q.reparam(u0);
    p.model.log_joint(x, &z) - q.log_density(&z)
}

/// Per-particle log-weights `log p(x, z_i) - log q(z_i | x)`.
pub fn iwae_log_weights<T: Real>(p: &Problem<T>, x: &[f64], u0s: &[Vec<f64>]) -> Vec<T> {
    let q = p.encoder.encode(x);
    u0s.iter()
        .map(|u0| {
            let z = q.reparam(u0);
            p.model.log_joint(x, &z) - q.log_density(&z)
        })
        .collect()
}

/// `log (1/n) Σ_i exp(log w_i)`.
pub fn iwae<T: Real>(p: &Problem<T>, x: &[f64], u0s: &[Vec<f64>]) -> Result<T> {
    if u0s.is_empty() {
        return Err(Error::Contract("importance weighted bound needs n >= 1".into()));
    }
    Ok(log_mean_exp(&iwae_log_weights(p, x, u0s)))
}

/// Sequential importance sampling with ULA forward kernels and backward
/// kernels `ℓ_{k-1} = m_k`:
/// `W = -log q(z_0) + Σ_k [log m_k(z_k, z_{k-1}) - log m_k(z_{k-1}, z_k)] + log p(x, z_K)`.
pub fn sis_estimate<T: Real>(p: &Problem<T>, x: &[f64], noise: &ChainNoise) -> Trajectory<T> {
    let bridge = Bridge::new(&p.model, &p.encoder, x);
    let betas = p.betas();
    let eta = p.eta();
    let k_max = betas.len() - 1;
    assert_eq!(noise.u.len(), k_max, "noise length must equal K");

    let z0 = bridge.q.reparam(&noise.u0);
    let mut eval = bridge.eval(&z0);
    let mut log_w = -eval.log_q;
    let mut zs = Vec::with_capacity(k_max + 1);
    let mut accept_probs = Vec::with_capacity(k_max);
    let mut z = z0;
    for k in 1..=k_max {
        let beta = betas[k];
        let from = State::from_bridge(z, &eval, beta);
        let y = langevin_map(&from.z, &from.grad, &eta, &noise.u[k - 1]);
        let eval_y = bridge.eval(&y);
        let to = State::from_bridge(y, &eval_y, beta);
        let fwd = ula_log_density(&from, &to.z, &eta);
        let bwd = ula_log_density(&to, &from.z, &eta);
        log_w = log_w + bwd - fwd;
        let shadow = (to.log_density + bwd - from.log_density - fwd).value().min(0.0);
        accept_probs.push(shadow.exp());
        zs.push(from.z);
        z = to.z;
        eval = eval_y;
    }
    log_w = log_w + eval.log_p;
    zs.push(z);
    Trajectory {
        z: zs,
        u: noise.u.clone(),
        accepted: Vec::new(),
        log_w,
        log_a: T::cst(0.0),
        accept_probs,
    }
}

/// Annealed importance sampling. For each `k`, the increment
/// `(β_k - β_{k-1}) (log p(x, z_{k-1}) - log q(z_{k-1}))` is added before the
/// `k`-th Metropolis move targeting `γ_k`.
pub fn ais_estimate<T: Real>(
    p: &Problem<T>,
    x: &[f64],
    noise: &ChainNoise,
    kernel: AisKernel,
    accept: AcceptSource<'_>,
) -> Result<Trajectory<T>> {
    let bridge = Bridge::new(&p.model, &p.encoder, x);
    let betas = p.betas();
    let eta = p.eta();
    let k_max = betas.len() - 1;
    if noise.u.len() != k_max || noise.v.len() != k_max {
        return Err(Error::DimensionMismatch {
            context: "ais noise length",
            expected: k_max,
            got: noise.u.len(),
        });
    }
    if let AcceptSource::Replay(bits) = accept {
        if bits.len() != k_max {
            return Err(Error::DimensionMismatch {
                context: "replayed accept bits",
                expected: k_max,
                got: bits.len(),
            });
        }
    }
    let scale: Vec<T> = eta.iter().map(|&e| (e * 2.0).sqrt()).collect();

    let z0 = bridge.q.reparam(&noise.u0);
    let mut eval = bridge.eval(&z0);
    let mut z = z0;
    let mut log_w = T::cst(0.0);
    let mut log_a = T::cst(0.0);
    let mut zs = Vec::with_capacity(k_max + 1);
    let mut accepted = Vec::with_capacity(k_max);
    let mut accept_probs = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let term = (betas[k] - betas[k - 1]) * (eval.log_p - eval.log_q);
        log_w = if k == 1 { term } else { log_w + term };

        let from = State::from_bridge(z, &eval, betas[k]);
        let y = match kernel {
            AisKernel::Mala => langevin_map(&from.z, &from.grad, &eta, &noise.u[k - 1]),
            AisKernel::Rwm => rwm_propose(&from.z, &noise.u[k - 1], &scale),
        };
        let eval_y = bridge.eval(&y);
        let to = State::from_bridge(y, &eval_y, betas[k]);
        let log_alpha = match kernel {
            AisKernel::Mala => mala_log_accept(&from, &to, &eta),
            AisKernel::Rwm => rwm_log_accept(from.log_density, to.log_density),
        };
        let rule = match accept {
            AcceptSource::Draw => AcceptRule::Uniform(noise.v[k - 1]),
            AcceptSource::Replay(bits) => AcceptRule::Forced(bits[k - 1]),
        };
        accept_probs.push(log_alpha.value().exp());
        let step = metropolis(&from, to, log_alpha, rule)?;
        log_a = if k == 1 { step.log_alpha } else { log_a + step.log_alpha };
        accepted.push(step.accepted);
        if step.accepted {
            eval = eval_y;
        }
        zs.push(from.z);
        z = step.next.z;
    }
    zs.push(z);
    Ok(Trajectory {
        z: zs,
        u: noise.u.clone(),
        accepted,
        log_w,
        log_a,
        accept_probs,
    })
}

/// Which estimator a batch runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EstimatorKind {
    Vae,
    Iwae { particles: usize },
    Sis,
    Ais { kernel: AisKernel },
}

impl EstimatorKind {
    pub const AIS: Self = EstimatorKind::Ais {
        kernel: AisKernel::Mala,
    };
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorKind::Vae => write!(f, "vae"),
            EstimatorKind::Iwae { .. } => write!(f, "iwae"),
            EstimatorKind::Sis => write!(f, "sis"),
            EstimatorKind::Ais {
                kernel: AisKernel::Mala,
            } => write!(f, "ais"),
            EstimatorKind::Ais {
                kernel: AisKernel::Rwm,
            } => write!(f, "ais-rwm"),
        }
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    /// `vae`, `iwae` (one particle; set `particles` separately), `sis`,
    /// `ais`, `ais-rwm`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vae" => Ok(Self::Vae),
            "iwae" => Ok(Self::Iwae { particles: 1 }),
            "sis" => Ok(Self::Sis),
            "ais" => Ok(Self::AIS),
            "ais-rwm" => Ok(Self::Ais {
                kernel: AisKernel::Rwm,
            }),
            other => Err(Error::Contract(format!("unknown estimator `{other}`"))),
        }
    }
}

/// Runs one chain (or particle set) of `kind` on stream `index`.
pub fn run_chain<T: Real>(
    kind: EstimatorKind,
    p: &Problem<T>,
    x: &[f64],
    seed: u64,
    index: u64,
) -> Result<Trajectory<T>> {
    let d = p.latent_dim();
    match kind {
        EstimatorKind::Vae | EstimatorKind::Iwae { .. } => {
            let n = match kind {
                EstimatorKind::Iwae { particles } => particles,
                _ => 1,
            };
            let u0s = particle_noise(seed, index, d, n);
            let q = p.encoder.encode(x);
            let log_w = iwae(p, x, &u0s)?;
            Ok(Trajectory {
                z: u0s.iter().map(|u| q.reparam(u)).collect(),
                u: Vec::new(),
                accepted: Vec::new(),
                log_w,
                log_a: T::cst(0.0),
                accept_probs: Vec::new(),
            })
        }
        EstimatorKind::Sis => {
            let noise = ChainNoise::for_chain(seed, index, d, p.schedule.k);
            Ok(sis_estimate(p, x, &noise))
        }
        EstimatorKind::Ais { kernel } => {
            let noise = ChainNoise::for_chain(seed, index, d, p.schedule.k);
            ais_estimate(p, x, &noise, kernel, AcceptSource::Draw)
        }
    }
}

/// Per-chain row of an [`EstimateBatch`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub stream: u64,
    pub log_w: f64,
    pub log_a: f64,
    pub accepts: usize,
    pub mean_accept_prob: f64,
}

/// Summary statistics of per-chain log-weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample variance (divisor `n - 1`; zero when `n = 1`).
    pub variance: f64,
    pub std_err: f64,
    /// Log of the `n`-chain evidence estimate.
    pub log_mean_exp: f64,
    pub mean_accept_prob: f64,
}

impl Summary {
    pub fn of(values: &[f64], accept: &[f64]) -> Self {
        let n = values.len();
        let (mean, variance) = mean_var(values);
        let acc: Vec<f64> = accept.iter().copied().filter(|a| a.is_finite()).collect();
        Self {
            n,
            mean,
            variance,
            std_err: (variance / n as f64).sqrt(),
            log_mean_exp: log_mean_exp(values),
            mean_accept_prob: if acc.is_empty() {
                f64::NAN
            } else {
                acc.iter().sum::<f64>() / acc.len() as f64
            },
        }
    }
}

/// Mean and sample variance, accumulated in index order.
pub fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    (mean, var)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateBatch {
    pub kind: EstimatorKind,
    pub seed: u64,
    pub trajectories: Vec<Trajectory<f64>>,
    pub records: Vec<ChainRecord>,
    pub summary: Summary,
}

impl EstimateBatch {
    pub fn log_w(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.log_w).collect()
    }
}

/// `n` independent chains on streams `0..n` of `seed`.
pub fn estimate_batch(
    kind: EstimatorKind,
    p: &Problem<f64>,
    x: &[f64],
    n: usize,
    seed: u64,
) -> Result<EstimateBatch> {
    if n == 0 {
        return Err(Error::Contract("batch size n must be >= 1".into()));
    }
    let mut trajectories = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let t = run_chain(kind, p, x, seed, i)?;
        records.push(ChainRecord {
            stream: i,
            log_w: t.log_w,
            log_a: t.log_a,
            accepts: t.accept_count(),
            mean_accept_prob: t.mean_accept_prob(),
        });
        trajectories.push(t);
    }
    let lw: Vec<f64> = records.iter().map(|r| r.log_w).collect();
    let acc: Vec<f64> = records.iter().map(|r| r.mean_accept_prob).collect();
    Ok(EstimateBatch {
        kind,
        seed,
        trajectories,
        records,
        summary: Summary::of(&lw, &acc),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annealing::Schedule;
    use crate::models::{AffineEncoder, Model, Ppca};

    fn conjugate(k: usize) -> (Problem<f64>, Vec<f64>, f64) {
        let mut m = Ppca::new(
            vec![0.2, -0.4, 0.1],
            vec![1.0, 0.3, -0.5, 0.9, 0.4, -0.2],
            2,
            0.8,
        )
        .unwrap();
        m.orthogonalize_columns().unwrap();
        let e = AffineEncoder::exact_posterior(&m).unwrap();
        let x = vec![0.5, 1.0, -0.7];
        let lz = m.exact_log_evidence(&x).unwrap();
        let p = Problem::new(Model::Ppca(m), e, Schedule::fixed(k).unwrap(), &[0.05, 0.05]).unwrap();
        (p, x, lz)
    }

    #[test]
    fn posterior_q_gives_exact_bounds() {
        let (p, x, lz) = conjugate(4);
        for i in 0..20 {
            let noise = ChainNoise::for_chain(3, i, 2, 4);
            assert!((elbo_vae(&p, &x, &noise.u0) - lz).abs() < 1e-10);
            let t = ais_estimate(&p, &x, &noise, AisKernel::Mala, AcceptSource::Draw).unwrap();
            assert!((t.log_w - lz).abs() < 1e-10);
        }
        let u0s = particle_noise(1, 0, 2, 7);
        assert!((iwae(&p, &x, &u0s).unwrap() - lz).abs() < 1e-10);
    }

    #[test]
    fn single_step_ais_is_importance_sampling() {
        let (mut p, x, _) = conjugate(1);
        p.encoder = AffineEncoder::standard(2, 3);
        let noise = ChainNoise::for_chain(9, 0, 2, 1);
        let t = ais_estimate(&p, &x, &noise, AisKernel::Mala, AcceptSource::Draw).unwrap();
        let z0 = &t.z[0];
        let want = p.model.log_joint(&x, z0) - p.encoder.log_q(&x, z0);
        assert_eq!(t.log_w, want);
        assert_eq!(t.log_w, elbo_vae(&p, &x, &noise.u0));
    }

    #[test]
    fn replay_reconstructs_states() {
        let (mut p, x, _) = conjugate(5);
        p.encoder = AffineEncoder::standard(2, 3);
        p.set_eta(&[0.3, 0.3]);
        let noise = ChainNoise::for_chain(4, 2, 2, 5);
        let t = ais_estimate(&p, &x, &noise, AisKernel::Mala, AcceptSource::Draw).unwrap();
        let r = ais_estimate(&p, &x, &noise, AisKernel::Mala, AcceptSource::Replay(&t.accepted))
            .unwrap();
        assert_eq!(t, r);
        for k in 1..=5 {
            if !t.accepted[k - 1] {
                assert_eq!(t.z[k], t.z[k - 1]);
            }
        }
    }

    #[test]
    fn batches_are_deterministic() {
        let (p, x, _) = conjugate(3);
        let a = estimate_batch(EstimatorKind::Sis, &p, &x, 5, 11).unwrap();
        let b = estimate_batch(EstimatorKind::Sis, &p, &x, 5, 11).unwrap();
        assert_eq!(a, b);
        let one = estimate_batch(EstimatorKind::AIS, &p, &x, 1, 11).unwrap();
        assert_eq!(one.summary.mean, one.records[0].log_w);
        assert!(estimate_batch(EstimatorKind::Vae, &p, &x, 0, 1).is_err());
        let zero_var = estimate_batch(EstimatorKind::AIS, &p, &x, 50, 2).unwrap();
        assert!(zero_var.summary.variance < 1e-16);
    }

    #[test]
    fn kinds_round_trip_through_strings() {
        for s in ["vae", "iwae", "sis", "ais", "ais-rwm"] {
            assert_eq!(s.parse::<EstimatorKind>().unwrap().to_string(), s);
        }
        assert!("smc".parse::<EstimatorKind>().is_err());
    }
}
