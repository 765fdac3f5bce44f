//! Langevin proposal maps, unadjusted and Metropolis-adjusted transitions,
//! random-walk Metropolis, inversion of the Langevin map, and step-size
//! control.
//!
//! Step sizes are per-coordinate (`η ⊙ ∇`, `√(2η) ⊙ u`); the scalar case is
//! a constant vector.

use serde::{Deserialize, Serialize};

use crate::annealing::{Bridge, BridgeEval};
use crate::diffmath::{diag_normal_logpdf, Real};
use crate::error::{Error, Result};

/// A differentiable unnormalized log-density on `R^d`.
pub trait LogTarget<T: Real> {
    fn dim(&self) -> usize;
    /// `(log π(z), ∇_z log π(z))`.
    fn eval(&self, z: &[T]) -> (T, Vec<T>);
}

/// A point together with its target log-density and gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct State<T> {
    pub z: Vec<T>,
    pub log_density: T,
    pub grad: Vec<T>,
}

impl<T: Real> State<T> {
    pub fn at(target: &impl LogTarget<T>, z: Vec<T>) -> Self {
        let (log_density, grad) = target.eval(&z);
        Self {
            z,
            log_density,
            grad,
        }
    }

    /// State under `γ_k` with `β_k = beta` from cached endpoint evaluations.
    pub fn from_bridge(z: Vec<T>, eval: &BridgeEval<T>, beta: T) -> Self {
        Self {
            log_density: eval.log_gamma(beta),
            grad: eval.grad_log_gamma(beta),
            z,
        }
    }
}

/// `γ_k` as a [`LogTarget`].
pub struct Tempered<'b, 'a, T> {
    pub bridge: &'b Bridge<'a, T>,
    pub beta: T,
}

impl<T: Real> LogTarget<T> for Tempered<'_, '_, T> {
    fn dim(&self) -> usize {
        self.bridge.dim()
    }

    fn eval(&self, z: &[T]) -> (T, Vec<T>) {
        let e = self.bridge.eval(z);
        (e.log_gamma(self.beta), e.grad_log_gamma(self.beta))
    }
}

/// Normalized diagonal Gaussian `N(mean, diag(1/precision))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTarget {
    pub mean: Vec<f64>,
    pub precision: Vec<f64>,
}

impl GaussianTarget {
    pub fn standard(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            precision: vec![1.0; d],
        }
    }

    /// Gradient Lipschitz constant `L = max precision`.
    pub fn smoothness(&self) -> f64 {
        self.precision.iter().copied().fold(0.0, f64::max)
    }
}

impl<T: Real> LogTarget<T> for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn eval(&self, z: &[T]) -> (T, Vec<T>) {
        assert_eq!(z.len(), self.mean.len(), "latent dimension");
        let var: Vec<T> = self.precision.iter().map(|&p| T::cst(1.0 / p)).collect();
        let mean: Vec<T> = self.mean.iter().map(|&m| T::cst(m)).collect();
        let lp = diag_normal_logpdf(z, &mean, &var);
        let grad = z
            .iter()
            .zip(&self.mean)
            .zip(&self.precision)
            .map(|((&zi, &m), &p)| -(zi - m) * p)
            .collect();
        (lp, grad)
    }
}

/// `T_u(z) = z + η ⊙ ∇ + √(2η) ⊙ u`, with `∇ = ∇ log γ(z)` supplied.
pub fn langevin_map<T: Real>(z: &[T], grad: &[T], eta: &[T], u: &[f64]) -> Vec<T> {
    assert_eq!(z.len(), u.len(), "noise dimension");
    assert_eq!(z.len(), eta.len(), "step-size dimension");
    (0..z.len())
        .map(|i| z[i] + eta[i] * grad[i] + (eta[i] * 2.0).sqrt() * u[i])
        .collect()
}

/// Log-density of the ULA transition `N(to; from + η ⊙ ∇(from), 2η)`.
pub fn ula_log_density<T: Real>(from: &State<T>, to: &[T], eta: &[T]) -> T {
    let mean: Vec<T> = (0..to.len())
        .map(|i| from.z[i] + eta[i] * from.grad[i])
        .collect();
    let var: Vec<T> = eta.iter().map(|&e| e * 2.0).collect();
    diag_normal_logpdf(to, &mean, &var)
}

/// `log α = min(0, log γ(y) + log m(y, z) - log γ(z) - log m(z, y))`.
pub fn mala_log_accept<T: Real>(from: &State<T>, to: &State<T>, eta: &[T]) -> T {
    let fwd = ula_log_density(from, &to.z, eta);
    let bwd = ula_log_density(to, &from.z, eta);
    let r = to.log_density + bwd - from.log_density - fwd;
    r.min(T::cst(0.0))
}

/// `a log α + (1 - a) log(1 - α)`.
pub fn log_accept_outcome<T: Real>(log_alpha: T, accepted: bool) -> Result<T> {
    if accepted {
        return Ok(log_alpha);
    }
    if log_alpha.value() >= 0.0 {
        return Err(Error::Contract(
            "rejection requested where the acceptance probability is 1".into(),
        ));
    }
    Ok(log_alpha.ln_1m_exp())
}

/// How the accept bit of a Metropolis step is decided.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AcceptRule {
    /// Accept iff `v < α` for a uniform draw `v ∈ [0, 1)`.
    Uniform(f64),
    /// Replay a recorded outcome.
    Forced(bool),
}

impl AcceptRule {
    fn decide(self, log_alpha: f64) -> bool {
        match self {
            AcceptRule::Uniform(v) => v < log_alpha.exp(),
            AcceptRule::Forced(a) => a,
        }
    }
}

/// Outcome of one Metropolis-Hastings transition.
#[derive(Debug, Clone)]
pub struct KernelStep<T> {
    pub next: State<T>,
    pub proposal: Vec<T>,
    pub accepted: bool,
    /// `log α` of the move.
    pub log_accept_prob: T,
    /// `log α^a`: `log α` if accepted, `log(1 - α)` otherwise.
    pub log_alpha: T,
}

impl<T> KernelStep<T> {
    pub fn z_next(&self) -> &[T] {
        &self.next.z
    }
}

/// Accept/reject between two evaluated states given `log α`.
pub fn metropolis<T: Real>(
    current: &State<T>,
    proposal: State<T>,
    log_accept_prob: T,
    rule: AcceptRule,
) -> Result<KernelStep<T>> {
    let accepted = rule.decide(log_accept_prob.value());
    let log_alpha = log_accept_outcome(log_accept_prob, accepted)?;
    let z_prop = proposal.z.clone();
    Ok(KernelStep {
        next: if accepted { proposal } else { current.clone() },
        proposal: z_prop,
        accepted,
        log_accept_prob,
        log_alpha,
    })
}

/// One MALA transition from `current` with Gaussian noise `u`.
pub fn mala_step<T: Real>(
    target: &impl LogTarget<T>,
    current: &State<T>,
    u: &[f64],
    rule: AcceptRule,
    eta: &[T],
) -> Result<KernelStep<T>> {
    let y = langevin_map(&current.z, &current.grad, eta, u);
    let proposal = State::at(target, y);
    let log_alpha = mala_log_accept(current, &proposal, eta);
    metropolis(current, proposal, log_alpha, rule)
}

/// `T_u(z) = z + Σ^{1/2} ⊙ u`.
pub fn rwm_propose<T: Real>(z: &[T], u: &[f64], scale: &[T]) -> Vec<T> {
    assert_eq!(z.len(), u.len(), "noise dimension");
    (0..z.len()).map(|i| z[i] + scale[i] * u[i]).collect()
}

/// `log α = min(0, log π(y) - log π(z))`.
pub fn rwm_log_accept<T: Real>(log_pi_z: T, log_pi_y: T) -> T {
    (log_pi_y - log_pi_z).min(T::cst(0.0))
}

/// One random-walk Metropolis transition with `Σ^{1/2} = scale`.
pub fn rwm_step<T: Real>(
    target: &impl LogTarget<T>,
    current: &State<T>,
    u: &[f64],
    rule: AcceptRule,
    scale: &[T],
) -> Result<KernelStep<T>> {
    let proposal = State::at(target, rwm_propose(&current.z, u, scale));
    let log_alpha = rwm_log_accept(current.log_density, proposal.log_density);
    metropolis(current, proposal, log_alpha, rule)
}

/// Tolerance and iteration cap of the fixed-point inversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 1000,
        }
    }
}

/// Solves `T_u(z) = y` by iterating `z ← y - √(2η) ⊙ u - η ⊙ ∇ log π(z)`.
///
/// Converges whenever `ηL < 1`. Stops once the estimated distance to the
/// fixed point falls below `tol · max(1, ‖z‖∞)`; returns
/// [`Error::Divergence`] if the cap is reached or the iterate stops being
/// finite.
pub fn invert_langevin_map(
    y: &[f64],
    u: &[f64],
    eta: &[f64],
    target: &impl LogTarget<f64>,
    cfg: InversionConfig,
) -> Result<Vec<f64>> {
    let d = y.len();
    if u.len() != d || eta.len() != d {
        return Err(Error::DimensionMismatch {
            context: "invert_langevin_map",
            expected: d,
            got: if u.len() != d { u.len() } else { eta.len() },
        });
    }
    let shift: Vec<f64> = (0..d).map(|i| y[i] - (2.0 * eta[i]).sqrt() * u[i]).collect();
    let mut z = shift.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        let (_, g) = target.eval(&z);
        let next: Vec<f64> = (0..d).map(|i| shift[i] - eta[i] * g[i]).collect();
        let prev = residual;
        residual = next
            .iter()
            .zip(&z)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = next.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        z = next;
        if !residual.is_finite() {
            break;
        }
        // Distance to the fixed point is bounded by residual * c / (1 - c)
        // for contraction factor c, estimated from successive updates.
        let c = residual / prev;
        let bound = if c < 1.0 { residual * c / (1.0 - c) } else { f64::INFINITY };
        if residual == 0.0
            || bound.max(residual) <= cfg.tol * scale
            || residual <= 4.0 * f64::EPSILON * scale
        {
            return Ok(z);
        }
    }
    Err(Error::Divergence {
        iterations: cfg.max_iter,
        residual,
    })
}

/// Per-coordinate step sizes with the controller state that drives them.
///
/// `version` increments on every mutation so callers can assert that no
/// adaptation happened inside a gradient batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSize {
    pub eta: Vec<f64>,
    pub eta0: f64,
    pub epsilon: f64,
    pub version: u64,
}

impl StepSize {
    pub fn new(eta: Vec<f64>, eta0: f64, epsilon: f64) -> Result<Self> {
        if eta.iter().any(|&e| !(e > 0.0)) || !(eta0 > 0.0) || !(epsilon > 0.0) {
            return Err(Error::Domain("step sizes, eta0 and epsilon must be > 0".into()));
        }
        Ok(Self {
            eta,
            eta0,
            epsilon,
            version: 0,
        })
    }

    /// Applies the moving-average rule from a batch of `∇_z log p` samples.
    pub fn adapt(&mut self, grad_samples: &[Vec<f64>]) -> Result<()> {
        self.eta = adapt_stepsize(&self.eta, grad_samples, self.eta0, self.epsilon)?;
        self.version += 1;
        Ok(())
    }

    /// Moves `η0` toward the acceptance target.
    pub fn tune_eta0(&mut self, observed: f64, target: f64, gain: f64) {
        self.eta0 = adapt_eta0(self.eta0, observed, target, gain);
        self.version += 1;
    }

    pub fn log_eta(&self) -> Vec<f64> {
        self.eta.iter().map(|e| e.ln()).collect()
    }
}

/// `η_i ← 0.9 η_i + 0.1 η0 / (ε + std_i)` where `std_i` is the sample
/// standard deviation (divisor `n - 1`) of coordinate `i` over the batch.
pub fn adapt_stepsize(
    eta: &[f64],
    grad_samples: &[Vec<f64>],
    eta0: f64,
    epsilon: f64,
) -> Result<Vec<f64>> {
    let n = grad_samples.len();
    if n < 2 {
        return Err(Error::Contract(format!(
            "step-size adaptation needs a batch of at least 2 gradients, got {n}"
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon must be > 0, got {epsilon}")));
    }
    let d = eta.len();
    if let Some(g) = grad_samples.iter().find(|g| g.len() != d) {
        return Err(Error::DimensionMismatch {
            context: "adapt_stepsize",
            expected: d,
            got: g.len(),
        });
    }
    Ok((0..d)
        .map(|i| {
            let mean = grad_samples.iter().map(|g| g[i]).sum::<f64>() / n as f64;
            let ss: f64 = grad_samples.iter().map(|g| (g[i] - mean).powi(2)).sum();
            let std = (ss / (n - 1) as f64).sqrt();
            0.9 * eta[i] + 0.1 * eta0 / (epsilon + std)
        })
        .collect())
}

/// `η0 · exp(κ (ρ̂ - ρ))`.
pub fn adapt_eta0(eta0: f64, observed: f64, target: f64, gain: f64) -> f64 {
    eta0 * (gain * (observed - target)).exp()
}

/// Chain dynamics used when tuning on a fixed target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainKernel {
    /// Metropolis-adjusted; the observed rate is the acceptance probability.
    Mala,
    /// Unadjusted; the observed rate is the shadow acceptance probability.
    Ula,
}

/// Runs `chains` parallel chains on `target`, adapting `step` after every
/// round. Returns the mean acceptance probability of each round.
#[allow(clippy::too_many_arguments)]
pub fn tune_on_target(
    target: &impl LogTarget<f64>,
    step: &mut StepSize,
    kernel: ChainKernel,
    rho: f64,
    gain: f64,
    rounds: usize,
    chains: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    use rand::Rng;
    use rand_distr::{StandardNormal, StandardUniform};

    if chains < 2 {
        return Err(Error::Contract("tuning needs at least 2 chains".into()));
    }
    let d = target.dim();
    let mut rngs: Vec<_> = (0..chains as u64).map(|c| crate::rng::stream(seed, c)).collect();
    let mut states: Vec<State<f64>> = rngs
        .iter_mut()
        .map(|r| State::at(target, (0..d).map(|_| r.sample(StandardNormal)).collect()))
        .collect();
    let mut rates = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let eta = step.eta.clone();
        let mut rate = 0.0;
        let mut grads = Vec::with_capacity(chains);
        for (s, r) in states.iter_mut().zip(rngs.iter_mut()) {
            let u: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
            let v: f64 = r.sample(StandardUniform);
            let next = match kernel {
                ChainKernel::Mala => {
                    let k = mala_step(target, s, &u, AcceptRule::Uniform(v), &eta)?;
                    rate += k.log_accept_prob.exp();
                    k.next
                }
                ChainKernel::Ula => {
                    let to = State::at(target, langevin_map(&s.z, &s.grad, &eta, &u));
                    rate += mala_log_accept(s, &to, &eta).exp();
                    to
                }
            };
            grads.push(next.grad.clone());
            *s = next;
        }
        let rate = rate / chains as f64;
        if !rate.is_finite() {
            return Err(Error::NonFinite {
                epoch: rates.len(),
                value: rate,
            });
        }
        rates.push(rate);
        step.tune_eta0(rate, rho, gain);
        step.adapt(&grads)?;
    }
    Ok(rates)
}
