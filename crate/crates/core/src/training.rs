//! Stochastic ascent on the lower bounds: an adaptive-moment optimizer,
//! warm-up step-size adaptation, and the variational and joint fitting loops.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::annealing::ScheduleKind;
use crate::diffmath::{GradReport, ParamSet};
use crate::error::{Error, Result};
use crate::estimators::{run_chain, AisKernel, EstimatorKind};
use crate::gradients::{grad_ais, grad_iwae, grad_sis, GradEstimate};
use crate::kernels::StepSize;
use crate::models::Model;
use crate::problem::{Problem, Trainable};
use crate::rng;

/// Adaptive-moment optimizer with bias correction, stepping uphill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One ascent step on every trainable block of `params`. Trainable
    /// blocks absent from `grads` receive a zero gradient.
    pub fn step(&mut self, params: &mut ParamSet, grads: &GradReport) -> Result<()> {
        for (name, g) in grads.iter() {
            match params.get(name) {
                Some(b) if b.values.len() == g.len() => {}
                Some(b) => {
                    return Err(Error::DimensionMismatch {
                        context: "optimizer gradient block",
                        expected: b.values.len(),
                        got: g.len(),
                    })
                }
                None => {
                    return Err(Error::Contract(format!(
                        "gradient block `{name}` has no parameter"
                    )))
                }
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for block in params.blocks_mut().iter_mut().filter(|b| b.trainable) {
            let len = block.values.len();
            let g = grads.get(&block.name);
            let m = self.m.entry(block.name.clone()).or_insert_with(|| vec![0.0; len]);
            let v = self.v.entry(block.name.clone()).or_insert_with(|| vec![0.0; len]);
            for i in 0..len {
                let gi = g.map_or(0.0, |g| g[i]);
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                block.values[i] += self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Vae,
    Iwae,
    Sis,
    Ais,
}

impl Objective {
    pub fn uses_kernel(self) -> bool {
        matches!(self, Objective::Sis | Objective::Ais)
    }

    /// Acceptance target: 0.8 with Metropolis correction, 0.9 for the
    /// shadow rate of unadjusted chains.
    pub fn default_rho(self) -> f64 {
        match self {
            Objective::Ais => 0.8,
            _ => 0.9,
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Vae => "vae",
            Objective::Iwae => "iwae",
            Objective::Sis => "sis",
            Objective::Ais => "ais",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vae" => Ok(Self::Vae),
            "iwae" => Ok(Self::Iwae),
            "sis" => Ok(Self::Sis),
            "ais" => Ok(Self::Ais),
            other => Err(Error::Contract(format!("unknown objective `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    /// Number of transitions `K`.
    pub k: usize,
    /// Chains per datapoint (particles for the importance-weighted bound).
    pub n_chains: usize,
    pub schedule: ScheduleKind,
    /// Acceptance target; `None` selects [`Objective::default_rho`].
    pub rho: Option<f64>,
    pub warmup_steps: usize,
    pub epochs: usize,
    /// `None` means full batch.
    pub batch_size: Option<usize>,
    pub lr: f64,
    pub seed: u64,
    pub use_cv: bool,
    pub kernel: AisKernel,
    pub eta_init: f64,
    pub eta0: f64,
    pub epsilon: f64,
    /// Gain of the multiplicative `η0` controller.
    pub kappa: f64,
    /// Re-adapt step sizes every this many epochs (0 disables).
    pub readapt_every: usize,
    /// Train `log η` by gradient instead of re-adapting it between epochs.
    pub train_eta: bool,
    /// Train sigmoidal/learnable schedule parameters.
    pub train_schedule: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Sis,
            k: 5,
            n_chains: 1,
            schedule: ScheduleKind::Fixed,
            rho: None,
            warmup_steps: 50,
            epochs: 100,
            batch_size: None,
            lr: 1e-3,
            seed: 0,
            use_cv: false,
            kernel: AisKernel::Mala,
            eta_init: 0.01,
            eta0: 0.1,
            epsilon: 0.1,
            kappa: 2.0,
            readapt_every: 1,
            train_eta: false,
            train_schedule: true,
        }
    }
}

impl TrainConfig {
    pub fn rho(&self) -> f64 {
        self.rho.unwrap_or_else(|| self.objective.default_rho())
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n_chains == 0 || self.epochs == 0 {
            return Err(Error::Contract("K, n_chains and epochs must be >= 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Contract("batch size must be >= 1".into()));
        }
        let rho = self.rho();
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Domain(format!("rho must lie in (0, 1), got {rho}")));
        }
        if self.objective == Objective::Ais && self.use_cv && self.n_chains < 2 {
            return Err(Error::Contract(
                "the leave-one-out control variate needs n_chains >= 2".into(),
            ));
        }
        if !(self.eta_init > 0.0 && self.eta0 > 0.0 && self.epsilon > 0.0 && self.kappa > 0.0) {
            return Err(Error::Domain("eta_init, eta0, epsilon and kappa must be > 0".into()));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::Domain(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        Ok(())
    }

    fn estimator(&self) -> EstimatorKind {
        match self.objective {
            Objective::Vae => EstimatorKind::Vae,
            Objective::Iwae => EstimatorKind::Iwae {
                particles: self.n_chains,
            },
            Objective::Sis => EstimatorKind::Sis,
            Objective::Ais => EstimatorKind::Ais {
                kernel: self.kernel,
            },
        }
    }
}

/// One row of training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub objective: Objective,
    /// Mean per-datapoint objective estimate over the epoch's batches.
    pub elbo_mean: f64,
    pub elbo_se: f64,
    /// `‖θ̂ - θ*‖²` when a reference model is known.
    pub param_error: Option<f64>,
    /// Mean acceptance probability (shadow rate for unadjusted chains).
    pub acceptance_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub problem: Problem<f64>,
    pub step: StepSize,
    pub history: Vec<HistoryRow>,
    pub betas: Vec<f64>,
    /// Acceptance rate after each warm-up round.
    pub warmup_rates: Vec<f64>,
}

const TAG_WARMUP: u64 = 1;
const TAG_EPOCH: u64 = 2;
const TAG_SHUFFLE: u64 = 3;
const TAG_READAPT: u64 = 4;

/// Per-datapoint gradient of the configured objective.
pub fn objective_grad(
    p: &Problem<f64>,
    x: &[f64],
    cfg: &TrainConfig,
    trainable: Trainable,
    seed: u64,
) -> Result<GradEstimate> {
    match cfg.objective {
        Objective::Vae => grad_iwae(p, x, trainable, 1, seed),
        Objective::Iwae => grad_iwae(p, x, trainable, cfg.n_chains, seed),
        Objective::Sis => grad_sis(p, x, trainable, cfg.n_chains, seed),
        Objective::Ais => grad_ais(p, x, trainable, cfg.n_chains, seed, cfg.use_cv, cfg.kernel),
    }
}

/// One adaptation round: runs chains on (a subset of) the data with the
/// current step sizes, updates `η` from the spread of `∇_z log p` at the
/// chain endpoints and `η0` from the observed acceptance rate. Returns the
/// observed rate.
pub fn adaptation_round(
    p: &mut Problem<f64>,
    step: &mut StepSize,
    data: &[Vec<f64>],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<f64> {
    let kind = cfg.estimator();
    let points = data.len().min(64);
    let per_point = 16usize.div_ceil(points).max(1);
    p.set_eta(&step.eta);
    let mut grads = Vec::with_capacity(points * per_point);
    let mut rate = 0.0;
    let mut count = 0usize;
    for (i, x) in data.iter().take(points).enumerate() {
        for j in 0..per_point {
            let t = run_chain(kind, p, x, seed, (i * per_point + j) as u64)?;
            let (_, g) = p.model.log_joint_and_grad(x, t.last());
            grads.push(g);
            rate += t.mean_accept_prob();
            count += 1;
        }
    }
    let rate = rate / count as f64;
    if !rate.is_finite() {
        return Err(Error::NonFinite {
            epoch: 0,
            value: rate,
        });
    }
    step.tune_eta0(rate, cfg.rho(), cfg.kappa);
    step.adapt(&grads)?;
    p.set_eta(&step.eta);
    Ok(rate)
}

/// Maximizes the configured bound over the blocks selected by `trainable`.
pub fn fit(
    problem: Problem<f64>,
    data: &[Vec<f64>],
    cfg: &TrainConfig,
    trainable: Trainable,
    truth: Option<&Model<f64>>,
) -> Result<FitResult> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Contract("training data must be non-empty".into()));
    }
    let mut p = problem;
    let d = p.latent_dim();
    let mut step = StepSize::new(p.eta(), cfg.eta0, cfg.epsilon)?;
    let trainable = Trainable {
        eta: trainable.eta && cfg.train_eta && cfg.objective.uses_kernel(),
        schedule: trainable.schedule && cfg.train_schedule && cfg.objective.uses_kernel(),
        ..trainable
    };

    let mut warmup_rates = Vec::new();
    if cfg.objective.uses_kernel() {
        for r in 0..cfg.warmup_steps {
            let seed = rng::derive(cfg.seed, TAG_WARMUP, r as u64);
            warmup_rates.push(adaptation_round(&mut p, &mut step, data, cfg, seed)?);
        }
    }
    debug_assert_eq!(step.eta.len(), d);

    let mut adam = Adam::new(cfg.lr);
    let mut ps = p.param_set(trainable);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch = cfg.batch_size.unwrap_or(data.len()).min(data.len());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut updates = 0u64;
    for epoch in 0..cfg.epochs {
        if batch < data.len() {
            let mut r = rng::stream(rng::derive(cfg.seed, TAG_SHUFFLE, epoch as u64), 0);
            order.shuffle(&mut r);
        }
        let mut values = Vec::with_capacity(data.len());
        let mut rates = Vec::new();
        for chunk in order.chunks(batch) {
            let frozen = step.version;
            let mut total = GradReport::default();
            for &i in chunk {
                let seed = rng::derive(cfg.seed, TAG_EPOCH, updates.wrapping_mul(1 << 32) ^ i as u64);
                let g = objective_grad(&p, &data[i], cfg, trainable, seed)?;
                total.add_scaled(&g.grads, 1.0 / chunk.len() as f64);
                values.push(g.value);
                if g.mean_accept_prob.is_finite() {
                    rates.push(g.mean_accept_prob);
                }
            }
            assert_eq!(step.version, frozen, "kernel changed inside a gradient batch");
            if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    epoch,
                    value: *bad,
                });
            }
            adam.step(&mut ps, &total)?;
            p = p.with_params(&ps);
            updates += 1;
        }
        if trainable.eta {
            step.eta = p.eta();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let se = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        history.push(HistoryRow {
            epoch,
            objective: cfg.objective,
            elbo_mean: mean,
            elbo_se: se,
            param_error: truth.map(|t| p.model.squared_error(t)),
            acceptance_rate: (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64),
        });
        let readapt = cfg.objective.uses_kernel()
            && !trainable.eta
            && cfg.readapt_every > 0
            && (epoch + 1) % cfg.readapt_every == 0
            && epoch + 1 < cfg.epochs;
        if readapt {
            let seed = rng::derive(cfg.seed, TAG_READAPT, epoch as u64);
            adaptation_round(&mut p, &mut step, data, cfg, seed)?;
            ps = p.param_set(trainable);
        }
    }
    let betas = p.betas();
    Ok(FitResult {
        problem: p,
        step,
        history,
        betas,
        warmup_rates,
    })
}

/// Variational fit with the model frozen.
pub fn fit_vi(problem: Problem<f64>, data: &[Vec<f64>], cfg: &TrainConfig) -> Result<FitResult> {
    fit(
        problem,
        data,
        cfg,
        Trainable {
            model: false,
            ..Trainable::ALL
        },
        None,
    )
}

/// Joint fit of model and encoder; records `‖θ̂ - θ*‖²` against `truth`.
pub fn fit_model(
    problem: Problem<f64>,
    data: &[Vec<f64>],
    cfg: &TrainConfig,
    truth: Option<&Model<f64>>,
) -> Result<FitResult> {
    fit(problem, data, cfg, Trainable::ALL, truth)
}
