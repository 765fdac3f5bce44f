//! `ppca-bench`: replicated estimates of `log W - log Z` and gradient
//! samples on a pPCA model with closed-form evidence.

use std::process::ExitCode;
use std::str::FromStr;

use anyhow::Result;
use clap::{Args, ValueEnum};
use mcvi::annealing::Schedule;
use mcvi::estimators::{mean_var, AisKernel};
use mcvi::gradients::{grad_ais, grad_iwae, grad_sis, GradEstimate};
use mcvi::kernels::StepSize;
use mcvi::models::{AffineEncoder, EncoderFixture, Model, ModelFixture, Ppca};
use mcvi::problem::{Problem, Trainable};
use mcvi::rng;
use mcvi::training::{adaptation_round, fit_vi, Objective, TrainConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::manifest::Run;
use crate::{usage_error, Adapt, Common};

#[derive(Args, Debug, Clone, Serialize)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub adapt: Adapt,
    /// Latent dimension d.
    #[arg(long, default_value_t = 4)]
    pub dims: usize,
    /// Observation dimension p.
    #[arg(long, default_value_t = 16)]
    pub obs_dim: usize,
    /// Number of datapoints N; replicate r uses datapoint r mod N.
    #[arg(long, default_value_t = 20)]
    pub n_data: usize,
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    /// Comma list of iwae, sis, ais, ais-cv; `name:K` pins one K, a bare
    /// name runs every value of --K.
    #[arg(long, value_delimiter = ',', default_value = "iwae,sis,ais,ais-cv:5")]
    pub estimators: Vec<String>,
    #[arg(long = "K", value_delimiter = ',', default_value = "5,10")]
    pub k: Vec<usize>,
    /// Chains per estimate (particles for iwae).
    #[arg(long, default_value_t = 8)]
    pub n_chains: usize,
    #[arg(long, value_enum, default_value_t = QArg::Learned)]
    pub q: QArg,
    /// VAE epochs used to learn q when `--q learned`.
    #[arg(long, default_value_t = 300)]
    pub train_epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Skip the gradient-sample file.
    #[arg(long)]
    pub no_grads: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum QArg {
    /// Encoder fitted by the single-sample bound.
    Learned,
    /// Exact posterior; loadings are orthogonalized so it is mean-field.
    Posterior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Method {
    Iwae,
    Sis,
    Ais,
    AisCv,
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "iwae" => Ok(Method::Iwae),
            "sis" => Ok(Method::Sis),
            "ais" => Ok(Method::Ais),
            "ais-cv" => Ok(Method::AisCv),
            other => Err(format!("unknown estimator `{other}` (expected iwae, sis, ais, ais-cv)")),
        }
    }
}

impl Method {
    fn label(self) -> &'static str {
        match self {
            Method::Iwae => "iwae",
            Method::Sis => "sis",
            Method::Ais => "ais",
            Method::AisCv => "ais-cv",
        }
    }

    fn objective(self) -> Objective {
        match self {
            Method::Iwae => Objective::Iwae,
            Method::Sis => Objective::Sis,
            Method::Ais | Method::AisCv => Objective::Ais,
        }
    }
}

/// Estimator plus its K (none for iwae).
fn expand(args: &BenchArgs) -> Vec<(Method, Option<usize>)> {
    let mut out = Vec::new();
    for tok in &args.estimators {
        let (name, k) = match tok.split_once(':') {
            Some((n, k)) => match k.parse::<usize>() {
                Ok(k) if k >= 1 => (n, Some(k)),
                _ => usage_error(format!("bad K in estimator `{tok}`")),
            },
            None => (tok.as_str(), None),
        };
        let m = Method::from_str(name.trim()).unwrap_or_else(|e| usage_error(e));
        match (m, k) {
            (Method::Iwae, _) => out.push((m, None)),
            (_, Some(k)) => out.push((m, Some(k))),
            (_, None) => out.extend(args.k.iter().map(|&k| (m, Some(k)))),
        }
    }
    out.dedup();
    out
}

fn validate(args: &BenchArgs) {
    if args.reps == 0 || args.n_chains == 0 || args.n_data == 0 || args.dims == 0 {
        usage_error("--reps, --n-chains, --n-data and --dims must be >= 1");
    }
    if args.k.contains(&0) {
        usage_error("--K values must be >= 1");
    }
    if args.q == QArg::Posterior && args.dims > args.obs_dim {
        usage_error("--q posterior needs --dims <= --obs-dim");
    }
    if !(args.sigma > 0.0) {
        usage_error("--sigma must be > 0");
    }
    if let Some(r) = args.adapt.rho {
        if !(r > 0.0 && r < 1.0) {
            usage_error("--rho must lie in (0, 1)");
        }
    }
}

#[derive(Serialize)]
struct LogWRow {
    estimator: &'static str,
    k: Option<usize>,
    n: usize,
    replicate: usize,
    datapoint: usize,
    log_w: f64,
    log_z: f64,
    log_w_minus_log_z: f64,
    accept_rate: Option<f64>,
}

#[derive(Serialize)]
struct GradRow<'a> {
    estimator: &'static str,
    k: Option<usize>,
    replicate: usize,
    block: &'a str,
    index: usize,
    value: f64,
}

#[derive(Serialize)]
struct EstimatorSummary {
    estimator: &'static str,
    k: Option<usize>,
    n: usize,
    use_cv: bool,
    eta: Vec<f64>,
    betas: Vec<f64>,
    mean_gap: f64,
    median_gap: f64,
    sd_gap: f64,
    mean_accept_rate: Option<f64>,
}

#[derive(Serialize)]
struct BenchModel {
    model: ModelFixture,
    encoder: EncoderFixture,
}

#[derive(Serialize)]
struct BenchSummary {
    mean_log_z: f64,
    estimators: Vec<EstimatorSummary>,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Runs `rounds` step-size adaptation rounds for `objective`.
pub fn tune(
    p: &Problem<f64>,
    data: &[Vec<f64>],
    cfg: &TrainConfig,
    rounds: usize,
    seed: u64,
) -> Result<Problem<f64>> {
    let mut p = p.clone();
    let mut step = StepSize::new(p.eta(), cfg.eta0, cfg.epsilon)?;
    for r in 0..rounds as u64 {
        adaptation_round(&mut p, &mut step, data, cfg, rng::derive(seed, r, 0))?;
    }
    Ok(p)
}

/// Model, encoder and dataset of one bench run.
type Setup = (Ppca<f64>, AffineEncoder<f64>, Vec<Vec<f64>>);

fn build(args: &BenchArgs) -> Result<Setup> {
    let seed = args.common.seed;
    let mut m = Ppca::random(args.obs_dim, args.dims, args.sigma, 0.8, &mut rng::stream(seed, 0));
    if args.q == QArg::Posterior {
        m.orthogonalize_columns()?;
    }
    let data = m.sample_data(args.n_data, &mut rng::stream(seed, 1));
    let enc = match args.q {
        QArg::Posterior => AffineEncoder::exact_posterior(&m)?,
        QArg::Learned => {
            let p = Problem::new(
                Model::Ppca(m.clone()),
                AffineEncoder::standard(args.dims, args.obs_dim),
                Schedule::fixed(1)?,
                &vec![0.01; args.dims],
            )?;
            let cfg = TrainConfig {
                objective: Objective::Vae,
                epochs: args.train_epochs.max(1),
                lr: args.lr,
                seed: rng::derive(seed, 2, 0),
                ..Default::default()
            };
            fit_vi(p, &data, &cfg)?.problem.encoder
        }
    };
    Ok((m, enc, data))
}

pub fn run(args: BenchArgs) -> Result<ExitCode> {
    validate(&args);
    let specs = expand(&args);
    if specs.iter().any(|(m, _)| *m == Method::AisCv) && args.n_chains < 2 {
        usage_error("ais-cv needs --n-chains >= 2");
    }
    let seed = args.common.seed;
    let (m, enc, data) = build(&args)?;
    let log_z: Vec<f64> = data
        .iter()
        .map(|x| m.exact_log_evidence(x))
        .collect::<mcvi::Result<_>>()?;
    let base = Problem::new(Model::Ppca(m), enc, Schedule::fixed(1)?, &vec![0.01; args.dims])?;

    let mut run = Run::start(&args.common.out)?;
    run.json(
        "bench_model.json",
        &BenchModel {
            model: ModelFixture::from(&base.model),
            encoder: EncoderFixture::from(&base.encoder),
        },
    )?;
    let mut logw_csv = run.csv("bench_logw.csv")?;
    let mut grad_csv = if args.no_grads {
        None
    } else {
        Some(run.csv("bench_grads.csv")?)
    };
    let mut summaries = Vec::new();

    for (idx, &(method, k)) in specs.iter().enumerate() {
        let objective = method.objective();
        let cfg = TrainConfig {
            objective,
            k: k.unwrap_or(1),
            n_chains: args.n_chains,
            rho: args.adapt.rho,
            eta0: args.adapt.eta0,
            ..Default::default()
        };
        let mut p = base.clone();
        p.schedule = Schedule::new(args.adapt.schedule.into(), k.unwrap_or(1))?;
        if objective.uses_kernel() {
            p = tune(&p, &data, &cfg, args.adapt.warmup_steps, rng::derive(seed, 3, idx as u64))?;
        }
        let t = Trainable::MODEL_AND_ENCODER;
        let n = args.n_chains;
        // Replicate seeds are shared across estimators (common random numbers).
        let grads: Vec<GradEstimate> = (0..args.reps)
            .into_par_iter()
            .map(|r| {
                let x = &data[r % data.len()];
                let s = rng::derive(seed, 4, r as u64);
                Ok(match method {
                    Method::Iwae => grad_iwae(&p, x, t, n, s)?,
                    Method::Sis => grad_sis(&p, x, t, n, s)?,
                    Method::Ais => grad_ais(&p, x, t, n, s, false, AisKernel::Mala)?,
                    Method::AisCv => grad_ais(&p, x, t, n, s, true, AisKernel::Mala)?,
                })
            })
            .collect::<Result<_>>()?;

        let mut gaps = Vec::with_capacity(args.reps);
        let mut rates = Vec::new();
        for (r, g) in grads.iter().enumerate() {
            let i = r % data.len();
            let accept = g.mean_accept_prob.is_finite().then_some(g.mean_accept_prob);
            rates.extend(accept);
            gaps.push(g.value - log_z[i]);
            logw_csv.serialize(LogWRow {
                estimator: method.label(),
                k,
                n,
                replicate: r,
                datapoint: i,
                log_w: g.value,
                log_z: log_z[i],
                log_w_minus_log_z: g.value - log_z[i],
                accept_rate: accept,
            })?;
            if let Some(w) = grad_csv.as_mut() {
                for (block, values) in g.grads.iter() {
                    for (index, &value) in values.iter().enumerate() {
                        w.serialize(GradRow {
                            estimator: method.label(),
                            k,
                            replicate: r,
                            block,
                            index,
                            value,
                        })?;
                    }
                }
            }
        }
        let (mean_gap, var) = mean_var(&gaps);
        summaries.push(EstimatorSummary {
            estimator: method.label(),
            k,
            n,
            use_cv: method == Method::AisCv,
            eta: p.eta(),
            betas: p.betas(),
            mean_gap,
            median_gap: median(&gaps),
            sd_gap: var.sqrt(),
            mean_accept_rate: (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64),
        });
    }
    logw_csv.flush()?;
    if let Some(mut w) = grad_csv {
        w.flush()?;
    }
    run.json(
        "bench_summary.json",
        &BenchSummary {
            mean_log_z: log_z.iter().sum::<f64>() / log_z.len() as f64,
            estimators: summaries,
        },
    )?;
    run.finish("ppca-bench", &args, seed)?;
    Ok(ExitCode::SUCCESS)
}
