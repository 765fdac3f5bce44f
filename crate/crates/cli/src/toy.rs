//! Toy-model commands: posterior samples for one observation, and
//! parameter-recovery error across seeds and latent dimensions.

use std::process::ExitCode;

use anyhow::Result;
use clap::Args;
use mcvi::annealing::{Schedule, ScheduleKind};
use mcvi::estimators::{mean_var, run_chain, EstimatorKind};
use mcvi::models::{AffineEncoder, Model, Toy};
use mcvi::problem::Problem;
use mcvi::rng;
use mcvi::training::{fit_model, fit_vi, FitResult, Objective, TrainConfig};
use mcvi::Error;
use rayon::prelude::*;
use serde::Serialize;

use crate::manifest::Run;
use crate::{usage_error, Adapt, Common};

fn parse_methods(names: &[String]) -> Vec<Objective> {
    let mut out: Vec<Objective> = names
        .iter()
        .map(|s| s.trim().parse().unwrap_or_else(|e: Error| usage_error(e)))
        .collect();
    out.dedup();
    out
}

fn check_rho(adapt: &Adapt) {
    if let Some(r) = adapt.rho {
        if !(r > 0.0 && r < 1.0) {
            usage_error("--rho must lie in (0, 1)");
        }
    }
}

/// Shared training flags for a method; `particles` replaces `n_chains` for
/// the importance-weighted bound.
struct MethodConfig<'a> {
    adapt: &'a Adapt,
    k: usize,
    n_chains: usize,
    particles: usize,
    epochs: usize,
    lr: f64,
    batch_size: Option<usize>,
    eta_init: f64,
}

impl MethodConfig<'_> {
    fn train(&self, objective: Objective, seed: u64) -> TrainConfig {
        TrainConfig {
            objective,
            k: self.k,
            n_chains: if objective == Objective::Iwae {
                self.particles
            } else {
                self.n_chains
            },
            schedule: self.adapt.schedule.into(),
            rho: self.adapt.rho,
            warmup_steps: self.adapt.warmup_steps,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed,
            eta_init: self.eta_init,
            eta0: self.adapt.eta0,
            ..Default::default()
        }
    }

    fn problem(&self, model: Toy<f64>, kind: ScheduleKind) -> Result<Problem<f64>> {
        let d = model.latent_dim;
        Ok(Problem::new(
            Model::Toy(model),
            AffineEncoder::standard(d, 1),
            Schedule::new(kind, self.k)?,
            &vec![self.eta_init; d],
        )?)
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct PosteriorArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub adapt: Adapt,
    #[arg(long, value_delimiter = ',', default_value = "vae,iwae,sis,ais")]
    pub estimators: Vec<String>,
    #[arg(long = "K", default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 1)]
    pub n_chains: usize,
    /// Particles for the iwae objective.
    #[arg(long, default_value_t = 5)]
    pub particles: usize,
    /// Samples written per method.
    #[arg(long, default_value_t = 1000)]
    pub n_samples: usize,
    /// Grid points per axis over [-3, 3]².
    #[arg(long, default_value_t = 61)]
    pub grid: usize,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Observation; drawn from the model when absent.
    #[arg(long, allow_hyphen_values = true)]
    pub x: Option<f64>,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub xi: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub zeta: f64,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
}

#[derive(Serialize)]
struct MethodSummary {
    method: Objective,
    eta: Vec<f64>,
    betas: Vec<f64>,
    final_objective: Option<f64>,
    acceptance_rate: Option<f64>,
    mean_log_joint: f64,
    se_log_joint: f64,
}

#[derive(Serialize)]
struct PosteriorSummary {
    x: f64,
    methods: Vec<MethodSummary>,
}

pub fn run_posterior(args: PosteriorArgs) -> Result<ExitCode> {
    check_rho(&args.adapt);
    if args.n_samples == 0 || args.grid < 2 || args.k == 0 || args.n_chains == 0 || args.particles == 0 {
        usage_error("--n-samples, --K, --n-chains, --particles must be >= 1 and --grid >= 2");
    }
    let methods = parse_methods(&args.estimators);
    let seed = args.common.seed;
    let model = Toy::new(args.xi, args.zeta, args.sigma, 2)?;
    let x = match args.x {
        Some(x) => x,
        None => model.sample_data(1, &mut rng::stream(seed, 0)).0[0][0],
    };
    let data = vec![vec![x]];
    let mc = MethodConfig {
        adapt: &args.adapt,
        k: args.k,
        n_chains: args.n_chains,
        particles: args.particles,
        epochs: args.epochs,
        lr: args.lr,
        batch_size: None,
        eta_init: 0.01,
    };

    let fits: Vec<(Objective, FitResult)> = methods
        .par_iter()
        .enumerate()
        .map(|(i, &m)| {
            let p = mc.problem(model.clone(), args.adapt.schedule.into())?;
            let f = fit_vi(p, &data, &mc.train(m, rng::derive(seed, 1, i as u64)))?;
            Ok((m, f))
        })
        .collect::<Result<_>>()?;

    let mut run = Run::start(&args.common.out)?;
    let mut samples = run.csv("posterior_samples.csv")?;
    samples.write_record(["method", "sample", "z1", "z2", "log_joint"])?;
    let mut summaries = Vec::new();
    for (i, (m, f)) in fits.iter().enumerate() {
        let kind = match m {
            Objective::Vae | Objective::Iwae => EstimatorKind::Vae,
            Objective::Sis => EstimatorKind::Sis,
            Objective::Ais => EstimatorKind::AIS,
        };
        let s = rng::derive(seed, 2, i as u64);
        let zs: Vec<Vec<f64>> = (0..args.n_samples as u64)
            .into_par_iter()
            .map(|j| Ok(run_chain(kind, &f.problem, &[x], s, j)?.last().to_vec()))
            .collect::<Result<_>>()?;
        let mut lj = Vec::with_capacity(zs.len());
        for (j, z) in zs.iter().enumerate() {
            let v = f.problem.model.log_joint(&[x], z);
            lj.push(v);
            samples.write_record([
                m.to_string(),
                j.to_string(),
                z[0].to_string(),
                z[1].to_string(),
                v.to_string(),
            ])?;
        }
        let (mean, var) = mean_var(&lj);
        let last = f.history.last();
        summaries.push(MethodSummary {
            method: *m,
            eta: f.problem.eta(),
            betas: f.betas.clone(),
            final_objective: last.map(|h| h.elbo_mean),
            acceptance_rate: last.and_then(|h| h.acceptance_rate),
            mean_log_joint: mean,
            se_log_joint: (var / lj.len() as f64).sqrt(),
        });
    }
    samples.flush()?;

    let mut grid = run.csv("posterior_grid.csv")?;
    grid.write_record(["z1", "z2", "log_joint"])?;
    let g = args.grid;
    let at = |i: usize| -3.0 + 6.0 * i as f64 / (g - 1) as f64;
    let m = Model::Toy(model);
    for i in 0..g {
        for j in 0..g {
            let z = [at(i), at(j)];
            grid.write_record([z[0].to_string(), z[1].to_string(), m.log_joint(&[x], &z).to_string()])?;
        }
    }
    grid.flush()?;
    run.json(
        "posterior_summary.json",
        &PosteriorSummary {
            x,
            methods: summaries,
        },
    )?;
    run.finish("toy-posterior", &args, seed)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ParamEstArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub adapt: Adapt,
    #[arg(long, value_delimiter = ',', default_value = "vae,iwae,sis,ais")]
    pub estimators: Vec<String>,
    /// Latent dimensions to run.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub dims: Vec<usize>,
    /// Number of seeds per (method, dim).
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long = "K", default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 1)]
    pub n_chains: usize,
    #[arg(long, default_value_t = 5)]
    pub particles: usize,
    #[arg(long, default_value_t = 500)]
    pub n_data: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 50)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.01)]
    pub eta_init: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub xi: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub zeta: f64,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
}

#[derive(Serialize)]
struct ParamRow {
    method: Objective,
    dim: usize,
    seed: u64,
    sq_error: Option<f64>,
    xi: Option<f64>,
    zeta: Option<f64>,
    status: String,
}

#[derive(Serialize)]
struct ParamSummary {
    method: Objective,
    dim: usize,
    runs: usize,
    aborted: usize,
    mean_sq_error: Option<f64>,
}

pub fn run_param_est(args: ParamEstArgs) -> Result<ExitCode> {
    check_rho(&args.adapt);
    if args.seeds == 0 || args.dims.is_empty() || args.dims.contains(&0) {
        usage_error("--seeds and every --dims value must be >= 1");
    }
    if args.k == 0 || args.n_chains == 0 || args.particles == 0 || args.n_data == 0 || args.batch_size == 0 {
        usage_error("--K, --n-chains, --particles, --n-data and --batch-size must be >= 1");
    }
    let methods = parse_methods(&args.estimators);
    let seed = args.common.seed;
    let mc = MethodConfig {
        adapt: &args.adapt,
        k: args.k,
        n_chains: args.n_chains,
        particles: args.particles,
        epochs: args.epochs,
        lr: args.lr,
        batch_size: Some(args.batch_size),
        eta_init: args.eta_init,
    };
    let jobs: Vec<(Objective, usize, u64)> = methods
        .iter()
        .flat_map(|&m| args.dims.iter().flat_map(move |&d| (0..args.seeds).map(move |s| (m, d, s))))
        .collect();

    let rows: Vec<ParamRow> = jobs
        .par_iter()
        .map(|&(method, dim, s)| {
            let truth = Toy::new(args.xi, args.zeta, args.sigma, dim)?;
            // Data and fit seeds are shared across methods.
            let run_seed = rng::derive(seed, dim as u64, s);
            let (xs, _) = truth.sample_data(args.n_data, &mut rng::stream(run_seed, 0));
            let init = Toy::new(0.5, 0.5, args.sigma, dim)?;
            let p = mc.problem(init, args.adapt.schedule.into())?;
            let cfg = mc.train(method, run_seed);
            let row = match fit_model(p, &xs, &cfg, Some(&Model::Toy(truth))) {
                Ok(f) => {
                    let Model::Toy(t) = &f.problem.model else {
                        unreachable!("toy in, toy out")
                    };
                    ParamRow {
                        method,
                        dim,
                        seed: s,
                        sq_error: f.history.last().and_then(|h| h.param_error),
                        xi: Some(t.xi),
                        zeta: Some(t.zeta),
                        status: "ok".into(),
                    }
                }
                Err(Error::NonFinite { epoch, .. }) => ParamRow {
                    method,
                    dim,
                    seed: s,
                    sq_error: None,
                    xi: None,
                    zeta: None,
                    status: format!("nonfinite@{epoch}"),
                },
                Err(e) => return Err(e.into()),
            };
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let mut run = Run::start(&args.common.out)?;
    let mut w = run.csv("param_est.csv")?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let mut summary = Vec::new();
    for &m in &methods {
        for &d in &args.dims {
            let sel: Vec<&ParamRow> = rows.iter().filter(|r| r.method == m && r.dim == d).collect();
            let ok: Vec<f64> = sel.iter().filter_map(|r| r.sq_error).collect();
            summary.push(ParamSummary {
                method: m,
                dim: d,
                runs: sel.len(),
                aborted: sel.len() - ok.len(),
                mean_sq_error: (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64),
            });
        }
    }
    run.json("param_est_summary.json", &summary)?;
    run.finish("toy-param-est", &args, seed)?;
    Ok(ExitCode::SUCCESS)
}
