//! `gradcheck`: reverse-mode gradients against central finite differences
//! on random fixtures with frozen randomness.

use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, ValueEnum};
use mcvi::annealing::Schedule;
use mcvi::diffmath::{differentiate, finite_diff_grad, lift_slice, rel_err};
use mcvi::estimators::{ais_estimate, iwae, particle_noise, sis_estimate, AcceptSource, AisKernel, ChainNoise};
use mcvi::gradients::{ais_chain_grad, iwae_grad_fixed, sis_chain_grad};
use mcvi::models::{AffineEncoder, Model, Ppca, Toy};
use mcvi::problem::{Problem, Trainable};
use mcvi::rng;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::manifest::Run;
use crate::{usage_error, Common};

#[derive(Args, Debug, Clone, Serialize)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = ModelArg::Both)]
    pub model: ModelArg,
    /// Random fixtures per operation.
    #[arg(long, default_value_t = 20)]
    pub cases: u64,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    /// Pass threshold on the max relative error.
    #[arg(long, alias = "break-tolerance", default_value_t = 1e-5)]
    pub tolerance: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelArg {
    Ppca,
    Toy,
    Both,
}

const OPS: [&str; 7] = [
    "log_joint_latent",
    "log_joint_params",
    "log_q_params",
    "sis_pathwise",
    "iwae_pathwise",
    "ais_pathwise",
    "ais_log_accept",
];

#[derive(Serialize)]
struct OpReport {
    op: &'static str,
    cases: u64,
    max_rel_err: f64,
    worst_case: u64,
    pass: bool,
}

#[derive(Serialize)]
struct Report {
    tolerance: f64,
    h: f64,
    pass: bool,
    ops: Vec<OpReport>,
}

fn normal(r: &mut impl Rng, s: f64, n: usize) -> Vec<f64> {
    (0..n).map(|_| s * r.sample::<f64, _>(StandardNormal)).collect()
}

/// Random pPCA or toy fixture with a random encoder, schedule kind, `K`
/// and per-coordinate step sizes.
fn fixture(seed: u64, i: u64, which: ModelArg) -> Result<(Problem<f64>, Vec<f64>)> {
    let mut r = rng::stream(seed, 1000 + i);
    let d = 2;
    let use_ppca = match which {
        ModelArg::Ppca => true,
        ModelArg::Toy => false,
        ModelArg::Both => i.is_multiple_of(2),
    };
    let (model, x, p_obs) = if use_ppca {
        let m = Ppca::random(3, d, 0.6 + 0.4 * r.random::<f64>(), 0.8, &mut r);
        let x = m.sample_data(1, &mut r).remove(0);
        (Model::Ppca(m), x, 3)
    } else {
        let toy = Toy::new(0.5 + r.random::<f64>(), r.random::<f64>() - 0.5, 0.5 + 0.5 * r.random::<f64>(), d)?;
        let x = vec![0.5 + 1.5 * r.random::<f64>()];
        (Model::Toy(toy), x, 1)
    };
    let enc = AffineEncoder::new(
        normal(&mut r, 0.3, d * p_obs),
        normal(&mut r, 0.3, d),
        normal(&mut r, 0.1, d * p_obs),
        normal(&mut r, 0.2, d),
    )?;
    let k = 1 + (i % 3) as usize;
    let schedule = match (i / 2) % 3 {
        0 => Schedule::fixed(k)?,
        1 => Schedule::sigmoidal_with_delta(k, 0.5 + r.random::<f64>())?,
        _ => Schedule::learnable(normal(&mut r, 0.5, k))?,
    };
    let eta: Vec<f64> = (0..d).map(|_| 0.02 + 0.15 * r.random::<f64>()).collect();
    Ok((Problem::new(model, enc, schedule, &eta)?, x))
}

/// Max relative error of every op on fixture `i`.
fn check_case(args: &GradcheckArgs, i: u64) -> Result<[f64; 7]> {
    let seed = args.common.seed;
    let h = args.h;
    let (p, x) = fixture(seed, i, args.model)?;
    let d = p.latent_dim();
    let mut r = rng::stream(seed, 2000 + i);
    let z = normal(&mut r, 1.0, d);
    let mut errs = [0.0f64; 7];

    let (_, g) = p.model.log_joint_and_grad(&x, &z);
    for (j, gj) in g.iter().enumerate() {
        let mut zp = z.clone();
        zp[j] += h;
        let up = p.model.log_joint(&x, &zp);
        zp[j] -= 2.0 * h;
        let down = p.model.log_joint(&x, &zp);
        errs[0] = errs[0].max(rel_err(*gj, (up - down) / (2.0 * h)));
    }

    let model_only = Trainable {
        model: true,
        ..Trainable::NONE
    };
    let ps = p.param_set(model_only);
    let (_, g) = differentiate(&ps, |l| p.rebuild(l).model.log_joint(&x, &lift_slice(&z)));
    let fd = finite_diff_grad(&ps, h, |q| Ok(p.with_params(q).model.log_joint(&x, &z)))?;
    errs[1] = g.max_rel_err(&fd);

    let ps = p.param_set(Trainable::ENCODER);
    let (_, g) = differentiate(&ps, |l| p.rebuild(l).encoder.log_q(&x, &lift_slice(&z)));
    let fd = finite_diff_grad(&ps, h, |q| Ok(p.with_params(q).encoder.log_q(&x, &z)))?;
    errs[2] = g.max_rel_err(&fd);

    let ps = p.param_set(Trainable::ALL);
    let noise = ChainNoise::for_chain(seed, i, d, p.k());
    let (_, g) = sis_chain_grad(&p, &x, &noise, Trainable::ALL);
    let fd = finite_diff_grad(&ps, h, |q| Ok(sis_estimate(&p.with_params(q), &x, &noise).log_w))?;
    errs[3] = g.max_rel_err(&fd);

    let u0s = particle_noise(seed ^ 0x5eed, i, d, 3);
    let (_, g) = iwae_grad_fixed(&p, &x, &u0s, Trainable::ALL)?;
    let fd = finite_diff_grad(&ps, h, |q| iwae(&p.with_params(q), &x, &u0s))?;
    errs[4] = g.max_rel_err(&fd);

    let c = ais_chain_grad(&p, &x, &noise, AcceptSource::Draw, AisKernel::Mala, Trainable::ALL)?;
    let bits = c.accepted.clone();
    let replay = |q: &mcvi::diffmath::ParamSet| {
        ais_estimate(&p.with_params(q), &x, &noise, AisKernel::Mala, AcceptSource::Replay(&bits))
    };
    let fd = finite_diff_grad(&ps, h, |q| Ok(replay(q)?.log_w))?;
    errs[5] = c.grad_w.max_rel_err(&fd);
    let fd = finite_diff_grad(&ps, h, |q| Ok(replay(q)?.log_a))?;
    errs[6] = c.grad_a.max_rel_err(&fd);
    Ok(errs)
}

pub fn run(args: GradcheckArgs) -> Result<ExitCode> {
    if args.cases == 0 || !(args.h > 0.0) || !(args.tolerance > 0.0) {
        usage_error("--cases, --h and --tolerance must be > 0");
    }
    let per_case: Vec<[f64; 7]> = (0..args.cases)
        .into_par_iter()
        .map(|i| check_case(&args, i))
        .collect::<Result<_>>()?;
    let ops: Vec<OpReport> = OPS
        .iter()
        .enumerate()
        .map(|(j, &op)| {
            let (worst_case, max) = per_case
                .iter()
                .enumerate()
                .map(|(i, e)| (i as u64, e[j]))
                .fold((0, 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
            OpReport {
                op,
                cases: args.cases,
                max_rel_err: max,
                worst_case,
                pass: max <= args.tolerance,
            }
        })
        .collect();
    let pass = ops.iter().all(|o| o.pass);
    for o in &ops {
        println!(
            "{} {:<18} max rel err {:.2e} (case {})",
            if o.pass { "PASS" } else { "FAIL" },
            o.op,
            o.max_rel_err,
            o.worst_case
        );
    }
    let mut run = Run::start(&args.common.out)?;
    run.json(
        "gradcheck.json",
        &Report {
            tolerance: args.tolerance,
            h: args.h,
            pass,
            ops,
        },
    )?;
    run.finish("gradcheck", &args, args.common.seed)?;
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
