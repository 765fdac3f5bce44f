//! Unbiased gradients of the SIS and AIS lower bounds.
//!
//! SIS and importance-weighted bounds are fully reparameterized, so their
//! gradients are pathwise. AIS adds a score term for the discrete
//! accept/reject outcomes, optionally centred by a leave-one-out baseline.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::diffmath::{differentiate, differentiate_with, GradReport, ParamSet};
use crate::error::{Error, Result};
use crate::estimators::{
    ais_estimate, iwae, particle_noise, sis_estimate, AcceptSource, AisKernel, ChainNoise,
};
use crate::problem::{Problem, Trainable};

/// Per-chain log-weight and log-acceptance with their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainGrad {
    pub log_w: f64,
    pub grad_w: GradReport,
    pub log_a: f64,
    pub grad_a: GradReport,
    pub accepted: Vec<bool>,
    pub mean_accept_prob: f64,
}

/// Per-coordinate empirical variances of the per-chain contributions to
/// each gradient term.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TermVariances {
    pub pathwise: GradReport,
    pub score_plain: Option<GradReport>,
    pub score_cv: Option<GradReport>,
    pub cv_correction: Option<GradReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradEstimate {
    /// The estimate: pathwise term plus the selected score term.
    pub grads: GradReport,
    pub n: usize,
    /// Mean per-chain objective value.
    pub value: f64,
    pub pathwise: GradReport,
    /// `n⁻¹ Σ W_i ∇log A_i`.
    pub score_plain: Option<GradReport>,
    /// `n⁻¹ Σ (W_i - W̃_i) ∇log A_i`.
    pub score_cv: Option<GradReport>,
    /// `n⁻¹ Σ W̃_i ∇log A_i`, the zero-mean part removed by the baseline.
    pub cv_correction: Option<GradReport>,
    pub variances: TermVariances,
    pub log_w: Vec<f64>,
    pub mean_accept_prob: f64,
}

/// Mean of the other `n - 1` values.
pub fn leave_one_out_baseline(w: &[f64], i: usize) -> Result<f64> {
    let n = w.len();
    if n < 2 {
        return Err(Error::Contract(format!(
            "leave-one-out baseline needs at least 2 chains, got {n}"
        )));
    }
    if i >= n {
        return Err(Error::Contract(format!("chain index {i} out of range 0..{n}")));
    }
    let rest: f64 = w.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).sum();
    Ok(rest / (n - 1) as f64)
}

/// Collects aligned per-chain contributions for means and variances.
struct Accum {
    template: GradReport,
    rows: Vec<Vec<f64>>,
}

impl Accum {
    fn new(params: &ParamSet) -> Self {
        Self {
            template: GradReport::zeros(params),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, g: &GradReport, scale: f64) {
        let mut row = Vec::with_capacity(self.template.flatten().len());
        for (name, zeros) in self.template.iter() {
            match g.get(name) {
                Some(v) => row.extend(v.iter().map(|x| x * scale)),
                None => row.extend(zeros.iter()),
            }
        }
        self.rows.push(row);
    }

    fn unflatten(&self, flat: &[f64]) -> GradReport {
        let mut out = GradReport::default();
        let mut off = 0;
        for (name, zeros) in self.template.iter() {
            out.insert(name, flat[off..off + zeros.len()].to_vec());
            off += zeros.len();
        }
        out
    }

    fn mean_var(&self) -> (GradReport, GradReport) {
        let n = self.rows.len();
        let dim = self.rows.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; dim];
        for r in &self.rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; dim];
        if n > 1 {
            for r in &self.rows {
                for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                    *s += (v - m).powi(2);
                }
            }
            var.iter_mut().for_each(|s| *s /= (n - 1) as f64);
        }
        (self.unflatten(&mean), self.unflatten(&var))
    }
}

/// Gradient of an SIS chain's log-weight under common noise.
pub fn sis_chain_grad(
    p: &Problem<f64>,
    x: &[f64],
    noise: &ChainNoise,
    trainable: Trainable,
) -> (f64, GradReport) {
    let ps = p.param_set(trainable);
    differentiate(&ps, |l| sis_estimate(&p.rebuild(l), x, noise).log_w)
}

/// Gradient of the importance-weighted bound for fixed particle noise.
pub fn iwae_grad_fixed(
    p: &Problem<f64>,
    x: &[f64],
    u0s: &[Vec<f64>],
    trainable: Trainable,
) -> Result<(f64, GradReport)> {
    if u0s.is_empty() {
        return Err(Error::Contract("importance weighted bound needs n >= 1".into()));
    }
    let ps = p.param_set(trainable);
    Ok(differentiate(&ps, |l| {
        iwae(&p.rebuild(l), x, u0s).expect("non-empty particle set")
    }))
}

/// Gradients of `W` and `log A` of one AIS chain. With
/// [`AcceptSource::Replay`] the accept bits are held fixed.
pub fn ais_chain_grad(
    p: &Problem<f64>,
    x: &[f64],
    noise: &ChainNoise,
    accept: AcceptSource<'_>,
    kernel: AisKernel,
    trainable: Trainable,
) -> Result<ChainGrad> {
    let ps = p.param_set(trainable);
    let (outs, meta) = differentiate_with(&ps, |l| {
        match ais_estimate(&p.rebuild(l), x, noise, kernel, accept) {
            Ok(t) => {
                let prob = t.mean_accept_prob();
                (vec![t.log_w, t.log_a], Ok((t.accepted, prob)))
            }
            Err(e) => (Vec::new(), Err(e)),
        }
    });
    let (accepted, mean_accept_prob) = meta?;
    let mut it = outs.into_iter();
    let (log_w, grad_w) = it.next().expect("log-weight output");
    let (log_a, grad_a) = it.next().expect("log-acceptance output");
    Ok(ChainGrad {
        log_w,
        grad_w,
        log_a,
        grad_a,
        accepted,
        mean_accept_prob,
    })
}

/// `∇ Σ_k log α^{a_k}` with the recorded bits and noise held fixed.
pub fn score_log_accept(
    p: &Problem<f64>,
    x: &[f64],
    noise: &ChainNoise,
    accepted: &[bool],
    kernel: AisKernel,
    trainable: Trainable,
) -> Result<GradReport> {
    Ok(ais_chain_grad(p, x, noise, AcceptSource::Replay(accepted), kernel, trainable)?.grad_a)
}

fn reached(reports: &[&GradReport]) -> BTreeSet<String> {
    reports
        .iter()
        .flat_map(|r| r.names().map(str::to_string))
        .collect()
}

fn pathwise_estimate(
    ps: &ParamSet,
    chains: &[(f64, GradReport)],
    accept: f64,
) -> GradEstimate {
    let mut acc = Accum::new(ps);
    for (_, g) in chains {
        acc.push(g, 1.0);
    }
    let (mut mean, mut var) = acc.mean_var();
    let keep = reached(&chains.iter().map(|(_, g)| g).collect::<Vec<_>>());
    mean.retain(|n| keep.contains(n));
    var.retain(|n| keep.contains(n));
    let log_w: Vec<f64> = chains.iter().map(|(w, _)| *w).collect();
    GradEstimate {
        grads: mean.clone(),
        n: chains.len(),
        value: log_w.iter().sum::<f64>() / log_w.len() as f64,
        pathwise: mean,
        score_plain: None,
        score_cv: None,
        cv_correction: None,
        variances: TermVariances {
            pathwise: var,
            ..Default::default()
        },
        log_w,
        mean_accept_prob: accept,
    }
}

/// Average over `n` SIS chains (streams `0..n` of `seed`) of `∇W`.
pub fn grad_sis(
    p: &Problem<f64>,
    x: &[f64],
    trainable: Trainable,
    n: usize,
    seed: u64,
) -> Result<GradEstimate> {
    if n == 0 {
        return Err(Error::Contract("gradient needs n >= 1 chains".into()));
    }
    let d = p.latent_dim();
    let mut accept = 0.0;
    let chains: Vec<(f64, GradReport)> = (0..n as u64)
        .map(|i| {
            let noise = ChainNoise::for_chain(seed, i, d, p.k());
            let ps = p.param_set(trainable);
            let (outs, prob) = differentiate_with(&ps, |l| {
                let t = sis_estimate(&p.rebuild(l), x, &noise);
                let prob = t.mean_accept_prob();
                (vec![t.log_w], prob)
            });
            accept += prob;
            outs.into_iter().next().expect("one output")
        })
        .collect();
    Ok(pathwise_estimate(
        &p.param_set(trainable),
        &chains,
        accept / n as f64,
    ))
}

/// Pathwise gradient of the `particles`-sample importance-weighted bound on
/// stream 0 of `seed`.
pub fn grad_iwae(
    p: &Problem<f64>,
    x: &[f64],
    trainable: Trainable,
    particles: usize,
    seed: u64,
) -> Result<GradEstimate> {
    let u0s = particle_noise(seed, 0, p.latent_dim(), particles);
    let chain = iwae_grad_fixed(p, x, &u0s, trainable)?;
    Ok(pathwise_estimate(&p.param_set(trainable), &[chain], f64::NAN))
}

/// AIS gradient over `n` chains: `n⁻¹ Σ ∇W_i` plus the score term, centred
/// by the leave-one-out baseline when `use_cv`.
pub fn grad_ais(
    p: &Problem<f64>,
    x: &[f64],
    trainable: Trainable,
    n: usize,
    seed: u64,
    use_cv: bool,
    kernel: AisKernel,
) -> Result<GradEstimate> {
    if n == 0 || (use_cv && n < 2) {
        return Err(Error::Contract(format!(
            "AIS gradient with{} control variate needs n >= {}, got {n}",
            if use_cv { "" } else { "out" },
            if use_cv { 2 } else { 1 }
        )));
    }
    let d = p.latent_dim();
    let chains = (0..n as u64)
        .map(|i| {
            let noise = ChainNoise::for_chain(seed, i, d, p.k());
            ais_chain_grad(p, x, &noise, AcceptSource::Draw, kernel, trainable)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(combine_ais(&p.param_set(trainable), &chains, use_cv))
}

/// Assembles an AIS [`GradEstimate`] from per-chain gradients.
pub fn combine_ais(ps: &ParamSet, chains: &[ChainGrad], use_cv: bool) -> GradEstimate {
    let n = chains.len();
    let w: Vec<f64> = chains.iter().map(|c| c.log_w).collect();
    let mut path = Accum::new(ps);
    let mut plain = Accum::new(ps);
    let mut cv = Accum::new(ps);
    let mut corr = Accum::new(ps);
    for (i, c) in chains.iter().enumerate() {
        path.push(&c.grad_w, 1.0);
        plain.push(&c.grad_a, w[i]);
        if n >= 2 {
            let base = leave_one_out_baseline(&w, i).expect("n >= 2");
            cv.push(&c.grad_a, w[i] - base);
            corr.push(&c.grad_a, base);
        }
    }
    let mut keep = reached(&chains.iter().map(|c| &c.grad_w).collect::<Vec<_>>());
    keep.extend(reached(&chains.iter().map(|c| &c.grad_a).collect::<Vec<_>>()));
    let trim = |(mut m, mut v): (GradReport, GradReport)| {
        m.retain(|name| keep.contains(name));
        v.retain(|name| keep.contains(name));
        (m, v)
    };
    let (path_m, path_v) = trim(path.mean_var());
    let (plain_m, plain_v) = trim(plain.mean_var());
    let (cv_terms, corr_terms) = if n >= 2 {
        (Some(trim(cv.mean_var())), Some(trim(corr.mean_var())))
    } else {
        (None, None)
    };
    let mut grads = path_m.clone();
    match (&cv_terms, use_cv) {
        (Some((cv_m, _)), true) => grads.add_scaled(cv_m, 1.0),
        _ => grads.add_scaled(&plain_m, 1.0),
    }
    GradEstimate {
        grads,
        n,
        value: w.iter().sum::<f64>() / n as f64,
        pathwise: path_m,
        score_plain: Some(plain_m),
        score_cv: cv_terms.as_ref().map(|t| t.0.clone()),
        cv_correction: corr_terms.as_ref().map(|t| t.0.clone()),
        variances: TermVariances {
            pathwise: path_v,
            score_plain: Some(plain_v),
            score_cv: cv_terms.map(|t| t.1),
            cv_correction: corr_terms.map(|t| t.1),
        },
        log_w: w,
        mean_accept_prob: chains.iter().map(|c| c.mean_accept_prob).sum::<f64>() / n as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annealing::Schedule;
    use crate::models::{AffineEncoder, Model, Ppca};

    fn problem() -> (Problem<f64>, Vec<f64>) {
        let m = Ppca::new(vec![0.2, -0.4], vec![1.0, 0.3, -0.5, 0.9], 2, 0.8).unwrap();
        let e = AffineEncoder::mean_field_posterior(&m).inflate(1.3);
        let p = Problem::new(Model::Ppca(m), e, Schedule::fixed(3).unwrap(), &[0.1, 0.1]).unwrap();
        (p, vec![0.5, 1.0])
    }

    #[test]
    fn baseline_examples() {
        assert_eq!(leave_one_out_baseline(&[1.0, 2.0], 0).unwrap(), 2.0);
        assert_eq!(leave_one_out_baseline(&[1.0, 2.0, 3.0], 1).unwrap(), 2.0);
        assert_eq!(leave_one_out_baseline(&[4.0; 5], 3).unwrap(), 4.0);
        assert!(leave_one_out_baseline(&[1.0], 0).is_err());
    }

    #[test]
    fn equal_weights_cancel_the_centred_score() {
        let ps = ParamSet::new();
        let mut g = GradReport::default();
        g.insert("a", vec![1.0, -2.0]);
        let chains: Vec<ChainGrad> = (0..3)
            .map(|_| ChainGrad {
                log_w: -3.0,
                grad_w: GradReport::default(),
                log_a: -0.1,
                grad_a: g.clone(),
                accepted: vec![true],
                mean_accept_prob: 0.9,
            })
            .collect();
        let mut ps2 = ps.clone();
        ps2.push(crate::diffmath::ParameterBlock::new("a", vec![0.0, 0.0], true))
            .unwrap();
        let est = combine_ais(&ps2, &chains, true);
        assert_eq!(est.score_cv.unwrap().get("a").unwrap(), &[0.0, 0.0]);
        assert_eq!(est.score_plain.unwrap().get("a").unwrap(), &[-3.0, 6.0]);
    }

    #[test]
    fn cv_requires_two_chains() {
        let (p, x) = problem();
        assert!(grad_ais(&p, &x, Trainable::ALL, 1, 0, true, AisKernel::Mala).is_err());
        assert!(grad_ais(&p, &x, Trainable::ALL, 1, 0, false, AisKernel::Mala).is_ok());
    }

    #[test]
    fn decomposition_adds_up() {
        let (p, x) = problem();
        let est = grad_ais(&p, &x, Trainable::ALL, 6, 3, true, AisKernel::Mala).unwrap();
        let plain = est.score_plain.clone().unwrap();
        let mut sum = est.score_cv.clone().unwrap();
        sum.add_scaled(est.cv_correction.as_ref().unwrap(), 1.0);
        assert!(sum.max_rel_err(&plain) < 1e-12);
        let mut want = est.pathwise.clone();
        want.add_scaled(est.score_cv.as_ref().unwrap(), 1.0);
        assert!(want.max_rel_err(&est.grads) < 1e-15);
    }

    #[test]
    fn single_particle_iwae_is_the_elbo_gradient() {
        let (p, x) = problem();
        let a = grad_iwae(&p, &x, Trainable::MODEL_AND_ENCODER, 1, 5).unwrap();
        let u0 = particle_noise(5, 0, 2, 1);
        let ps = p.param_set(Trainable::MODEL_AND_ENCODER);
        let (v, g) = differentiate(&ps, |l| {
            crate::estimators::elbo_vae(&p.rebuild(l), &x, &u0[0])
        });
        assert_eq!(a.value, v);
        assert!(a.grads.max_rel_err(&g) < 1e-14);
    }
}
