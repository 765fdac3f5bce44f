mod common;

use common::{mean_se, observation, ppca, problem};
use mcvi::annealing::Schedule;
use mcvi::diffmath::{finite_diff_grad, GradReport};
use mcvi::estimators::{ais_estimate, iwae, particle_noise, sis_estimate, AcceptSource, AisKernel, ChainNoise};
use mcvi::gradients::{
    ais_chain_grad, combine_ais, grad_ais, grad_iwae, grad_sis, iwae_grad_fixed, score_log_accept,
    sis_chain_grad,
};
use mcvi::models::{AffineEncoder, Model, Toy};
use mcvi::problem::{Problem, Trainable, LOG_ETA};
use mcvi::rng;

fn fixture() -> (Problem<f64>, Vec<f64>) {
    let m = ppca(3, 2, 0.7, 31);
    let x = observation(&m, 31);
    let enc = AffineEncoder::mean_field_posterior(&m).inflate(1.4);
    (problem(&m, enc, Schedule::sigmoidal_with_delta(3, 1.5).unwrap(), 0.15), x)
}

#[test]
fn score_of_log_acceptance_matches_finite_differences() {
    // 1-D pPCA, three steps, with a mix of accepted and rejected moves.
    let m = ppca(2, 1, 0.6, 32);
    let x = observation(&m, 32);
    let enc = AffineEncoder::mean_field_posterior(&m).inflate(2.0);
    let p = problem(&m, enc, Schedule::fixed(3).unwrap(), 0.4);
    let ps = p.param_set(Trainable::ALL);
    let mut saw_reject = false;
    for i in 0..40 {
        let noise = ChainNoise::for_chain(320, i, 1, 3);
        let t = ais_estimate(&p, &x, &noise, AisKernel::Mala, AcceptSource::Draw).unwrap();
        saw_reject |= t.accepted.iter().any(|a| !a);
        let g = score_log_accept(&p, &x, &noise, &t.accepted, AisKernel::Mala, Trainable::ALL).unwrap();
        let fd = finite_diff_grad(&ps, 1e-5, |q| {
            Ok(ais_estimate(&p.with_params(q), &x, &noise, AisKernel::Mala, AcceptSource::Replay(&t.accepted))?.log_a)
        })
        .unwrap();
        assert!(g.max_rel_err(&fd) < 1e-5, "chain {i}: {}", g.max_rel_err(&fd));
    }
    assert!(saw_reject);
}

#[test]
fn rejected_step_score_is_scaled_reflection_of_accept_score() {
    // ∇log(1-α) = -α/(1-α) ∇log α for a single step.
    let m = ppca(2, 1, 0.6, 33);
    let x = observation(&m, 33);
    let enc = AffineEncoder::mean_field_posterior(&m).inflate(2.0);
    let p = problem(&m, enc, Schedule::fixed(1).unwrap(), 0.5);
    let mut checked = 0;
    for i in 0..50 {
        let noise = ChainNoise::for_chain(330, i, 1, 1);
        let t = ais_estimate(&p, &x, &noise, AisKernel::Mala, AcceptSource::Replay(&[true])).unwrap();
        let alpha = t.accept_probs[0];
        if !(0.01..=0.99).contains(&alpha) {
            continue;
        }
        let ga = score_log_accept(&p, &x, &noise, &[true], AisKernel::Mala, Trainable::ALL).unwrap();
        let gr = score_log_accept(&p, &x, &noise, &[false], AisKernel::Mala, Trainable::ALL).unwrap();
        let expect = ga.scaled(-alpha / (1.0 - alpha));
        assert!(gr.max_rel_err(&expect) < 1e-8);
        checked += 1;
    }
    assert!(checked > 5);
}

#[test]
fn unit_acceptance_gives_zero_score() {
    // q equal to the posterior makes every bridge the posterior; a MALA
    // move from and to the same Gaussian with zero noise stays at the mode.
    let mut m = ppca(3, 2, 0.7, 34);
    m.orthogonalize_columns().unwrap();
    let x = observation(&m, 34);
    let enc = AffineEncoder::exact_posterior(&m).unwrap();
    let p = problem(&m, enc.clone(), Schedule::fixed(2).unwrap(), 0.1);
    let q = enc.encode(&x);
    let noise = ChainNoise {
        u0: vec![0.0, 0.0],
        u: vec![vec![0.0, 0.0]; 2],
        v: vec![0.5, 0.5],
    };
    let c = ais_chain_grad(&p, &x, &noise, AcceptSource::Draw, AisKernel::Mala, Trainable::ENCODER).unwrap();
    assert_eq!(c.accepted, vec![true, true]);
    assert!(c.log_a.abs() < 1e-12);
    for (_, g) in c.grad_a.iter() {
        assert!(g.iter().all(|v| v.abs() < 1e-9));
    }
    let ps = p.param_set(Trainable::ENCODER);
    let est = combine_ais(&ps, &[c.clone(), c], false);
    assert!(est.grads.max_rel_err(&est.pathwise) < 1e-9);
    assert!(q.mean.iter().all(|v| v.is_finite()));
}

#[test]
fn grad_sis_and_iwae_average_per_chain_gradients() {
    let (p, x) = fixture();
    let est = grad_sis(&p, &x, Trainable::ALL, 4, 35).unwrap();
    let mut manual = GradReport::default();
    for i in 0..4 {
        let (_, g) = sis_chain_grad(&p, &x, &ChainNoise::for_chain(35, i, 2, 3), Trainable::ALL);
        manual.add_scaled(&g, 0.25);
    }
    assert!(est.grads.max_rel_err(&manual) < 1e-14);

    let est = grad_iwae(&p, &x, Trainable::ALL, 1, 36).unwrap();
    let u0 = particle_noise(36, 0, 2, 1);
    let (_, g) = iwae_grad_fixed(&p, &x, &u0, Trainable::ALL).unwrap();
    assert!(est.grads.max_rel_err(&g) < 1e-15);
}

#[test]
fn ais_estimate_decomposes_into_pathwise_and_score_terms() {
    let (p, x) = fixture();
    for use_cv in [false, true] {
        let est = grad_ais(&p, &x, Trainable::ALL, 6, 37, use_cv, AisKernel::Mala).unwrap();
        let score = if use_cv { est.score_cv.clone() } else { est.score_plain.clone() };
        let mut sum = est.pathwise.clone();
        sum.add_scaled(&score.unwrap(), 1.0);
        assert!(est.grads.max_rel_err(&sum) < 1e-12);
        let mut split = est.score_cv.clone().unwrap();
        split.add_scaled(est.cv_correction.as_ref().unwrap(), 1.0);
        assert!(split.max_rel_err(est.score_plain.as_ref().unwrap()) < 1e-10);
        assert_eq!(est.log_w.len(), 6);
    }
}

#[test]
fn rwm_pathwise_term_matches_finite_differences() {
    let (p, x) = fixture();
    let ps = p.param_set(Trainable::ALL);
    for i in 0..10 {
        let noise = ChainNoise::for_chain(38, i, 2, 3);
        let c = ais_chain_grad(&p, &x, &noise, AcceptSource::Draw, AisKernel::Rwm, Trainable::ALL).unwrap();
        let bits = c.accepted.clone();
        let fd = finite_diff_grad(&ps, 1e-5, |q| {
            Ok(ais_estimate(&p.with_params(q), &x, &noise, AisKernel::Rwm, AcceptSource::Replay(&bits))?.log_w)
        })
        .unwrap();
        assert!(c.grad_w.max_rel_err(&fd) < 1e-5);
    }
}

#[test]
fn toy_gradients_match_finite_differences() {
    let toy = Model::Toy(Toy::new(0.9, 0.2, 0.5, 2).unwrap());
    let enc = AffineEncoder::new(vec![0.3, -0.2], vec![0.4, 0.1], vec![0.1, 0.0], vec![-0.5, -0.4]).unwrap();
    let p = Problem::new(toy, enc, Schedule::learnable(vec![0.2, -0.1, 0.4]).unwrap(), &[0.02, 0.03]).unwrap();
    let x = [1.3];
    let ps = p.param_set(Trainable::ALL);
    for i in 0..10 {
        let noise = ChainNoise::for_chain(39, i, 2, 3);
        let (_, g) = sis_chain_grad(&p, &x, &noise, Trainable::ALL);
        let fd = finite_diff_grad(&ps, 1e-5, |q| Ok(sis_estimate(&p.with_params(q), &x, &noise).log_w)).unwrap();
        assert!(g.max_rel_err(&fd) < 1e-5);
    }
}

#[test]
fn sis_gradient_in_step_size_is_finite_near_zero() {
    let (p, x) = fixture();
    let mut prev: Option<Vec<f64>> = None;
    for eta in [1e-2, 1e-4, 1e-6, 1e-8] {
        let mut q = p.clone();
        q.set_eta(&[eta, eta]);
        let (_, g) = sis_chain_grad(&q, &x, &ChainNoise::for_chain(40, 0, 2, 3), Trainable::ALL);
        // Chain rule through log η: ∂/∂η = (∂/∂log η) / η.
        let d_eta: Vec<f64> = g.get(LOG_ETA).unwrap().iter().map(|v| v / eta).collect();
        assert!(d_eta.iter().all(|v| v.is_finite()));
        if let Some(prev) = &prev {
            for (a, b) in d_eta.iter().zip(prev) {
                assert!(a.abs() < 10.0 * b.abs().max(1.0) + 10.0, "{a} vs {b}");
            }
        }
        prev = Some(d_eta);
    }
}

#[test]
fn vanishing_step_size_recovers_the_single_sample_bound_gradient() {
    let (p, x) = fixture();
    let mut q = p.clone();
    q.set_eta(&[1e-12, 1e-12]);
    let t = Trainable::MODEL_AND_ENCODER;
    for i in 0..5 {
        let noise = ChainNoise::for_chain(41, i, 2, 3);
        let (_, g) = sis_chain_grad(&q, &x, &noise, t);
        let (_, v) = iwae_grad_fixed(&q, &x, std::slice::from_ref(&noise.u0), t).unwrap();
        assert!(g.max_rel_err(&v) < 1e-4, "{}", g.max_rel_err(&v));
    }
}

#[test]
fn iwae_gradient_at_the_posterior_has_zero_mean_in_the_encoder() {
    let mut m = ppca(3, 2, 0.7, 42);
    m.orthogonalize_columns().unwrap();
    let x = observation(&m, 42);
    let p = problem(&m, AffineEncoder::exact_posterior(&m).unwrap(), Schedule::fixed(1).unwrap(), 0.1);
    let reps = 2000;
    let grads: Vec<Vec<f64>> = (0..reps)
        .map(|r| grad_iwae(&p, &x, Trainable::ENCODER, 5, rng::derive(42, r, 0)).unwrap().grads.flatten())
        .collect();
    for j in 0..grads[0].len() {
        let col: Vec<f64> = grads.iter().map(|g| g[j]).collect();
        let (mean, se) = mean_se(&col);
        // The bound is exactly log Z at every noise draw here, so each
        // gradient is zero up to rounding.
        assert!(mean.abs() <= 3.0 * se + 1e-9, "coord {j}: {mean} ± {se}");
    }
    let u0 = particle_noise(43, 0, 2, 5);
    let lz = m.exact_log_evidence(&x).unwrap();
    assert!((iwae(&p, &x, &u0).unwrap() - lz).abs() < 1e-10);
}

#[test]
fn sis_encoder_gradient_matches_crn_finite_difference_at_the_posterior() {
    let mut m = ppca(3, 2, 0.7, 44);
    m.orthogonalize_columns().unwrap();
    let x = observation(&m, 44);
    let enc = AffineEncoder::exact_posterior(&m).unwrap();
    let p = problem(&m, enc, Schedule::fixed(3).unwrap(), 0.1);
    let t = Trainable::ENCODER;
    let ps = p.param_set(t);
    let (n, h) = (10_000usize, 1e-4);
    let est = grad_sis(&p, &x, t, n, 44).unwrap();
    let noises: Vec<ChainNoise> = (0..n as u64).map(|i| ChainNoise::for_chain(44, i, 2, 3)).collect();
    let fd = finite_diff_grad(&ps, h, |q| {
        let pq = p.with_params(q);
        Ok(noises.iter().map(|nz| sis_estimate(&pq, &x, nz).log_w).sum::<f64>() / n as f64)
    })
    .unwrap();
    let g = est.grads.flatten();
    let se: Vec<f64> = est.variances.pathwise.flatten().iter().map(|v| (v / n as f64).sqrt()).collect();
    for (j, (a, b)) in g.iter().zip(fd.flatten()).enumerate() {
        assert!((a - b).abs() <= 3.0 * se[j] + 1e-6 * a.abs().max(1.0), "coord {j}: {a} vs {b}");
    }
}
