//! Independent oracles: quadrature, closed forms, finite differences and a
//! straight-line re-implementation of the chain weights.

mod common;

use common::{observation, ppca, problem, simpson, simpson2};
use mcvi::annealing::{Bridge, Schedule};
use mcvi::diffmath::{differentiate, finite_diff_grad, rel_err, single_block, ParamSet};
use mcvi::estimators::{ais_estimate, sis_estimate, AcceptSource, AisKernel, ChainNoise};
use mcvi::kernels::{ula_log_density, State, Tempered};
use mcvi::models::{AffineEncoder, Model, Ppca, Toy};
use mcvi::problem::Trainable;
use mcvi::rng;
use rand::Rng;
use rand_distr::StandardNormal;

const LN_2PI: f64 = 1.8378770664093453;

fn normal_logpdf(y: f64, m: f64, var: f64) -> f64 {
    -0.5 * ((y - m) * (y - m) / var + var.ln() + LN_2PI)
}

#[test]
fn scalar_evidence_matches_quadrature() {
    let m = Ppca::new(vec![0.4], vec![1.3], 1, 0.8).unwrap();
    for x in [-2.0, 0.0, 0.7, 3.1] {
        let quad = simpson(|z| m.log_joint(&[x], &[z]).exp(), -12.0, 12.0, 10_000);
        let exact = m.exact_log_evidence(&[x]).unwrap();
        assert!((quad - exact.exp()).abs() < 1e-8, "x={x}");
    }
}

#[test]
fn posterior_density_integrates_to_one_in_two_dims() {
    let m = ppca(3, 2, 0.9, 11);
    let x = observation(&m, 11);
    let lz = m.exact_log_evidence(&x).unwrap();
    let (mu, _) = m.exact_posterior(&x);
    let f = |a: f64, b: f64| (m.log_joint(&x, &[a + mu[0], b + mu[1]]) - lz).exp();
    let total = simpson2(f, -8.0, 8.0, 400);
    assert!((total - 1.0).abs() < 1e-6, "{total}");
}

#[test]
fn bayes_identity_holds_on_random_points() {
    let mut r = rng::stream(12, 0);
    for seed in 0..20 {
        let m = ppca(4, 3, 0.5 + r.random::<f64>(), seed);
        let x = observation(&m, seed);
        let (mu, cov) = m.exact_posterior(&x);
        let chol = cov.clone().cholesky().unwrap();
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        for _ in 0..10 {
            let z: Vec<f64> = (0..3).map(|_| r.sample(StandardNormal)).collect();
            let dz = nalgebra::DVector::from_iterator(3, z.iter().zip(mu.iter()).map(|(a, b)| a - b));
            let quad = dz.dot(&chol.solve(&dz));
            let post = -0.5 * (quad + logdet + 3.0 * LN_2PI);
            let lhs = m.log_joint(&x, &z) - m.exact_log_evidence(&x).unwrap();
            assert!((lhs - post).abs() < 1e-10);
        }
    }
}

#[test]
fn posterior_moments_match_quadrature() {
    let m = ppca(2, 2, 0.7, 13);
    let x = observation(&m, 13);
    let (mu, cov) = m.exact_posterior(&x);
    let lz = m.exact_log_evidence(&x).unwrap();
    let dens = |a: f64, b: f64| (m.log_joint(&x, &[a, b]) - lz).exp();
    let (lo, hi, n) = (-10.0, 10.0, 400);
    let m0 = simpson2(|a, b| a * dens(a, b), lo, hi, n);
    let m1 = simpson2(|a, b| b * dens(a, b), lo, hi, n);
    let c01 = simpson2(|a, b| (a - mu[0]) * (b - mu[1]) * dens(a, b), lo, hi, n);
    assert!((m0 - mu[0]).abs() < 1e-7 && (m1 - mu[1]).abs() < 1e-7);
    assert!((c01 - cov[(0, 1)]).abs() < 1e-7);
}

#[test]
fn ula_density_integrates_to_one() {
    let m = ppca(3, 2, 0.8, 14);
    let x = observation(&m, 14);
    let model = Model::Ppca(m);
    let enc = AffineEncoder::standard(2, 3);
    let bridge = Bridge::new(&model, &enc, &x);
    let target = Tempered {
        bridge: &bridge,
        beta: 0.4,
    };
    let from = State::at(&target, vec![0.3, -0.5]);
    let eta = [0.05, 0.02];
    let c = [
        from.z[0] + eta[0] * from.grad[0],
        from.z[1] + eta[1] * from.grad[1],
    ];
    let total = simpson2(
        |a, b| ula_log_density(&from, &[a + c[0], b + c[1]], &eta).exp(),
        -3.0,
        3.0,
        600,
    );
    assert!((total - 1.0).abs() < 1e-8, "{total}");
}

#[test]
fn toy_joint_matches_direct_evaluation() {
    let t = Toy::new(0.0, 0.0, 1.0, 2).unwrap();
    assert!((t.log_joint(&[0.0], &[0.0, 0.0]) + 1.5 * LN_2PI).abs() < 1e-14);
    let t = Toy::new(1.3, -0.4, 0.3, 2).unwrap();
    let (x, z) = (1.1, [0.6, -0.9]);
    let mean = 1.3 * (0.36 + 0.81 - 0.4);
    let direct = normal_logpdf(x, mean, 0.09) + normal_logpdf(z[0], 0.0, 1.0) + normal_logpdf(z[1], 0.0, 1.0);
    assert!((t.log_joint(&[x], &z) - direct).abs() < 1e-12);
}

fn fd_z(f: impl Fn(&[f64]) -> f64, z: &[f64], h: f64) -> Vec<f64> {
    (0..z.len())
        .map(|i| {
            let mut a = z.to_vec();
            let mut b = z.to_vec();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn latent_gradients_match_finite_differences() {
    let mut r = rng::stream(15, 0);
    let m = ppca(4, 3, 0.7, 15);
    let x = observation(&m, 15);
    let toy = Toy::new(0.8, 0.2, 0.5, 3).unwrap();
    let enc = AffineEncoder::new(
        (0..12).map(|_| 0.3 * r.sample::<f64, _>(StandardNormal)).collect(),
        vec![0.1, -0.2, 0.3],
        (0..12).map(|_| 0.1 * r.sample::<f64, _>(StandardNormal)).collect(),
        vec![-0.3, 0.1, 0.2],
    )
    .unwrap();
    for _ in 0..20 {
        let z: Vec<f64> = (0..3).map(|_| r.sample(StandardNormal)).collect();
        let (_, g) = m.log_joint_and_grad(&x, &z);
        let fd = fd_z(|z| m.log_joint(&x, z), &z, 1e-5);
        let (_, gt) = toy.log_joint_and_grad(&[1.4], &z);
        let fdt = fd_z(|z| toy.log_joint(&[1.4], z), &z, 1e-5);
        let q = enc.encode(&x);
        let gq = q.grad_log_density(&z);
        let fdq = fd_z(|z| enc.log_q(&x, z), &z, 1e-5);
        for i in 0..3 {
            assert!(rel_err(g[i], fd[i]) < 1e-6);
            assert!(rel_err(gt[i], fdt[i]) < 1e-6);
            assert!(rel_err(gq[i], fdq[i]) < 1e-6);
        }
    }
}

#[test]
fn parameter_gradients_of_densities_match_finite_differences() {
    let m = ppca(3, 2, 0.7, 16);
    let x = observation(&m, 16);
    let model = Model::Ppca(m);
    let z = [0.4, -1.1];
    let mut ps = ParamSet::new();
    for (name, v) in model.blocks() {
        ps.push(mcvi::diffmath::ParameterBlock::new(name, v, true)).unwrap();
    }
    let (_, g) = differentiate(&ps, |l| {
        let zl: Vec<_> = z.iter().map(|&v| mcvi::diffmath::Var::constant(v)).collect();
        model.rebuild(l).log_joint(&x, &zl)
    });
    let fd = finite_diff_grad(&ps, 1e-5, |q| {
        let m2 = match &model {
            Model::Ppca(m) => Model::Ppca(m.rebuild(q)),
            Model::Toy(m) => Model::Toy(m.rebuild(q)),
        };
        Ok(m2.log_joint(&x, &z))
    })
    .unwrap();
    assert!(g.max_rel_err(&fd) < 1e-6, "{}", g.max_rel_err(&fd));

    let enc = AffineEncoder::new(vec![0.2, -0.1, 0.3, 0.0, 0.5, -0.4], vec![0.1, 0.2], vec![0.1, 0.0, -0.2, 0.3, 0.1, 0.0], vec![-0.2, 0.3]).unwrap();
    let mut ps = ParamSet::new();
    for (name, v) in enc.blocks() {
        ps.push(mcvi::diffmath::ParameterBlock::new(name, v, true)).unwrap();
    }
    let (_, g) = differentiate(&ps, |l| {
        let zl: Vec<_> = z.iter().map(|&v| mcvi::diffmath::Var::constant(v)).collect();
        enc.rebuild(l).log_q(&x, &zl)
    });
    let fd = finite_diff_grad(&ps, 1e-5, |q| Ok(enc.rebuild(q).log_q(&x, &z))).unwrap();
    assert!(g.max_rel_err(&fd) < 1e-6);
}

#[test]
fn schedule_gradients_match_finite_differences() {
    for s in [
        Schedule::sigmoidal_with_delta(6, 1.7).unwrap(),
        Schedule::learnable(vec![0.3, -0.2, 1.0, 0.1]).unwrap(),
    ] {
        let ps = single_block(mcvi::annealing::SCHEDULE, s.raw.clone());
        for k in 1..s.k {
            let (_, g) = differentiate(&ps, |l| s.rebuild(l).betas()[k]);
            let fd = finite_diff_grad(&ps, 1e-6, |q| Ok(s.rebuild(q).betas()[k])).unwrap();
            assert!(g.max_rel_err(&fd) < 1e-6);
        }
    }
}

/// Straight-line chain weights written without the library's kernel code.
struct Reference<'a> {
    m: &'a Ppca<f64>,
    x: &'a [f64],
    mu: Vec<f64>,
    sd: Vec<f64>,
}

impl Reference<'_> {
    fn log_p_and_grad(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let (p, d, s2) = (self.m.p, self.m.d, self.m.sigma * self.m.sigma);
        let mut lp = z.iter().map(|v| normal_logpdf(*v, 0.0, 1.0)).sum::<f64>();
        let mut g: Vec<f64> = z.iter().map(|v| -v).collect();
        for i in 0..p {
            let mean = self.m.theta0[i] + (0..d).map(|j| self.m.theta1[i * d + j] * z[j]).sum::<f64>();
            let r = self.x[i] - mean;
            lp += normal_logpdf(self.x[i], mean, s2);
            for j in 0..d {
                g[j] += self.m.theta1[i * d + j] * r / s2;
            }
        }
        (lp, g)
    }

    fn log_q_and_grad(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let lq = (0..z.len()).map(|i| normal_logpdf(z[i], self.mu[i], self.sd[i] * self.sd[i])).sum();
        let g = (0..z.len()).map(|i| -(z[i] - self.mu[i]) / (self.sd[i] * self.sd[i])).collect();
        (lq, g)
    }

    fn gamma(&self, beta: f64, z: &[f64]) -> (f64, Vec<f64>) {
        let (lq, gq) = self.log_q_and_grad(z);
        let (lp, gp) = self.log_p_and_grad(z);
        let g = gq.iter().zip(&gp).map(|(a, b)| (1.0 - beta) * a + beta * b).collect();
        ((1.0 - beta) * lq + beta * lp, g)
    }

    fn kernel_logpdf(to: &[f64], from: &[f64], grad: &[f64], eta: &[f64]) -> f64 {
        (0..to.len())
            .map(|i| normal_logpdf(to[i], from[i] + eta[i] * grad[i], 2.0 * eta[i]))
            .sum()
    }

    fn step(z: &[f64], g: &[f64], eta: &[f64], u: &[f64]) -> Vec<f64> {
        (0..z.len()).map(|i| z[i] + eta[i] * g[i] + (2.0 * eta[i]).sqrt() * u[i]).collect()
    }

    fn z0(&self, u0: &[f64]) -> Vec<f64> {
        (0..u0.len()).map(|i| self.mu[i] + self.sd[i] * u0[i]).collect()
    }

    fn sis(&self, betas: &[f64], eta: &[f64], n: &ChainNoise) -> f64 {
        let mut z = self.z0(&n.u0);
        let mut w = -self.log_q_and_grad(&z).0;
        for k in 1..betas.len() {
            let (_, g) = self.gamma(betas[k], &z);
            let y = Self::step(&z, &g, eta, &n.u[k - 1]);
            let (_, gy) = self.gamma(betas[k], &y);
            w += Self::kernel_logpdf(&z, &y, &gy, eta) - Self::kernel_logpdf(&y, &z, &g, eta);
            z = y;
        }
        w + self.log_p_and_grad(&z).0
    }

    fn ais(&self, betas: &[f64], eta: &[f64], n: &ChainNoise) -> f64 {
        let mut z = self.z0(&n.u0);
        let mut w = 0.0;
        for k in 1..betas.len() {
            let (lq, _) = self.log_q_and_grad(&z);
            let (lp, _) = self.log_p_and_grad(&z);
            w += (betas[k] - betas[k - 1]) * (lp - lq);
            let (lg, g) = self.gamma(betas[k], &z);
            let y = Self::step(&z, &g, eta, &n.u[k - 1]);
            let (lgy, gy) = self.gamma(betas[k], &y);
            let log_alpha = (lgy + Self::kernel_logpdf(&z, &y, &gy, eta)
                - lg
                - Self::kernel_logpdf(&y, &z, &g, eta))
                .min(0.0);
            if n.v[k - 1] < log_alpha.exp() {
                z = y;
            }
        }
        w
    }
}

#[test]
fn chain_weights_match_straight_line_reference() {
    let m = ppca(4, 2, 0.7, 17);
    let x = observation(&m, 17);
    let enc = AffineEncoder::mean_field_posterior(&m).inflate(1.4);
    let q = enc.encode(&x);
    let reference = Reference {
        m: &m,
        x: &x,
        mu: q.mean.clone(),
        sd: q.std.clone(),
    };
    for (s, eta) in [
        (Schedule::fixed(4).unwrap(), vec![0.1, 0.05]),
        (Schedule::sigmoidal_with_delta(3, 2.0).unwrap(), vec![0.2, 0.2]),
        (Schedule::learnable(vec![0.1, 0.5, -0.3, 0.0, 0.2]).unwrap(), vec![0.03, 0.3]),
    ] {
        let betas = s.betas();
        let p = mcvi::problem::Problem::new(Model::Ppca(m.clone()), enc.clone(), s.clone(), &eta).unwrap();
        let mut accepted = 0;
        for i in 0..50 {
            let noise = ChainNoise::for_chain(170, i, 2, s.k);
            let sis = sis_estimate(&p, &x, &noise).log_w;
            assert!((sis - reference.sis(&betas, &eta, &noise)).abs() < 1e-10 * sis.abs().max(1.0));
            let t = ais_estimate(&p, &x, &noise, AisKernel::Mala, AcceptSource::Draw).unwrap();
            accepted += t.accept_count();
            assert!((t.log_w - reference.ais(&betas, &eta, &noise)).abs() < 1e-10 * t.log_w.abs().max(1.0));
        }
        assert!(accepted > 0);
    }
}

#[test]
fn sis_weight_is_ratio_of_path_densities_by_change_of_variables() {
    // For K = 1 the reverse-kernel weight equals
    // log p(z1) + log m(z1 -> z0) - log q(z0) - log m(z0 -> z1); cross-check
    // the forward term against the density of the pushed-forward noise.
    let m = ppca(3, 2, 0.8, 18);
    let x = observation(&m, 18);
    let enc = AffineEncoder::mean_field_posterior(&m);
    let p = problem(&m, enc.clone(), Schedule::fixed(1).unwrap(), 0.07);
    let noise = ChainNoise::for_chain(18, 0, 2, 1);
    let t = sis_estimate(&p, &x, &noise);
    let q = enc.encode(&x);
    let (z0, z1) = (&t.z[0], &t.z[1]);
    let fwd: f64 = noise.u[0].iter().map(|u| normal_logpdf(*u, 0.0, 1.0)).sum::<f64>()
        - 2.0 * 0.5 * (2.0 * 0.07f64).ln();
    let (_, g1) = m.log_joint_and_grad(&x, z1);
    let bwd: f64 = (0..2).map(|i| normal_logpdf(z0[i], z1[i] + 0.07 * g1[i], 0.14)).sum();
    let lq = q.log_density(z0);
    let expect = m.log_joint(&x, z1) + bwd - lq - fwd;
    assert!((t.log_w - expect).abs() < 1e-11);
}

#[test]
fn toy_bridge_normalizer_matches_quadrature_at_the_endpoints() {
    // γ_0 = q is normalized; γ_K = p(x, ·) integrates to the evidence.
    let toy = Toy::new(1.0, 0.0, 0.5, 2).unwrap();
    let model = Model::Toy(toy.clone());
    let enc = AffineEncoder::new(vec![0.2, 0.0], vec![0.3, -0.1], vec![0.0, 0.1], vec![-0.2, 0.1]).unwrap();
    let x = [1.2];
    let bridge = Bridge::new(&model, &enc, &x);
    let betas = [0.0, 0.5, 1.0];
    let z0 = simpson2(|a, b| bridge.log_gamma(&betas, 0, &[a, b]).unwrap().exp(), -9.0, 9.0, 400);
    assert!((z0 - 1.0).abs() < 1e-8);
    let zk = simpson2(|a, b| bridge.log_gamma(&betas, 2, &[a, b]).unwrap().exp(), -9.0, 9.0, 400);
    let direct = simpson2(|a, b| toy.log_joint(&x, &[a, b]).exp(), -9.0, 9.0, 400);
    assert!((zk - direct).abs() < 1e-12);
}

#[test]
fn gradient_blocks_follow_trainable_selection() {
    let m = ppca(3, 2, 0.8, 19);
    let p = problem(&m, AffineEncoder::standard(2, 3), Schedule::fixed(2).unwrap(), 0.1);
    let ps = p.param_set(Trainable::ENCODER);
    let names: Vec<_> = ps.blocks().iter().filter(|b| b.trainable).map(|b| b.name.as_str()).collect();
    assert_eq!(names, ["enc.a", "enc.b", "enc.c", "enc.d"]);
}
