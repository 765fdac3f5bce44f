#![allow(dead_code)]

use mcvi::annealing::Schedule;
use mcvi::models::{AffineEncoder, Model, Ppca};
use mcvi::problem::Problem;
use mcvi::rng;

/// Random pPCA with loading and offset entries of scale 0.8.
pub fn ppca(p: usize, d: usize, sigma: f64, seed: u64) -> Ppca<f64> {
    Ppca::random(p, d, sigma, 0.8, &mut rng::stream(seed, 0))
}

/// One observation drawn from the model.
pub fn observation(m: &Ppca<f64>, seed: u64) -> Vec<f64> {
    m.sample_data(1, &mut rng::stream(seed, 1)).remove(0)
}

pub fn problem(
    m: &Ppca<f64>,
    encoder: AffineEncoder<f64>,
    schedule: Schedule<f64>,
    eta: f64,
) -> Problem<f64> {
    Problem::new(Model::Ppca(m.clone()), encoder, schedule, &vec![eta; m.d]).unwrap()
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Standard error of the mean of a correlated series by non-overlapping
/// batch means.
pub fn batch_means_se(xs: &[f64], batches: usize) -> f64 {
    let len = xs.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * len..(b + 1) * len].iter().sum::<f64>() / len as f64)
        .collect();
    mean_se(&means).1
}

/// Composite Simpson rule on `[a, b]` with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    assert!(n.is_multiple_of(2));
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Two-dimensional tensor Simpson rule on `[a, b]²`.
pub fn simpson2(f: impl Fn(f64, f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    simpson(|x| simpson(|y| f(x, y), a, b, n), a, b, n)
}
