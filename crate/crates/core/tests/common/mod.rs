#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wgf_core::NetworkParams;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Sorted biases in `[lo, hi]` with consecutive gaps of at least `min_gap`.
pub fn spaced_biases(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64, min_gap: f64) -> Vec<f64> {
    let free = hi - lo - min_gap * (n as f64 - 1.0);
    assert!(free > 0.0);
    let mut u: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * free).collect();
    u.sort_by(f64::total_cmp);
    u.iter().enumerate().map(|(i, x)| lo + x + min_gap * i as f64).collect()
}

/// One-sided network with positive weights and sorted, separated biases.
pub fn random_one_sided(rng: &mut ChaCha8Rng, n: usize) -> NetworkParams {
    let b = spaced_biases(rng, n, -3.0, 3.0, 0.02_f64.min(5.0 / n as f64));
    let a = (0..n).map(|_| rng.random_range(0.05..2.0)).collect();
    NetworkParams::one_sided(a, b).unwrap()
}

/// Symmetric network with every slope positive and all biases well separated.
pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize, beta: f64) -> NetworkParams {
    let b = spaced_biases(rng, 2 * n, -3.0, 3.0, 0.05);
    let mut idx: Vec<usize> = (0..2 * n).collect();
    for i in (1..idx.len()).rev() {
        idx.swap(i, rng.random_range(0..=i));
    }
    let mut biases: Vec<f64> = idx.iter().map(|&i| b[i]).collect();
    biases[..n].sort_by(f64::total_cmp);
    biases[n..].sort_by(f64::total_cmp);
    let mut weights: Vec<f64> = (0..n).map(|_| beta * rng.random_range(0.1..1.0) / n as f64).collect();
    weights.extend((0..n).map(|_| -beta * rng.random_range(0.1..1.0) / n as f64));
    NetworkParams::symmetric(weights, biases, beta, 0.0).unwrap()
}

pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
