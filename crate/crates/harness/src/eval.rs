//! Error metric, samplers and histograms.

use wgf_core::{Barenblatt, NetworkParams, ReferenceDensity, StandardGaussian};

use crate::HarnessError;

/// `(1/N₁) Σ_j |f(θ, z_j) − T(z_j)| p₀(z_j)` over the mesh points, without a
/// `Δz` factor. Returns NaN for an empty mesh.
pub fn weighted_l1_error(
    f_map: &NetworkParams,
    t_oracle: impl Fn(f64) -> f64,
    mesh: &[f64],
    p0: impl Fn(f64) -> f64,
) -> f64 {
    if mesh.is_empty() {
        return f64::NAN;
    }
    let f = map_on_mesh(f_map, mesh);
    let s: f64 = mesh.iter().zip(&f).map(|(&z, &fz)| (fz - t_oracle(z)).abs() * p0(z)).sum();
    s / mesh.len() as f64
}

/// `f(θ, z)` at every mesh point, in one sweep when the mesh is sorted.
pub fn map_on_mesh(f_map: &NetworkParams, mesh: &[f64]) -> Vec<f64> {
    if mesh.windows(2).all(|w| w[0] <= w[1]) {
        f_map.eval_sorted(mesh).0
    } else {
        mesh.iter().map(|&z| f_map.forward(z)).collect()
    }
}

pub fn sample_gaussian(m: usize, seed: u64) -> Result<Vec<f64>, HarnessError> {
    Ok(StandardGaussian.sample(m, seed)?)
}

/// Inverse-CDF draws from the `m = 2` Barenblatt profile at time `t0`.
pub fn sample_barenblatt(m: usize, seed: u64, t0: f64) -> Result<Vec<f64>, HarnessError> {
    Ok(Barenblatt::new(t0)?.sample(m, seed)?)
}

/// Counts of particles in `bins` equal bins on `[lo, hi]`; the last bin is
/// closed. Particles outside the range are dropped.
pub fn histogram(particles: &[f64], bins: usize, range: (f64, f64)) -> Vec<u64> {
    let (lo, hi) = range;
    let mut counts = vec![0u64; bins];
    if bins == 0 || !(lo < hi) {
        return counts;
    }
    let width = (hi - lo) / bins as f64;
    for &x in particles {
        if !(lo..=hi).contains(&x) {
            continue;
        }
        let k = (((x - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
}

/// Left and right edges of histogram bin `k`.
pub fn bin_edges(k: usize, bins: usize, range: (f64, f64)) -> (f64, f64) {
    let w = (range.1 - range.0) / bins as f64;
    (range.0 + k as f64 * w, if k + 1 == bins { range.1 } else { range.0 + (k + 1) as f64 * w })
}

#[cfg(test)]
mod tests {
    use super::*;
    use wgf_core::network::linspace;

    #[test]
    fn error_of_exact_map_is_zero() {
        let p = NetworkParams::one_sided(vec![1.0], vec![-10.0]).unwrap();
        let mesh = linspace(-6.0, 6.0, 101);
        assert_eq!(weighted_l1_error(&p, |z| z + 10.0, &mesh, |z| StandardGaussian.pdf(z)), 0.0);
        assert!(weighted_l1_error(&p, |z| z, &[], |_| 1.0).is_nan());
    }

    #[test]
    fn constant_offset_gives_mean_weight() {
        let p = NetworkParams::one_sided(vec![1.0], vec![-10.0]).unwrap();
        let mesh = linspace(-6.0, 6.0, 1001);
        let c = 0.25;
        let e = weighted_l1_error(&p, |z| z + 10.0 - c, &mesh, |z| StandardGaussian.pdf(z));
        let mean_pdf = mesh.iter().map(|&z| StandardGaussian.pdf(z)).sum::<f64>() / mesh.len() as f64;
        assert!((e - c * mean_pdf).abs() < 1e-15);
        let shuffled: Vec<f64> = mesh.iter().rev().cloned().collect();
        let e2 = weighted_l1_error(&p, |z| z + 10.0 - c, &shuffled, |z| StandardGaussian.pdf(z));
        assert!((e - e2).abs() < 1e-15);
    }

    #[test]
    fn identity_init_error_below_eps() {
        let p = NetworkParams::init_identity(32, 4.0, 5e-6, 32.0).unwrap();
        let mesh = linspace(-6.0, 6.0, 10_001);
        assert!(weighted_l1_error(&p, |z| z, &mesh, |z| StandardGaussian.pdf(z)) <= 5e-6);
    }

    #[test]
    fn gaussian_moments_within_clt() {
        let x = sample_gaussian(1_000_000, 7).unwrap();
        let m = x.iter().sum::<f64>() / 1e6;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 1e6;
        assert!(m.abs() < 4.0 / 1e3);
        assert!((v - 1.0).abs() < 4.0 * 2f64.sqrt() / 1e3);
        assert!(sample_gaussian(0, 1).is_err());
    }

    #[test]
    fn barenblatt_samples_in_support() {
        let x = sample_barenblatt(100_000, 3, 1.0).unwrap();
        let r = 3f64.powf(2.0 / 3.0);
        assert!(x.iter().all(|v| v.abs() <= r));
        assert_eq!(x, sample_barenblatt(100_000, 3, 1.0).unwrap());
    }

    #[test]
    fn histogram_cases() {
        assert_eq!(histogram(&[], 4, (0.0, 1.0)), vec![0; 4]);
        assert_eq!(histogram(&[0.3; 7], 4, (0.0, 1.0)), vec![0, 7, 0, 0]);
        assert_eq!(histogram(&[1.0, -0.1, 1.1], 4, (0.0, 1.0)), vec![0, 0, 0, 1]);
        assert_eq!(bin_edges(3, 4, (0.0, 1.0)), (0.75, 1.0));
    }

    #[test]
    fn uniform_histogram_within_binomial_band() {
        let n = 200_000;
        let bins = 50;
        let x: Vec<f64> = sample_gaussian(n, 11).unwrap().iter().map(|&z| StandardGaussian.cdf(z)).collect();
        let h = histogram(&x, bins, (0.0, 1.0));
        assert_eq!(h.iter().sum::<u64>(), n as u64);
        let p = 1.0 / bins as f64;
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!(h.iter().all(|&c| (c as f64 - mean).abs() < 5.0 * sd));
    }
}
