mod common;

use common::{loglog_slope, random_one_sided, rng};
use nalgebra::DMatrix;
use wgf_core::metric::{
    analytic_inverse_bb, analytic_metric, analytic_metric_subset, empirical_metric, pinv_solve_full, projection_residual, sample_metric,
    MetricTensor,
};
use wgf_core::network::linspace;
use wgf_core::samples::SampleSet;
use wgf_core::{NetworkParams, ReferenceDensity, StandardGaussian, Subset};

#[test]
fn tridiagonal_inverse_matches_dense_inverse() {
    let mut r = rng(11);
    for n in [2, 4, 8, 16, 32, 64] {
        for _ in 0..50 {
            let p = random_one_sided(&mut r, n);
            let g = analytic_metric_subset(&p, &StandardGaussian, Subset::BOnly).unwrap().entries;
            let inv = analytic_inverse_bb(&p, &StandardGaussian).unwrap().to_dense();
            let e = &inv * &g - DMatrix::identity(n, n);
            let worst = e.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(worst < 1e-8, "n={n} err={worst}");
            let dense = g.clone().try_inverse().unwrap();
            let scale = dense.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!((&dense - &inv).iter().all(|v| v.abs() <= 1e-7 * scale));
        }
    }
}

#[test]
fn sample_metric_converges_at_root_m() {
    let p = random_one_sided(&mut rng(5), 8);
    let exact = analytic_metric(&p, &StandardGaussian).unwrap().entries;
    let rel = |m: usize, seed: u64| {
        let s = SampleSet::new(StandardGaussian.sample(m, seed).unwrap()).unwrap();
        (sample_metric(&p, &s, Subset::Both).entries - &exact).norm() / exact.norm()
    };
    assert!(rel(1_000_000, 1) <= 1e-2);
    let ms = [4_000usize, 16_000, 64_000, 256_000];
    let errs: Vec<f64> = ms
        .iter()
        .map(|&m| ((0..12).map(|s| rel(m, 100 + s).powi(2)).sum::<f64>() / 12.0).sqrt())
        .collect();
    let x: Vec<f64> = ms.iter().map(|&m| m as f64).collect();
    let slope = loglog_slope(&x, &errs);
    assert!((-0.6..=-0.4).contains(&slope), "{slope} {errs:?}");
}

#[test]
fn pinv_handles_duplicate_neurons() {
    let p = NetworkParams::one_sided(vec![1.0, 0.5, 0.5], vec![-1.0, 0.5, 0.5]).unwrap();
    let z = StandardGaussian.sample(2000, 3).unwrap();
    let g = empirical_metric(&p, &z, Subset::Both).unwrap();
    let rhs: Vec<f64> = (0..6).map(|i| 0.1 * i as f64 - 0.2).collect();
    let sol = pinv_solve_full(&g, &rhs, 1e-12).unwrap();
    assert_eq!(sol.rank, 4);
    // minimum-norm: the duplicate pair receives identical updates
    assert!((sol.x[1] - sol.x[2]).abs() < 1e-9);
    assert!((sol.x[4] - sol.x[5]).abs() < 1e-9);
    // the residual is orthogonal to the range
    let r = &g.entries * nalgebra::DVector::from_vec(sol.x.clone()) - nalgebra::DVector::from_vec(rhs);
    let back = &g.entries * &r;
    assert!(back.norm() < 1e-8);
}

#[test]
fn projection_residual_shrinks_with_mesh() {
    let ns = [8usize, 16, 32, 64];
    let res: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let p = NetworkParams::one_sided(vec![1.0 / n as f64; n], linspace(-5.0, 5.0, n)).unwrap();
            projection_residual(&p, |x| x * x, &StandardGaussian).unwrap()
        })
        .collect();
    let x: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    assert!(res.windows(2).all(|w| w[1] < w[0]), "{res:?}");
    assert!(loglog_slope(&x, &res) <= -3.0, "{res:?}");
}

#[test]
fn identity_metric_is_symmetric_psd() {
    let p = NetworkParams::init_identity(8, 4.0, 5e-6, 4.0).unwrap();
    let g: MetricTensor = analytic_metric(&p, &StandardGaussian).unwrap();
    assert_eq!(g.entries, g.entries.transpose());
    let eig = g.entries.clone().symmetric_eigen();
    assert!(eig.eigenvalues.iter().all(|&v| v > -1e-12));
}
