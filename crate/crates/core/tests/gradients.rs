mod common;

use common::{random_symmetric, rng};
use wgf_core::functionals::{
    assemble_gradient, energy_value, internal_energy_exact, EnergySpec, InternalKind, Term,
};
use wgf_core::{NetworkParams, ReferenceDensity, StandardGaussian};

const H: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn central(f: impl Fn(&NetworkParams) -> f64, p: &NetworkParams, j: usize) -> f64 {
    let mut e = vec![0.0; p.dim()];
    e[j] = H;
    let plus = f(&p.offset_by(&e));
    e[j] = -H;
    (plus - f(&p.offset_by(&e))) / (2.0 * H)
}

fn check_all_coords(spec: &EnergySpec, m: usize) {
    let mut r = rng(21);
    for trial in 0..20 {
        let p = random_symmetric(&mut r, 6, 4.0);
        let z = StandardGaussian.sample(m, 500 + trial).unwrap();
        let g = assemble_gradient(&p, spec, &z, &StandardGaussian).unwrap().values;
        for j in 0..p.dim() {
            let fd = central(|q| energy_value(q, spec, &z, &StandardGaussian).unwrap(), &p, j);
            assert!((g[j] - fd).abs() <= TOL, "trial {trial} coord {j}: {} vs {fd}", g[j]);
        }
    }
}

#[test]
fn potential_gradient_matches_fd() {
    let spec = EnergySpec::new(
        vec![Term::potential(|x| (x - 1.0).powi(4) / 4.0 - (x - 1.0).powi(2) / 2.0, |x| (x - 1.0).powi(3) - (x - 1.0))],
        0.0,
        1e-3,
    )
    .unwrap();
    check_all_coords(&spec, 400);
}

#[test]
fn smooth_interaction_gradient_matches_fd() {
    let spec = EnergySpec::new(
        vec![Term::interaction(|x, y| (x - y).powi(2) / 2.0 + (x - y).cos(), |x, y| (x - y) - (x - y).sin(), true)],
        0.0,
        1e-3,
    )
    .unwrap();
    check_all_coords(&spec, 200);
}

#[test]
fn log_interaction_gradient_matches_fd() {
    let spec = EnergySpec::new(vec![Term::log_interaction(1.5)], 0.0, 1e-3).unwrap();
    check_all_coords(&spec, 150);
}

#[test]
fn combined_potential_and_interaction_match_fd() {
    let spec = EnergySpec::new(
        vec![Term::potential(|x| x * x / 2.0, |x| x), Term::log_interaction(0.5)],
        0.0,
        1e-3,
    )
    .unwrap();
    check_all_coords(&spec, 150);
}

/// Weight gradients against the frozen-sample energy, bias gradients against
/// the exact energy, since the sample estimate is flat in the biases.
fn check_internal(kind: InternalKind) {
    let gamma = 0.7;
    let spec = EnergySpec::new(vec![Term::Internal { kind }], gamma, 1e-7).unwrap();
    let mut r = rng(33);
    for trial in 0..20 {
        let p = random_symmetric(&mut r, 5, 4.0);
        let k = p.total_neurons();
        let z = StandardGaussian.sample(300, 900 + trial).unwrap();
        let g = assemble_gradient(&p, &spec, &z, &StandardGaussian).unwrap().values;
        for j in 0..k {
            let fd = central(|q| energy_value(q, &spec, &z, &StandardGaussian).unwrap(), &p, j);
            assert!((g[j] - fd).abs() <= TOL, "{kind:?} trial {trial} a{j}: {} vs {fd}", g[j]);
        }
        for j in k..2 * k {
            let fd = central(|q| gamma * internal_energy_exact(q, kind, &StandardGaussian).unwrap(), &p, j);
            assert!((g[j] - fd).abs() <= TOL, "{kind:?} trial {trial} b{}: {} vs {fd}", j - k, g[j]);
        }
    }
}

#[test]
fn entropy_gradient_matches_fd() {
    check_internal(InternalKind::Entropy);
}

#[test]
fn porous_gradient_matches_fd() {
    check_internal(InternalKind::Porous);
}
