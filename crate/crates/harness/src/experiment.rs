//! End-to-end experiment runs.

use std::cell::Cell;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use wgf_core::dynamics::run_flow_with_samples;
use wgf_core::functionals::{EnergySpec, InternalKind, Term};
use wgf_core::network::linspace;
use wgf_core::oracles::{
    barenblatt_map, fd_fokker_planck, map_ou, map_quadratic, map_quartic, map_sextic, quantile_transport, CDFGrid,
    DensityGrid, GridSpec, TimeScheme,
};
use wgf_core::{Barenblatt, NetworkParams, ReferenceDensity, StandardGaussian, Subset};

use crate::config::{dynamics_of, Experiment, ExperimentConfig};
use crate::eval::{bin_edges, histogram, map_on_mesh, sample_barenblatt, sample_gaussian, weighted_l1_error};
use crate::io::{write_table, DensityRow, ErrorRow, HistogramRow, MappingRow, MomentRow, TrajectoryRow};
use crate::HarnessError;

/// Points used for `mapping.csv` and the oracle density curve.
const CURVE_POINTS: usize = 1001;

/// Tables and state produced by one run.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub errors: Vec<ErrorRow>,
    pub trajectory: Vec<TrajectoryRow>,
    pub histogram: Vec<HistogramRow>,
    pub mapping: Vec<MappingRow>,
    pub moments: Vec<MomentRow>,
    pub density: Vec<DensityRow>,
    /// Parameters at each evaluation time, starting at `t = 0`.
    pub snapshots: Vec<(f64, NetworkParams)>,
    /// Reference samples driving the flow, sorted.
    pub samples: Vec<f64>,
    pub metadata: Metadata,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Metadata {
    pub experiment: String,
    pub seed: u64,
    pub particles: usize,
    pub mesh_points: usize,
    pub clamped_quantiles: usize,
    /// Steps whose update needed a pseudoinverse cutoff above `pinv_rel_tol`.
    pub escalated_steps: usize,
    pub runtime_secs: f64,
}

fn quartic_v(x: f64) -> f64 {
    (x - 1.0).powi(4) / 4.0 - (x - 1.0).powi(2) / 2.0
}
fn quartic_dv(x: f64) -> f64 {
    (x - 1.0).powi(3) - (x - 1.0)
}
fn sextic_v(x: f64) -> f64 {
    (x - 4.0).powi(6) / 6.0
}
fn sextic_dv(x: f64) -> f64 {
    (x - 4.0).powi(5)
}

pub fn energy_spec(cfg: &ExperimentConfig) -> Result<EnergySpec, HarnessError> {
    let ph = cfg.physics;
    let (terms, gamma) = match dynamics_of(cfg) {
        Experiment::LinearQuadratic => {
            let mu = ph.mu0;
            (vec![Term::potential(move |x| (x - mu).powi(2) / 2.0, move |x| x - mu)], 0.0)
        }
        Experiment::LinearQuartic => (vec![Term::potential(quartic_v, quartic_dv)], 0.0),
        Experiment::LinearSextic => (vec![Term::potential(sextic_v, sextic_dv)], 0.0),
        Experiment::FpkQuadratic => {
            let (mu, g0) = (ph.mu0, ph.gamma0);
            let v = Term::potential(move |x| g0 * (x - mu).powi(2) / 2.0, move |x| g0 * (x - mu));
            (vec![v, Term::Internal { kind: InternalKind::Entropy }], ph.diffusion)
        }
        Experiment::FpkQuartic => {
            (vec![Term::potential(quartic_v, quartic_dv), Term::Internal { kind: InternalKind::Entropy }], ph.diffusion)
        }
        Experiment::FpkSextic => {
            (vec![Term::potential(sextic_v, sextic_dv), Term::Internal { kind: InternalKind::Entropy }], ph.diffusion)
        }
        Experiment::Porous => (vec![Term::Internal { kind: InternalKind::Porous }], 1.0),
        Experiment::KellerSegel => {
            (vec![Term::Internal { kind: InternalKind::Entropy }, Term::log_interaction(ph.chi)], ph.diffusion)
        }
        Experiment::SweepN => unreachable!("resolved to the base experiment"),
    };
    Ok(EnergySpec::new(terms, gamma, cfg.delta)?)
}

fn reference(cfg: &ExperimentConfig) -> Result<Box<dyn ReferenceDensity>, HarnessError> {
    Ok(match dynamics_of(cfg) {
        Experiment::Porous => Box::new(Barenblatt::new(cfg.physics.t0)?),
        _ => Box::new(StandardGaussian),
    })
}

fn draw_samples(cfg: &ExperimentConfig) -> Result<Vec<f64>, HarnessError> {
    match dynamics_of(cfg) {
        Experiment::Porous => sample_barenblatt(cfg.flow.sample_count, cfg.flow.seed, cfg.physics.t0),
        _ => sample_gaussian(cfg.flow.sample_count, cfg.flow.seed),
    }
}

/// The map the network is compared with at a snapshot time.
enum Oracle {
    Analytic(Box<dyn Fn(f64, f64) -> f64 + Send + Sync>),
    /// Quantile maps from a finite-difference density; snapshots align with
    /// the evaluation times.
    Numerical(DensityGrid),
    None,
}

fn build_oracle(cfg: &ExperimentConfig) -> Result<Oracle, HarnessError> {
    let ph = cfg.physics;
    Ok(match dynamics_of(cfg) {
        Experiment::LinearQuadratic => Oracle::Analytic(Box::new(move |t, z| map_quadratic(t, z, ph.mu0))),
        Experiment::LinearQuartic => Oracle::Analytic(Box::new(map_quartic)),
        Experiment::LinearSextic => Oracle::Analytic(Box::new(map_sextic)),
        Experiment::FpkQuadratic => {
            Oracle::Analytic(Box::new(move |t, z| map_ou(t, z, ph.gamma0, ph.mu0, ph.diffusion)))
        }
        Experiment::Porous => Oracle::Analytic(Box::new(move |t, z| barenblatt_map(t, z, ph.t0))),
        e @ (Experiment::FpkQuartic | Experiment::FpkSextic) => {
            let dv: fn(f64) -> f64 = if e == Experiment::FpkQuartic { quartic_dv } else { sextic_dv };
            Oracle::Numerical(run_fd_oracle(cfg, &dv)?)
        }
        Experiment::KellerSegel => Oracle::None,
        Experiment::SweepN => unreachable!("resolved to the base experiment"),
    })
}

fn run_fd_oracle(cfg: &ExperimentConfig, dv: &dyn Fn(f64) -> f64) -> Result<DensityGrid, HarnessError> {
    let grid = GridSpec { x_min: cfg.eval.fd_lo, x_max: cfg.eval.fd_hi, n_points: cfg.eval.fd_points };
    let p0: Vec<f64> = grid.points().iter().map(|&x| StandardGaussian.pdf(x)).collect();
    Ok(fd_fokker_planck(
        dv,
        cfg.physics.diffusion,
        grid,
        cfg.flow.dt,
        cfg.flow.steps,
        &p0,
        TimeScheme::CrankNicolson,
        cfg.snapshot_stride(),
    )?)
}

/// Standalone FD run for `wgf oracle fpk`.
pub fn fd_oracle_table(cfg: &ExperimentConfig) -> Result<Vec<DensityRow>, HarnessError> {
    let (g0, mu) = (cfg.physics.gamma0, cfg.physics.mu0);
    let grid = match dynamics_of(cfg) {
        Experiment::FpkQuartic => run_fd_oracle(cfg, &quartic_dv)?,
        Experiment::FpkSextic => run_fd_oracle(cfg, &sextic_dv)?,
        Experiment::FpkQuadratic => run_fd_oracle(cfg, &move |x| g0 * (x - mu))?,
        other => return Err(HarnessError::Config(format!("no Fokker–Planck oracle for {}", other.name()))),
    };
    Ok(density_rows(&grid))
}

fn density_rows(grid: &DensityGrid) -> Vec<DensityRow> {
    let x = grid.x();
    grid.snapshots
        .iter()
        .flat_map(|(t, p)| x.iter().zip(p).map(move |(&x, &d)| DensityRow { t: *t, x, density: d }))
        .collect()
}

/// Oracle map at snapshot `k` (time `t`) evaluated at `z`, with a clamp count.
struct SnapshotMap<'a> {
    oracle: &'a Oracle,
    t: f64,
    cdf: Option<CDFGrid>,
}

impl<'a> SnapshotMap<'a> {
    fn new(oracle: &'a Oracle, k: usize, t: f64) -> Self {
        let cdf = match oracle {
            Oracle::Numerical(g) => Some(g.cdf(&g.snapshots[k].1)),
            _ => None,
        };
        Self { oracle, t, cdf }
    }

    fn eval(&self, z: f64, clamped: &Cell<usize>) -> f64 {
        match self.oracle {
            Oracle::Analytic(f) => f(self.t, z),
            Oracle::Numerical(_) => {
                let q = quantile_transport(&|z| StandardGaussian.cdf(z), self.cdf.as_ref().expect("cdf"), z);
                clamped.set(clamped.get() + q.clamped as usize);
                q.value
            }
            Oracle::None => f64::NAN,
        }
    }
}

/// Runs the flow and evaluates it, without touching the file system.
pub fn compute(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    if cfg.sweep.is_some() {
        return compute_sweep(cfg);
    }
    let start = Instant::now();
    let spec = energy_spec(cfg)?;
    let reference = reference(cfg)?;
    let oracle = build_oracle(cfg)?;
    let mut samples = draw_samples(cfg)?;
    samples.sort_by(f64::total_cmp);
    let params0 = NetworkParams::init_identity(cfg.n, cfg.bound, cfg.eps, cfg.beta())?;
    let stride = cfg.snapshot_stride();
    let mut flow = cfg.flow.clone();
    flow.theta_stride = Some(stride);
    let traj = run_flow_with_samples(&params0, &spec, reference.as_ref(), &flow, samples.clone())?;

    let mut snapshots: Vec<(f64, NetworkParams)> =
        traj.theta_history.iter().map(|(s, p)| (*s as f64 * flow.dt, p.clone())).collect();
    if snapshots.last().map(|s| s.0) != Some(traj.final_time) {
        snapshots.push((traj.final_time, traj.final_params.clone()));
    }

    let name = cfg.experiment.name().to_string();
    let subset = flow.param_subset.label().to_string();
    let mesh = linspace(cfg.eval.mesh_lo, cfg.eval.mesh_hi, cfg.eval.mesh_points);
    let clamped = Cell::new(0);
    let mut errors = Vec::new();
    if !matches!(oracle, Oracle::None) {
        for (k, (t, p)) in snapshots.iter().enumerate() {
            let map = SnapshotMap::new(&oracle, snapshot_index(&oracle, k, snapshots.len()), *t);
            let error = weighted_l1_error(p, |z| map.eval(z, &clamped), &mesh, |z| reference.pdf(z));
            errors.push(ErrorRow { experiment: name.clone(), n: cfg.n, subset: subset.clone(), t: *t, error });
        }
    }

    let curve = linspace(cfg.eval.mesh_lo, cfg.eval.mesh_hi, CURVE_POINTS);
    let (t_final, p_final) = snapshots.last().expect("final snapshot");
    let final_map = SnapshotMap::new(&oracle, snapshot_index(&oracle, snapshots.len() - 1, snapshots.len()), *t_final);
    let f_curve = map_on_mesh(p_final, &curve);
    let mapping = curve
        .iter()
        .zip(&f_curve)
        .map(|(&z, &f)| MappingRow { z, f_theta: f, t_oracle: final_map.eval(z, &clamped) })
        .collect();

    let pushed: Vec<(f64, Vec<f64>)> = snapshots.iter().map(|(t, p)| (*t, p.eval_sorted(&samples).0)).collect();
    let lo = pushed.iter().flat_map(|(_, x)| x.first()).fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = pushed.iter().flat_map(|(_, x)| x.last()).fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let range = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let bins = cfg.eval.bins;
    let mut hist = Vec::new();
    for (t, x) in &pushed {
        for (k, c) in histogram(x, bins, range).into_iter().enumerate() {
            let (l, r) = bin_edges(k, bins, range);
            hist.push(HistogramRow { t: *t, bin_left: l, bin_right: r, count: c });
        }
    }

    let density = match &oracle {
        Oracle::Numerical(g) => density_rows(g),
        Oracle::Analytic(f) => {
            let zs = linspace(cfg.eval.mesh_lo, cfg.eval.mesh_hi, CURVE_POINTS);
            snapshots.iter().flat_map(|(t, _)| map_density_curve(&**f, *t, &zs, reference.as_ref())).collect()
        }
        Oracle::None => Vec::new(),
    };

    let trajectory = traj
        .records
        .iter()
        .map(|r| TrajectoryRow { step: r.step, t: r.t, energy: r.energy, min_bias_gap: r.min_bias_gap })
        .collect();
    let moments = traj
        .records
        .iter()
        .map(|r| MomentRow { step: r.step, t: r.t, mean: r.mean, second_moment: r.second_moment })
        .collect();

    Ok(RunOutput {
        errors,
        trajectory,
        histogram: hist,
        mapping,
        moments,
        density,
        snapshots,
        samples,
        metadata: Metadata {
            experiment: name,
            seed: flow.seed,
            particles: flow.sample_count,
            mesh_points: cfg.eval.mesh_points,
            clamped_quantiles: clamped.get(),
            escalated_steps: traj.escalated_steps,
            runtime_secs: start.elapsed().as_secs_f64(),
        },
    })
}

/// FD snapshots are taken every stride and at the final step, exactly like the
/// parameter snapshots, so the indices coincide.
fn snapshot_index(oracle: &Oracle, k: usize, count: usize) -> usize {
    match oracle {
        Oracle::Numerical(g) => {
            debug_assert_eq!(g.snapshots.len(), count);
            k.min(g.snapshots.len() - 1)
        }
        _ => k,
    }
}

/// The pushforward density `p₀(z) / ∂_z T(t, z)` traced at `x = T(t, z)`.
fn map_density_curve(
    map: &(dyn Fn(f64, f64) -> f64 + Send + Sync),
    t: f64,
    zs: &[f64],
    reference: &dyn ReferenceDensity,
) -> Vec<DensityRow> {
    let h = 1e-6 * (zs[zs.len() - 1] - zs[0]);
    zs.iter()
        .filter_map(|&z| {
            let slope = (map(t, z + h) - map(t, z - h)) / (2.0 * h);
            (slope > 0.0).then(|| DensityRow { t, x: map(t, z), density: reference.pdf(z) / slope })
        })
        .collect()
}

fn compute_sweep(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let start = Instant::now();
    let sweep = cfg.sweep.as_ref().expect("sweep config");
    let members: Vec<(usize, Subset)> =
        sweep.ns.iter().flat_map(|&n| sweep.subsets.iter().map(move |&s| (n, s))).collect();
    let rows: Vec<Result<ErrorRow, HarnessError>> = members
        .par_iter()
        .map(|&(n, s)| {
            let mut member = cfg.sweep_member(n, s);
            member.eval.snapshots = 1;
            let out = compute(&member)?;
            let mut last = out.errors.last().cloned().expect("oracle experiments report errors");
            last.experiment = sweep.base.name().to_string();
            Ok(last)
        })
        .collect();
    let errors = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(RunOutput {
        errors,
        metadata: Metadata {
            experiment: cfg.experiment.name().to_string(),
            seed: cfg.flow.seed,
            particles: cfg.flow.sample_count,
            mesh_points: cfg.eval.mesh_points,
            clamped_quantiles: 0,
            escalated_steps: 0,
            runtime_secs: start.elapsed().as_secs_f64(),
        },
        ..Default::default()
    })
}

/// Writes every table of `out` into `dir`, plus `metadata.toml`.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, out: &RunOutput) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    write_table(dir, &out.errors)?;
    if cfg.sweep.is_none() {
        write_table(dir, &out.trajectory)?;
        write_table(dir, &out.histogram)?;
        write_table(dir, &out.mapping)?;
        write_table(dir, &out.moments)?;
        write_table(dir, &out.density)?;
    }
    let meta = toml::to_string(&out.metadata).map_err(|e| HarnessError::Schema(e.to_string()))?;
    std::fs::write(dir.join("metadata.toml"), meta)?;
    Ok(())
}

/// Computes, then writes; nothing is written when the run fails.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let out = compute(cfg)?;
    write_outputs(&cfg.output_dir, cfg, &out)?;
    Ok(out)
}
