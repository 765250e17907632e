//! Experiment configuration.
//!
//! A run is described by a flat TOML file whose keys mirror [`RawConfig`].
//! Every key is optional; command-line flags override file values, and the
//! remaining gaps are filled with per-experiment defaults by [`resolve`].

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use wgf_core::dynamics::{FlowConfig, MetricMode};
use wgf_core::metric::PINV_REL_TOL;
use wgf_core::reference::barenblatt_radius;
use wgf_core::Subset;

use crate::HarnessError;

/// Desk scale never goes below this many particles.
pub const DESK_MIN_PARTICLES: usize = 2000;

/// Default ceiling for the per-step pseudoinverse cutoff escalation.
pub const MAX_REL_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    LinearQuadratic,
    LinearQuartic,
    LinearSextic,
    FpkQuadratic,
    FpkQuartic,
    FpkSextic,
    Porous,
    KellerSegel,
    SweepN,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::LinearQuadratic => "linear-quadratic",
            Experiment::LinearQuartic => "linear-quartic",
            Experiment::LinearSextic => "linear-sextic",
            Experiment::FpkQuadratic => "fpk-quadratic",
            Experiment::FpkQuartic => "fpk-quartic",
            Experiment::FpkSextic => "fpk-sextic",
            Experiment::Porous => "porous",
            Experiment::KellerSegel => "keller-segel",
            Experiment::SweepN => "sweep-n",
        }
    }

    pub fn default_seed(self) -> u64 {
        match self {
            Experiment::LinearQuadratic => 101,
            Experiment::LinearQuartic => 102,
            Experiment::LinearSextic => 103,
            Experiment::FpkQuadratic => 201,
            Experiment::FpkQuartic => 202,
            Experiment::FpkSextic => 203,
            Experiment::Porous => 301,
            Experiment::KellerSegel => 401,
            Experiment::SweepN => 501,
        }
    }

    fn uses_gaussian_reference(self) -> bool {
        self != Experiment::Porous
    }
}

impl FromStr for Experiment {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, HarnessError> {
        <Self as clap::ValueEnum>::from_str(s, true).map_err(|_| HarnessError::Config(format!("unknown experiment {s:?}")))
    }
}

/// Everything a config file or the command line may set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub experiment: Option<Experiment>,
    pub n: Option<usize>,
    /// Half-width `B` of the initial bias grid.
    pub bound: Option<f64>,
    pub eps: Option<f64>,
    pub beta: Option<f64>,
    pub delta: Option<f64>,
    pub dt: Option<f64>,
    pub steps: Option<usize>,
    pub subset: Option<String>,
    /// `"empirical"` or `"analytic"`.
    pub metric: Option<String>,
    pub pinv_rel_tol: Option<f64>,
    /// Ceiling for the per-step cutoff escalation.
    pub max_rel_tol: Option<f64>,
    pub particles: Option<usize>,
    pub seed: Option<u64>,
    pub desk_scale: Option<bool>,
    pub record_stride: Option<usize>,
    /// Number of intervals between evaluation snapshots.
    pub snapshots: Option<usize>,
    pub mu0: Option<f64>,
    pub gamma0: Option<f64>,
    pub sigma0: Option<f64>,
    /// Weight of the entropy term for the quartic and sextic Fokker–Planck runs
    /// and for Keller–Segel.
    pub diffusion: Option<f64>,
    pub chi: Option<f64>,
    pub t0: Option<f64>,
    pub m: Option<f64>,
    pub mesh_points: Option<usize>,
    pub mesh_lo: Option<f64>,
    pub mesh_hi: Option<f64>,
    pub bins: Option<usize>,
    pub fd_points: Option<usize>,
    pub fd_lo: Option<f64>,
    pub fd_hi: Option<f64>,
    pub sweep_base: Option<Experiment>,
    pub sweep_ns: Option<Vec<usize>>,
    pub sweep_subsets: Option<Vec<String>>,
    pub output_dir: Option<PathBuf>,
}

impl RawConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Values set in `other` win.
    pub fn merge(self, other: RawConfig) -> RawConfig {
        macro_rules! pick {
            ($($f:ident),*) => { RawConfig { $($f: other.$f.or(self.$f)),* } };
        }
        pick!(
            experiment, n, bound, eps, beta, delta, dt, steps, subset, metric, pinv_rel_tol, max_rel_tol, particles,
            seed, desk_scale, record_stride, snapshots, mu0, gamma0, sigma0, diffusion, chi, t0, m, mesh_points, mesh_lo,
            mesh_hi, bins, fd_points, fd_lo, fd_hi, sweep_base, sweep_ns, sweep_subsets, output_dir
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Physics {
    pub mu0: f64,
    pub gamma0: f64,
    pub sigma0: f64,
    pub diffusion: f64,
    pub chi: f64,
    pub t0: f64,
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub mesh_points: usize,
    pub mesh_lo: f64,
    pub mesh_hi: f64,
    pub bins: usize,
    pub snapshots: usize,
    pub fd_points: usize,
    pub fd_lo: f64,
    pub fd_hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub base: Experiment,
    pub ns: Vec<usize>,
    pub subsets: Vec<Subset>,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub n: usize,
    pub bound: f64,
    pub eps: f64,
    /// `None` means `β = N`.
    pub beta: Option<f64>,
    pub delta: f64,
    pub flow: FlowConfig,
    pub physics: Physics,
    pub eval: EvalConfig,
    pub sweep: Option<SweepConfig>,
    pub desk_scale: bool,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn beta(&self) -> f64 {
        self.beta.unwrap_or(self.n as f64)
    }

    /// Final simulated time.
    pub fn horizon(&self) -> f64 {
        self.flow.dt * self.flow.steps as f64
    }

    /// Step stride between evaluation snapshots.
    pub fn snapshot_stride(&self) -> usize {
        (self.flow.steps / self.eval.snapshots).max(1)
    }

    /// The configuration of one sweep member.
    pub fn sweep_member(&self, n: usize, subset: Subset) -> ExperimentConfig {
        let mut c = self.clone();
        c.n = n;
        c.flow.param_subset = subset;
        if let Some(s) = c.sweep.take() {
            c.experiment = s.base;
        }
        c
    }
}

/// Paper defaults that differ per experiment: `(dt, steps, particles, B)`.
fn protocol(e: Experiment) -> (f64, usize, usize, f64) {
    match e {
        Experiment::LinearQuadratic => (1e-3, 1000, 500_000, 4.0),
        Experiment::LinearQuartic => (2e-4, 1000, 500_000, 4.0),
        Experiment::LinearSextic => (1e-6, 1000, 500_000, 4.0),
        Experiment::FpkQuadratic => (1e-3, 1000, 1_000_000, 4.0),
        Experiment::FpkQuartic => (2e-4, 1000, 1_000_000, 4.0),
        Experiment::FpkSextic => (1e-6, 1000, 1_000_000, 4.0),
        Experiment::Porous => (1e-3, 1000, 1_000_000, barenblatt_radius(1.0)),
        Experiment::KellerSegel => (3e-4, 1000, 2000, 4.0),
        Experiment::SweepN => unreachable!("sweeps take the protocol of their base experiment"),
    }
}

fn cfg_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn positive(name: &str, v: f64) -> Result<f64, HarnessError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(cfg_err(format!("{name} must be positive, got {v}")))
    }
}

fn positive_int(name: &str, v: usize) -> Result<usize, HarnessError> {
    if v > 0 {
        Ok(v)
    } else {
        Err(cfg_err(format!("{name} must be positive")))
    }
}

fn parse_subset(s: &str) -> Result<Subset, HarnessError> {
    s.parse().map_err(|_| cfg_err(format!("unknown subset {s:?}, expected a, b or both")))
}

/// Fills defaults and validates. No files are touched.
pub fn resolve(raw: &RawConfig) -> Result<ExperimentConfig, HarnessError> {
    let experiment = raw.experiment.ok_or_else(|| cfg_err("no experiment given"))?;
    let (sweep, protocol_of) = if experiment == Experiment::SweepN {
        let base = raw.sweep_base.unwrap_or(Experiment::LinearQuartic);
        if base == Experiment::SweepN {
            return Err(cfg_err("a sweep cannot sweep itself"));
        }
        let ns = raw.sweep_ns.clone().unwrap_or_else(|| vec![4, 8, 16, 32, 64]);
        if ns.is_empty() || ns.iter().any(|&n| n < 2) {
            return Err(cfg_err("sweep sizes must be at least 2"));
        }
        let subsets = match &raw.sweep_subsets {
            Some(v) => v.iter().map(|s| parse_subset(s)).collect::<Result<Vec<_>, _>>()?,
            None => vec![Subset::AOnly, Subset::Both],
        };
        if subsets.is_empty() {
            return Err(cfg_err("sweep needs at least one subset"));
        }
        (Some(SweepConfig { base, ns, subsets }), base)
    } else {
        (None, experiment)
    };
    if protocol_of == Experiment::KellerSegel && sweep.is_some() {
        return Err(cfg_err("keller-segel has no oracle map to sweep against"));
    }
    let (dt0, steps0, particles0, bound0) = protocol(protocol_of);
    let desk_scale = raw.desk_scale.unwrap_or(false);
    let mut particles = positive_int("particles", raw.particles.unwrap_or(particles0))?;
    if desk_scale {
        particles = (particles / 100).max(particles.min(DESK_MIN_PARTICLES));
    }

    let need = |v: Option<f64>, name: &str| {
        v.ok_or_else(|| cfg_err(format!("{} requires {name}", protocol_of.name())))
    };
    let mut physics = Physics {
        mu0: raw.mu0.unwrap_or(0.0),
        gamma0: positive("gamma0", raw.gamma0.unwrap_or(1.0))?,
        sigma0: 0.0,
        diffusion: positive("diffusion", raw.diffusion.unwrap_or(1.0))?,
        chi: 0.0,
        t0: positive("t0", raw.t0.unwrap_or(1.0))?,
        m: raw.m.unwrap_or(2.0),
    };
    match protocol_of {
        Experiment::FpkQuadratic => {
            physics.mu0 = need(raw.mu0, "mu0")?;
            physics.sigma0 = positive("sigma0", need(raw.sigma0, "sigma0")?)?;
            physics.diffusion = physics.sigma0 * physics.sigma0 / 2.0;
        }
        Experiment::KellerSegel => physics.chi = positive("chi", need(raw.chi, "chi")?)?,
        Experiment::Porous => {
            if physics.m != 2.0 {
                return Err(cfg_err(format!("only m = 2 is supported, got {}", physics.m)));
            }
        }
        _ => {}
    }
    if !physics.mu0.is_finite() {
        return Err(cfg_err("mu0 must be finite"));
    }

    let subset = match (&raw.subset, protocol_of) {
        (Some(s), _) => parse_subset(s)?,
        _ => Subset::Both,
    };
    let metric_mode = match raw.metric.as_deref().unwrap_or("empirical") {
        "empirical" => MetricMode::Empirical,
        "analytic" => {
            if !protocol_of.uses_gaussian_reference() {
                return Err(cfg_err("the analytic metric needs a Gaussian reference"));
            }
            MetricMode::AnalyticGaussian
        }
        other => return Err(cfg_err(format!("unknown metric {other:?}, expected empirical or analytic"))),
    };
    let pinv_rel_tol = positive("pinv_rel_tol", raw.pinv_rel_tol.unwrap_or(PINV_REL_TOL))?;
    let flow = FlowConfig {
        dt: positive("dt", raw.dt.unwrap_or(dt0))?,
        steps: positive_int("steps", raw.steps.unwrap_or(steps0))?,
        metric_mode,
        param_subset: subset,
        pinv_rel_tol,
        max_rel_tol: raw.max_rel_tol.unwrap_or(MAX_REL_TOL.max(pinv_rel_tol)),
        sample_count: particles,
        seed: raw.seed.unwrap_or(experiment.default_seed()),
        resample: false,
        record_stride: positive_int("record_stride", raw.record_stride.unwrap_or(1))?,
        theta_stride: None,
    };
    flow.validate().map_err(|e| cfg_err(e.to_string()))?;

    let n = raw.n.unwrap_or(32);
    if n < 2 {
        return Err(cfg_err(format!("n must be at least 2, got {n}")));
    }
    let eps = positive("eps", raw.eps.unwrap_or(5e-6))?;
    let delta = positive("delta", raw.delta.unwrap_or(eps / 2.0))?;
    if delta >= eps {
        return Err(cfg_err("delta must be smaller than eps"));
    }

    let (lo0, hi0) = if protocol_of == Experiment::Porous {
        let r = barenblatt_radius(physics.t0);
        (-r, r)
    } else {
        (-6.0, 6.0)
    };
    let mesh_default = if protocol_of == Experiment::LinearSextic { 4_000_000 } else { 100_000 };
    let (fd_lo0, fd_hi0) = match protocol_of {
        Experiment::FpkSextic => (-10.0, 14.0),
        _ => (-10.0, 12.0),
    };
    let eval = EvalConfig {
        mesh_points: positive_int("mesh_points", raw.mesh_points.unwrap_or(mesh_default))?,
        mesh_lo: raw.mesh_lo.unwrap_or(lo0),
        mesh_hi: raw.mesh_hi.unwrap_or(hi0),
        bins: positive_int("bins", raw.bins.unwrap_or(100))?,
        snapshots: positive_int("snapshots", raw.snapshots.unwrap_or(4))?,
        fd_points: raw.fd_points.unwrap_or((1 << 14) + 1),
        fd_lo: raw.fd_lo.unwrap_or(fd_lo0),
        fd_hi: raw.fd_hi.unwrap_or(fd_hi0),
    };
    if !(eval.mesh_lo < eval.mesh_hi) || !(eval.fd_lo < eval.fd_hi) {
        return Err(cfg_err("mesh and FD ranges must be increasing"));
    }
    if eval.fd_points < 3 {
        return Err(cfg_err("fd_points must be at least 3"));
    }

    Ok(ExperimentConfig {
        experiment,
        n,
        bound: positive("bound", raw.bound.unwrap_or(bound0))?,
        eps,
        beta: raw.beta.map(|b| positive("beta", b)).transpose()?,
        delta,
        flow,
        physics,
        eval,
        sweep,
        desk_scale,
        output_dir: raw.output_dir.clone().unwrap_or_else(|| PathBuf::from("out")),
    })
}

/// The experiment whose dynamics a config runs (the base for sweeps).
pub fn dynamics_of(cfg: &ExperimentConfig) -> Experiment {
    cfg.sweep.as_ref().map_or(cfg.experiment, |s| s.base)
}


#[cfg(test)]
mod tests {
    use super::*;

    fn raw(e: Experiment) -> RawConfig {
        RawConfig { experiment: Some(e), ..Default::default() }
    }

    #[test]
    fn defaults_follow_protocol() {
        let c = resolve(&raw(Experiment::LinearSextic)).unwrap();
        assert_eq!(c.flow.dt, 1e-6);
        assert_eq!(c.flow.steps, 1000);
        assert_eq!(c.flow.sample_count, 500_000);
        assert_eq!(c.eval.mesh_points, 4_000_000);
        assert_eq!(c.beta(), 32.0);
        assert_eq!(c.delta, 2.5e-6);
        let p = resolve(&raw(Experiment::Porous)).unwrap();
        assert!((p.bound - 3f64.powf(2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(p.eval.mesh_hi, p.bound);
    }

    #[test]
    fn desk_scale_divides_particles() {
        let mut r = raw(Experiment::KellerSegel);
        r.chi = Some(0.5);
        r.desk_scale = Some(true);
        assert_eq!(resolve(&r).unwrap().flow.sample_count, 2000);
        let mut r = raw(Experiment::LinearQuartic);
        r.desk_scale = Some(true);
        assert_eq!(resolve(&r).unwrap().flow.sample_count, 5000);
        r.particles = Some(50);
        assert_eq!(resolve(&r).unwrap().flow.sample_count, 50);
    }

    #[test]
    fn missing_fields_rejected() {
        let mut r = raw(Experiment::FpkQuadratic);
        r.sigma0 = Some(4.0);
        assert!(matches!(resolve(&r), Err(HarnessError::Config(m)) if m.contains("mu0")));
        r.mu0 = Some(30.0);
        let c = resolve(&r).unwrap();
        assert_eq!(c.physics.diffusion, 8.0);
        assert!(resolve(&raw(Experiment::KellerSegel)).is_err());
        assert!(resolve(&RawConfig::default()).is_err());
    }

    #[test]
    fn bad_values_rejected() {
        for f in [
            |r: &mut RawConfig| r.dt = Some(-1.0),
            |r: &mut RawConfig| r.n = Some(1),
            |r: &mut RawConfig| r.subset = Some("c".into()),
            |r: &mut RawConfig| r.metric = Some("exact".into()),
            |r: &mut RawConfig| r.delta = Some(1.0),
        ] {
            let mut r = raw(Experiment::LinearQuadratic);
            f(&mut r);
            assert!(resolve(&r).is_err());
        }
        let mut r = raw(Experiment::Porous);
        r.metric = Some("analytic".into());
        assert!(resolve(&r).is_err());
    }

    #[test]
    fn toml_roundtrip_and_merge() {
        let r = RawConfig::from_toml("experiment = \"fpk-quadratic\"\nmu0 = 10\nsigma0 = 0.01\nsweep_ns = [8, 16]\n").unwrap();
        assert_eq!(r.experiment, Some(Experiment::FpkQuadratic));
        assert_eq!(r.mu0, Some(10.0));
        assert!(RawConfig::from_toml("unknown_key = 1").is_err());
        let merged = r.clone().merge(RawConfig { mu0: Some(30.0), ..Default::default() });
        assert_eq!(merged.mu0, Some(30.0));
        assert_eq!(merged.sigma0, Some(0.01));
    }

    #[test]
    fn sweep_defaults() {
        let c = resolve(&raw(Experiment::SweepN)).unwrap();
        let s = c.sweep.as_ref().unwrap();
        assert_eq!(s.base, Experiment::LinearQuartic);
        assert_eq!(s.ns, vec![4, 8, 16, 32, 64]);
        assert_eq!(s.subsets, vec![Subset::AOnly, Subset::Both]);
        assert_eq!(c.flow.dt, 2e-4);
        assert_eq!(c.sweep_member(8, Subset::Both).beta(), 8.0);
    }
}
