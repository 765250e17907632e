//! Analytic transport maps and densities, a finite-difference Fokker–Planck
//! solver and quantile-based map extraction.

use crate::error::{Result, WgfError};
use crate::network::linspace;
use crate::reference::{barenblatt_cdf, barenblatt_inverse_cdf, barenblatt_radius};

/// `μ₀ + e^{−t}(z − μ₀)`, the flow of `V = (x − μ₀)²/2`.
pub fn map_quadratic(t: f64, z: f64, mu0: f64) -> f64 {
    mu0 + (-t).exp() * (z - mu0)
}

/// Flow of `V = (x − 1)⁴/4 − (x − 1)²/2`.
pub fn map_quartic(t: f64, z: f64) -> f64 {
    let y = z - 1.0;
    if y == 0.0 {
        return 1.0;
    }
    y.signum() * t.exp() / (y.powi(-2) + (2.0 * t).exp() - 1.0).sqrt() + 1.0
}

/// Flow of `V = (x − 4)⁶/6`.
pub fn map_sextic(t: f64, z: f64) -> f64 {
    let y = z - 4.0;
    if y == 0.0 {
        return 4.0;
    }
    4.0 + y.signum() / (2.0 * (1.0 / (4.0 * y.powi(4)) + t).sqrt()).sqrt()
}

/// Mean and variance at time `t` of the OU process started from `N(0, 1)`.
pub fn ou_mean_var(t: f64, gamma0: f64, mu0: f64, diffusion: f64) -> (f64, f64) {
    let e = (-gamma0 * t).exp();
    let var = e * e + diffusion * (1.0 - e * e) / gamma0;
    (mu0 * (1.0 - e), var)
}

/// Optimal map from `N(0, 1)` to the OU density at time `t`.
pub fn map_ou(t: f64, z: f64, gamma0: f64, mu0: f64, diffusion: f64) -> f64 {
    let (m, v) = ou_mean_var(t, gamma0, mu0, diffusion);
    m + z * v.sqrt()
}

pub fn density_ou(t: f64, x: f64, gamma0: f64, mu0: f64, diffusion: f64) -> f64 {
    let (m, v) = ou_mean_var(t, gamma0, mu0, diffusion);
    (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
}

/// `m = 2` Barenblatt profile at time `t0 + t`.
pub fn barenblatt(t: f64, x: f64, t0: f64) -> f64 {
    let s = t0 + t;
    (s.powf(-1.0 / 3.0) * (3f64.cbrt() / 4.0 - x * x * s.powf(-2.0 / 3.0) / 12.0)).max(0.0)
}

/// Support half-width of the Barenblatt profile at time `t0 + t`.
pub fn barenblatt_support(t: f64, t0: f64) -> f64 {
    barenblatt_radius(t0 + t)
}

/// Monotone map from the profile at `t0` to the profile at `t0 + t`.
pub fn barenblatt_map(t: f64, z: f64, t0: f64) -> f64 {
    z * ((t0 + t) / t0).cbrt()
}

/// The same map through the two closed-form CDFs.
pub fn barenblatt_quantile_map(t: f64, z: f64, t0: f64) -> f64 {
    barenblatt_inverse_cdf(t0 + t, barenblatt_cdf(t0, z))
}

/// Growth rate `2(1 − χ)·m₂(0)` of the second moment under Keller–Segel.
pub fn ks_second_moment_rate(chi: f64, m2_0: f64) -> f64 {
    2.0 * (1.0 - chi) * m2_0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeScheme {
    BackwardEuler,
    CrankNicolson,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        linspace(self.x_min, self.x_max, self.n_points)
    }
    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_points - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
    pub dt: f64,
    pub n_steps: usize,
    /// `(t, values)` snapshots; always contains `t = 0` and the final time.
    pub snapshots: Vec<(f64, Vec<f64>)>,
}

impl DensityGrid {
    pub fn spec(&self) -> GridSpec {
        GridSpec { x_min: self.x_min, x_max: self.x_max, n_points: self.n_points }
    }
    pub fn x(&self) -> Vec<f64> {
        self.spec().points()
    }
    pub fn last(&self) -> &[f64] {
        &self.snapshots.last().expect("at least one snapshot").1
    }
    pub fn cdf(&self, values: &[f64]) -> CDFGrid {
        CDFGrid::from_density(&self.x(), values)
    }
}

pub fn trapezoid_mass(dx: f64, values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    dx * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1]))
}

/// Solves `a_i x_{i−1} + b_i x_i + c_i x_{i+1} = d_i`.
pub fn solve_tridiagonal(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    for i in 0..n {
        let m = b[i] - if i > 0 { a[i] * cp[i - 1] } else { 0.0 };
        if m == 0.0 || !m.is_finite() {
            return Err(WgfError::SingularTridiagonal { row: i });
        }
        cp[i] = c[i] / m;
        dp[i] = (d[i] - if i > 0 { a[i] * dp[i - 1] } else { 0.0 }) / m;
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = dp[i] - if i + 1 < n { cp[i] * x[i + 1] } else { 0.0 };
    }
    Ok(x)
}

/// Largest density allowed next to the Dirichlet boundary.
pub const BOUNDARY_DENSITY_LIMIT: f64 = 1e-12;

/// `∂_t p = ∂_x(p V') + γ ∂_xx p` on a uniform grid with zero boundary values,
/// centred differences in space. Snapshots every `snapshot_every` steps.
#[allow(clippy::too_many_arguments)]
pub fn fd_fokker_planck(
    dv: &dyn Fn(f64) -> f64,
    gamma: f64,
    grid: GridSpec,
    dt: f64,
    steps: usize,
    p0: &[f64],
    scheme: TimeScheme,
    snapshot_every: usize,
) -> Result<DensityGrid> {
    let n = grid.n_points;
    if n < 3 || p0.len() != n {
        return Err(WgfError::DimensionMismatch { expected: n.max(3), got: p0.len() });
    }
    if !(dt > 0.0) || !(gamma >= 0.0) || snapshot_every == 0 {
        return Err(WgfError::InvalidArgument("need dt > 0, gamma >= 0, snapshot stride > 0".into()));
    }
    let dx = grid.dx();
    let x = grid.points();
    let w: Vec<f64> = x.iter().map(|&xi| dv(xi)).collect();
    let m = n - 2;
    // operator rows for interior points 1..n-1
    let (mut lo, mut di, mut up) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    for r in 0..m {
        let i = r + 1;
        lo[r] = -w[i - 1] / (2.0 * dx) + gamma / (dx * dx);
        di[r] = -2.0 * gamma / (dx * dx);
        up[r] = w[i + 1] / (2.0 * dx) + gamma / (dx * dx);
    }
    let theta = match scheme {
        TimeScheme::BackwardEuler => 1.0,
        TimeScheme::CrankNicolson => 0.5,
    };
    let a: Vec<f64> = lo.iter().map(|v| -theta * dt * v).collect();
    let b: Vec<f64> = di.iter().map(|v| 1.0 - theta * dt * v).collect();
    let c: Vec<f64> = up.iter().map(|v| -theta * dt * v).collect();
    let explicit = (1.0 - theta) * dt;

    let mut p = p0.to_vec();
    p[0] = 0.0;
    p[n - 1] = 0.0;
    let mut snapshots = vec![(0.0, p.clone())];
    for step in 1..=steps {
        let rhs: Vec<f64> = (0..m)
            .map(|r| {
                let i = r + 1;
                p[i] + explicit * (lo[r] * p[i - 1] + di[r] * p[i] + up[r] * p[i + 1])
            })
            .collect();
        let inner = solve_tridiagonal(&a, &b, &c, &rhs)?;
        p[1..n - 1].copy_from_slice(&inner);
        let edge = p[1].abs().max(p[n - 2].abs());
        if edge > BOUNDARY_DENSITY_LIMIT {
            return Err(WgfError::BoundaryMass { value: edge, limit: BOUNDARY_DENSITY_LIMIT });
        }
        if step % snapshot_every == 0 || step == steps {
            snapshots.push((step as f64 * dt, p.clone()));
        }
    }
    Ok(DensityGrid { x_min: grid.x_min, x_max: grid.x_max, n_points: n, dt, n_steps: steps, snapshots })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CDFGrid {
    pub x: Vec<f64>,
    pub values: Vec<f64>,
}

/// Result of a quantile lookup; `clamped` flags a quantile pushed into range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileValue {
    pub value: f64,
    pub clamped: bool,
}

pub const QUANTILE_CLAMP: f64 = 1e-12;

impl CDFGrid {
    /// Cumulative trapezoid integral of a gridded density, normalised to end at 1.
    pub fn from_density(x: &[f64], density: &[f64]) -> Self {
        let mut values = Vec::with_capacity(x.len());
        let mut acc = 0.0;
        values.push(0.0);
        for i in 1..x.len() {
            acc += 0.5 * (density[i] + density[i - 1]).max(0.0) * (x[i] - x[i - 1]);
            values.push(acc);
        }
        if acc > 0.0 {
            values.iter_mut().for_each(|v| *v /= acc);
        }
        Self { x: x.to_vec(), values }
    }

    pub fn from_fn(x: &[f64], cdf: impl Fn(f64) -> f64) -> Self {
        Self { x: x.to_vec(), values: x.iter().map(|&v| cdf(v)).collect() }
    }

    /// Piecewise-linear inverse. Flat runs are skipped by interpolating
    /// inside the first strictly increasing segment that reaches `q`.
    pub fn inverse(&self, q: f64) -> QuantileValue {
        let clamped = !(QUANTILE_CLAMP..=1.0 - QUANTILE_CLAMP).contains(&q);
        let q = q.clamp(QUANTILE_CLAMP, 1.0 - QUANTILE_CLAMP);
        let f = &self.values;
        let j = f.partition_point(|&v| v < q);
        let value = if j == 0 {
            self.x[0]
        } else if j >= f.len() {
            self.x[f.len() - 1]
        } else {
            let (f0, f1) = (f[j - 1], f[j]);
            let s = if f1 > f0 { (q - f0) / (f1 - f0) } else { 1.0 };
            self.x[j - 1] + s * (self.x[j] - self.x[j - 1])
        };
        QuantileValue { value, clamped }
    }
}

/// `F_t^{-1}(F_0(z))`.
pub fn quantile_transport(f0: &dyn Fn(f64) -> f64, ft: &CDFGrid, z: f64) -> QuantileValue {
    ft.inverse(f0(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::{ReferenceDensity, StandardGaussian};
    use proptest::prelude::*;

    fn quartic_dv(x: f64) -> f64 {
        (x - 1.0).powi(3) - (x - 1.0)
    }
    fn sextic_dv(x: f64) -> f64 {
        (x - 4.0).powi(5)
    }

    #[test]
    fn map_examples() {
        assert_eq!(map_quadratic(0.0, 1.3, 0.5), 1.3);
        assert!((map_quadratic(60.0, 1.3, 0.5) - 0.5).abs() < 1e-20);
        assert!((map_quadratic(1.0, 2.0, 0.0) - 0.735_758_882_342_884_6).abs() < 1e-15);
        for t in [0.0, 0.3, 2.0] {
            assert_eq!(map_quartic(t, 1.0), 1.0);
            assert_eq!(map_sextic(t, 4.0), 4.0);
        }
        for z in [-2.0, 0.5, 1.5, 3.0] {
            assert!((map_quartic(0.0, z) - z).abs() < 1e-14);
            assert!((map_sextic(0.0, z) - z).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn maps_follow_characteristics(t in 0.0f64..1.0, z in -3.0f64..5.0) {
            let h = 1e-7;
            let cases: [(&dyn Fn(f64, f64) -> f64, &dyn Fn(f64) -> f64); 3] = [
                (&|t, z| map_quadratic(t, z, 0.7), &|x| x - 0.7),
                (&map_quartic, &quartic_dv),
                (&map_sextic, &sextic_dv),
            ];
            for (map, dv) in cases {
                let t = t.max(h);
                let d = (map(t + h, z) - map(t - h, z)) / (2.0 * h);
                let target = -dv(map(t, z));
                prop_assert!((d - target).abs() < 1e-6 * (1.0 + target.abs()), "{d} {target}");
            }
        }

        #[test]
        fn quantile_map_monotone(z1 in -3.0f64..3.0, dz in 0.0f64..2.0) {
            let x = linspace(-20.0, 20.0, 4001);
            let ft = CDFGrid::from_fn(&x, |v| StandardGaussian.cdf((v - 1.0) / 2.0));
            let f0 = |z: f64| StandardGaussian.cdf(z);
            let a = quantile_transport(&f0, &ft, z1).value;
            let b = quantile_transport(&f0, &ft, z1 + dz).value;
            prop_assert!(b >= a);
        }
    }

    #[test]
    fn ou_paper_values() {
        let (m, v) = ou_mean_var(1.0, 1.0, 30.0, 8.0);
        assert!((m - 30.0 * (1.0 - (-1f64).exp())).abs() < 1e-12);
        assert!((m - 18.963_616_764_856_73).abs() < 1e-9);
        assert!((v - ((-2f64).exp() + 8.0 * (1.0 - (-2f64).exp()))).abs() < 1e-12);
        assert!((v - 7.052_653_017_343_711).abs() < 1e-9);
        assert_eq!(map_ou(0.0, 0.4, 1.0, 30.0, 8.0), 0.4);
        assert!((density_ou(0.0, 0.4, 1.0, 30.0, 8.0) - StandardGaussian.pdf(0.4)).abs() < 1e-15);
        let s = |z| map_ou(0.7, z, 1.0, 10.0, 5e-5);
        assert!((s(1.0) - 2.0 * s(0.0) + s(-1.0)).abs() < 1e-12);
    }

    #[test]
    fn barenblatt_profile() {
        let t0 = 1.0;
        assert!((barenblatt_support(0.0, t0) - 3f64.powf(2.0 / 3.0)).abs() < 1e-15);
        for t in [0.0, 0.5, 1.0] {
            let r = barenblatt_support(t, t0);
            assert!(barenblatt(t, r * 1.0001, t0) == 0.0);
            assert!(barenblatt(t, r * 0.999, t0) > 0.0);
            let mass = quadrature::integrate(|x| barenblatt(t, x, t0), -r, r, 1e-13).integral;
            assert!((mass - 1.0).abs() < 1e-8);
            for z in [-1.5, -0.2, 0.9, 2.0] {
                assert!((barenblatt_map(t, z, t0) - barenblatt_quantile_map(t, z, t0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ks_rate_examples() {
        assert_eq!(ks_second_moment_rate(1.0, 1.0), 0.0);
        assert_eq!(ks_second_moment_rate(0.5, 1.0), 1.0);
        assert_eq!(ks_second_moment_rate(1.5, 1.0), -1.0);
    }

    #[test]
    fn tridiagonal_solver() {
        let a = [0.0, 1.0, 1.0];
        let b = [4.0, 4.0, 4.0];
        let c = [1.0, 1.0, 0.0];
        let x = solve_tridiagonal(&a, &b, &c, &[5.0, 6.0, 5.0]).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-15);
        }
        assert!(solve_tridiagonal(&[0.0], &[0.0], &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn zero_operator_keeps_density() {
        let grid = GridSpec { x_min: -8.0, x_max: 8.0, n_points: 801 };
        let p0: Vec<f64> = grid.points().iter().map(|&x| StandardGaussian.pdf(x)).collect();
        let out = fd_fokker_planck(&|_| 0.0, 0.0, grid, 1e-2, 50, &p0, TimeScheme::CrankNicolson, 50).unwrap();
        let mut expect = p0.clone();
        expect[0] = 0.0;
        expect[800] = 0.0;
        assert_eq!(out.last(), &expect[..]);
    }

    #[test]
    fn boundary_violation_detected() {
        let grid = GridSpec { x_min: -3.0, x_max: 3.0, n_points: 301 };
        let p0: Vec<f64> = grid.points().iter().map(|&x| StandardGaussian.pdf(x)).collect();
        let r = fd_fokker_planck(&|x| x, 1.0, grid, 1e-3, 10, &p0, TimeScheme::CrankNicolson, 10);
        assert!(matches!(r, Err(WgfError::BoundaryMass { .. })));
    }

    #[test]
    fn gaussian_quantile_map_is_affine() {
        let x = linspace(-15.0, 15.0, 30_001);
        let (mu, sigma) = (1.5, 0.7);
        let ft = CDFGrid::from_fn(&x, |v| StandardGaussian.cdf((v - mu) / sigma));
        let f0 = |z: f64| StandardGaussian.cdf(z);
        for z in [-3.0, -1.0, 0.0, 0.4, 2.5] {
            let q = quantile_transport(&f0, &ft, z);
            assert!(!q.clamped);
            assert!((q.value - (mu + sigma * z)).abs() < 1e-4);
        }
        let same = CDFGrid::from_fn(&x, |v| StandardGaussian.cdf(v));
        assert!((quantile_transport(&f0, &same, 0.3).value - 0.3).abs() < 1e-6);
        assert!(quantile_transport(&f0, &same, -40.0).clamped);
    }

    #[test]
    fn flat_runs_are_skipped() {
        let c = CDFGrid { x: vec![0.0, 1.0, 2.0, 3.0], values: vec![0.0, 0.5, 0.5, 1.0] };
        assert_eq!(c.inverse(0.5).value, 1.0);
        assert_eq!(c.inverse(0.75).value, 2.5);
    }

    fn ou_run(dt: f64, scheme: TimeScheme) -> (GridSpec, DensityGrid) {
        let grid = GridSpec { x_min: -10.0, x_max: 45.0, n_points: 5501 };
        let p0: Vec<f64> = grid.points().iter().map(|&x| StandardGaussian.pdf(x)).collect();
        let steps = (1.0 / dt).round() as usize;
        let out = fd_fokker_planck(&|x| x - 30.0, 8.0, grid, dt, steps, &p0, scheme, steps).unwrap();
        (grid, out)
    }

    fn grid_l1(dx: f64, a: &[f64], b: &[f64]) -> f64 {
        dx * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
    }

    #[test]
    fn fd_matches_ou_density() {
        let (grid, out) = ou_run(1e-3, TimeScheme::CrankNicolson);
        assert!((out.snapshots.last().unwrap().0 - 1.0).abs() < 1e-12);
        let exact: Vec<f64> = grid.points().iter().map(|&x| density_ou(1.0, x, 1.0, 30.0, 8.0)).collect();
        let err = grid_l1(grid.dx(), out.last(), &exact);
        assert!(err <= 1e-3, "{err}");
        let drift = (trapezoid_mass(grid.dx(), out.last()) - trapezoid_mass(grid.dx(), &out.snapshots[0].1)).abs();
        assert!(drift <= 1e-6, "{drift}");

        let cdf = out.cdf(out.last());
        let f0 = |z: f64| StandardGaussian.cdf(z);
        for z in linspace(-3.0, 3.0, 61) {
            let q = quantile_transport(&f0, &cdf, z).value;
            assert!((q - map_ou(1.0, z, 1.0, 30.0, 8.0)).abs() < 1e-3, "{z}");
        }
    }

    #[test]
    fn fd_time_refinement_order() {
        for scheme in [TimeScheme::BackwardEuler, TimeScheme::CrankNicolson] {
            let runs: Vec<_> = [4e-3, 2e-3, 1e-3].iter().map(|&dt| ou_run(dt, scheme)).collect();
            let dx = runs[0].0.dx();
            let e1 = grid_l1(dx, runs[0].1.last(), runs[1].1.last());
            let e2 = grid_l1(dx, runs[1].1.last(), runs[2].1.last());
            let order = (e1 / e2).log2();
            assert!(order >= 0.9, "{scheme:?} {order}");
        }
    }
}
