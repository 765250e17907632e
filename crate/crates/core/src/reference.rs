//! Reference densities `p_r` with CDF, inverse CDF, samplers and interval moments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};
use std::f64::consts::{PI, SQRT_2};

use crate::error::{Result, WgfError};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Absolute tolerance for the moment integrals when no closed form is known.
pub const MOMENT_TOL: f64 = 1e-12;

pub trait ReferenceDensity: Send + Sync {
    fn pdf(&self, z: f64) -> f64;
    fn cdf(&self, z: f64) -> f64;
    /// `1 - cdf(z)` without cancellation.
    fn sf(&self, z: f64) -> f64 {
        1.0 - self.cdf(z)
    }
    fn inverse_cdf(&self, u: f64) -> f64;
    /// Inverse of `sf`.
    fn inverse_sf(&self, v: f64) -> f64 {
        self.inverse_cdf(1.0 - v)
    }
    fn sample(&self, m: usize, seed: u64) -> Result<Vec<f64>>;

    /// `∫_lo^hi z^k p_r(z) dz` for `k = 0, 1, 2`.
    fn moments(&self, lo: f64, hi: f64) -> Result<[f64; 3]> {
        if !(lo < hi) {
            return Ok([0.0; 3]);
        }
        let m0 = self.mass(lo, hi);
        let m1 = integrate_cdf_mapped(self, |z| z, lo, hi)?;
        let m2 = integrate_cdf_mapped(self, |z| z * z, lo, hi)?;
        Ok([m0, m1, m2])
    }

    /// `F(hi) - F(lo)`, using the survival function on the right half.
    fn mass(&self, lo: f64, hi: f64) -> f64 {
        if lo >= 0.0 {
            self.sf(lo) - self.sf(hi)
        } else {
            self.cdf(hi) - self.cdf(lo)
        }
    }

    fn is_standard_gaussian(&self) -> bool {
        false
    }

    fn name(&self) -> String;
}

/// `∫_lo^hi g(z) p_r(z) dz` through the substitution `u = F(z)`.
pub fn integrate_cdf_mapped<R, G>(r: &R, g: G, lo: f64, hi: f64) -> Result<f64>
where
    R: ReferenceDensity + ?Sized,
    G: Fn(f64) -> f64,
{
    if !(lo < hi) {
        return Ok(0.0);
    }
    // On the right half the survival function keeps the tail resolvable.
    let right = lo >= 0.0;
    let (ul, uh) = if right { (r.sf(hi), r.sf(lo)) } else { (r.cdf(lo), r.cdf(hi)) };
    if uh - ul <= 0.0 {
        return Ok(0.0);
    }
    let out = quadrature::integrate(
        |u: f64| {
            let u = u.max(f64::MIN_POSITIVE);
            let z = if right { r.inverse_sf(u) } else { r.inverse_cdf(u) };
            let v = g(z);
            if v.is_finite() { v } else { 0.0 }
        },
        ul,
        uh,
        MOMENT_TOL,
    );
    if !out.integral.is_finite() {
        return Err(WgfError::Quadrature { lo, hi });
    }
    Ok(out.integral)
}

fn check_count(m: usize) -> Result<()> {
    if m == 0 {
        return Err(WgfError::InvalidArgument("sample count must be positive".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StandardGaussian;

impl StandardGaussian {
    fn q(x: f64) -> f64 {
        0.5 * libm::erfc(x / SQRT_2)
    }
}

impl ReferenceDensity for StandardGaussian {
    fn pdf(&self, z: f64) -> f64 {
        if z.is_infinite() {
            return 0.0;
        }
        INV_SQRT_2PI * (-0.5 * z * z).exp()
    }
    fn cdf(&self, z: f64) -> f64 {
        Self::q(-z)
    }
    fn sf(&self, z: f64) -> f64 {
        Self::q(z)
    }
    fn inverse_cdf(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return f64::NEG_INFINITY;
        }
        if u >= 1.0 {
            return f64::INFINITY;
        }
        Normal::standard().inverse_cdf(u)
    }
    fn inverse_sf(&self, v: f64) -> f64 {
        -self.inverse_cdf(v)
    }
    fn sample(&self, m: usize, seed: u64) -> Result<Vec<f64>> {
        check_count(m)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
    }
    fn moments(&self, lo: f64, hi: f64) -> Result<[f64; 3]> {
        if !(lo < hi) {
            return Ok([0.0; 3]);
        }
        let m0 = self.mass(lo, hi);
        let (pl, ph) = (self.pdf(lo), self.pdf(hi));
        let m1 = pl - ph;
        let tl = if lo.is_finite() { lo * pl } else { 0.0 };
        let th = if hi.is_finite() { hi * ph } else { 0.0 };
        Ok([m0, m1, m0 + tl - th])
    }
    fn is_standard_gaussian(&self) -> bool {
        true
    }
    fn name(&self) -> String {
        "gaussian".into()
    }
}

/// The `m = 2` Barenblatt profile at time `t0`,
/// `p(x) = t0^{-1/3} (C - x² t0^{-2/3} / 12)_+` with `C = 3^{1/3} / 4`.
#[derive(Debug, Clone, Copy)]
pub struct Barenblatt {
    pub t0: f64,
}

impl Barenblatt {
    pub fn new(t0: f64) -> Result<Self> {
        if !(t0 > 0.0) {
            return Err(WgfError::InvalidArgument(format!("t0 must be positive, got {t0}")));
        }
        Ok(Self { t0 })
    }

    pub fn radius(&self) -> f64 {
        barenblatt_radius(self.t0)
    }
}

pub fn barenblatt_radius(t: f64) -> f64 {
    3f64.powf(2.0 / 3.0) * t.cbrt()
}

/// CDF of the `m = 2` profile at total time `t` (i.e. `t0 + t`).
pub fn barenblatt_cdf(t: f64, x: f64) -> f64 {
    let u = (x / barenblatt_radius(t)).clamp(-1.0, 1.0);
    (0.5 + 0.75 * u - 0.25 * u * u * u).clamp(0.0, 1.0)
}

pub fn barenblatt_inverse_cdf(t: f64, q: f64) -> f64 {
    let q = q.clamp(0.0, 1.0);
    let u = 2.0 * (((1.0 - 2.0 * q).acos() + 4.0 * PI) / 3.0).cos();
    u.clamp(-1.0, 1.0) * barenblatt_radius(t)
}

impl ReferenceDensity for Barenblatt {
    fn pdf(&self, z: f64) -> f64 {
        let t = self.t0;
        (t.powf(-1.0 / 3.0) * (3f64.cbrt() / 4.0 - z * z * t.powf(-2.0 / 3.0) / 12.0)).max(0.0)
    }
    fn cdf(&self, z: f64) -> f64 {
        barenblatt_cdf(self.t0, z)
    }
    fn sf(&self, z: f64) -> f64 {
        barenblatt_cdf(self.t0, -z)
    }
    fn inverse_cdf(&self, u: f64) -> f64 {
        barenblatt_inverse_cdf(self.t0, u)
    }
    fn inverse_sf(&self, v: f64) -> f64 {
        -barenblatt_inverse_cdf(self.t0, v)
    }
    fn sample(&self, m: usize, seed: u64) -> Result<Vec<f64>> {
        check_count(m)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..m).map(|_| self.inverse_cdf(rng.random::<f64>())).collect())
    }
    fn name(&self) -> String {
        format!("barenblatt(t0={})", self.t0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_moments_match_quadrature() {
        let g = StandardGaussian;
        for (lo, hi) in [(-1.0, 0.5), (0.3, 2.0), (1.0, f64::INFINITY), (f64::NEG_INFINITY, -0.7)] {
            let a = g.moments(lo, hi).unwrap();
            let m0 = integrate_cdf_mapped(&g, |_| 1.0, lo, hi).unwrap();
            let m1 = integrate_cdf_mapped(&g, |z| z, lo, hi).unwrap();
            let m2 = integrate_cdf_mapped(&g, |z| z * z, lo, hi).unwrap();
            assert!((a[0] - m0).abs() < 1e-10, "{lo} {hi}");
            assert!((a[1] - m1).abs() < 1e-9, "{lo} {hi} {} {}", a[1], m1);
            assert!((a[2] - m2).abs() < 1e-9, "{lo} {hi} {} {}", a[2], m2);
        }
        let full = g.moments(f64::NEG_INFINITY, f64::INFINITY).unwrap();
        assert!((full[0] - 1.0).abs() < 1e-15 && full[1].abs() < 1e-15 && (full[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_inverse_roundtrip() {
        let g = StandardGaussian;
        for k in 1..1000 {
            let u = k as f64 / 1000.0;
            let z = g.inverse_cdf(u);
            assert!((g.cdf(z) - u).abs() < 1e-14, "{u}");
            assert!((g.inverse_sf(1.0 - u) - z).abs() < 1e-9);
        }
        assert!((g.cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-16);
    }

    #[test]
    fn gaussian_tail_mass_is_accurate() {
        let g = StandardGaussian;
        // Q(8) = 6.22096e-16
        assert!((g.mass(8.0, f64::INFINITY) / 6.220960574271785e-16 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn builtin_pdfs_integrate_to_one() {
        let q = |f: &dyn Fn(f64) -> f64, a: f64, b: f64| quadrature::integrate(f, a, b, 1e-13).integral;
        let g = StandardGaussian;
        assert!((q(&|z| g.pdf(z), -12.0, 12.0) - 1.0).abs() < 1e-8);
        for t0 in [0.5, 1.0, 2.0] {
            let b = Barenblatt::new(t0).unwrap();
            let r = b.radius();
            assert!((q(&|z| b.pdf(z), -r, r) - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn barenblatt_cdf_inverse_roundtrip() {
        let b = Barenblatt::new(1.0).unwrap();
        let r = b.radius();
        assert!((r - 3f64.powf(2.0 / 3.0)).abs() < 1e-15);
        for k in 1..100 {
            let u = k as f64 / 100.0;
            assert!((b.cdf(b.inverse_cdf(u)) - u).abs() < 1e-12);
        }
        for k in 0..=20 {
            let x = -r + 2.0 * r * k as f64 / 20.0;
            let direct = quadrature::integrate(|z| b.pdf(z), -r, x, 1e-13).integral;
            assert!((b.cdf(x) - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn samplers_are_deterministic_and_in_range() {
        let g = StandardGaussian;
        assert_eq!(g.sample(10, 3).unwrap(), g.sample(10, 3).unwrap());
        assert!(g.sample(0, 3).is_err());
        let b = Barenblatt::new(1.0).unwrap();
        let s = b.sample(20000, 9).unwrap();
        assert!(s.iter().all(|z| z.abs() <= b.radius()));
    }

    #[test]
    fn barenblatt_quadrature_moments() {
        let b = Barenblatt::new(1.0).unwrap();
        let r = b.radius();
        let m = b.moments(-r, r).unwrap();
        // second moment of (C - x²/12)_+ on [-R, R] is R²/5
        assert!((m[0] - 1.0).abs() < 1e-12);
        assert!(m[1].abs() < 1e-12);
        assert!((m[2] - r * r / 5.0).abs() < 1e-10);
    }
}
