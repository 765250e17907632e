//! The neural mapping metric `G = E[J Jᵀ]`, its closed-form bias-block inverse,
//! pseudoinverse solves and the tangent-space projection residual.

use nalgebra::{DMatrix, DVector, Dyn, SymmetricEigen, SVD};

use crate::error::{Result, WgfError};
use crate::network::{HalfLine, NetworkParams, Subset};
use crate::reference::{integrate_cdf_mapped, ReferenceDensity};
use crate::samples::SampleSet;

/// Default floor on CDF gaps before taking reciprocals.
pub const CDF_GAP_FLOOR: f64 = 1e-14;
/// Default relative singular-value cutoff for the pseudoinverse.
pub const PINV_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricTensor {
    pub entries: DMatrix<f64>,
}

impl MetricTensor {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Square sub-block on the given coordinate range.
    pub fn block(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> DMatrix<f64> {
        self.entries
            .view((rows.start, cols.start), (rows.len(), cols.len()))
            .into_owned()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalMatrix {
    pub diagonal: Vec<f64>,
    /// `off[i]` couples rows `i` and `i + 1`.
    pub off: Vec<f64>,
}

impl TridiagonalMatrix {
    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diagonal[i];
        }
        for (i, &o) in self.off.iter().enumerate() {
            m[(i, i + 1)] = o;
            m[(i + 1, i)] = o;
        }
        m
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut s = self.diagonal[i] * x[i];
                if i > 0 {
                    s += self.off[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.off[i] * x[i + 1];
                }
                s
            })
            .collect()
    }
}

fn gram_entry(p: &HalfLine, q: &HalfLine, moments: &mut impl FnMut(f64, f64) -> [f64; 3]) -> f64 {
    let (l1, h1) = p.bounds();
    let (l2, h2) = q.bounds();
    let (lo, hi) = (l1.max(l2), h1.min(h2));
    if !(lo < hi) {
        return 0.0;
    }
    let m = moments(lo, hi);
    p.c0 * q.c0 * m[0] + (p.c0 * q.c1 + p.c1 * q.c0) * m[1] + p.c1 * q.c1 * m[2]
}

fn gram_from_basis(basis: &[HalfLine], mut moments: impl FnMut(f64, f64) -> [f64; 3]) -> MetricTensor {
    let d = basis.len();
    let mut g = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v = gram_entry(&basis[i], &basis[j], &mut moments);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    MetricTensor { entries: g }
}

/// `(1/M) Σ_l J(z_l) J(z_l)ᵀ` on the chosen coordinates, by direct summation.
pub fn empirical_metric(params: &NetworkParams, samples: &[f64], subset: Subset) -> Result<MetricTensor> {
    if samples.is_empty() {
        return Err(WgfError::EmptySamples);
    }
    let idx = subset.indices(params.total_neurons());
    let d = idx.len();
    let mut g = DMatrix::<f64>::zeros(d, d);
    for &z in samples {
        let j = params.param_jacobian(z);
        let v = DVector::from_row_slice(&j[idx.clone()]);
        g.syger(1.0, &v, &v, 1.0);
    }
    g.fill_upper_triangle_with_lower_triangle();
    g /= samples.len() as f64;
    Ok(MetricTensor { entries: g })
}

/// Same matrix as [`empirical_metric`] from prefix moments of sorted samples.
pub fn sample_metric(params: &NetworkParams, samples: &SampleSet, subset: Subset) -> MetricTensor {
    let basis = params.jacobian_basis();
    let idx = subset.indices(params.total_neurons());
    gram_from_basis(&basis[idx], |lo, hi| samples.moments(lo, hi))
}

/// Exact metric under `p_r`. One-sided networks must be in the monotone regime.
pub fn analytic_metric<R: ReferenceDensity + ?Sized>(params: &NetworkParams, reference: &R) -> Result<MetricTensor> {
    analytic_metric_subset(params, reference, Subset::Both)
}

pub fn analytic_metric_subset<R: ReferenceDensity + ?Sized>(
    params: &NetworkParams,
    reference: &R,
    subset: Subset,
) -> Result<MetricTensor> {
    if params.layout == crate::network::Layout::OneSided {
        params.check_one_sided_monotone()?;
    }
    let basis = params.jacobian_basis();
    let idx = subset.indices(params.total_neurons());
    let mut err = None;
    let g = gram_from_basis(&basis[idx], |lo, hi| match reference.moments(lo, hi) {
        Ok(m) => m,
        Err(e) => {
            err.get_or_insert(e);
            [0.0; 3]
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(g),
    }
}

/// Closed-form tridiagonal inverse of the bias block of a one-sided network.
pub fn analytic_inverse_bb<R: ReferenceDensity + ?Sized>(
    params: &NetworkParams,
    reference: &R,
) -> Result<TridiagonalMatrix> {
    analytic_inverse_bb_with_floor(params, reference, CDF_GAP_FLOOR)
}

pub fn analytic_inverse_bb_with_floor<R: ReferenceDensity + ?Sized>(
    params: &NetworkParams,
    reference: &R,
    floor: f64,
) -> Result<TridiagonalMatrix> {
    params.check_one_sided_monotone()?;
    let n = params.total_neurons();
    let a = params.effective_weights();
    let b = &params.biases;
    // gaps[i] = F(b_{i+1}) - F(b_i), with the last one the tail mass 1 - F(b_N)
    let mut gaps = Vec::with_capacity(n);
    for i in 0..n {
        let hi = if i + 1 < n { b[i + 1] } else { f64::INFINITY };
        let g = reference.mass(b[i], hi);
        if !(g > floor) {
            return Err(WgfError::CdfGapUnderflow { index: i, gap: g, floor });
        }
        gaps.push(g);
    }
    let mut diagonal = vec![0.0; n];
    let mut off = vec![0.0; n.saturating_sub(1)];
    for i in 0..n {
        let left = if i > 0 { 1.0 / gaps[i - 1] } else { 0.0 };
        let right = if i + 1 < n { 1.0 / gaps[i] } else { 0.0 };
        let tail = if i + 1 == n && n > 1 { 1.0 / gaps[i] } else { 0.0 };
        diagonal[i] = (left + right + tail) / (a[i] * a[i]);
        if i + 1 < n {
            off[i] = -1.0 / (a[i] * a[i + 1] * gaps[i]);
        }
    }
    if n == 1 {
        diagonal[0] = 1.0 / (a[0] * a[0] * gaps[0]);
    }
    Ok(TridiagonalMatrix { diagonal, off })
}

/// Result of a pseudoinverse solve.
#[derive(Debug, Clone)]
pub struct PinvSolution {
    pub x: Vec<f64>,
    /// Largest over smallest retained singular value.
    pub condition: f64,
    pub rank: usize,
}

/// Minimum-norm least-squares solution of `G x = g` with relative truncation.
pub fn pinv_solve(g: &MetricTensor, rhs: &[f64], rel_tol: f64) -> Result<Vec<f64>> {
    Ok(pinv_solve_full(g, rhs, rel_tol)?.x)
}

pub fn pinv_solve_full(g: &MetricTensor, rhs: &[f64], rel_tol: f64) -> Result<PinvSolution> {
    PinvFactor::new(g).solve(rhs, rel_tol)
}

/// Singular value decomposition of a metric, reusable across right-hand
/// sides and cutoffs.
///
/// The metric is symmetric, so the decomposition comes from the symmetric
/// eigensolver with eigenvalue signs moved into `vt`. Both iterative solvers
/// can stall on some nearly rank-deficient Gram matrices, so each attempt is
/// capped before falling back to the other.
pub struct PinvFactor {
    u: DMatrix<f64>,
    s: DVector<f64>,
    vt: DMatrix<f64>,
    smax: f64,
}

const MAX_ITER: usize = 10_000;

impl PinvFactor {
    pub fn new(g: &MetricTensor) -> Self {
        if let Some(eig) = SymmetricEigen::try_new(g.entries.clone(), f64::EPSILON, MAX_ITER) {
            return Self::from_eigen(eig);
        }
        match Self::from_svd(g) {
            Some(f) => f,
            None => Self::from_eigen(SymmetricEigen::new(g.entries.clone())),
        }
    }

    fn from_svd(g: &MetricTensor) -> Option<Self> {
        let svd = SVD::try_new(g.entries.clone(), true, true, f64::EPSILON, MAX_ITER)?;
        Some(Self::from_parts(svd.u?, svd.singular_values, svd.v_t?))
    }

    fn from_eigen(eig: SymmetricEigen<f64, Dyn>) -> Self {
        let mut vt = eig.eigenvectors.transpose();
        for (k, &l) in eig.eigenvalues.iter().enumerate() {
            if l < 0.0 {
                vt.row_mut(k).neg_mut();
            }
        }
        Self::from_parts(eig.eigenvectors, eig.eigenvalues.abs(), vt)
    }

    fn from_parts(u: DMatrix<f64>, s: DVector<f64>, vt: DMatrix<f64>) -> Self {
        let smax = s.iter().cloned().fold(0.0, f64::max);
        Self { u, s, vt, smax }
    }

    pub fn dim(&self) -> usize {
        self.s.len()
    }

    pub fn solve(&self, rhs: &[f64], rel_tol: f64) -> Result<PinvSolution> {
        let d = self.dim();
        if rhs.len() != d {
            return Err(WgfError::DimensionMismatch { expected: d, got: rhs.len() });
        }
        let smax = self.smax;
        if smax == 0.0 || !smax.is_finite() {
            return Ok(PinvSolution { x: vec![0.0; d], condition: f64::INFINITY, rank: 0 });
        }
        let cut = rel_tol * smax;
        let b = DVector::from_row_slice(rhs);
        let utb = self.u.tr_mul(&b);
        let mut y = DVector::zeros(d);
        let mut rank = 0;
        let mut smin = smax;
        for k in 0..d {
            let s = self.s[k];
            if s > cut {
                y[k] = utb[k] / s;
                rank += 1;
                smin = smin.min(s);
            }
        }
        let x = self.vt.tr_mul(&y);
        Ok(PinvSolution { x: x.iter().cloned().collect(), condition: smax / smin, rank })
    }
}

/// Squared `L²(p_r)` distance on `z > b_1` from `v∘f` to the span of the
/// parameter Jacobian of a one-sided network.
///
/// On each interval `[b_i, b_{i+1})` (with `b_{N+1} = ∞`) the span is the
/// affine functions, so the residual is the per-interval least-squares error
/// of an affine fit centred at the `p_r`-centre of mass `m_i`.
pub fn projection_residual<R, V>(params: &NetworkParams, v: V, reference: &R) -> Result<f64>
where
    R: ReferenceDensity + ?Sized,
    V: Fn(f64) -> f64,
{
    params.check_one_sided_monotone()?;
    let n = params.total_neurons();
    let b = &params.biases;
    let h = |z: f64| v(params.forward(z));
    let mut total = 0.0;
    for i in 0..n {
        let (lo, hi) = (b[i], if i + 1 < n { b[i + 1] } else { f64::INFINITY });
        let m = reference.moments(lo, hi)?;
        if m[0] <= 0.0 {
            continue;
        }
        let c = m[1] / m[0];
        let var = m[2] - 2.0 * c * m[1] + c * c * m[0];
        let mean = integrate_cdf_mapped(reference, &h, lo, hi)? / m[0];
        let slope = if var > 0.0 {
            integrate_cdf_mapped(reference, |z| h(z) * (z - c), lo, hi)? / var
        } else {
            0.0
        };
        let r = integrate_cdf_mapped(
            reference,
            |z| {
                let d = h(z) - mean - slope * (z - c);
                d * d
            },
            lo,
            hi,
        )?;
        total += r;
    }
    Ok(total)
}
