//! Free energies over pushforward measures and their parameter gradients.
//!
//! The direct estimators (`energy_value`, `grad_*`, `assemble_gradient`) work
//! on any sample slice. [`Particles`] freezes a sorted sample set and computes
//! the same quantities through prefix sums; the flow integrator uses it.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Result, WgfError};
use crate::network::{HalfLine, NetworkParams};
use crate::reference::{integrate_cdf_mapped, ReferenceDensity};
use crate::samples::SampleSet;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type PairFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InternalKind {
    /// `Û(p) = log p`.
    Entropy,
    /// Porous medium with `m = 2`, `Û(p) = p`.
    Porous,
}

impl InternalKind {
    pub fn uhat(self, p: f64) -> f64 {
        match self {
            InternalKind::Entropy => p.ln(),
            InternalKind::Porous => p,
        }
    }
    pub fn duhat(self, p: f64) -> f64 {
        match self {
            InternalKind::Entropy => 1.0 / p,
            InternalKind::Porous => 1.0,
        }
    }
}

#[derive(Clone)]
pub enum Term {
    Potential { v: ScalarFn, dv: ScalarFn },
    Interaction { w: PairFn, grad1w: PairFn, exclude_self: bool },
    Internal { kind: InternalKind },
}

impl std::fmt::Debug for Term {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Term::Potential { .. } => write!(f, "Potential"),
            Term::Interaction { exclude_self, .. } => write!(f, "Interaction {{ exclude_self: {exclude_self} }}"),
            Term::Internal { kind } => write!(f, "Internal({kind:?})"),
        }
    }
}

impl Term {
    pub fn potential(v: impl Fn(f64) -> f64 + Send + Sync + 'static, dv: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Term::Potential { v: Arc::new(v), dv: Arc::new(dv) }
    }

    pub fn interaction(
        w: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        grad1w: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        exclude_self: bool,
    ) -> Self {
        Term::Interaction { w: Arc::new(w), grad1w: Arc::new(grad1w), exclude_self }
    }

    /// `W(x, y) = 2χ log|x − y|` with self-pairs excluded.
    pub fn log_interaction(chi: f64) -> Self {
        Self::interaction(
            move |x, y| 2.0 * chi * (x - y).abs().ln(),
            move |x, y| 2.0 * chi / (x - y),
            true,
        )
    }
}

#[derive(Debug, Clone)]
pub struct EnergySpec {
    pub terms: Vec<Term>,
    /// Weight on every internal term.
    pub diffusion_gamma: f64,
    /// Offset used for one-sided slope evaluations at the nodes.
    pub singular_delta: f64,
}

impl EnergySpec {
    pub fn new(terms: Vec<Term>, diffusion_gamma: f64, singular_delta: f64) -> Result<Self> {
        if terms.is_empty() {
            return Err(WgfError::InvalidArgument("energy needs at least one term".into()));
        }
        if !(diffusion_gamma >= 0.0) {
            return Err(WgfError::InvalidArgument(format!("gamma must be nonnegative, got {diffusion_gamma}")));
        }
        if !(singular_delta > 0.0) {
            return Err(WgfError::InvalidArgument(format!("delta must be positive, got {singular_delta}")));
        }
        Ok(Self { terms, diffusion_gamma, singular_delta })
    }

    fn internal_weight(&self) -> f64 {
        self.diffusion_gamma
    }

    /// Whether the gradient uses the closed-form bias derivatives, which need
    /// separated biases.
    pub fn has_internal(&self) -> bool {
        self.terms.iter().any(|t| matches!(t, Term::Internal { .. }))
    }
}

/// A gradient together with the number of singular interaction pairs skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub values: Vec<f64>,
    pub skipped_pairs: usize,
}

fn check_samples(samples: &[f64]) -> Result<()> {
    if samples.is_empty() {
        return Err(WgfError::EmptySamples);
    }
    Ok(())
}

/// Monte Carlo estimate of the free energy.
pub fn energy_value<R: ReferenceDensity + ?Sized>(
    params: &NetworkParams,
    spec: &EnergySpec,
    samples: &[f64],
    reference: &R,
) -> Result<f64> {
    check_samples(samples)?;
    let m = samples.len() as f64;
    let f: Vec<f64> = samples.iter().map(|&z| params.forward(z)).collect();
    let mut total = 0.0;
    for term in &spec.terms {
        match term {
            Term::Potential { v, .. } => total += f.iter().map(|&x| v(x)).sum::<f64>() / m,
            Term::Interaction { w, exclude_self, .. } => {
                total += interaction_energy(&f, w.as_ref(), *exclude_self)?.0;
            }
            Term::Internal { kind } => {
                if spec.internal_weight() == 0.0 {
                    continue;
                }
                let mut s = 0.0;
                for &z in samples {
                    let d = params.z_derivative(z);
                    s += internal_integrand(*kind, reference.pdf(z), d, z)?;
                }
                total += spec.internal_weight() * s / m;
            }
        }
    }
    Ok(total)
}

fn internal_integrand(kind: InternalKind, pdf: f64, slope: f64, z: f64) -> Result<f64> {
    match kind {
        InternalKind::Entropy => {
            if !(slope > 0.0) {
                return Err(WgfError::NonPositiveSlope { z, slope });
            }
            Ok(pdf.ln() - slope.ln())
        }
        InternalKind::Porous => {
            if !(slope > 0.0) {
                return Err(WgfError::NonPositiveSlope { z, slope });
            }
            Ok(pdf / slope)
        }
    }
}

fn pair_normalizer(m: usize, exclude_self: bool) -> Result<f64> {
    if exclude_self {
        if m < 2 {
            return Err(WgfError::InvalidArgument("interaction needs at least two samples".into()));
        }
        Ok((m * (m - 1)) as f64)
    } else {
        Ok((m * m) as f64)
    }
}

/// `(1/(2·pairs)) Σ W(f_k, f_l)` and the number of non-finite pairs skipped.
fn interaction_energy(f: &[f64], w: &(dyn Fn(f64, f64) -> f64 + Send + Sync), exclude_self: bool) -> Result<(f64, usize)> {
    let norm = pair_normalizer(f.len(), exclude_self)?;
    let rows: Vec<(f64, usize)> = f
        .par_iter()
        .enumerate()
        .map(|(k, &x)| {
            let mut s = 0.0;
            let mut skipped = 0;
            for (l, &y) in f.iter().enumerate() {
                if exclude_self && k == l {
                    continue;
                }
                let v = w(x, y);
                if v.is_finite() {
                    s += v;
                } else {
                    skipped += 1;
                }
            }
            (s, skipped)
        })
        .collect();
    let s: f64 = rows.iter().map(|r| r.0).sum();
    let skipped = rows.iter().map(|r| r.1).sum();
    Ok((s / (2.0 * norm), skipped))
}

/// Per-particle interaction weights `Σ_{l} grad1W(f_k, f_l) / (pairs / M)`.
fn interaction_weights(
    f: &[f64],
    grad1w: &(dyn Fn(f64, f64) -> f64 + Send + Sync),
    exclude_self: bool,
) -> Result<(Vec<f64>, usize)> {
    let m = f.len();
    let norm = pair_normalizer(m, exclude_self)? / m as f64;
    let rows: Vec<(f64, usize)> = f
        .par_iter()
        .enumerate()
        .map(|(k, &x)| {
            let mut s = 0.0;
            let mut skipped = 0;
            for (l, &y) in f.iter().enumerate() {
                if exclude_self && k == l {
                    continue;
                }
                let g = grad1w(x, y);
                if g.is_finite() {
                    s += g;
                } else {
                    skipped += 1;
                }
            }
            (s / norm, skipped)
        })
        .collect();
    let skipped = rows.iter().map(|r| r.1).sum();
    Ok((rows.into_iter().map(|r| r.0).collect(), skipped))
}

/// `(1/M) Σ dV(f(z_l)) J(z_l)`.
pub fn grad_potential(params: &NetworkParams, dv: &dyn Fn(f64) -> f64, samples: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; params.dim()];
    for &z in samples {
        let w = dv(params.forward(z));
        for (gi, ji) in g.iter_mut().zip(params.param_jacobian(z)) {
            *gi += w * ji;
        }
    }
    let m = samples.len().max(1) as f64;
    g.iter_mut().for_each(|x| *x /= m);
    g
}

/// `(1/pairs) Σ_{k,l} grad1W(f_k, f_l) J(z_k)`, skipping singular pairs.
pub fn grad_interaction(
    params: &NetworkParams,
    grad1w: &(dyn Fn(f64, f64) -> f64 + Send + Sync),
    exclude_self: bool,
    samples: &[f64],
) -> Result<Gradient> {
    check_samples(samples)?;
    let f: Vec<f64> = samples.iter().map(|&z| params.forward(z)).collect();
    let (w, skipped) = interaction_weights(&f, grad1w, exclude_self)?;
    let mut g = vec![0.0; params.dim()];
    for (k, &z) in samples.iter().enumerate() {
        for (gi, ji) in g.iter_mut().zip(params.param_jacobian(z)) {
            *gi += w[k] * ji;
        }
    }
    let m = samples.len() as f64;
    g.iter_mut().for_each(|x| *x /= m);
    Ok(Gradient { values: g, skipped_pairs: skipped })
}

/// Rejects bias configurations where `b ± δ` would cross a neighbouring node.
pub fn check_bias_separation(params: &NetworkParams, delta: f64) -> Result<()> {
    let mut order: Vec<usize> = (0..params.total_neurons()).collect();
    order.sort_by(|&x, &y| params.biases[x].total_cmp(&params.biases[y]));
    // the identity initialization places mirrored nodes exactly 2δ apart
    let min_gap = 2.0 * delta * (1.0 - 1e-6);
    for w in order.windows(2) {
        if params.biases[w[1]] - params.biases[w[0]] < min_gap {
            return Err(WgfError::BiasCollision { first: w[0], second: w[1], min_gap: 2.0 * delta });
        }
    }
    Ok(())
}

/// Offset used along a flow: `δ`, shrunk to a quarter of the smallest bias
/// gap once nodes drift closer than `2δ`. The one-sided slopes are the same
/// for every offset below half the gap, so only coinciding biases fail.
pub fn flow_delta(params: &NetworkParams, delta: f64) -> Result<f64> {
    let gap = params.min_bias_gap();
    if gap > 0.0 && gap.is_finite() || params.total_neurons() < 2 {
        Ok(delta.min(0.25 * gap))
    } else {
        let (first, second) = closest_pair(params);
        Err(WgfError::BiasCollision { first, second, min_gap: 0.0 })
    }
}

fn closest_pair(params: &NetworkParams) -> (usize, usize) {
    let mut order: Vec<usize> = (0..params.total_neurons()).collect();
    order.sort_by(|&x, &y| params.biases[x].total_cmp(&params.biases[y]));
    order
        .windows(2)
        .min_by(|u, v| {
            let du = params.biases[u[1]] - params.biases[u[0]];
            let dv = params.biases[v[1]] - params.biases[v[0]];
            du.total_cmp(&dv)
        })
        .map_or((0, 0), |w| (w[0], w[1]))
}

/// Closed-form bias derivatives of `E[Û(p_r / f')]` from one-sided slopes.
///
/// With `hull = Some((lo, hi))`, a node outside `[lo, hi]` whose one-sided
/// slopes are not both positive contributes zero instead of failing.
fn internal_bias_gradient<R: ReferenceDensity + ?Sized>(
    params: &NetworkParams,
    kind: InternalKind,
    reference: &R,
    delta: f64,
    hull: Option<(f64, f64)>,
) -> Result<Vec<f64>> {
    check_bias_separation(params, delta)?;
    let k = params.total_neurons();
    let mut g = vec![0.0; k];
    for (j, gj) in g.iter_mut().enumerate() {
        let b = params.biases[j];
        let (zl, zr) = (b - delta, b + delta);
        let (sl, sr) = (params.z_derivative(zl), params.z_derivative(zr));
        if let Some((z, s)) = [(zl, sl), (zr, sr)].into_iter().find(|&(_, s)| !(s > 0.0)) {
            match hull {
                Some((lo, hi)) if b < lo || b > hi => continue,
                _ => return Err(WgfError::NonPositiveSlope { z, slope: s }),
            }
        }
        let p = reference.pdf(b);
        *gj = match kind {
            InternalKind::Entropy => -p * (sl / sr).ln(),
            InternalKind::Porous => p * p * (1.0 / sl - 1.0 / sr),
        };
    }
    Ok(g)
}

/// Gradient of `E[Û(p_r / f')]`: weights by Monte Carlo, biases in closed form.
pub fn grad_internal<R: ReferenceDensity + ?Sized>(
    params: &NetworkParams,
    kind: InternalKind,
    samples: &[f64],
    reference: &R,
    delta: f64,
) -> Result<Vec<f64>> {
    check_samples(samples)?;
    let k = params.total_neurons();
    let mut g = vec![0.0; 2 * k];
    for &z in samples {
        let d = params.z_derivative(z);
        if !(d > 0.0) {
            return Err(WgfError::NonPositiveSlope { z, slope: d });
        }
        let u = internal_weight_factor(kind, reference.pdf(z), d);
        for (i, gi) in g.iter_mut().take(k).enumerate() {
            let b = params.biases[i];
            let dfa = if params.is_forward(i) {
                if z > b { 1.0 } else { 0.0 }
            } else if z < b {
                -1.0
            } else {
                0.0
            };
            *gi -= u * dfa / params.scale;
        }
    }
    let m = samples.len() as f64;
    g.iter_mut().take(k).for_each(|x| *x /= m);
    let gb = internal_bias_gradient(params, kind, reference, delta, None)?;
    g[k..].copy_from_slice(&gb);
    Ok(g)
}

/// `-∂Û(p_r/f')/∂f'`, i.e. `1/f'` for entropy and `p_r/f'²` for porous.
fn internal_weight_factor(kind: InternalKind, pdf: f64, slope: f64) -> f64 {
    match kind {
        InternalKind::Entropy => 1.0 / slope,
        InternalKind::Porous => pdf / (slope * slope),
    }
}

/// Sum of all term gradients, with the internal terms weighted by `γ`.
pub fn assemble_gradient<R: ReferenceDensity + ?Sized>(
    params: &NetworkParams,
    spec: &EnergySpec,
    samples: &[f64],
    reference: &R,
) -> Result<Gradient> {
    check_samples(samples)?;
    let mut g = vec![0.0; params.dim()];
    let mut skipped = 0;
    for term in &spec.terms {
        let (part, weight) = match term {
            Term::Potential { dv, .. } => (grad_potential(params, dv.as_ref(), samples), 1.0),
            Term::Interaction { grad1w, exclude_self, .. } => {
                let r = grad_interaction(params, grad1w.as_ref(), *exclude_self, samples)?;
                skipped += r.skipped_pairs;
                (r.values, 1.0)
            }
            Term::Internal { kind } => {
                if spec.internal_weight() == 0.0 {
                    continue;
                }
                (
                    grad_internal(params, *kind, samples, reference, spec.singular_delta)?,
                    spec.internal_weight(),
                )
            }
        };
        for (gi, pi) in g.iter_mut().zip(part) {
            *gi += weight * pi;
        }
    }
    Ok(Gradient { values: g, skipped_pairs: skipped })
}

/// Energy, gradient and pushforward moments at one parameter value.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub energy: Option<f64>,
    pub gradient: Gradient,
    pub mean: f64,
    pub second_moment: f64,
}

/// A frozen sorted sample set with cached reference densities.
#[derive(Debug, Clone)]
pub struct Particles {
    pub set: SampleSet,
    pdf: Vec<f64>,
}

impl Particles {
    pub fn new<R: ReferenceDensity + ?Sized>(samples: Vec<f64>, reference: &R) -> Result<Self> {
        let set = SampleSet::new(samples)?;
        let pdf = set.values().iter().map(|&z| reference.pdf(z)).collect();
        Ok(Self { set, pdf })
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    /// Pushforward values `f(z_l)` in sorted-sample order.
    pub fn pushforward(&self, params: &NetworkParams) -> Vec<f64> {
        params.eval_sorted(self.set.values()).0
    }

    /// Energy (optional) and gradient in one sweep over the samples.
    pub fn evaluate<R: ReferenceDensity + ?Sized>(
        &self,
        params: &NetworkParams,
        spec: &EnergySpec,
        reference: &R,
        with_energy: bool,
    ) -> Result<Evaluation> {
        let z = self.set.values();
        let m = z.len() as f64;
        let (f, d) = params.eval_sorted(z);
        let basis = params.jacobian_basis();
        let k = params.total_neurons();
        let mut grad = vec![0.0; 2 * k];
        let mut energy = 0.0;
        let mut skipped = 0;

        let mut smooth_w = vec![0.0; z.len()];
        let mut has_smooth = false;
        for term in &spec.terms {
            match term {
                Term::Potential { v, dv } => {
                    has_smooth = true;
                    for (w, &x) in smooth_w.iter_mut().zip(&f) {
                        *w += dv(x);
                    }
                    if with_energy {
                        energy += f.iter().map(|&x| v(x)).sum::<f64>() / m;
                    }
                }
                Term::Interaction { w, grad1w, exclude_self } => {
                    has_smooth = true;
                    let (iw, s) = interaction_weights(&f, grad1w.as_ref(), *exclude_self)?;
                    skipped += s;
                    for (a, b) in smooth_w.iter_mut().zip(iw) {
                        *a += b;
                    }
                    if with_energy {
                        energy += interaction_energy(&f, w.as_ref(), *exclude_self)?.0;
                    }
                }
                Term::Internal { kind } => {
                    let gamma = spec.internal_weight();
                    if gamma == 0.0 {
                        continue;
                    }
                    let mut u = Vec::with_capacity(z.len());
                    let mut e = 0.0;
                    for l in 0..z.len() {
                        if !(d[l] > 0.0) {
                            return Err(WgfError::NonPositiveSlope { z: z[l], slope: d[l] });
                        }
                        u.push(internal_weight_factor(*kind, self.pdf[l], d[l]));
                        if with_energy {
                            e += internal_integrand(*kind, self.pdf[l], d[l], z[l])?;
                        }
                    }
                    energy += gamma * e / m;
                    let pre = self.set.weighted(&u);
                    for i in 0..k {
                        let h = &basis[i];
                        let (lo, hi) = h.bounds();
                        let (a, b) = self.set.open_range(lo, hi);
                        let s = pre.sum(a, b).0;
                        let sign = if params.is_forward(i) { 1.0 } else { -1.0 };
                        grad[i] -= gamma * sign * s / (m * params.scale);
                    }
                    let hull = (z[0], z[z.len() - 1]);
                    let delta = flow_delta(params, spec.singular_delta)?;
                    let gb = internal_bias_gradient(params, *kind, reference, delta, Some(hull))?;
                    for (i, v) in gb.into_iter().enumerate() {
                        grad[k + i] += gamma * v;
                    }
                }
            }
        }
        if has_smooth {
            let pre = self.set.weighted(&smooth_w);
            for (c, h) in basis.iter().enumerate() {
                grad[c] += half_line_sum(&self.set, &pre, h) / m;
            }
        }
        let mean = f.iter().sum::<f64>() / m;
        let second_moment = f.iter().map(|x| x * x).sum::<f64>() / m;
        Ok(Evaluation {
            energy: with_energy.then_some(energy),
            gradient: Gradient { values: grad, skipped_pairs: skipped },
            mean,
            second_moment,
        })
    }
}

fn half_line_sum(set: &SampleSet, pre: &crate::samples::WeightedPrefix, h: &HalfLine) -> f64 {
    let (lo, hi) = h.bounds();
    let (i, j) = set.open_range(lo, hi);
    let (s0, s1) = pre.sum(i, j);
    h.c0 * s0 + h.c1 * s1
}

/// `∫_lo^hi g(z) p_r(z) dz` split at the given interior nodes.
pub fn integrate_piecewise<R, G>(reference: &R, g: G, lo: f64, hi: f64, nodes: &[f64]) -> Result<f64>
where
    R: ReferenceDensity + ?Sized,
    G: Fn(f64) -> f64,
{
    let mut cuts: Vec<f64> = nodes.iter().cloned().filter(|&b| b > lo && b < hi).collect();
    cuts.sort_by(f64::total_cmp);
    let mut pts = vec![lo];
    pts.extend(cuts);
    pts.push(hi);
    let mut s = 0.0;
    for w in pts.windows(2) {
        s += integrate_cdf_mapped(reference, &g, w[0], w[1])?;
    }
    Ok(s)
}

/// `E[V(f(z))]` under `p_r` by quadrature.
pub fn potential_energy_exact<R: ReferenceDensity + ?Sized>(
    params: &NetworkParams,
    v: &dyn Fn(f64) -> f64,
    reference: &R,
) -> Result<f64> {
    integrate_piecewise(reference, |z| v(params.forward(z)), f64::NEG_INFINITY, f64::INFINITY, &params.biases)
}

/// `E[dV(f(z)) J(z)]` under `p_r` by quadrature.
pub fn grad_potential_exact<R: ReferenceDensity + ?Sized>(
    params: &NetworkParams,
    dv: &dyn Fn(f64) -> f64,
    reference: &R,
) -> Result<Vec<f64>> {
    params
        .jacobian_basis()
        .iter()
        .map(|h| {
            let (lo, hi) = h.bounds();
            integrate_piecewise(reference, |z| dv(params.forward(z)) * (h.c0 + h.c1 * z), lo, hi, &params.biases)
        })
        .collect()
}

/// `E[Û(p_r / f')]` under `p_r`, summing exactly over the constant-slope pieces.
pub fn internal_energy_exact<R: ReferenceDensity + ?Sized>(
    params: &NetworkParams,
    kind: InternalKind,
    reference: &R,
) -> Result<f64> {
    let pw = params.piecewise();
    let mut edges = vec![f64::NEG_INFINITY];
    edges.extend(pw.nodes.iter().cloned());
    edges.push(f64::INFINITY);
    let mut total = match kind {
        InternalKind::Entropy => integrate_cdf_mapped(
            reference,
            |z| {
                let p = reference.pdf(z);
                if p > 0.0 { p.ln() } else { 0.0 }
            },
            f64::NEG_INFINITY,
            f64::INFINITY,
        )?,
        InternalKind::Porous => 0.0,
    };
    for (k, w) in edges.windows(2).enumerate() {
        let (lo, hi) = (w[0], w[1]);
        let mass = reference.mass(lo, hi);
        if !(lo < hi) || mass <= 0.0 {
            continue;
        }
        let s = pw.slopes[k];
        if !(s > 0.0) {
            return Err(WgfError::NonPositiveSlope { z: 0.5 * (lo.max(-1e300) + hi.min(1e300)), slope: s });
        }
        total += match kind {
            InternalKind::Entropy => -s.ln() * mass,
            InternalKind::Porous => integrate_cdf_mapped(reference, |z| reference.pdf(z), lo, hi)? / s,
        };
    }
    Ok(total)
}
