//! Forward Euler integration of the projected flow, and the closed-form
//! semi-discrete flows of one-sided networks.

use crate::error::{Result, WgfError};
use crate::functionals::{integrate_piecewise, EnergySpec, Evaluation, Particles};
use crate::metric::{
    analytic_metric_subset, sample_metric, PinvFactor, MetricTensor, CDF_GAP_FLOOR,
    PINV_REL_TOL,
};
use crate::network::{NetworkParams, Subset};
use crate::reference::ReferenceDensity;

/// Factor by which a rejected step raises the pseudoinverse cutoff.
pub const CUTOFF_ESCALATION: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricMode {
    /// Gram matrix of the frozen samples.
    Empirical,
    /// Exact Gram matrix under a standard Gaussian reference.
    AnalyticGaussian,
}

#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub dt: f64,
    pub steps: usize,
    pub metric_mode: MetricMode,
    pub param_subset: Subset,
    pub pinv_rel_tol: f64,
    /// Largest cutoff a step may escalate to when the update leaves the
    /// admissible set (nonpositive slope or colliding biases). Equal to
    /// `pinv_rel_tol` disables escalation.
    pub max_rel_tol: f64,
    pub sample_count: usize,
    pub seed: u64,
    /// Draw fresh samples every step instead of reusing the first set.
    pub resample: bool,
    /// Record energy and diagnostics every `record_stride` steps.
    pub record_stride: usize,
    /// Keep a parameter snapshot every `theta_stride` steps, if set.
    pub theta_stride: Option<usize>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            steps: 1000,
            metric_mode: MetricMode::Empirical,
            param_subset: Subset::Both,
            pinv_rel_tol: PINV_REL_TOL,
            max_rel_tol: PINV_REL_TOL,
            sample_count: 10_000,
            seed: 0,
            resample: false,
            record_stride: 1,
            theta_stride: None,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt >= 0.0) || !self.dt.is_finite() {
            return Err(WgfError::InvalidArgument(format!("dt must be nonnegative, got {}", self.dt)));
        }
        if self.steps == 0 {
            return Err(WgfError::InvalidArgument("steps must be at least 1".into()));
        }
        if self.sample_count == 0 {
            return Err(WgfError::InvalidArgument("sample count must be positive".into()));
        }
        if self.record_stride == 0 || self.theta_stride == Some(0) {
            return Err(WgfError::InvalidArgument("strides must be positive".into()));
        }
        if !(self.pinv_rel_tol > 0.0) {
            return Err(WgfError::InvalidArgument("pinv tolerance must be positive".into()));
        }
        if !(self.max_rel_tol >= self.pinv_rel_tol) || self.max_rel_tol >= 1.0 {
            return Err(WgfError::InvalidArgument("max_rel_tol must lie in [pinv_rel_tol, 1)".into()));
        }
        Ok(())
    }
}

/// One recorded step, taken before the update at that step. The last record
/// holds the final state and has NaN `condition` and `rel_tol`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub energy: f64,
    pub min_bias_gap: f64,
    pub condition: f64,
    /// Cutoff the accepted update was solved with.
    pub rel_tol: f64,
    pub skipped_pairs: usize,
    pub mean: f64,
    pub second_moment: f64,
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub records: Vec<StepRecord>,
    pub theta_history: Vec<(usize, NetworkParams)>,
    pub final_params: NetworkParams,
    pub final_time: f64,
    /// Steps whose update needed a cutoff above `pinv_rel_tol`.
    pub escalated_steps: usize,
}

impl TrajectoryRecord {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }
    pub fn energy_history(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.energy).collect()
    }
}

/// `θ − h G⁺ g` on the subset coordinates; `grad` is full length.
pub fn euler_step(
    params: &NetworkParams,
    grad: &[f64],
    g: &MetricTensor,
    h: f64,
    rel_tol: f64,
    subset: Subset,
) -> Result<NetworkParams> {
    Ok(euler_step_full(params, grad, g, h, rel_tol, subset)?.0)
}

fn euler_step_full(
    params: &NetworkParams,
    grad: &[f64],
    g: &MetricTensor,
    h: f64,
    rel_tol: f64,
    subset: Subset,
) -> Result<(NetworkParams, f64)> {
    factored_step(params, grad, &PinvFactor::new(g), h, rel_tol, subset)
}

fn factored_step(
    params: &NetworkParams,
    grad: &[f64],
    factor: &PinvFactor,
    h: f64,
    rel_tol: f64,
    subset: Subset,
) -> Result<(NetworkParams, f64)> {
    if grad.len() != params.dim() {
        return Err(WgfError::DimensionMismatch { expected: params.dim(), got: grad.len() });
    }
    let idx = subset.indices(params.total_neurons());
    let sol = factor.solve(&grad[idx.clone()], rel_tol)?;
    let mut delta = vec![0.0; params.dim()];
    for (c, x) in idx.zip(sol.x) {
        delta[c] = -h * x;
    }
    Ok((params.offset_by(&delta), sol.condition))
}

fn metric_for<R: ReferenceDensity + ?Sized>(
    params: &NetworkParams,
    particles: &Particles,
    reference: &R,
    config: &FlowConfig,
) -> Result<MetricTensor> {
    match config.metric_mode {
        MetricMode::Empirical => Ok(sample_metric(params, &particles.set, config.param_subset)),
        MetricMode::AnalyticGaussian => {
            if !reference.is_standard_gaussian() {
                return Err(WgfError::InvalidArgument("analytic metric mode needs a standard Gaussian reference".into()));
            }
            analytic_metric_subset(params, reference, config.param_subset)
        }
    }
}

/// Runs the projected flow with samples drawn from the reference density.
pub fn run_flow<R: ReferenceDensity + ?Sized>(
    params0: &NetworkParams,
    spec: &EnergySpec,
    reference: &R,
    config: &FlowConfig,
) -> Result<TrajectoryRecord> {
    config.validate()?;
    let samples = reference.sample(config.sample_count, config.seed)?;
    run_flow_with_samples(params0, spec, reference, config, samples)
}

/// Whether every gap between neighbouring biases of `old`, taken in the order
/// of `old`, keeps at least half its width in `new`.
fn gaps_kept(old: &NetworkParams, new: &NetworkParams) -> bool {
    let mut order: Vec<usize> = (0..old.total_neurons()).collect();
    order.sort_by(|&x, &y| old.biases[x].total_cmp(&old.biases[y]));
    order.windows(2).all(|w| {
        let before = old.biases[w[1]] - old.biases[w[0]];
        new.biases[w[1]] - new.biases[w[0]] >= 0.5 * before
    })
}

fn step_record(
    step: usize,
    dt: f64,
    params: &NetworkParams,
    eval: &Evaluation,
    condition: f64,
    rel_tol: f64,
) -> StepRecord {
    StepRecord {
        step,
        t: step as f64 * dt,
        energy: eval.energy.unwrap_or(f64::NAN),
        min_bias_gap: params.min_bias_gap(),
        condition,
        rel_tol,
        skipped_pairs: eval.gradient.skipped_pairs,
        mean: eval.mean,
        second_moment: eval.second_moment,
    }
}

/// Runs the projected flow from a given initial sample set.
pub fn run_flow_with_samples<R: ReferenceDensity + ?Sized>(
    params0: &NetworkParams,
    spec: &EnergySpec,
    reference: &R,
    config: &FlowConfig,
    samples: Vec<f64>,
) -> Result<TrajectoryRecord> {
    config.validate()?;
    let mut particles = Particles::new(samples, reference)?;
    let mut params = params0.clone();
    let mut records = Vec::new();
    let mut theta_history = Vec::new();
    let aborted = |step: usize| move |e: WgfError| WgfError::Aborted { step, source: Box::new(e) };
    let mut eval = particles.evaluate(&params, spec, reference, true).map_err(aborted(0))?;
    let mut escalated_steps = 0;
    for step in 0..config.steps {
        if let Some(s) = config.theta_stride {
            if step % s == 0 {
                theta_history.push((step, params.clone()));
            }
        }
        let factor = PinvFactor::new(&metric_for(&params, &particles, reference, config).map_err(aborted(step))?);
        let fresh = if config.resample {
            let z = reference.sample(config.sample_count, config.seed.wrapping_add(step as u64 + 1)).map_err(aborted(step))?;
            Some(Particles::new(z, reference).map_err(aborted(step))?)
        } else {
            None
        };
        let record_next = (step + 1) % config.record_stride == 0 || step + 1 == config.steps;
        let mut tol = config.pinv_rel_tol;
        let (next, next_eval, condition) = loop {
            let (next, condition) =
                factored_step(&params, &eval.gradient.values, &factor, config.dt, tol, config.param_subset)
                    .map_err(aborted(step))?;
            if next.coords().iter().any(|x| !x.is_finite()) {
                return Err(aborted(step)(WgfError::InvalidArgument("non-finite parameters".into())));
            }
            let can_escalate = tol * CUTOFF_ESCALATION <= config.max_rel_tol * (1.0 + 1e-9);
            if can_escalate && spec.has_internal() && !gaps_kept(&params, &next) {
                tol *= CUTOFF_ESCALATION;
                continue;
            }
            match fresh.as_ref().unwrap_or(&particles).evaluate(&next, spec, reference, record_next) {
                Ok(e) => break (next, e, condition),
                Err(_) if can_escalate => tol *= CUTOFF_ESCALATION,
                Err(e) => return Err(aborted(step + 1)(e)),
            }
        };
        if tol > config.pinv_rel_tol {
            escalated_steps += 1;
        }
        if step % config.record_stride == 0 {
            records.push(step_record(step, config.dt, &params, &eval, condition, tol));
        }
        params = next;
        eval = next_eval;
        if let Some(p) = fresh {
            particles = p;
        }
    }
    records.push(step_record(config.steps, config.dt, &params, &eval, f64::NAN, f64::NAN));
    if let Some(s) = config.theta_stride {
        if config.steps % s == 0 {
            theta_history.push((config.steps, params.clone()));
        }
    }
    Ok(TrajectoryRecord {
        records,
        theta_history,
        final_params: params,
        final_time: config.steps as f64 * config.dt,
        escalated_steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhsForm {
    /// Node values of `V'` combined by the trapezoid rule.
    Trapezoid,
    /// Exact interval averages of `V'` by quadrature.
    Integral,
}

fn cdf_gaps<R: ReferenceDensity + ?Sized>(b: &[f64], reference: &R) -> Result<Vec<f64>> {
    let n = b.len();
    (0..n)
        .map(|i| {
            let hi = if i + 1 < n { b[i + 1] } else { f64::INFINITY };
            let g = reference.mass(b[i], hi);
            if g > CDF_GAP_FLOOR {
                Ok(g)
            } else {
                Err(WgfError::CdfGapUnderflow { index: i, gap: g, floor: CDF_GAP_FLOOR })
            }
        })
        .collect()
}

/// Bias velocity `ḃ` of the projected potential flow of a one-sided network.
///
/// With `avg_i` the `p_r`-average of `V'(f)` on `[b_i, b_{i+1})`,
/// `ḃ_1 = avg_1 / a_1` and `ḃ_i = (avg_i − avg_{i−1}) / a_i`; the last
/// interval is `[b_N, ∞)`. The trapezoid form replaces each finite-interval
/// average by the mean of its endpoint values; the tail average is always
/// computed by quadrature.
pub fn potential_flow_rhs<R: ReferenceDensity + ?Sized>(
    params: &NetworkParams,
    dv: &dyn Fn(f64) -> f64,
    reference: &R,
    form: RhsForm,
) -> Result<Vec<f64>> {
    params.check_one_sided_monotone()?;
    let n = params.total_neurons();
    let a = params.effective_weights();
    let b = &params.biases;
    let gaps = cdf_gaps(b, reference)?;
    let node_dv: Vec<f64> = b.iter().map(|&z| dv(params.forward(z))).collect();
    let mut avg = Vec::with_capacity(n);
    for i in 0..n {
        let last = i + 1 == n;
        let v = if !last && form == RhsForm::Trapezoid {
            0.5 * (node_dv[i] + node_dv[i + 1])
        } else {
            let hi = if last { f64::INFINITY } else { b[i + 1] };
            integrate_piecewise(reference, |z| dv(params.forward(z)), b[i], hi, &[])? / gaps[i]
        };
        avg.push(v);
    }
    Ok((0..n)
        .map(|i| if i == 0 { avg[0] / a[0] } else { (avg[i] - avg[i - 1]) / a[i] })
        .collect())
}

/// Bias velocity of the projected entropy (heat) flow of a one-sided network.
///
/// Interior rows combine `L_i p_r(b_i)` with `L_i = log(S_{i−1}/S_i)` and
/// `S_i = a_1 + … + a_i`. The first row uses the boundary term
/// `g_1 = p_r(b_1)(log F(b_1) + 1 + log a_1)`, which also stands in for the
/// undefined `L_1 p_r(b_1)` in the second row as `−g_1`.
pub fn heat_flow_rhs<R: ReferenceDensity + ?Sized>(params: &NetworkParams, reference: &R) -> Result<Vec<f64>> {
    params.check_one_sided_monotone()?;
    let n = params.total_neurons();
    if n < 2 {
        return Err(WgfError::InvalidArgument("heat flow needs at least two neurons".into()));
    }
    let a = params.effective_weights();
    let b = &params.biases;
    let gaps = cdf_gaps(b, reference)?;
    let mut s = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &ai in &a {
        acc += ai;
        s.push(acc);
    }
    let p: Vec<f64> = b.iter().map(|&z| reference.pdf(z)).collect();
    let f1 = reference.cdf(b[0]);
    if !(f1 > CDF_GAP_FLOOR) {
        return Err(WgfError::CdfGapUnderflow { index: 0, gap: f1, floor: CDF_GAP_FLOOR });
    }
    let g1 = p[0] * (f1.ln() + 1.0 + a[0].ln());
    // lp[i] = L_i p_r(b_i); the first entry is replaced by −g_1
    let mut lp = vec![-g1];
    for i in 1..n {
        lp.push((s[i - 1] / s[i]).ln() * p[i]);
    }
    let mut out = vec![0.0; n];
    out[0] = -(g1 / a[0] + lp[1] / a[1]) / (a[0] * gaps[0]);
    for i in 1..n - 1 {
        out[i] = (lp[i] / (a[i] * a[i]) - lp[i - 1] / (a[i] * a[i - 1])) / gaps[i - 1]
            + (lp[i] / (a[i] * a[i]) - lp[i + 1] / (a[i] * a[i + 1])) / gaps[i];
    }
    let l = n - 1;
    out[l] = lp[l] / (a[l] * a[l] * gaps[l])
        - (lp[l - 1] / (a[l] * a[l - 1]) - lp[l] / (a[l] * a[l])) / gaps[l - 1];
    Ok(out)
}

/// Entropy bias gradient of a one-sided network: interior nodes
/// `−p_r(b_i) log(S_{i−1}/S_i)`, first node `p_r(b_1)(log F(b_1) + 1 + log a_1)`.
pub fn one_sided_entropy_bias_gradient<R: ReferenceDensity + ?Sized>(
    params: &NetworkParams,
    reference: &R,
) -> Result<Vec<f64>> {
    params.check_one_sided_monotone()?;
    let a = params.effective_weights();
    let b = &params.biases;
    let mut out = Vec::with_capacity(a.len());
    let mut prev = 0.0;
    for i in 0..a.len() {
        let cur = prev + a[i];
        let p = reference.pdf(b[i]);
        out.push(if i == 0 {
            p * (reference.cdf(b[0]).ln() + 1.0 + a[0].ln())
        } else {
            -p * (prev / cur).ln()
        });
        prev = cur;
    }
    Ok(out)
}

/// Piecewise-constant map velocity `∂_t f = Σ ḃ_i ∂_{b_i} f`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseVelocity {
    /// Sorted node positions.
    pub breakpoints: Vec<f64>,
    /// `velocities[k]` holds on `(breakpoints[k−1], breakpoints[k])`.
    pub velocities: Vec<f64>,
}

impl PiecewiseVelocity {
    pub fn eval(&self, z: f64) -> f64 {
        self.velocities[self.breakpoints.partition_point(|&b| b < z)]
    }
}

pub fn map_velocity(params: &NetworkParams, bdot: &[f64]) -> Result<PiecewiseVelocity> {
    let k = params.total_neurons();
    if bdot.len() != k {
        return Err(WgfError::DimensionMismatch { expected: k, got: bdot.len() });
    }
    // Far left only backward neurons contribute `a_i ḃ_i`. Passing a node
    // switches off a backward one or switches on a forward one, and both
    // change the velocity by `−a_i ḃ_i`.
    let mut v = 0.0;
    for i in 0..k {
        if !params.is_forward(i) {
            v += params.a(i) * bdot[i];
        }
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| params.biases[x].total_cmp(&params.biases[y]));
    let mut breakpoints = Vec::with_capacity(k);
    let mut velocities = vec![v];
    for i in order {
        v -= params.a(i) * bdot[i];
        breakpoints.push(params.biases[i]);
        velocities.push(v);
    }
    Ok(PiecewiseVelocity { breakpoints, velocities })
}
