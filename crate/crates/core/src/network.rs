//! Two-layer ReLU pushforward maps.
//!
//! A symmetric network has `N` forward neurons `a_i σ(z − b_i)` followed by `N`
//! backward neurons `a_i σ(b_i − z)`. A one-sided network has only forward
//! neurons. Parameters are stored as raw weights `ā` with `a = ā / β`.
//! The parameter vector is ordered `(ā_1..ā_K, b_1..b_K)` with `K` the total
//! neuron count.

use crate::error::{Result, WgfError};

/// Which parameter coordinates a metric or update acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subset {
    AOnly,
    BOnly,
    Both,
}

impl Subset {
    /// Indices into the full `(ā, b)` coordinate vector of length `2k`.
    pub fn indices(self, k: usize) -> std::ops::Range<usize> {
        match self {
            Subset::AOnly => 0..k,
            Subset::BOnly => k..2 * k,
            Subset::Both => 0..2 * k,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Subset::AOnly => "a",
            Subset::BOnly => "b",
            Subset::Both => "both",
        }
    }
}

impl std::str::FromStr for Subset {
    type Err = WgfError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" | "a_only" => Ok(Subset::AOnly),
            "b" | "b_only" => Ok(Subset::BOnly),
            "both" => Ok(Subset::Both),
            _ => Err(WgfError::InvalidArgument(format!("unknown subset {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// `N` forward then `N` backward neurons.
    Symmetric,
    /// `N` forward neurons only.
    OneSided,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub neuron_count: usize,
    pub layout: Layout,
    /// Raw weights `ā`; the effective slope of neuron `i` is `ā_i / scale`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub scale: f64,
    pub init_offset: f64,
}

/// Piecewise-linear form of `f`: on `(nodes[k-1], nodes[k])` the map is
/// `intercepts[k] + slopes[k] * z`, with `nodes[-1] = -inf` and
/// `nodes[len] = +inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    pub nodes: Vec<f64>,
    pub slopes: Vec<f64>,
    pub intercepts: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn segment(&self, z: f64) -> usize {
        self.nodes.partition_point(|&b| b < z)
    }
    pub fn eval(&self, z: f64) -> f64 {
        let k = self.segment(z);
        self.intercepts[k] + self.slopes[k] * z
    }
}

impl NetworkParams {
    /// Identity initialization of the symmetric network.
    pub fn init_identity(n: usize, bound: f64, eps: f64, beta: f64) -> Result<Self> {
        if n < 2 {
            return Err(WgfError::InvalidArgument(format!("N must be at least 2, got {n}")));
        }
        for (name, v) in [("B", bound), ("eps", eps), ("beta", beta)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(WgfError::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        let grid = linspace(-bound, bound, n);
        let mut weights = vec![beta / n as f64; n];
        weights.extend(std::iter::repeat_n(-beta / n as f64, n));
        let mut biases = grid.clone();
        biases.extend(grid.iter().map(|b| b + eps));
        Ok(Self {
            neuron_count: n,
            layout: Layout::Symmetric,
            weights,
            biases,
            scale: beta,
            init_offset: eps,
        })
    }

    /// One-sided network with effective weights `a` (scale 1).
    pub fn one_sided(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(WgfError::DimensionMismatch { expected: a.len(), got: b.len() });
        }
        if a.is_empty() {
            return Err(WgfError::InvalidArgument("empty network".into()));
        }
        Ok(Self {
            neuron_count: a.len(),
            layout: Layout::OneSided,
            weights: a,
            biases: b,
            scale: 1.0,
            init_offset: 0.0,
        })
    }

    /// Symmetric network from raw weights and biases of length `2N`.
    pub fn symmetric(weights: Vec<f64>, biases: Vec<f64>, beta: f64, eps: f64) -> Result<Self> {
        if weights.len() != biases.len() {
            return Err(WgfError::DimensionMismatch { expected: weights.len(), got: biases.len() });
        }
        if weights.len() < 2 || weights.len() % 2 != 0 {
            return Err(WgfError::InvalidArgument("symmetric network needs 2N neurons".into()));
        }
        if !(beta > 0.0) {
            return Err(WgfError::InvalidArgument(format!("beta must be positive, got {beta}")));
        }
        Ok(Self {
            neuron_count: weights.len() / 2,
            layout: Layout::Symmetric,
            weights,
            biases,
            scale: beta,
            init_offset: eps,
        })
    }

    /// Total number of neurons `K`.
    pub fn total_neurons(&self) -> usize {
        self.weights.len()
    }

    /// Length of the full parameter vector, `2K`.
    pub fn dim(&self) -> usize {
        2 * self.total_neurons()
    }

    pub fn is_forward(&self, i: usize) -> bool {
        match self.layout {
            Layout::OneSided => true,
            Layout::Symmetric => i < self.neuron_count,
        }
    }

    /// Effective slope `a_i = ā_i / β`.
    pub fn a(&self, i: usize) -> f64 {
        self.weights[i] / self.scale
    }

    pub fn effective_weights(&self) -> Vec<f64> {
        (0..self.total_neurons()).map(|i| self.a(i)).collect()
    }

    pub fn forward(&self, z: f64) -> f64 {
        let mut s = 0.0;
        for i in 0..self.total_neurons() {
            let b = self.biases[i];
            let r = if self.is_forward(i) { z - b } else { b - z };
            if r > 0.0 {
                s += self.a(i) * r;
            }
        }
        s
    }

    /// Slope `f'(z)`. At a node, forward neurons use the left limit and
    /// backward neurons the right limit.
    pub fn z_derivative(&self, z: f64) -> f64 {
        let mut s = 0.0;
        for i in 0..self.total_neurons() {
            let b = self.biases[i];
            if self.is_forward(i) {
                if z > b {
                    s += self.a(i);
                }
            } else if z < b {
                s -= self.a(i);
            }
        }
        s
    }

    /// `∂f/∂ā` followed by `∂f/∂b`.
    pub fn param_jacobian(&self, z: f64) -> Vec<f64> {
        let k = self.total_neurons();
        let mut j = vec![0.0; 2 * k];
        for i in 0..k {
            let b = self.biases[i];
            if self.is_forward(i) {
                if z > b {
                    j[i] = (z - b) / self.scale;
                    j[k + i] = -self.a(i);
                }
            } else if z < b {
                j[i] = (b - z) / self.scale;
                j[k + i] = self.a(i);
            }
        }
        j
    }

    /// Every Jacobian coordinate is `c0 + c1 z` on one half-line.
    pub fn jacobian_basis(&self) -> Vec<HalfLine> {
        let k = self.total_neurons();
        let mut out = Vec::with_capacity(2 * k);
        for i in 0..k {
            let b = self.biases[i];
            out.push(if self.is_forward(i) {
                HalfLine { c0: -b / self.scale, c1: 1.0 / self.scale, bias: b, right: true }
            } else {
                HalfLine { c0: b / self.scale, c1: -1.0 / self.scale, bias: b, right: false }
            });
        }
        for i in 0..k {
            let b = self.biases[i];
            out.push(if self.is_forward(i) {
                HalfLine { c0: -self.a(i), c1: 0.0, bias: b, right: true }
            } else {
                HalfLine { c0: self.a(i), c1: 0.0, bias: b, right: false }
            });
        }
        out
    }

    pub fn piecewise(&self) -> PiecewiseLinear {
        // Far left every backward neuron is active. Crossing a node of either
        // kind adds `a_i` to the slope and `-a_i b_i` to the intercept.
        let k = self.total_neurons();
        let mut slope = 0.0;
        let mut icpt = 0.0;
        for i in 0..k {
            if !self.is_forward(i) {
                slope -= self.a(i);
                icpt += self.a(i) * self.biases[i];
            }
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&x, &y| self.biases[x].total_cmp(&self.biases[y]));
        let mut nodes = Vec::with_capacity(k);
        let mut slopes = vec![slope];
        let mut intercepts = vec![icpt];
        for &i in &order {
            slope += self.a(i);
            icpt -= self.a(i) * self.biases[i];
            nodes.push(self.biases[i]);
            slopes.push(slope);
            intercepts.push(icpt);
        }
        PiecewiseLinear { nodes, slopes, intercepts }
    }

    /// Evaluates `f` and `f'` on ascending samples in one sweep.
    pub fn eval_sorted(&self, sorted: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = self.total_neurons();
        let mut fwd: Vec<usize> = (0..k).filter(|&i| self.is_forward(i)).collect();
        let mut bwd: Vec<usize> = (0..k).filter(|&i| !self.is_forward(i)).collect();
        fwd.sort_by(|&x, &y| self.biases[x].total_cmp(&self.biases[y]));
        bwd.sort_by(|&x, &y| self.biases[x].total_cmp(&self.biases[y]));
        let mut slope = 0.0;
        let mut icpt = 0.0;
        for &i in &bwd {
            slope -= self.a(i);
            icpt += self.a(i) * self.biases[i];
        }
        let (mut pf, mut pb) = (0, 0);
        let mut f = Vec::with_capacity(sorted.len());
        let mut d = Vec::with_capacity(sorted.len());
        for &z in sorted {
            while pf < fwd.len() && self.biases[fwd[pf]] < z {
                let i = fwd[pf];
                slope += self.a(i);
                icpt -= self.a(i) * self.biases[i];
                pf += 1;
            }
            while pb < bwd.len() && self.biases[bwd[pb]] <= z {
                let i = bwd[pb];
                slope += self.a(i);
                icpt -= self.a(i) * self.biases[i];
                pb += 1;
            }
            f.push(icpt + slope * z);
            d.push(slope);
        }
        (f, d)
    }

    /// Smallest gap between consecutive sorted biases.
    pub fn min_bias_gap(&self) -> f64 {
        let mut b = self.biases.clone();
        b.sort_by(f64::total_cmp);
        b.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    /// Checks the monotone one-sided regime used by the closed-form paths.
    pub fn check_one_sided_monotone(&self) -> Result<()> {
        if self.layout != Layout::OneSided {
            return Err(WgfError::InvalidArgument("operation needs a one-sided network".into()));
        }
        for i in 0..self.total_neurons() {
            let a = self.a(i);
            if !(a > 0.0) {
                return Err(WgfError::NonPositiveWeight { index: i, value: a });
            }
            if i > 0 && !(self.biases[i] > self.biases[i - 1]) {
                return Err(WgfError::UnsortedBiases { index: i });
            }
        }
        Ok(())
    }

    /// Returns a copy with the given full-length coordinate vector added.
    pub fn offset_by(&self, delta: &[f64]) -> Self {
        let k = self.total_neurons();
        let mut out = self.clone();
        for i in 0..k {
            out.weights[i] += delta[i];
            out.biases[i] += delta[k + i];
        }
        out
    }

    /// Flattened `(ā, b)`.
    pub fn coords(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        v.extend_from_slice(&self.biases);
        v
    }
}

/// `c0 + c1 z` on `(bias, ∞)` if `right`, else on `(−∞, bias)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfLine {
    pub c0: f64,
    pub c1: f64,
    pub bias: f64,
    pub right: bool,
}

impl HalfLine {
    pub fn bounds(&self) -> (f64, f64) {
        if self.right {
            (self.bias, f64::INFINITY)
        } else {
            (f64::NEG_INFINITY, self.bias)
        }
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let h = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + h * i as f64 })
        .collect()
}
