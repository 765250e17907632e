//! Frozen, sorted sample sets with prefix sums for half-line queries.

use crate::error::{Result, WgfError};

#[derive(Debug, Clone)]
pub struct SampleSet {
    sorted: Vec<f64>,
    p0: Vec<f64>,
    p1: Vec<f64>,
    p2: Vec<f64>,
}

impl SampleSet {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(WgfError::EmptySamples);
        }
        samples.sort_by(f64::total_cmp);
        let n = samples.len();
        let (mut p0, mut p1, mut p2) = (Vec::with_capacity(n + 1), Vec::with_capacity(n + 1), Vec::with_capacity(n + 1));
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        p0.push(0.0);
        p1.push(0.0);
        p2.push(0.0);
        for &z in &samples {
            s0 += 1.0;
            s1 += z;
            s2 += z * z;
            p0.push(s0);
            p1.push(s1);
            p2.push(s2);
        }
        Ok(Self { sorted: samples, p0, p1, p2 })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    /// Index range of samples strictly inside `(lo, hi)`.
    pub fn open_range(&self, lo: f64, hi: f64) -> (usize, usize) {
        let i = if lo == f64::NEG_INFINITY { 0 } else { self.sorted.partition_point(|&x| x <= lo) };
        let j = if hi == f64::INFINITY { self.len() } else { self.sorted.partition_point(|&x| x < hi) };
        (i, j.max(i))
    }

    /// Sample averages of `1, z, z²` over `(lo, hi)`, divided by the total count.
    pub fn moments(&self, lo: f64, hi: f64) -> [f64; 3] {
        if !(lo < hi) {
            return [0.0; 3];
        }
        let (i, j) = self.open_range(lo, hi);
        let m = self.len() as f64;
        [
            (self.p0[j] - self.p0[i]) / m,
            (self.p1[j] - self.p1[i]) / m,
            (self.p2[j] - self.p2[i]) / m,
        ]
    }

    /// Prefix sums of `w` and `w z` for per-step weights aligned with the sorted order.
    pub fn weighted(&self, w: &[f64]) -> WeightedPrefix {
        let n = self.len();
        let mut s0 = Vec::with_capacity(n + 1);
        let mut s1 = Vec::with_capacity(n + 1);
        let (mut a, mut b) = (0.0, 0.0);
        s0.push(0.0);
        s1.push(0.0);
        for (wi, zi) in w.iter().zip(&self.sorted) {
            a += wi;
            b += wi * zi;
            s0.push(a);
            s1.push(b);
        }
        WeightedPrefix { s0, s1 }
    }
}

#[derive(Debug, Clone)]
pub struct WeightedPrefix {
    s0: Vec<f64>,
    s1: Vec<f64>,
}

impl WeightedPrefix {
    /// `(Σ w, Σ w z)` over sample indices `i..j`.
    pub fn sum(&self, i: usize, j: usize) -> (f64, f64) {
        (self.s0[j] - self.s0[i], self.s1[j] - self.s1[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn open_ranges_exclude_endpoints() {
        let s = SampleSet::new(vec![3.0, 1.0, 2.0, 2.0, 0.0]).unwrap();
        assert_eq!(s.values(), &[0.0, 1.0, 2.0, 2.0, 3.0]);
        assert_eq!(s.open_range(1.0, 3.0), (2, 4));
        assert_eq!(s.open_range(f64::NEG_INFINITY, 2.0), (0, 2));
        assert_eq!(s.open_range(2.0, f64::INFINITY), (4, 5));
        let m = s.moments(0.5, 2.5);
        assert_eq!(m, [3.0 / 5.0, 5.0 / 5.0, 9.0 / 5.0]);
        assert!(SampleSet::new(vec![]).is_err());
    }

    #[test]
    fn weighted_sums() {
        let s = SampleSet::new(vec![1.0, 2.0, 3.0]).unwrap();
        let w = s.weighted(&[1.0, 10.0, 100.0]);
        assert_eq!(w.sum(1, 3), (110.0, 320.0));
    }
}
