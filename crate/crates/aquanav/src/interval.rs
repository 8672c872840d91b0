//! Closed real intervals and axis-aligned boxes, the currency of the verifier.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Input("interval bounds must be finite".into()));
        }
        if lo > hi {
            return Err(Error::Input(format!("interval lower bound {} exceeds upper {}", lo, hi)));
        }
        Ok(Interval { lo, hi })
    }

    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        (self.lo + self.hi) / 2.0
    }

    /// Intersection of two sound enclosures of the same quantity.
    pub fn intersect(&self, other: &Interval) -> Interval {
        Interval { lo: self.lo.max(other.lo), hi: self.hi.min(other.hi) }
    }

    pub fn is_subset_of(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }
}

/// Per-dimension closed intervals: both verification input areas and counterexample regions.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalBox {
    pub dims: Vec<Interval>,
}

impl IntervalBox {
    pub fn new(dims: Vec<Interval>) -> Self {
        IntervalBox { dims }
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().map(Interval::width).product()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim() && self.dims.iter().zip(point).all(|(iv, v)| iv.contains(*v))
    }

    pub fn center(&self) -> Vec<f64> {
        self.dims.iter().map(Interval::midpoint).collect()
    }

    /// Bisect along the widest dimension, widths normalized by `domain_widths`.
    /// Children partition the parent exactly. A zero-volume box is atomic and
    /// returned unchanged.
    pub fn bisect(&self, domain_widths: &[f64]) -> Vec<IntervalBox> {
        let mut best_dim = None;
        let mut best_width = 0.0;
        for (i, iv) in self.dims.iter().enumerate() {
            let norm = if domain_widths[i] > 0.0 { iv.width() / domain_widths[i] } else { 0.0 };
            if norm > best_width {
                best_width = norm;
                best_dim = Some(i);
            }
        }
        let Some(d) = best_dim else {
            return vec![self.clone()];
        };
        let mid = self.dims[d].midpoint();
        if mid <= self.dims[d].lo || mid >= self.dims[d].hi {
            // interval too narrow to split in floating point
            return vec![self.clone()];
        }
        let mut left = self.clone();
        let mut right = self.clone();
        left.dims[d].hi = mid;
        right.dims[d].lo = mid;
        vec![left, right]
    }

    /// Lexicographic order on (lo, hi) per dimension; canonical sort key for reports.
    pub fn cmp_lex(&self, other: &IntervalBox) -> std::cmp::Ordering {
        for (a, b) in self.dims.iter().zip(&other.dims) {
            match a.lo.partial_cmp(&b.lo).unwrap().then(a.hi.partial_cmp(&b.hi).unwrap()) {
                std::cmp::Ordering::Equal => continue,
                ord => return ord,
            }
        }
        self.dim().cmp(&other.dim())
    }
}
