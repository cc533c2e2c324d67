//! Uniform B-spline bases on an extended knot vector.
//!
//! A grid of `G` intervals over `[lo, hi]` with spline order `k` uses
//! `G + 2k + 1` uniformly spaced knots (the grid extended by `k` intervals
//! on each side) and carries `G + k` basis functions. Inside `[lo, hi]`
//! the basis is a partition of unity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineGrid {
    pub lo: f64,
    pub hi: f64,
    pub intervals: usize,
    pub order: usize,
    knots: Vec<f64>,
}

impl SplineGrid {
    pub fn uniform(lo: f64, hi: f64, intervals: usize, order: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) || intervals == 0 {
            return Err(Error::Config(format!(
                "spline grid needs lo < hi and at least one interval, got [{lo}, {hi}] with {intervals}"
            )));
        }
        let h = (hi - lo) / intervals as f64;
        let knots = (0..intervals + 2 * order + 1)
            .map(|j| lo + (j as f64 - order as f64) * h)
            .collect();
        Ok(SplineGrid {
            lo,
            hi,
            intervals,
            order,
            knots,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn num_basis(&self) -> usize {
        self.intervals + self.order
    }

    /// Clamps `x` into the grid; the flag reports whether clamping happened.
    pub fn clamp(&self, x: f64) -> (f64, bool) {
        if x < self.lo {
            (self.lo, true)
        } else if x > self.hi {
            (self.hi, true)
        } else {
            (x, false)
        }
    }

    /// Degree-0 indicator index for `x` (half-open intervals, `hi` folded into
    /// the last in-grid interval).
    fn span(&self, x: f64) -> usize {
        let k = self.order;
        let h = (self.hi - self.lo) / self.intervals as f64;
        let j = ((x - self.lo) / h).floor() as isize;
        let j = j.clamp(0, self.intervals as isize - 1) as usize;
        j + k
    }

    /// Cox-de Boor table up to `degree`; returns the `n_knots - 1 - degree`
    /// basis values of that degree at `x` (which must lie inside the grid).
    fn basis_of_degree(&self, x: f64, degree: usize) -> Vec<f64> {
        let t = &self.knots;
        let m = t.len() - 1;
        let mut b = vec![0.0; m];
        b[self.span(x)] = 1.0;
        for d in 1..=degree {
            let mut next = vec![0.0; m - d];
            for (j, out) in next.iter_mut().enumerate() {
                let left = t[j + d] - t[j];
                let right = t[j + d + 1] - t[j + 1];
                let mut v = 0.0;
                if b[j] != 0.0 {
                    v += (x - t[j]) / left * b[j];
                }
                if b[j + 1] != 0.0 {
                    v += (t[j + d + 1] - x) / right * b[j + 1];
                }
                *out = v;
            }
            b = next;
        }
        b
    }

    /// Values of all `G + k` basis functions at `x` (clamped into the grid).
    pub fn basis(&self, x: f64) -> Vec<f64> {
        let (x, _) = self.clamp(x);
        self.basis_of_degree(x, self.order)
    }

    /// Derivatives of all basis functions at `x`. Zero outside the grid,
    /// where the input is clamped.
    pub fn basis_derivative(&self, x: f64) -> Vec<f64> {
        let n = self.num_basis();
        let (xc, clamped) = self.clamp(x);
        if clamped || self.order == 0 {
            return vec![0.0; n];
        }
        let k = self.order;
        let t = &self.knots;
        let lower = self.basis_of_degree(xc, k - 1);
        (0..n)
            .map(|j| {
                let kf = k as f64;
                kf / (t[j + k] - t[j]) * lower[j] - kf / (t[j + k + 1] - t[j + 1]) * lower[j + 1]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_of_unity_inside_grid() {
        for order in 0..=4 {
            let g = SplineGrid::uniform(-3.0, 3.0, 8, order).unwrap();
            for i in 0..=600 {
                let x = -3.0 + 6.0 * i as f64 / 600.0;
                let s: f64 = g.basis(x).iter().sum();
                assert!((s - 1.0).abs() < 1e-12, "order {order} x {x} sum {s}");
            }
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let g = SplineGrid::uniform(-1.0, 2.0, 5, 3).unwrap();
        for &x in &[-0.83, 0.1234, 0.77, 1.91] {
            let d = g.basis_derivative(x);
            let h = 1e-6;
            let p = g.basis(x + h);
            let m = g.basis(x - h);
            for j in 0..g.num_basis() {
                let fd = (p[j] - m[j]) / (2.0 * h);
                assert!((fd - d[j]).abs() < 1e-6, "basis {j} at {x}: {fd} vs {}", d[j]);
            }
        }
    }

    #[test]
    fn derivatives_sum_to_zero() {
        let g = SplineGrid::uniform(-3.0, 3.0, 8, 3).unwrap();
        let s: f64 = g.basis_derivative(0.4).iter().sum();
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn degenerate_grid_rejected() {
        assert!(SplineGrid::uniform(1.0, 1.0, 4, 3).is_err());
        assert!(SplineGrid::uniform(0.0, 1.0, 0, 3).is_err());
    }
}
