//! Weighted isotonic regression by pool-adjacent-violators.

use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};

/// Non-decreasing, right-continuous step function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicFit {
    /// Distinct feature values, ascending.
    pub breakpoints: Vec<f64>,
    /// Fitted level at each breakpoint.
    pub levels: Vec<f64>,
    pub clamped: bool,
}

impl IsotonicFit {
    pub fn predict(&self, t: f64) -> f64 {
        if self.levels.is_empty() {
            return 0.0;
        }
        let idx = self.breakpoints.partition_point(|&b| b <= t);
        let v = self.levels[idx.saturating_sub(1)];
        if self.clamped {
            v.clamp(0.0, 1.0)
        } else {
            v
        }
    }

    /// `Σ w (y − f(t))²`.
    pub fn objective(&self, points: &[(f64, f64, f64)]) -> f64 {
        points.iter().map(|&(t, y, w)| w * (y - self.predict(t)).powi(2)).sum()
    }
}

/// Weighted PAVA over `(t, y, w)` points; ties in `t` are pooled first.
pub fn fit_weighted_isotonic(points: &[(f64, f64, f64)], clamp: bool) -> Result<IsotonicFit> {
    if points.iter().any(|&(t, y, w)| !(w > 0.0) || !w.is_finite() || !t.is_finite() || !y.is_finite()) {
        return Err(OpeError::invalid("isotonic fit needs finite points with positive weights"));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // (breakpoint, weighted mean, total weight)
    let mut tied: Vec<(f64, f64, f64)> = Vec::with_capacity(sorted.len());
    for (t, y, w) in sorted {
        match tied.last_mut() {
            Some(last) if last.0 == t => {
                let total = last.2 + w;
                last.1 = (last.1 * last.2 + y * w) / total;
                last.2 = total;
            }
            _ => tied.push((t, y, w)),
        }
    }

    // blocks: (level, weight, number of breakpoints)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(tied.len());
    for &(_, y, w) in &tied {
        blocks.push((y, w, 1));
        while blocks.len() > 1 {
            let (l2, w2, c2) = blocks[blocks.len() - 1];
            let (l1, w1, c1) = blocks[blocks.len() - 2];
            if l1 <= l2 {
                break;
            }
            blocks.pop();
            let total = w1 + w2;
            *blocks.last_mut().unwrap() = ((l1 * w1 + l2 * w2) / total, total, c1 + c2);
        }
    }
    let levels = blocks.iter().flat_map(|&(l, _, c)| std::iter::repeat_n(l, c)).collect();
    Ok(IsotonicFit { breakpoints: tied.iter().map(|p| p.0).collect(), levels, clamped: clamp })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_point_pool() {
        let fit = fit_weighted_isotonic(&[(0.0, 3.0, 1.0), (1.0, 1.0, 1.0), (2.0, 2.0, 1.0)], false).unwrap();
        assert_eq!(fit.levels, vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn monotone_input_unchanged() {
        let pts = [(0.1, -1.0, 2.0), (0.4, 0.5, 1.0), (0.9, 3.0, 0.5)];
        let fit = fit_weighted_isotonic(&pts, false).unwrap();
        assert_eq!(fit.levels, vec![-1.0, 0.5, 3.0]);
        let fit = fit_weighted_isotonic(&[(0.0, 0.0, 1e6), (1.0, 10.0, 1.0)], false).unwrap();
        assert_eq!(fit.levels, vec![0.0, 10.0]);
    }

    #[test]
    fn right_continuous_steps_and_clamp() {
        let fit = fit_weighted_isotonic(&[(0.2, -0.5, 1.0), (0.6, 1.5, 1.0)], false).unwrap();
        assert_eq!(fit.predict(0.0), -0.5);
        assert_eq!(fit.predict(0.59), -0.5);
        assert_eq!(fit.predict(0.6), 1.5);
        let clamped = fit_weighted_isotonic(&[(0.2, -0.5, 1.0), (0.6, 1.5, 1.0)], true).unwrap();
        assert_eq!(clamped.predict(0.0), 0.0);
        assert_eq!(clamped.predict(0.9), 1.0);
    }

    #[test]
    fn ties_pooled() {
        let fit = fit_weighted_isotonic(&[(0.5, 0.0, 1.0), (0.5, 3.0, 2.0)], false).unwrap();
        assert_eq!(fit.breakpoints, vec![0.5]);
        assert!((fit.levels[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_zero_weight() {
        assert!(fit_weighted_isotonic(&[(0.0, 1.0, 0.0)], false).is_err());
    }
}
