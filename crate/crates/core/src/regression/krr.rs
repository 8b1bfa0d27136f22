//! Weighted kernel ridge regression with the first-order Sobolev kernel.
//!
//! The estimate minimises
//!
//! ```text
//!   Σ_i w_i (y_i − f(x_i))² + λ ‖f‖²_H,     K(x, x') = min(x, x'),
//! ```
//!
//! over the RKHS `H = { f : f(0) = 0, f' ∈ L² }` with `‖f‖²_H = ∫ f'²`.
//! By the representer theorem `f = Σ_j α_j K(·, x_j)`, and substituting into
//! the objective gives `J(α) = (y − Kα)ᵀ W (y − Kα) + λ αᵀ K α`. Setting the
//! gradient to zero yields `K [ (W K + λ I) α − W y ] = 0`, so any `α` with
//!
//! ```text
//!   (W K + λ I) α = W y
//! ```
//!
//! is a minimiser. For strictly positive weights this is equivalent to the
//! symmetric positive definite system `(K + λ W⁻¹) α = y`, which is what the
//! dense solver factorises.
//!
//! For this kernel the minimiser is also the piecewise-linear interpolant of
//! its values at the sorted design points, flat beyond the last point, and
//! the values solve a tridiagonal system `(W + λ L) f = W y` where `L` is the
//! path Laplacian with conductances `1 / (x_k − x_{k−1})` anchored at 0. The
//! spline solver uses that form in `O(m)` time; both solvers return the same
//! representer coefficients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};

/// Condition number beyond which the dense solver switches to least squares.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedPoint {
    pub x: f64,
    pub y: f64,
    pub w: f64,
}

impl WeightedPoint {
    pub fn new(x: f64, y: f64, w: f64) -> Self {
        Self { x, y, w }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    /// `K(x, x') = min(x, x')` on `[0, ∞)`.
    #[default]
    Sobolev1,
}

impl Kernel {
    #[inline]
    pub fn eval(self, x: f64, z: f64) -> f64 {
        match self {
            Kernel::Sobolev1 => x.min(z),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KrrSolver {
    /// Dense representer system with Cholesky, least-squares fallback.
    Dense,
    /// Tridiagonal spline form, linear time.
    #[default]
    Spline,
}

/// A fitted kernel expansion `f = Σ_j α_j K(·, u_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrrFit {
    pub kernel: Kernel,
    pub lambda: f64,
    /// Anchor points, sorted ascending.
    pub anchors: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Training weights of the points that entered the fit.
    pub weights: Vec<f64>,
    // prefix[k] = Σ_{j<k} α_j u_j, tail[k] = Σ_{j≥k} α_j
    prefix: Vec<f64>,
    tail: Vec<f64>,
}

impl KrrFit {
    fn from_expansion(kernel: Kernel, lambda: f64, mut pairs: Vec<(f64, f64)>, weights: Vec<f64>) -> Self {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let anchors: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let alpha: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let m = anchors.len();
        let mut prefix = vec![0.0; m + 1];
        for k in 0..m {
            prefix[k + 1] = prefix[k] + alpha[k] * anchors[k];
        }
        let mut tail = vec![0.0; m + 1];
        for k in (0..m).rev() {
            tail[k] = tail[k + 1] + alpha[k];
        }
        Self { kernel, lambda, anchors, alpha, weights, prefix, tail }
    }

    /// The zero function (no point carried positive weight).
    pub fn zero(kernel: Kernel, lambda: f64) -> Self {
        Self::from_expansion(kernel, lambda, Vec::new(), Vec::new())
    }

    #[inline]
    pub fn predict(&self, x: f64) -> f64 {
        match self.kernel {
            Kernel::Sobolev1 => {
                let idx = self.anchors.partition_point(|&u| u <= x);
                self.prefix[idx] + x * self.tail[idx]
            }
        }
    }

    /// `Σ_j α_j K(x, u_j)` evaluated term by term.
    pub fn predict_direct(&self, x: f64) -> f64 {
        self.anchors.iter().zip(&self.alpha).map(|(u, a)| a * self.kernel.eval(x, *u)).sum()
    }

    /// `αᵀ K α`.
    pub fn rkhs_norm_sq(&self) -> f64 {
        rkhs_norm_sq(self.kernel, &self.anchors, &self.alpha)
    }

    /// Penalised weighted objective on `points`.
    pub fn objective(&self, points: &[WeightedPoint]) -> f64 {
        let fit: f64 = points.iter().map(|p| p.w * (p.y - self.predict(p.x)).powi(2)).sum();
        fit + self.lambda * self.rkhs_norm_sq()
    }

    /// Copy with perturbed coefficients (same anchors).
    pub fn with_alpha(&self, alpha: Vec<f64>) -> Self {
        let pairs = self.anchors.iter().copied().zip(alpha).collect();
        Self::from_expansion(self.kernel, self.lambda, pairs, self.weights.clone())
    }
}

fn rkhs_norm_sq(kernel: Kernel, anchors: &[f64], alpha: &[f64]) -> f64 {
    let mut s = 0.0;
    for (i, (ui, ai)) in anchors.iter().zip(alpha).enumerate() {
        s += ai * ai * kernel.eval(*ui, *ui);
        for (uj, aj) in anchors.iter().zip(alpha).skip(i + 1) {
            s += 2.0 * ai * aj * kernel.eval(*ui, *uj);
        }
    }
    s
}

fn validate(points: &[WeightedPoint], lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(OpeError::invalid(format!("regularisation must be positive, got {lambda}")));
    }
    if points.iter().any(|p| !(p.w >= 0.0) || !p.w.is_finite()) {
        return Err(OpeError::invalid("weights must be finite and non-negative"));
    }
    if !points.iter().any(|p| p.w > 0.0) {
        return Err(OpeError::invalid("at least one weight must be positive"));
    }
    if points.iter().any(|p| p.x < 0.0 || !p.x.is_finite() || !p.y.is_finite()) {
        return Err(OpeError::invalid("sobolev1 kernel needs finite points with x ≥ 0"));
    }
    Ok(())
}

/// Weighted KRR solved through the dense representer system.
pub fn fit_weighted_krr(points: &[WeightedPoint], lambda: f64, kernel: Kernel) -> Result<KrrFit> {
    fit_weighted_krr_with(points, lambda, kernel, KrrSolver::Dense)
}

/// Unweighted KRR: all weights equal to one.
pub fn fit_unweighted_krr(points: &[(f64, f64)], lambda: f64, kernel: Kernel) -> Result<KrrFit> {
    let weighted: Vec<WeightedPoint> = points.iter().map(|&(x, y)| WeightedPoint::new(x, y, 1.0)).collect();
    fit_weighted_krr(&weighted, lambda, kernel)
}

pub fn fit_weighted_krr_with(points: &[WeightedPoint], lambda: f64, kernel: Kernel, solver: KrrSolver) -> Result<KrrFit> {
    validate(points, lambda)?;
    match solver {
        KrrSolver::Dense => solve_dense(points, lambda, kernel),
        KrrSolver::Spline => solve_spline(points, lambda, kernel),
    }
}

fn solve_dense(points: &[WeightedPoint], lambda: f64, kernel: Kernel) -> Result<KrrFit> {
    let active: Vec<&WeightedPoint> = points.iter().filter(|p| p.w > 0.0).collect();
    let m = active.len();
    let mut sys = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            sys[(i, j)] = kernel.eval(active[i].x, active[j].x);
        }
        sys[(i, i)] += lambda / active[i].w;
    }
    let y = DVector::from_iterator(m, active.iter().map(|p| p.y));
    let weights: Vec<f64> = active.iter().map(|p| p.w).collect();

    let condition = {
        let eig = sys.clone().symmetric_eigenvalues();
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
        if lo > 0.0 {
            hi / lo
        } else {
            f64::INFINITY
        }
    };

    let alpha = match (condition <= CONDITION_LIMIT).then(|| sys.clone().cholesky()).flatten() {
        Some(chol) => chol.solve(&y),
        None => {
            // Least squares on the unsymmetrised system (W K + λ I) α = W y.
            let mut wk = DMatrix::<f64>::zeros(m, m);
            for i in 0..m {
                for j in 0..m {
                    wk[(i, j)] = active[i].w * kernel.eval(active[i].x, active[j].x);
                }
                wk[(i, i)] += lambda;
            }
            let wy = DVector::from_iterator(m, active.iter().map(|p| p.w * p.y));
            let svd = wk.svd(true, true);
            let smax = svd.singular_values.max();
            let alpha = svd
                .solve(&wy, smax * f64::EPSILON * m as f64)
                .map_err(|_| OpeError::Singular { condition })?;
            if alpha.iter().any(|v| !v.is_finite()) {
                return Err(OpeError::Singular { condition });
            }
            alpha
        }
    };
    let pairs = active.iter().zip(alpha.iter()).map(|(p, a)| (p.x, *a)).collect();
    Ok(KrrFit::from_expansion(kernel, lambda, pairs, weights))
}

/// Merge points with equal `x`: weights add, targets average by weight.
fn pool_ties(points: &[WeightedPoint]) -> Vec<WeightedPoint> {
    let mut sorted: Vec<WeightedPoint> = points.iter().copied().filter(|p| p.w > 0.0).collect();
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
    let mut pooled: Vec<WeightedPoint> = Vec::with_capacity(sorted.len());
    for p in sorted {
        match pooled.last_mut() {
            Some(last) if last.x == p.x => {
                let w = last.w + p.w;
                last.y = (last.w * last.y + p.w * p.y) / w;
                last.w = w;
            }
            _ => pooled.push(p),
        }
    }
    pooled
}

fn solve_spline(points: &[WeightedPoint], lambda: f64, kernel: Kernel) -> Result<KrrFit> {
    let weights: Vec<f64> = points.iter().filter(|p| p.w > 0.0).map(|p| p.w).collect();
    // f(0) = 0 for every member of H, so points at the origin only add a constant.
    let pooled: Vec<WeightedPoint> = pool_ties(points).into_iter().filter(|p| p.x > 0.0).collect();
    let m = pooled.len();
    if m == 0 {
        return Ok(KrrFit::from_expansion(kernel, lambda, Vec::new(), weights));
    }
    let mut cond = vec![0.0; m + 1];
    let mut prev = 0.0;
    for (k, p) in pooled.iter().enumerate() {
        cond[k] = 1.0 / (p.x - prev);
        prev = p.x;
    }
    // cond[m] = 0: no penalty beyond the last point.
    let mut diag = vec![0.0; m];
    let mut off = vec![0.0; m.saturating_sub(1)];
    let mut rhs = vec![0.0; m];
    for k in 0..m {
        diag[k] = pooled[k].w + lambda * (cond[k] + cond[k + 1]);
        if k + 1 < m {
            off[k] = -lambda * cond[k + 1];
        }
        rhs[k] = pooled[k].w * pooled[k].y;
    }
    let values = solve_tridiagonal_symmetric(&diag, &off, &rhs)?;

    // slope on (u_{k-1}, u_k) equals Σ_{j≥k} α_j
    let mut slopes = vec![0.0; m + 1];
    let mut prev_v = 0.0;
    let mut prev_x = 0.0;
    for k in 0..m {
        slopes[k] = (values[k] - prev_v) / (pooled[k].x - prev_x);
        prev_v = values[k];
        prev_x = pooled[k].x;
    }
    let pairs = (0..m).map(|k| (pooled[k].x, slopes[k] - slopes[k + 1])).collect();
    Ok(KrrFit::from_expansion(kernel, lambda, pairs, weights))
}

fn solve_tridiagonal_symmetric(diag: &[f64], off: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let m = diag.len();
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    let mut denom = diag[0];
    if !(denom > 0.0) {
        return Err(OpeError::Singular { condition: f64::INFINITY });
    }
    c[0] = if m > 1 { off[0] / denom } else { 0.0 };
    d[0] = rhs[0] / denom;
    for k in 1..m {
        denom = diag[k] - off[k - 1] * c[k - 1];
        if !(denom > 0.0) {
            return Err(OpeError::Singular { condition: f64::INFINITY });
        }
        c[k] = if k + 1 < m { off[k] / denom } else { 0.0 };
        d[k] = (rhs[k] - off[k - 1] * d[k - 1]) / denom;
    }
    let mut x = vec![0.0; m];
    x[m - 1] = d[m - 1];
    for k in (0..m - 1).rev() {
        x[k] = d[k] - c[k] * x[k + 1];
    }
    Ok(x)
}
