//! Weighted least squares over linear classes `f_θ = ⟨θ, φ⟩`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::krr::CONDITION_LIMIT;
use crate::error::{OpeError, Result};

pub const L1_MAX_ITERATIONS: usize = 10_000;
pub const L1_RELATIVE_DECREASE: f64 = 1e-10;
pub const L1_KKT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePoint {
    pub phi: Vec<f64>,
    pub y: f64,
    pub w: f64,
}

impl FeaturePoint {
    pub fn new(phi: Vec<f64>, y: f64, w: f64) -> Self {
        Self { phi, y, w }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub theta: Vec<f64>,
    pub ridge: f64,
    /// Radius of the ℓ1 ball for constrained fits.
    pub l1_radius: Option<f64>,
    /// Radius of the ℓ2 ball the estimate was rescaled onto, if it was.
    pub l2_radius: Option<f64>,
    pub iterations: usize,
    /// Set when the ℓ1 solver stopped at its iteration cap.
    pub hit_iteration_cap: bool,
}

impl LinearFit {
    pub fn predict(&self, phi: &[f64]) -> f64 {
        self.theta.iter().zip(phi).map(|(t, p)| t * p).sum()
    }

    pub fn l1_norm(&self) -> f64 {
        self.theta.iter().map(|t| t.abs()).sum()
    }

    /// `Σ w (y − ⟨θ, φ⟩)² + ridge ‖θ‖²`.
    pub fn objective(&self, points: &[FeaturePoint]) -> f64 {
        let loss: f64 = points.iter().map(|p| p.w * (p.y - self.predict(&p.phi)).powi(2)).sum();
        loss + self.ridge * self.theta.iter().map(|t| t * t).sum::<f64>()
    }
}

fn dimension(points: &[FeaturePoint]) -> Result<usize> {
    let d = points.first().map(|p| p.phi.len()).ok_or_else(|| OpeError::invalid("no points to fit"))?;
    if d == 0 {
        return Err(OpeError::invalid("feature dimension must be positive"));
    }
    for p in points {
        if p.phi.len() != d {
            return Err(OpeError::invalid(format!("feature length {} differs from {d}", p.phi.len())));
        }
        if !(p.w >= 0.0) || !p.w.is_finite() || !p.y.is_finite() || p.phi.iter().any(|v| !v.is_finite()) {
            return Err(OpeError::invalid("points must be finite with non-negative weights"));
        }
    }
    Ok(d)
}

/// Weighted Gram matrix `ΦᵀWΦ` and moment vector `ΦᵀWy`.
pub fn weighted_gram(points: &[FeaturePoint], d: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut gram = DMatrix::<f64>::zeros(d, d);
    let mut moment = DVector::<f64>::zeros(d);
    for p in points.iter().filter(|p| p.w > 0.0) {
        for i in 0..d {
            moment[i] += p.w * p.phi[i] * p.y;
            for j in 0..d {
                gram[(i, j)] += p.w * p.phi[i] * p.phi[j];
            }
        }
    }
    (gram, moment)
}

/// Minimise `Σ w (y − ⟨θ, φ⟩)² + ridge ‖θ‖²`, then rescale onto the ℓ2 ball
/// of radius `l2_radius` if the solution lies outside it.
pub fn fit_weighted_linear(points: &[FeaturePoint], ridge: f64, l2_radius: Option<f64>) -> Result<LinearFit> {
    let d = dimension(points)?;
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(OpeError::invalid(format!("ridge must be finite and non-negative, got {ridge}")));
    }
    let (mut gram, moment) = weighted_gram(points, d);
    for i in 0..d {
        gram[(i, i)] += ridge;
    }
    let eig = gram.clone().symmetric_eigenvalues();
    let hi = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let lo = eig.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= CONDITION_LIMIT) {
        return Err(OpeError::Singular { condition });
    }
    let chol = gram.cholesky().ok_or(OpeError::Singular { condition })?;
    let mut theta: Vec<f64> = chol.solve(&moment).iter().copied().collect();
    let mut rescaled = None;
    if let Some(r) = l2_radius {
        if !(r >= 0.0) {
            return Err(OpeError::invalid(format!("ℓ2 radius must be non-negative, got {r}")));
        }
        let norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
        if norm > r {
            theta.iter_mut().for_each(|t| *t *= r / norm);
            rescaled = Some(r);
        }
    }
    Ok(LinearFit { theta, ridge, l1_radius: None, l2_radius: rescaled, iterations: 0, hit_iteration_cap: false })
}

/// Euclidean projection onto `{θ : ‖θ‖₁ ≤ radius}` (sort-and-threshold).
pub fn project_l1_ball(v: &[f64], radius: f64) -> Vec<f64> {
    if radius <= 0.0 {
        return vec![0.0; v.len()];
    }
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return v.to_vec();
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut threshold = 0.0;
    for (k, m) in mags.iter().enumerate() {
        cumsum += m;
        let t = (cumsum - radius) / (k + 1) as f64;
        if *m > t {
            threshold = t;
        } else {
            break;
        }
    }
    v.iter().map(|x| x.signum() * (x.abs() - threshold).max(0.0)).collect()
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix.
pub fn power_iteration(m: &DMatrix<f64>, iterations: usize) -> f64 {
    let d = m.nrows();
    let mut v = DVector::from_element(d, 1.0 / (d as f64).sqrt());
    let mut estimate = 0.0;
    for _ in 0..iterations {
        let next = m * &v;
        let norm = next.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let rayleigh = v.dot(&next);
        v = next / norm;
        if (rayleigh - estimate).abs() <= 1e-14 * rayleigh.abs() {
            return rayleigh.max(norm);
        }
        estimate = rayleigh;
    }
    // the norm of Mv bounds the top eigenvalue from below; take the larger
    estimate.max((m * &v).norm())
}

/// Projected gradient descent for
/// `min ½ Σ w (y − ⟨θ, φ⟩)²  s.t. ‖θ‖₁ ≤ radius`, step `1/L`.
pub fn fit_l1_constrained(points: &[FeaturePoint], radius: f64) -> Result<LinearFit> {
    let d = dimension(points)?;
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(OpeError::invalid(format!("ℓ1 radius must be finite and non-negative, got {radius}")));
    }
    let (gram, moment) = weighted_gram(points, d);
    let lipschitz = power_iteration(&gram, 1000) * (1.0 + 1e-9);
    let mut theta = DVector::<f64>::zeros(d);
    let base = LinearFit { theta: vec![0.0; d], ridge: 0.0, l1_radius: Some(radius), l2_radius: None, iterations: 0, hit_iteration_cap: false };
    if radius == 0.0 || lipschitz == 0.0 {
        return Ok(base);
    }
    let half_objective = |t: &DVector<f64>| 0.5 * t.dot(&(&gram * t)) - t.dot(&moment);
    let mapping_residual = |t: &DVector<f64>| {
        let grad = &gram * t - &moment;
        let step: Vec<f64> = (t - grad / lipschitz).iter().copied().collect();
        let proj = project_l1_ball(&step, radius);
        proj.iter().zip(t.iter()).map(|(p, q)| (lipschitz * (q - p)).abs()).fold(0.0, f64::max)
    };

    let mut value = half_objective(&theta);
    let mut iterations = 0;
    let mut capped = true;
    while iterations < L1_MAX_ITERATIONS {
        iterations += 1;
        let grad = &gram * &theta - &moment;
        let step: Vec<f64> = (&theta - grad / lipschitz).iter().copied().collect();
        let next = DVector::from_vec(project_l1_ball(&step, radius));
        let next_value = half_objective(&next);
        let decrease = value - next_value;
        // offset by Σ w y²/2 so the relative test is against the true loss
        theta = next;
        let scale = (next_value + 0.5 * points.iter().map(|p| p.w * p.y * p.y).sum::<f64>()).abs().max(f64::MIN_POSITIVE);
        value = next_value;
        if decrease.abs() <= L1_RELATIVE_DECREASE * scale && mapping_residual(&theta) < L1_KKT_TOLERANCE {
            capped = false;
            break;
        }
    }
    Ok(LinearFit { theta: theta.iter().copied().collect(), iterations, hit_iteration_cap: capped, ..base })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    fn random_points(n: usize, d: usize, seed: u64) -> Vec<FeaturePoint> {
        let mut rng = substream(seed, 3);
        (0..n)
            .map(|_| {
                let phi: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                let y = phi.iter().enumerate().map(|(j, p)| (j as f64 - 1.0) * p).sum::<f64>() + rng.random::<f64>() - 0.5;
                FeaturePoint::new(phi, y, rng.random::<f64>() + 0.2)
            })
            .collect()
    }

    #[test]
    fn exact_linear_data_recovered() {
        let truth = [0.7, -1.3, 2.1];
        let mut pts = random_points(20, 3, 1);
        for p in &mut pts {
            p.y = p.phi.iter().zip(&truth).map(|(a, b)| a * b).sum();
        }
        let fit = fit_weighted_linear(&pts, 0.0, None).unwrap();
        for (t, u) in fit.theta.iter().zip(&truth) {
            assert!((t - u).abs() < 1e-8);
        }
    }

    #[test]
    fn one_feature_weighted_mean() {
        let pts = [FeaturePoint::new(vec![1.0], 0.0, 1.0), FeaturePoint::new(vec![1.0], 2.0, 3.0)];
        let fit = fit_weighted_linear(&pts, 0.0, None).unwrap();
        assert!((fit.theta[0] - 1.5).abs() < 1e-14);
    }

    #[test]
    fn huge_ridge_shrinks_to_zero() {
        let fit = fit_weighted_linear(&random_points(30, 3, 2), 1e12, None).unwrap();
        assert!(fit.theta.iter().all(|t| t.abs() < 1e-9));
    }

    #[test]
    fn rank_deficient_without_ridge_errors() {
        let pts = [FeaturePoint::new(vec![1.0, 1.0], 1.0, 1.0), FeaturePoint::new(vec![2.0, 2.0], 2.0, 1.0)];
        assert!(matches!(fit_weighted_linear(&pts, 0.0, None), Err(OpeError::Singular { .. })));
        assert!(fit_weighted_linear(&pts, 0.1, None).is_ok());
    }

    #[test]
    fn l2_rescaling() {
        let pts = [FeaturePoint::new(vec![1.0, 0.0], 3.0, 1.0), FeaturePoint::new(vec![0.0, 1.0], 4.0, 1.0)];
        let fit = fit_weighted_linear(&pts, 0.0, Some(1.0)).unwrap();
        assert!((fit.theta[0] - 0.6).abs() < 1e-12 && (fit.theta[1] - 0.8).abs() < 1e-12);
        assert_eq!(fit.l2_radius, Some(1.0));
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_l1_ball(&[3.0, 1.0], 2.0), vec![2.0, 0.0]);
        assert_eq!(project_l1_ball(&[0.5, -0.5], 2.0), vec![0.5, -0.5]);
        let p = project_l1_ball(&[1.0, -1.0, 1.0], 1.5);
        assert!(p.iter().all(|v| (v.abs() - 0.5).abs() < 1e-15));
        assert_eq!(project_l1_ball(&[1.0, 2.0], 0.0), vec![0.0, 0.0]);
    }

    #[test]
    fn orthonormal_two_feature_example() {
        let pts = [FeaturePoint::new(vec![1.0, 0.0], 3.0, 1.0), FeaturePoint::new(vec![0.0, 1.0], 1.0, 1.0)];
        let fit = fit_l1_constrained(&pts, 2.0).unwrap();
        assert!(!fit.hit_iteration_cap);
        assert!((fit.theta[0] - 2.0).abs() < 1e-8 && fit.theta[1].abs() < 1e-8);
    }

    #[test]
    fn zero_radius_gives_zero() {
        let fit = fit_l1_constrained(&random_points(10, 3, 4), 0.0).unwrap();
        assert!(fit.theta.iter().all(|t| *t == 0.0));
    }

    #[test]
    fn interior_optimum_matches_least_squares() {
        let pts = random_points(50, 3, 5);
        let ls = fit_weighted_linear(&pts, 0.0, None).unwrap();
        let l1 = fit_l1_constrained(&pts, ls.l1_norm() * 2.0).unwrap();
        for (a, b) in ls.theta.iter().zip(&l1.theta) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn power_iteration_matches_eigen() {
        let (gram, _) = weighted_gram(&random_points(40, 4, 6), 4);
        let top = gram.clone().symmetric_eigenvalues().max();
        assert!((power_iteration(&gram, 2000) - top).abs() < 1e-8 * top);
    }
}
