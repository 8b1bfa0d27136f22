//! K-fold cross-validation of the KRR regularisation parameter.

use rand::seq::SliceRandom;

use super::krr::{fit_weighted_krr_with, Kernel, KrrSolver, WeightedPoint};
use crate::error::{OpeError, Result};
use crate::rng::substream;

pub const DEFAULT_FOLDS: usize = 5;

/// Log-spaced default grid on `[0.1, 100]`.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..10).map(|k| 10f64.powf(-1.0 + 3.0 * k as f64 / 9.0)).collect()
}

/// Fold index of every point: seeded shuffle, then contiguous blocks.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, 0xC5));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos * folds / n;
    }
    fold
}

/// Weighted validation loss of each grid value.
pub fn validation_losses(
    points: &[WeightedPoint],
    grid: &[f64],
    folds: usize,
    seed: u64,
    kernel: Kernel,
    solver: KrrSolver,
) -> Result<Vec<f64>> {
    if folds < 2 {
        return Err(OpeError::invalid(format!("need at least 2 folds, got {folds}")));
    }
    if grid.is_empty() || grid.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return Err(OpeError::invalid("lambda grid must be non-empty and positive"));
    }
    if points.len() < folds {
        return Err(OpeError::invalid(format!("{} points cannot fill {folds} folds", points.len())));
    }
    let assignment = fold_assignment(points.len(), folds, seed);
    let mut losses = vec![0.0; grid.len()];
    for k in 0..folds {
        let train: Vec<WeightedPoint> =
            points.iter().zip(&assignment).filter(|(_, f)| **f != k).map(|(p, _)| *p).collect();
        let valid: Vec<&WeightedPoint> = points.iter().zip(&assignment).filter(|(_, f)| **f == k).map(|(p, _)| p).collect();
        if !train.iter().any(|p| p.w > 0.0) {
            continue;
        }
        for (loss, &lambda) in losses.iter_mut().zip(grid) {
            let fit = fit_weighted_krr_with(&train, lambda, kernel, solver)?;
            *loss += valid.iter().map(|p| p.w * (p.y - fit.predict(p.x)).powi(2)).sum::<f64>();
        }
    }
    Ok(losses)
}

/// Grid value with the smallest validation loss; ties go to the larger λ.
pub fn cross_validate_lambda(
    points: &[WeightedPoint],
    grid: &[f64],
    folds: usize,
    seed: u64,
    kernel: Kernel,
    solver: KrrSolver,
) -> Result<f64> {
    let losses = validation_losses(points, grid, folds, seed, kernel, solver)?;
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
    let mut best = order[0];
    for &i in &order[1..] {
        let tol = 1e-12 * losses[best].abs().max(losses[i].abs());
        if losses[i] < losses[best] - tol {
            best = i;
        }
    }
    Ok(grid[best])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spread(n: usize, f: impl Fn(f64) -> f64) -> Vec<WeightedPoint> {
        (1..=n).map(|i| {
            let x = i as f64 / n as f64;
            WeightedPoint::new(x, f(x), 1.0)
        }).collect()
    }

    #[test]
    fn folds_balanced_and_deterministic() {
        let a = fold_assignment(103, 5, 7);
        assert_eq!(a, fold_assignment(103, 5, 7));
        for k in 0..5 {
            let c = a.iter().filter(|f| **f == k).count();
            assert!(c == 20 || c == 21, "{c}");
        }
    }

    #[test]
    fn single_grid_value() {
        let pts = spread(20, |x| x);
        assert_eq!(cross_validate_lambda(&pts, &[3.0], 5, 1, Kernel::Sobolev1, KrrSolver::Spline).unwrap(), 3.0);
    }

    #[test]
    fn noiseless_kernel_data_picks_smallest() {
        let pts = spread(200, |x| x.min(0.4) + 0.5 * x.min(0.8));
        let grid = [0.1, 1.0, 10.0, 100.0];
        assert_eq!(cross_validate_lambda(&pts, &grid, 5, 3, Kernel::Sobolev1, KrrSolver::Spline).unwrap(), 0.1);
    }

    #[test]
    fn ties_prefer_larger() {
        let pts = spread(50, |_| 0.0);
        let grid = [0.1, 1.0, 10.0, 100.0];
        assert_eq!(cross_validate_lambda(&pts, &grid, 5, 3, Kernel::Sobolev1, KrrSolver::Spline).unwrap(), 100.0);
    }

    #[test]
    fn too_few_points() {
        let pts = spread(3, |x| x);
        assert!(cross_validate_lambda(&pts, &[1.0], 5, 0, Kernel::Sobolev1, KrrSolver::Spline).is_err());
        assert!(cross_validate_lambda(&pts, &[1.0], 1, 0, Kernel::Sobolev1, KrrSolver::Spline).is_err());
        assert!(cross_validate_lambda(&spread(10, |x| x), &[], 2, 0, Kernel::Sobolev1, KrrSolver::Spline).is_err());
    }

    #[test]
    fn default_grid_in_range() {
        let g = default_lambda_grid();
        assert!((g[0] - 0.1).abs() < 1e-15 && (g[9] - 100.0).abs() < 1e-12);
    }
}
