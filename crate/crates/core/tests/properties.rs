mod common;

use ope_core::lowerbounds::{divergence, tilted_instance, DivergenceKind, FiniteDistribution};
use ope_core::instance::{InstanceDescription, ProblemInstance};
use ope_core::regression::isotonic::fit_weighted_isotonic;
use ope_core::regression::krr::{fit_weighted_krr, Kernel, WeightedPoint};
use ope_core::regression::linear::project_l1_ball;
use proptest::prelude::*;

fn simplex(raw: Vec<f64>) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let drift = p.iter().sum::<f64>() - 1.0;
    p[0] -= drift;
    p
}

fn pair(len: usize) -> impl Strategy<Value = (FiniteDistribution, FiniteDistribution)> {
    (prop::collection::vec(0.05f64..1.0, len), prop::collection::vec(0.05f64..1.0, len)).prop_map(move |(a, b)| {
        let atoms: Vec<f64> = (0..a.len()).map(|i| i as f64).collect();
        (FiniteDistribution::new(atoms.clone(), simplex(a)).unwrap(), FiniteDistribution::new(atoms, simplex(b)).unwrap())
    })
}

/// Best monotone block-mean fit by enumerating contiguous partitions.
fn brute_isotonic(sorted: &[(f64, f64, f64)]) -> f64 {
    let n = sorted.len();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << (n - 1)) {
        let mut fitted = Vec::new();
        let mut start = 0;
        for i in 0..n {
            if i == n - 1 || mask & (1 << i) != 0 {
                let b = &sorted[start..=i];
                let w: f64 = b.iter().map(|p| p.2).sum();
                let m = b.iter().map(|p| p.1 * p.2).sum::<f64>() / w;
                fitted.extend(std::iter::repeat_n(m, b.len()));
                start = i + 1;
            }
        }
        if fitted.windows(2).all(|v| v[0] <= v[1]) {
            best = best.min(sorted.iter().zip(&fitted).map(|(p, f)| p.2 * (p.1 - f).powi(2)).sum());
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn pinsker((p, q) in (2usize..8).prop_flat_map(pair)) {
        let kl = divergence(DivergenceKind::Kl, &p, &q).unwrap();
        let tv = divergence(DivergenceKind::Tv, &p, &q).unwrap();
        let chi2 = divergence(DivergenceKind::Chi2, &p, &q).unwrap();
        prop_assert!(tv <= (kl / 2.0).sqrt() + 1e-12);
        prop_assert!(kl <= (1.0 + chi2).ln() + 1e-12);
    }

    #[test]
    fn kl_tensorises((p, q) in (2usize..5).prop_flat_map(pair), k in 1usize..4) {
        let one = divergence(DivergenceKind::Kl, &p, &q).unwrap();
        let many = divergence(DivergenceKind::Kl, &p.power(k), &q.power(k)).unwrap();
        prop_assert!((many - k as f64 * one).abs() <= 1e-10 * (1.0 + many));
    }

    #[test]
    fn pava_is_optimal(raw in prop::collection::vec((-3.0f64..3.0, 0.1f64..4.0), 1..7)) {
        let points: Vec<(f64, f64, f64)> = raw.iter().enumerate().map(|(i, &(y, w))| (i as f64, y, w)).collect();
        let fit = fit_weighted_isotonic(&points, false).unwrap();
        let obj = fit.objective(&points);
        prop_assert!((obj - brute_isotonic(&points)).abs() <= 1e-10 * (1.0 + obj));
        let levels: Vec<f64> = points.iter().map(|p| fit.predict(p.0)).collect();
        prop_assert!(levels.windows(2).all(|v| v[0] <= v[1] + 1e-12));
    }

    #[test]
    fn krr_duplicate_equals_double_weight(
        raw in prop::collection::vec((0.01f64..1.0, -2.0f64..2.0, 0.1f64..3.0), 2..12),
        lambda in 0.01f64..10.0,
    ) {
        let pts: Vec<WeightedPoint> = raw.iter().map(|&(x, y, w)| WeightedPoint::new(x, y, w)).collect();
        let mut dup = pts.clone();
        dup.push(pts[0]);
        let mut heavy = pts.clone();
        heavy[0].w *= 2.0;
        let a = fit_weighted_krr(&dup, lambda, Kernel::Sobolev1).unwrap();
        let b = fit_weighted_krr(&heavy, lambda, Kernel::Sobolev1).unwrap();
        for x in [0.0, 0.13, 0.5, 0.77, 1.0] {
            prop_assert!((a.predict(x) - b.predict(x)).abs() <= 1e-8);
        }
    }

    #[test]
    fn krr_objective_is_minimal(
        raw in prop::collection::vec((0.01f64..1.0, -2.0f64..2.0, 0.1f64..3.0), 1..10),
        lambda in 0.01f64..10.0,
        bump in prop::collection::vec(-0.1f64..0.1, 10),
    ) {
        let pts: Vec<WeightedPoint> = raw.iter().map(|&(x, y, w)| WeightedPoint::new(x, y, w)).collect();
        let fit = fit_weighted_krr(&pts, lambda, Kernel::Sobolev1).unwrap();
        let alpha: Vec<f64> = fit.alpha.iter().zip(&bump).map(|(a, b)| a + b).collect();
        prop_assert!(fit.with_alpha(alpha).objective(&pts) >= fit.objective(&pts) - 1e-9);
    }

    #[test]
    fn l1_projection_is_nearest(v in prop::collection::vec(-5.0f64..5.0, 1..6), radius in 0.0f64..4.0, probe in prop::collection::vec(-1.0f64..1.0, 6)) {
        let p = project_l1_ball(&v, radius);
        let l1: f64 = p.iter().map(|x| x.abs()).sum();
        prop_assert!(l1 <= radius + 1e-9);
        // any other point of the ball is at least as far from v
        let q_raw: Vec<f64> = probe.iter().take(v.len()).copied().collect();
        let q_l1: f64 = q_raw.iter().map(|x| x.abs()).sum();
        let q: Vec<f64> = if q_l1 > radius && q_l1 > 0.0 { q_raw.iter().map(|x| x * radius / q_l1).collect() } else { q_raw };
        let dist = |a: &[f64]| a.iter().zip(&v).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        prop_assert!(dist(&p) <= dist(&q) + 1e-9);
    }

    #[test]
    fn tilted_ratio_band(
        probs in prop::collection::vec(0.05f64..1.0, 2..6),
        mu in prop::collection::vec(-3.0f64..3.0, 6),
        n in 1usize..500,
    ) {
        let k = probs.len();
        let states: Vec<f64> = (0..k).map(|i| i as f64).collect();
        let desc = InstanceDescription::Finite {
            id: "rand".into(),
            states,
            state_probs: simplex(probs),
            base_weights: None,
            propensity: vec![vec![1.0]; k],
            weight: vec![vec![1.0]; k],
            outcome_mean: (0..k).map(|i| vec![mu[i]]).collect(),
            outcome_sd: vec![vec![0.0]; k],
        };
        let inst = ProblemInstance::from_description(&desc).unwrap();
        let report = tilted_instance(&inst, n).unwrap();
        if !report.degenerate {
            for c in &report.checks {
                if c.name.starts_with("tilt") || c.name.starts_with("normaliser") || c.name.starts_with("chi2") {
                    prop_assert!(c.passed, "{} {} {}", c.name, c.value, c.bound);
                }
            }
        }
    }
}
