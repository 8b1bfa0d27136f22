mod common;

use common::*;
use ope_core::dataset::sample_with_stream;
use ope_core::estimators::{generic_estimate, ipw_estimate, oracle_estimate, two_stage_estimate};
use ope_core::functionals::{efficient_variance, generic_estimator_variance};
use ope_core::instance::StateActionFunction;
use ope_core::regression::{FeatureMap, FirstStageSpec, RegressorId};
use ope_core::stats::{mean, sample_variance, McEstimate};
use rayon::prelude::*;

fn replicate(reps: u64, f: impl Fn(u64) -> f64 + Sync + Send) -> Vec<f64> {
    (0..reps).into_par_iter().map(f).collect()
}

#[test]
fn ipw_unbiased_with_enumerated_variance() {
    let inst = d1(1.0);
    let n = 40;
    let est = replicate(40_000, |r| ipw_estimate(&sample_with_stream(&inst, n, 1, r).unwrap(), inst.design()).unwrap().tau_hat);
    let mc = McEstimate::from_samples(&est);
    assert!(mc.within(tau(), 4.0), "{mc:?}");
    let second = sampling_expect(|x, a| (G[x][a] / PI[x][a]).powi(2) * (MU[x][a].powi(2) + 1.0));
    let exact = (second - tau().powi(2)) / n as f64;
    let var = sample_variance(&est);
    assert!(((var - exact) / exact).abs() < 0.05, "{var} vs {exact}");
}

#[test]
fn oracle_variance_is_efficient() {
    let inst = d1(0.5);
    let n = 30;
    let est = replicate(40_000, |r| oracle_estimate(&sample_with_stream(&inst, n, 2, r).unwrap(), &inst).unwrap().tau_hat);
    let v = efficient_variance(&inst).unwrap();
    let inner = |x: usize| G[x][0] * MU[x][0] + G[x][1] * MU[x][1];
    let enumerated = sum(|x, a| if a == 0 { (inner(x) - tau()).powi(2) } else { 0.0 }) + sum(|x, a| G[x][a].powi(2) / PI[x][a] * 0.25);
    assert!((v - enumerated).abs() < 1e-12);
    assert!(McEstimate::from_samples(&est).within(tau(), 4.0));
    let nvar = n as f64 * sample_variance(&est);
    assert!(((nvar - v) / v).abs() < 0.05, "{nvar} vs {v}");
}

#[test]
fn generic_variance_formula_matches_enumeration() {
    let inst = d1(1.0);
    let f = StateActionFunction::table(&[0.0, 1.0], vec![vec![0.3, -1.2], vec![0.9, -0.6]]);
    let table = [[0.3, -1.2], [0.9, -0.6]];
    let direct = sampling_expect(|x, a| {
        let m = G[x][a] * MU[x][a] / PI[x][a] - table[x][a];
        m * m + (G[x][a] / PI[x][a]).powi(2)
    }) - tau().powi(2);
    assert!((generic_estimator_variance(&inst, &f).unwrap() - direct).abs() < 1e-12);
    let n = 25;
    let est = replicate(40_000, |r| generic_estimate(&sample_with_stream(&inst, n, 3, r).unwrap(), inst.design(), &f).unwrap().tau_hat);
    assert!(McEstimate::from_samples(&est).within(tau(), 4.0));
    assert!(((n as f64 * sample_variance(&est) - direct) / direct).abs() < 0.05);
}

#[test]
fn two_stage_is_nearly_unbiased_on_d1() {
    let inst = d1(1.0);
    let n = 200;
    let spec = FirstStageSpec::new(RegressorId::WeightedLinear).with_features(FeatureMap::ActionPolynomial { degree: 1 });
    let est = replicate(2_000, |r| {
        two_stage_estimate(&sample_with_stream(&inst, n, 4, r).unwrap(), inst.design(), &spec, r).unwrap().report.tau_hat
    });
    let m = mean(&est);
    let se = (sample_variance(&est) / est.len() as f64).sqrt();
    assert!((m - tau()).abs() < 4.0 * se, "{m} vs {}", tau());
}
