//! Estimators of the target functional from an observed dataset.
//!
//! All estimators need only the known design `(π, g, λ)`, except the oracle
//! which also reads the true outcome mean from the instance.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Triple};
use crate::error::{OpeError, Result};
use crate::functionals::auxiliary_from_model;
use crate::instance::{Design, ProblemInstance, StateActionFunction};
use crate::regression::{fit_first_stage, FirstStageModel, RegressorId};
use crate::rng::stream_id;
use crate::stats::{mean, sample_variance};

pub use crate::regression::FirstStageSpec;

pub const CSV_HEADER: &str = "estimator_id,n,seed,tau_hat,plugin_variance";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator_id: String,
    pub n: usize,
    pub seed: u64,
    pub tau_hat: f64,
    /// Sample variance of the per-observation summands.
    pub plugin_variance: f64,
}

impl EstimateReport {
    fn from_summands(estimator_id: impl Into<String>, seed: u64, summands: &[f64]) -> Self {
        Self {
            estimator_id: estimator_id.into(),
            n: summands.len(),
            seed,
            tau_hat: mean(summands),
            plugin_variance: if summands.len() > 1 { sample_variance(summands).max(0.0) } else { 0.0 },
        }
    }

    pub fn to_csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.estimator_id, self.n, self.seed, self.tau_hat, self.plugin_variance)
    }
}

/// Estimators run by the simulation harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EstimatorId {
    Ipw,
    Oracle,
    TwoStage(RegressorId),
}

impl EstimatorId {
    pub fn as_string(&self) -> String {
        match self {
            EstimatorId::Ipw => "ipw".into(),
            EstimatorId::Oracle => "oracle".into(),
            EstimatorId::TwoStage(r) => format!("two-stage-{r}"),
        }
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_string())
    }
}

impl FromStr for EstimatorId {
    type Err = OpeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ipw" => Ok(EstimatorId::Ipw),
            "oracle" => Ok(EstimatorId::Oracle),
            _ => match s.strip_prefix("two-stage-") {
                Some(r) => Ok(EstimatorId::TwoStage(r.parse()?)),
                None => Err(OpeError::Parse(format!("unknown estimator '{s}'"))),
            },
        }
    }
}

impl TryFrom<String> for EstimatorId {
    type Error = OpeError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EstimatorId> for String {
    fn from(e: EstimatorId) -> String {
        e.as_string()
    }
}

fn ipw_term(design: &Design, t: &Triple) -> Result<f64> {
    Ok(design.importance_ratio(t.x, t.a)? * t.y)
}

/// Influence term `g/π (y − μ̂(x,a)) + ⟨g(x,·), μ̂(x,·)⟩_λ`.
fn influence_term(design: &Design, t: &Triple, mu: impl Fn(f64, usize) -> f64) -> Result<f64> {
    let ratio = design.importance_ratio(t.x, t.a)?;
    let residual = if ratio == 0.0 { 0.0 } else { ratio * (t.y - mu(t.x, t.a)) };
    Ok(residual + design.weight_inner(t.x, |b| mu(t.x, b)))
}

fn check(data: &Dataset, design: &Design) -> Result<()> {
    data.check_actions(design.actions())
}

/// `τ̂ = (1/n) Σ g(x_i,a_i)/π(x_i,a_i) · y_i`.
pub fn ipw_estimate(data: &Dataset, design: &Design) -> Result<EstimateReport> {
    check(data, design)?;
    let terms: Vec<f64> = data.triples.iter().map(|t| ipw_term(design, t)).collect::<Result<_>>()?;
    Ok(EstimateReport::from_summands("ipw", data.seed, &terms))
}

/// `τ̂ₙ(f) = (1/n) Σ [ g/π · y_i − f(x_i,a_i) + ⟨f(x_i,·), π(x_i,·)⟩_λ ]`.
pub fn generic_estimate(data: &Dataset, design: &Design, f: &StateActionFunction) -> Result<EstimateReport> {
    check(data, design)?;
    let terms: Vec<f64> = data
        .triples
        .iter()
        .map(|t| Ok(ipw_term(design, t)? - f.eval(t.x, t.a) + design.propensity_mean(t.x, |b| f.eval(t.x, b))))
        .collect::<Result<_>>()?;
    Ok(EstimateReport::from_summands("generic", data.seed, &terms))
}

/// AIPW with the true outcome mean.
pub fn oracle_estimate(data: &Dataset, instance: &ProblemInstance) -> Result<EstimateReport> {
    let design = instance.design();
    check(data, design)?;
    let terms: Vec<f64> =
        data.triples.iter().map(|t| influence_term(design, t, |x, a| instance.mu(x, a))).collect::<Result<_>>()?;
    Ok(EstimateReport::from_summands("oracle", data.seed, &terms))
}

#[derive(Debug, Clone)]
pub struct TwoStageReport {
    pub report: EstimateReport,
    /// `μ̂⁽¹⁾` trained on the first half, `μ̂⁽²⁾` on the second.
    pub models: [FirstStageModel; 2],
    /// Empirical `‖μ̂⁽¹⁾ − μ̂⁽²⁾‖_ω` over all observed states.
    pub model_discrepancy: f64,
}

/// Sizes of the two halves: the first gets `⌈n/2⌉`.
pub fn split_sizes(n: usize) -> (usize, usize) {
    let first = n.div_ceil(2);
    (first, n - first)
}

/// Cross-fitted two-stage estimate with the given first stages: the model
/// trained on the second half is applied to the first half and vice versa.
pub fn cross_fit_with_models(
    data: &Dataset,
    design: &Design,
    models: [&FirstStageModel; 2],
    estimator_id: &str,
) -> Result<EstimateReport> {
    check(data, design)?;
    let (first, _) = split_sizes(data.len());
    let mut terms = Vec::with_capacity(data.len());
    for (i, t) in data.triples.iter().enumerate() {
        let model = if i < first { models[1] } else { models[0] };
        terms.push(influence_term(design, t, |x, a| model.predict(x, a))?);
    }
    Ok(EstimateReport::from_summands(estimator_id, data.seed, &terms))
}

/// Generic form of the cross-fitted estimate, evaluating the auxiliary
/// functions `f̂⁽ʲ⁾` explicitly. Agrees with [`cross_fit_with_models`] up to
/// rounding.
pub fn cross_fit_generic(data: &Dataset, design: &Design, models: [&FirstStageModel; 2]) -> Result<f64> {
    let (first, _) = split_sizes(data.len());
    let aux = [auxiliary_from_model(design, &models[0].as_function()), auxiliary_from_model(design, &models[1].as_function())];
    let mut total = 0.0;
    for (i, t) in data.triples.iter().enumerate() {
        let f = if i < first { &aux[1] } else { &aux[0] };
        total += ipw_term(design, t)? - f.eval(t.x, t.a) + design.propensity_mean(t.x, |b| f.eval(t.x, b));
    }
    Ok(total / data.len() as f64)
}

/// The two-stage procedure: split, fit each half, cross-apply.
pub fn two_stage_estimate(data: &Dataset, design: &Design, spec: &FirstStageSpec, seed: u64) -> Result<TwoStageReport> {
    spec.validate()?;
    check(data, design)?;
    if data.len() < 2 * spec.folds {
        return Err(OpeError::invalid(format!("two-stage needs n ≥ {} (2·folds), got {}", 2 * spec.folds, data.len())));
    }
    let (first, _) = split_sizes(data.len());
    let halves = [&data.triples[..first], &data.triples[first..]];
    let mut fitted = Vec::with_capacity(2);
    for (j, half) in halves.iter().enumerate() {
        let model = fit_first_stage(half, design, spec, stream_id(&[seed, j as u64 + 1]))
            .map_err(|e| OpeError::FirstStage { fold: j + 1, source: Box::new(e) })?;
        fitted.push(model);
    }
    let models: [FirstStageModel; 2] = fitted.try_into().expect("two halves");
    let id = EstimatorId::TwoStage(spec.regressor).as_string();
    let mut report = cross_fit_with_models(data, design, [&models[0], &models[1]], &id)?;
    report.seed = seed;

    let discrepancy = data
        .triples
        .iter()
        .map(|t| {
            design.actions().integrate(|a| {
                let g = design.weight(t.x, a);
                if g == 0.0 {
                    0.0
                } else {
                    let d = models[0].predict(t.x, a) - models[1].predict(t.x, a);
                    g * g / design.propensity(t.x, a) * d * d
                }
            })
        })
        .sum::<f64>()
        / data.len() as f64;
    Ok(TwoStageReport { report, models, model_discrepancy: discrepancy.sqrt() })
}

/// Sample variance of the influence terms under a fitted first stage; a
/// consistent estimate of `v*² + v²(μ̄)` when `μ̂ → μ̄`.
pub fn asymptotic_variance_estimate(data: &Dataset, model: &StateActionFunction, design: &Design) -> Result<f64> {
    let terms: Vec<f64> =
        data.triples.iter().map(|t| influence_term(design, t, |x, a| model.eval(x, a))).collect::<Result<_>>()?;
    Ok(if terms.len() > 1 { sample_variance(&terms).max(0.0) } else { 0.0 })
}

/// Run one estimator by id. Two-stage estimators use `template` with the
/// regressor swapped in.
pub fn run_estimator(
    id: EstimatorId,
    data: &Dataset,
    instance: &ProblemInstance,
    template: &FirstStageSpec,
    seed: u64,
) -> Result<EstimateReport> {
    match id {
        EstimatorId::Ipw => ipw_estimate(data, instance.design()),
        EstimatorId::Oracle => oracle_estimate(data, instance),
        EstimatorId::TwoStage(r) => {
            let spec = FirstStageSpec { regressor: r, ..template.clone() };
            Ok(two_stage_estimate(data, instance.design(), &spec, seed)?.report)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::sample_dataset;
    use crate::functionals::{excess_variance, optimal_auxiliary};
    use crate::instance::fixtures::d1;
    use crate::regression::FeatureMap;

    fn triples(v: &[(f64, usize, f64)]) -> Dataset {
        Dataset::new(v.iter().map(|&(x, a, y)| Triple { x, a, y }).collect(), 0, "d1").unwrap()
    }

    #[test]
    fn ipw_hand_example() {
        let inst = d1(0.0);
        let r = ipw_estimate(&triples(&[(0.0, 1, 2.0), (1.0, 0, 0.0)]), inst.design()).unwrap();
        assert!((r.tau_hat - 5.0).abs() < 1e-12);
        assert_eq!(r.n, 2);
    }

    #[test]
    fn zero_weight_gives_zero() {
        let inst = d1(1.0).with_weight(StateActionFunction::zero()).unwrap();
        let data = sample_dataset(&inst, 50, 3).unwrap();
        assert_eq!(ipw_estimate(&data, inst.design()).unwrap().tau_hat, 0.0);
        let spec = FirstStageSpec::weighted_krr();
        assert_eq!(two_stage_estimate(&data, inst.design(), &spec, 1).unwrap().report.tau_hat, 0.0);
    }

    #[test]
    fn generic_with_zero_is_ipw() {
        let inst = d1(1.0);
        let data = sample_dataset(&inst, 300, 8).unwrap();
        let a = ipw_estimate(&data, inst.design()).unwrap();
        let b = generic_estimate(&data, inst.design(), &StateActionFunction::zero()).unwrap();
        assert!((a.tau_hat - b.tau_hat).abs() < 1e-12);
    }

    #[test]
    fn oracle_is_generic_at_optimum() {
        let inst = d1(1.0);
        let data = sample_dataset(&inst, 300, 9).unwrap();
        let o = oracle_estimate(&data, &inst).unwrap();
        let g = generic_estimate(&data, inst.design(), &optimal_auxiliary(&inst).unwrap()).unwrap();
        assert!((o.tau_hat - g.tau_hat).abs() < 1e-12);
    }

    #[test]
    fn noiseless_oracle_is_contrast_average() {
        let inst = d1(0.0);
        let data = sample_dataset(&inst, 100, 10).unwrap();
        let o = oracle_estimate(&data, &inst).unwrap();
        let direct = data.triples.iter().map(|t| inst.design().weight_inner(t.x, |b| inst.mu(t.x, b))).sum::<f64>() / 100.0;
        assert!((o.tau_hat - direct).abs() < 1e-12);
    }

    #[test]
    fn exact_linear_first_stage_matches_oracle() {
        let inst = d1(0.0);
        let data = sample_dataset(&inst, 101, 11).unwrap();
        let spec = FirstStageSpec::new(RegressorId::WeightedLinear).with_features(FeatureMap::ActionPolynomial { degree: 1 });
        let ts = two_stage_estimate(&data, inst.design(), &spec, 2).unwrap();
        let o = oracle_estimate(&data, &inst).unwrap();
        assert!((ts.report.tau_hat - o.tau_hat).abs() < 1e-8);
        assert!(ts.model_discrepancy < 1e-8);
        let generic = cross_fit_generic(&data, inst.design(), [&ts.models[0], &ts.models[1]]).unwrap();
        assert!((generic - ts.report.tau_hat).abs() < 1e-10);
    }

    #[test]
    fn split_is_ceiling() {
        assert_eq!(split_sizes(11), (6, 5));
        assert_eq!(split_sizes(10), (5, 5));
    }

    #[test]
    fn too_small_for_folds() {
        let inst = d1(1.0);
        let data = sample_dataset(&inst, 9, 1).unwrap();
        assert!(two_stage_estimate(&data, inst.design(), &FirstStageSpec::weighted_krr(), 0).is_err());
    }

    #[test]
    fn plugin_variance_targets() {
        let inst = d1(1.0);
        let data = sample_dataset(&inst, 100_000, 12).unwrap();
        let v = asymptotic_variance_estimate(&data, inst.outcome_mean(), inst.design()).unwrap();
        assert!((v / (1.0 + 125.0 / 24.0) - 1.0).abs() < 0.05, "{v}");
        let zero = StateActionFunction::zero();
        let v0 = asymptotic_variance_estimate(&data, &zero, inst.design()).unwrap();
        let target = 1.0 + 125.0 / 24.0 + excess_variance(&inst, &zero).unwrap().excess_variance;
        assert!((v0 / target - 1.0).abs() < 0.05, "{v0} vs {target}");
    }

    #[test]
    fn estimator_ids() {
        for s in ["ipw", "oracle", "two-stage-weighted-krr", "two-stage-unweighted-krr"] {
            assert_eq!(s.parse::<EstimatorId>().unwrap().as_string(), s);
        }
        assert!("two-stage-foo".parse::<EstimatorId>().is_err());
        let r = EstimateReport { estimator_id: "ipw".into(), n: 3, seed: 4, tau_hat: 0.5, plugin_variance: 2.0 };
        assert_eq!(r.to_csv_row(), "ipw,3,4,0.5,2");
    }
}
