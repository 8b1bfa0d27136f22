//! First-stage regressors for the outcome function.
//!
//! Every regressor minimises a weighted empirical square loss. The two-stage
//! estimator trains them with weights `w_i = g²(x_i, a_i) / π²(x_i, a_i)`;
//! rows with `g(x_i, a_i) = 0` carry zero weight and never influence the fit.

pub mod cv;
pub mod isotonic;
pub mod krr;
pub mod linear;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use cv::{cross_validate_lambda, default_lambda_grid, fold_assignment, validation_losses, DEFAULT_FOLDS};
pub use isotonic::{fit_weighted_isotonic, IsotonicFit};
pub use krr::{fit_unweighted_krr, fit_weighted_krr, fit_weighted_krr_with, Kernel, KrrFit, KrrSolver, WeightedPoint};
pub use linear::{fit_l1_constrained, fit_weighted_linear, project_l1_ball, FeaturePoint, LinearFit};

use crate::dataset::Triple;
use crate::error::{OpeError, Result};
use crate::instance::{Action, Design, StateActionFunction};
use crate::rng::stream_id;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegressorId {
    WeightedKrr,
    UnweightedKrr,
    WeightedLinear,
    L1Constrained,
    WeightedIsotonic,
}

impl RegressorId {
    pub const ALL: [RegressorId; 5] = [
        RegressorId::WeightedKrr,
        RegressorId::UnweightedKrr,
        RegressorId::WeightedLinear,
        RegressorId::L1Constrained,
        RegressorId::WeightedIsotonic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RegressorId::WeightedKrr => "weighted-krr",
            RegressorId::UnweightedKrr => "unweighted-krr",
            RegressorId::WeightedLinear => "weighted-linear",
            RegressorId::L1Constrained => "l1-constrained",
            RegressorId::WeightedIsotonic => "weighted-isotonic",
        }
    }

    pub fn is_weighted(self) -> bool {
        self != RegressorId::UnweightedKrr
    }
}

impl fmt::Display for RegressorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegressorId {
    type Err = OpeError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| OpeError::Parse(format!("unknown regressor '{s}'")))
    }
}

/// Features `φ(x, a)` for the linear classes: a polynomial in `x` of the
/// given degree, separately for each action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureMap {
    /// `φ ≡ 1`, a single feature shared by all actions.
    Constant,
    ActionPolynomial { degree: usize },
}

impl Default for FeatureMap {
    fn default() -> Self {
        FeatureMap::ActionPolynomial { degree: 1 }
    }
}

impl FeatureMap {
    pub fn dimension(&self, num_actions: usize) -> usize {
        match *self {
            FeatureMap::Constant => 1,
            FeatureMap::ActionPolynomial { degree } => num_actions * (degree + 1),
        }
    }

    pub fn features(&self, x: f64, a: Action, num_actions: usize) -> Vec<f64> {
        match *self {
            FeatureMap::Constant => vec![1.0],
            FeatureMap::ActionPolynomial { degree } => {
                let mut phi = vec![0.0; self.dimension(num_actions)];
                let mut p = 1.0;
                for k in 0..=degree {
                    phi[a * (degree + 1) + k] = p;
                    p *= x;
                }
                phi
            }
        }
    }
}

/// How to fit the first stage on one half of the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStageSpec {
    pub regressor: RegressorId,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub features: FeatureMap,
    /// ℓ1 radius for `l1-constrained`, optional ℓ2 radius for `weighted-linear`.
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub ridge: f64,
    #[serde(default)]
    pub solver: KrrSolver,
    #[serde(default)]
    pub clamp: bool,
}

fn default_folds() -> usize {
    DEFAULT_FOLDS
}

impl FirstStageSpec {
    pub fn new(regressor: RegressorId) -> Self {
        Self {
            regressor,
            lambda_grid: default_lambda_grid(),
            folds: DEFAULT_FOLDS,
            features: FeatureMap::default(),
            radius: None,
            ridge: 0.0,
            solver: KrrSolver::default(),
            clamp: false,
        }
    }

    pub fn weighted_krr() -> Self {
        Self::new(RegressorId::WeightedKrr)
    }

    pub fn unweighted_krr() -> Self {
        Self::new(RegressorId::UnweightedKrr)
    }

    pub fn with_grid(mut self, grid: Vec<f64>) -> Self {
        self.lambda_grid = grid;
        self
    }

    pub fn with_features(mut self, features: FeatureMap) -> Self {
        self.features = features;
        self
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        self.radius = Some(radius);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(OpeError::invalid(format!("folds must be at least 2, got {}", self.folds)));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(OpeError::invalid("lambda grid must be non-empty and positive"));
        }
        if self.regressor == RegressorId::L1Constrained && self.radius.is_none() {
            return Err(OpeError::invalid("l1-constrained needs a radius"));
        }
        if !(self.ridge >= 0.0) {
            return Err(OpeError::invalid("ridge must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelBody {
    /// One kernel fit per action; `None` where no row carried weight.
    Kernel { per_action: Vec<Option<KrrFit>> },
    Linear { features: FeatureMap, num_actions: usize, fit: LinearFit },
    Isotonic { per_action: Vec<Option<IsotonicFit>> },
}

/// A fitted outcome model `μ̂(x, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStageModel {
    pub regressor: RegressorId,
    /// Regularisation chosen for each action (kernel models only).
    pub lambdas: Vec<Option<f64>>,
    pub body: ModelBody,
}

impl FirstStageModel {
    pub fn predict(&self, x: f64, a: Action) -> f64 {
        match &self.body {
            ModelBody::Kernel { per_action } => per_action.get(a).and_then(|m| m.as_ref()).map_or(0.0, |m| m.predict(x)),
            ModelBody::Linear { features, num_actions, fit } => fit.predict(&features.features(x, a, *num_actions)),
            ModelBody::Isotonic { per_action } => per_action.get(a).and_then(|m| m.as_ref()).map_or(0.0, |m| m.predict(x)),
        }
    }

    /// True when an iterative solver stopped at its budget.
    pub fn has_warning(&self) -> bool {
        matches!(&self.body, ModelBody::Linear { fit, .. } if fit.hit_iteration_cap)
    }

    pub fn as_function(&self) -> StateActionFunction {
        let model = self.clone();
        StateActionFunction::new(move |x, a| model.predict(x, a))
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialises")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| OpeError::Parse(e.to_string()))
    }
}

/// Regression weight of a row: `g²/π²` for weighted regressors, the indicator
/// `g ≠ 0` for the unweighted one.
pub fn training_weight(design: &Design, regressor: RegressorId, x: f64, a: Action) -> Result<f64> {
    let g = design.weight(x, a);
    if g == 0.0 {
        return Ok(0.0);
    }
    if regressor.is_weighted() {
        let r = design.importance_ratio(x, a)?;
        Ok(r * r)
    } else {
        Ok(1.0)
    }
}

/// Fit the first stage on `triples`. Cross-validation, where used, sees only
/// these triples.
pub fn fit_first_stage(triples: &[Triple], design: &Design, spec: &FirstStageSpec, seed: u64) -> Result<FirstStageModel> {
    spec.validate()?;
    let k = design.actions().len();
    let weights: Vec<f64> =
        triples.iter().map(|t| training_weight(design, spec.regressor, t.x, t.a)).collect::<Result<_>>()?;

    match spec.regressor {
        RegressorId::WeightedKrr | RegressorId::UnweightedKrr => {
            let mut per_action = Vec::with_capacity(k);
            let mut lambdas = Vec::with_capacity(k);
            for a in 0..k {
                let points: Vec<WeightedPoint> = triples
                    .iter()
                    .zip(&weights)
                    .filter(|(t, w)| t.a == a && **w > 0.0)
                    .map(|(t, w)| WeightedPoint::new(t.x, t.y, *w))
                    .collect();
                if points.is_empty() {
                    per_action.push(None);
                    lambdas.push(None);
                    continue;
                }
                // sparse actions get fewer folds; below two points the most regular λ is used
                let folds = spec.folds.min(points.len());
                let lambda = if spec.lambda_grid.len() == 1 {
                    spec.lambda_grid[0]
                } else if folds < 2 {
                    spec.lambda_grid.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                } else {
                    cross_validate_lambda(&points, &spec.lambda_grid, folds, stream_id(&[seed, a as u64]), Kernel::Sobolev1, spec.solver)?
                };
                per_action.push(Some(fit_weighted_krr_with(&points, lambda, Kernel::Sobolev1, spec.solver)?));
                lambdas.push(Some(lambda));
            }
            Ok(FirstStageModel { regressor: spec.regressor, lambdas, body: ModelBody::Kernel { per_action } })
        }
        RegressorId::WeightedLinear | RegressorId::L1Constrained => {
            let points: Vec<FeaturePoint> = triples
                .iter()
                .zip(&weights)
                .filter(|(_, w)| **w > 0.0)
                .map(|(t, w)| FeaturePoint::new(spec.features.features(t.x, t.a, k), t.y, *w))
                .collect();
            let fit = if points.is_empty() {
                LinearFit {
                    theta: vec![0.0; spec.features.dimension(k)],
                    ridge: spec.ridge,
                    l1_radius: spec.radius.filter(|_| spec.regressor == RegressorId::L1Constrained),
                    l2_radius: None,
                    iterations: 0,
                    hit_iteration_cap: false,
                }
            } else if spec.regressor == RegressorId::WeightedLinear {
                fit_weighted_linear(&points, spec.ridge, spec.radius)?
            } else {
                fit_l1_constrained(&points, spec.radius.unwrap_or_default())?
            };
            Ok(FirstStageModel {
                regressor: spec.regressor,
                lambdas: vec![None; k],
                body: ModelBody::Linear { features: spec.features, num_actions: k, fit },
            })
        }
        RegressorId::WeightedIsotonic => {
            let mut per_action = Vec::with_capacity(k);
            for a in 0..k {
                let points: Vec<(f64, f64, f64)> = triples
                    .iter()
                    .zip(&weights)
                    .filter(|(t, w)| t.a == a && **w > 0.0)
                    .map(|(t, w)| (t.x, t.y, *w))
                    .collect();
                per_action.push(if points.is_empty() { None } else { Some(fit_weighted_isotonic(&points, spec.clamp)?) });
            }
            Ok(FirstStageModel { regressor: spec.regressor, lambdas: vec![None; k], body: ModelBody::Isotonic { per_action } })
        }
    }
}
