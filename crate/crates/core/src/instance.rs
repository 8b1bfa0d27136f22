//! Problem instances: state law, action space, propensity, weight function
//! and outcome model.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};
use crate::quadrature::{self, ABS_TOL};

/// Actions are identified by their index in the [`ActionSpace`].
pub type Action = usize;

/// Tolerance on `Σ_a λ(a) π(x, a) = 1`.
pub const NORMALIZATION_TOL: f64 = 1e-10;
/// Tolerance for the zero-conditional-mean flag.
pub const ZERO_MEAN_TOL: f64 = 1e-8;
/// Number of equispaced probe states used for continuous state spaces.
pub const PROBE_GRID: usize = 64;

pub type StateActionFn = Arc<dyn Fn(f64, Action) -> f64 + Send + Sync>;
type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Finite action space with a positive base measure λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpace {
    base_weights: Vec<f64>,
}

impl ActionSpace {
    pub fn new(base_weights: Vec<f64>) -> Result<Self> {
        if base_weights.is_empty() {
            return Err(OpeError::InvalidInstance("action space is empty".into()));
        }
        if let Some(w) = base_weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(OpeError::InvalidInstance(format!("base weight {w} is not positive")));
        }
        Ok(Self { base_weights })
    }

    /// Counting measure on `k` actions.
    pub fn counting(k: usize) -> Result<Self> {
        Self::new(vec![1.0; k])
    }

    pub fn len(&self) -> usize {
        self.base_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base_weights.is_empty()
    }

    pub fn weight(&self, a: Action) -> f64 {
        self.base_weights[a]
    }

    pub fn weights(&self) -> &[f64] {
        &self.base_weights
    }

    pub fn actions(&self) -> impl Iterator<Item = Action> {
        0..self.base_weights.len()
    }

    /// `⟨h(·), 1⟩_λ = Σ_a λ(a) h(a)`.
    pub fn integrate(&self, mut h: impl FnMut(Action) -> f64) -> f64 {
        self.base_weights.iter().enumerate().map(|(a, w)| w * h(a)).sum()
    }
}

/// A one-dimensional density on `[0, 1]` together with its inverse CDF.
#[derive(Clone)]
pub struct ContinuousDensity {
    name: String,
    density: ScalarFn,
    inverse_cdf: ScalarFn,
}

impl ContinuousDensity {
    pub fn new(
        name: impl Into<String>,
        density: impl Fn(f64) -> f64 + Send + Sync + 'static,
        inverse_cdf: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let d = Self { name: name.into(), density: Arc::new(density), inverse_cdf: Arc::new(inverse_cdf) };
        let mass = quadrature::integrate(|x| (d.density)(x), 0.0, 1.0, ABS_TOL)?;
        if (mass - 1.0).abs() > ABS_TOL {
            return Err(OpeError::InvalidInstance(format!("density {} integrates to {mass}", d.name)));
        }
        for k in 0..=PROBE_GRID {
            let x = k as f64 / PROBE_GRID as f64;
            if !((d.density)(x) >= 0.0) {
                return Err(OpeError::InvalidInstance(format!("density {} is negative at {x}", d.name)));
            }
        }
        Ok(d)
    }

    pub fn uniform() -> Self {
        Self { name: "uniform".into(), density: Arc::new(|_| 1.0), inverse_cdf: Arc::new(|u| u) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn density(&self, x: f64) -> f64 {
        (self.density)(x)
    }

    pub fn quantile(&self, u: f64) -> f64 {
        (self.inverse_cdf)(u)
    }
}

impl fmt::Debug for ContinuousDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContinuousDensity").field("name", &self.name).finish()
    }
}

/// Law of the state `X`.
#[derive(Debug, Clone)]
pub enum StateDistribution {
    Finite { states: Vec<f64>, probs: Vec<f64> },
    Continuous1D(ContinuousDensity),
}

impl StateDistribution {
    pub fn finite(states: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if states.is_empty() || states.len() != probs.len() {
            return Err(OpeError::InvalidInstance("finite state table must be non-empty and match its probabilities".into()));
        }
        if probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(OpeError::InvalidInstance("state probabilities must be non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(OpeError::InvalidInstance(format!("state probabilities sum to {total}")));
        }
        let mut seen = states.clone();
        seen.sort_by(f64::total_cmp);
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(OpeError::InvalidInstance("duplicate state values".into()));
        }
        Ok(StateDistribution::Finite { states, probs })
    }

    pub fn uniform_unit_interval() -> Self {
        StateDistribution::Continuous1D(ContinuousDensity::uniform())
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, StateDistribution::Finite { .. })
    }

    /// `E[f(X)]`, exact for finite laws, adaptive quadrature otherwise.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> Result<f64> {
        match self {
            StateDistribution::Finite { states, probs } => {
                Ok(states.iter().zip(probs).map(|(x, p)| if *p > 0.0 { p * f(*x) } else { 0.0 }).sum())
            }
            StateDistribution::Continuous1D(d) => {
                quadrature::integrate(|x| d.density(x) * f(x), 0.0, 1.0, ABS_TOL)
            }
        }
    }

    /// States on which pointwise invariants are checked.
    pub fn probe_states(&self) -> Vec<f64> {
        match self {
            StateDistribution::Finite { states, .. } => states.clone(),
            StateDistribution::Continuous1D(_) => {
                (0..PROBE_GRID).map(|k| (k as f64 + 0.5) / PROBE_GRID as f64).collect()
            }
        }
    }

    /// Map a uniform draw to a state.
    pub fn draw(&self, u: f64) -> f64 {
        match self {
            StateDistribution::Finite { states, probs } => {
                let mut acc = 0.0;
                for (x, p) in states.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *x;
                    }
                }
                // u landed in the rounding slack above the last cumulative sum
                *states.iter().zip(probs).rev().find(|(_, p)| **p > 0.0).map(|(x, _)| x).unwrap_or(&states[0])
            }
            StateDistribution::Continuous1D(d) => d.quantile(u),
        }
    }
}

/// A function `h(x, a)`, optionally flagged as having zero conditional mean
/// under the propensity (`⟨h(x,·), π(x,·)⟩_λ = 0` for every `x`).
#[derive(Clone)]
pub struct StateActionFunction {
    f: StateActionFn,
    zero_conditional_mean: bool,
}

impl StateActionFunction {
    pub fn new(f: impl Fn(f64, Action) -> f64 + Send + Sync + 'static) -> Self {
        Self { f: Arc::new(f), zero_conditional_mean: false }
    }

    pub fn from_arc(f: StateActionFn) -> Self {
        Self { f, zero_conditional_mean: false }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_, _| c)
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// Finite table indexed by (state, action); unknown states evaluate to NaN.
    pub fn table(states: &[f64], values: Vec<Vec<f64>>) -> Self {
        let index = state_index(states);
        Self::new(move |x, a| match index.get(&x.to_bits()) {
            Some(&i) => values[i][a],
            None => f64::NAN,
        })
    }

    /// Set the zero-conditional-mean flag after checking it on the probe grid.
    pub fn with_zero_conditional_mean(mut self, design: &Design, states: &StateDistribution) -> Result<Self> {
        for x in states.probe_states() {
            let m = design.propensity_mean(x, |a| self.eval(x, a));
            if m.abs() > ZERO_MEAN_TOL {
                return Err(OpeError::invalid(format!(
                    "function does not have zero conditional mean at x = {x} (mean {m:e})"
                )));
            }
        }
        self.zero_conditional_mean = true;
        Ok(self)
    }

    pub fn has_zero_conditional_mean(&self) -> bool {
        self.zero_conditional_mean
    }

    #[inline]
    pub fn eval(&self, x: f64, a: Action) -> f64 {
        (self.f)(x, a)
    }

    pub fn as_arc(&self) -> StateActionFn {
        Arc::clone(&self.f)
    }

    pub fn scaled(&self, c: f64) -> Self {
        let f = self.as_arc();
        Self::new(move |x, a| c * f(x, a))
    }

    pub fn add(&self, other: &StateActionFunction) -> Self {
        let (f, g) = (self.as_arc(), other.as_arc());
        Self::new(move |x, a| f(x, a) + g(x, a))
    }

    pub fn sub(&self, other: &StateActionFunction) -> Self {
        let (f, g) = (self.as_arc(), other.as_arc());
        Self::new(move |x, a| f(x, a) - g(x, a))
    }
}

impl fmt::Debug for StateActionFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StateActionFunction").field("zero_conditional_mean", &self.zero_conditional_mean).finish()
    }
}

fn state_index(states: &[f64]) -> Arc<HashMap<u64, usize>> {
    Arc::new(states.iter().enumerate().map(|(i, x)| (x.to_bits(), i)).collect())
}

/// The parts of an instance that are known to the statistician: the action
/// space, the propensity π and the weight function g.
#[derive(Clone)]
pub struct Design {
    actions: ActionSpace,
    propensity: StateActionFn,
    weight: StateActionFn,
}

impl Design {
    pub fn new(
        actions: ActionSpace,
        propensity: impl Fn(f64, Action) -> f64 + Send + Sync + 'static,
        weight: impl Fn(f64, Action) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { actions, propensity: Arc::new(propensity), weight: Arc::new(weight) }
    }

    pub fn from_arcs(actions: ActionSpace, propensity: StateActionFn, weight: StateActionFn) -> Self {
        Self { actions, propensity, weight }
    }

    pub fn actions(&self) -> &ActionSpace {
        &self.actions
    }

    #[inline]
    pub fn propensity(&self, x: f64, a: Action) -> f64 {
        (self.propensity)(x, a)
    }

    #[inline]
    pub fn weight(&self, x: f64, a: Action) -> f64 {
        (self.weight)(x, a)
    }

    /// `g(x, a) / π(x, a)`; errors on zero propensity.
    #[inline]
    pub fn importance_ratio(&self, x: f64, a: Action) -> Result<f64> {
        let p = self.propensity(x, a);
        if !(p > 0.0) {
            return Err(OpeError::ZeroPropensity { state: x, action: a });
        }
        Ok(self.weight(x, a) / p)
    }

    /// `⟨g(x,·), h(x,·)⟩_λ`.
    pub fn weight_inner(&self, x: f64, h: impl Fn(Action) -> f64) -> f64 {
        self.actions.integrate(|a| self.weight(x, a) * h(a))
    }

    /// `⟨h(x,·), π(x,·)⟩_λ`, the conditional mean of `h(x, A)`.
    pub fn propensity_mean(&self, x: f64, h: impl Fn(Action) -> f64) -> f64 {
        self.actions.integrate(|a| self.propensity(x, a) * h(a))
    }

    /// `Σ_a λ(a) π(x, a)`.
    pub fn propensity_mass(&self, x: f64) -> f64 {
        self.actions.integrate(|a| self.propensity(x, a))
    }

    /// Check normalization and overlap at `x`.
    pub fn check_state(&self, x: f64) -> Result<()> {
        let sum = self.propensity_mass(x);
        if (sum - 1.0).abs() > NORMALIZATION_TOL || !sum.is_finite() {
            return Err(OpeError::NonNormalizedPropensity { state: x, sum });
        }
        for a in self.actions.actions() {
            if !(self.propensity(x, a) > 0.0) {
                return Err(OpeError::InvalidInstance(format!("overlap violated: π({x}, {a}) is not positive")));
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Design").field("actions", &self.actions).finish()
    }
}

/// Serializable description of an instance: either explicit finite tables or
/// a named built-in family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InstanceDescription {
    /// Finite states, tables indexed `[state][action]`.
    Finite {
        id: String,
        states: Vec<f64>,
        state_probs: Vec<f64>,
        #[serde(default)]
        base_weights: Option<Vec<f64>>,
        propensity: Vec<Vec<f64>>,
        weight: Vec<Vec<f64>>,
        outcome_mean: Vec<Vec<f64>>,
        outcome_sd: Vec<Vec<f64>>,
    },
    /// Binary-action missing-data problem on `[0, 1]` with uniform states,
    /// `g(x, a) = a` and the tent outcome function.
    MissingData {
        #[serde(default = "default_missing_id")]
        id: String,
        propensity: PropensityFamily,
        gamma: f64,
        sigma0: f64,
        #[serde(default = "default_pi_min")]
        pi_min: f64,
    },
}

fn default_missing_id() -> String {
    "missing-data".into()
}

pub fn default_pi_min() -> f64 {
    0.005
}

/// The two propensity scores of the missing-data simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropensityFamily {
    /// `π(x,1) = ½ − (½ − π_min) sin(πx)`, minimal at `x = ½`.
    Pi1,
    /// `π(x,1) = ½ − (½ − π_min) sin(πx/2)`, minimal at `x = 1`.
    Pi2,
}

impl PropensityFamily {
    pub fn treated(self, x: f64, pi_min: f64) -> f64 {
        let arg = match self {
            PropensityFamily::Pi1 => std::f64::consts::PI * x,
            PropensityFamily::Pi2 => std::f64::consts::PI * x / 2.0,
        };
        0.5 - (0.5 - pi_min) * arg.sin()
    }

    pub fn id(self) -> &'static str {
        match self {
            PropensityFamily::Pi1 => "pi1",
            PropensityFamily::Pi2 => "pi2",
        }
    }
}

/// Tent function `½ − |x − ½|`.
pub fn tent(x: f64) -> f64 {
    0.5 - (x - 0.5).abs()
}

/// A complete problem instance. Immutable and cheap to clone.
#[derive(Clone)]
pub struct ProblemInstance {
    id: String,
    states: StateDistribution,
    design: Design,
    outcome_mean: StateActionFunction,
    outcome_sd: StateActionFunction,
    description: Option<InstanceDescription>,
}

impl fmt::Debug for ProblemInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemInstance")
            .field("id", &self.id)
            .field("states", &self.states)
            .field("design", &self.design)
            .finish()
    }
}

impl ProblemInstance {
    /// Build and validate an instance. Normalization, overlap and `σ ≥ 0` are
    /// checked on every probe state.
    pub fn new(
        id: impl Into<String>,
        states: StateDistribution,
        design: Design,
        outcome_mean: StateActionFunction,
        outcome_sd: StateActionFunction,
    ) -> Result<Self> {
        let inst = Self { id: id.into(), states, design, outcome_mean, outcome_sd, description: None };
        inst.validate()?;
        Ok(inst)
    }

    fn validate(&self) -> Result<()> {
        for x in self.states.probe_states() {
            self.design.check_state(x)?;
            for a in self.design.actions().actions() {
                let s = self.outcome_sd.eval(x, a);
                if !(s >= 0.0) || !s.is_finite() {
                    return Err(OpeError::InvalidInstance(format!("σ({x}, {a}) = {s} is not a finite non-negative value")));
                }
                if !self.outcome_mean.eval(x, a).is_finite() || !self.design.weight(x, a).is_finite() {
                    return Err(OpeError::InvalidInstance(format!("non-finite μ* or g at ({x}, {a})")));
                }
            }
        }
        Ok(())
    }

    pub fn from_description(desc: &InstanceDescription) -> Result<Self> {
        let mut inst = match desc {
            InstanceDescription::Finite { id, states, state_probs, base_weights, propensity, weight, outcome_mean, outcome_sd } => {
                let k = propensity.first().map(|r| r.len()).unwrap_or(0);
                let actions = match base_weights {
                    Some(w) => ActionSpace::new(w.clone())?,
                    None => ActionSpace::counting(k)?,
                };
                for (name, t) in [("propensity", propensity), ("weight", weight), ("outcome_mean", outcome_mean), ("outcome_sd", outcome_sd)] {
                    if t.len() != states.len() || t.iter().any(|r| r.len() != actions.len()) {
                        return Err(OpeError::InvalidInstance(format!("table {name} must be {} x {}", states.len(), actions.len())));
                    }
                }
                let dist = StateDistribution::finite(states.clone(), state_probs.clone())?;
                let pi = StateActionFunction::table(states, propensity.clone());
                let g = StateActionFunction::table(states, weight.clone());
                let design = Design::from_arcs(actions, pi.as_arc(), g.as_arc());
                Self::new(
                    id.clone(),
                    dist,
                    design,
                    StateActionFunction::table(states, outcome_mean.clone()),
                    StateActionFunction::table(states, outcome_sd.clone()),
                )?
            }
            InstanceDescription::MissingData { id, propensity, gamma, sigma0, pi_min } => {
                missing_data(id, *propensity, *gamma, *sigma0, *pi_min)?
            }
        };
        inst.description = Some(desc.clone());
        Ok(inst)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let desc: InstanceDescription = toml::from_str(text).map_err(|e| OpeError::Parse(e.to_string()))?;
        Self::from_description(&desc)
    }

    /// Structured text form; only available for instances built from a
    /// description.
    pub fn to_toml(&self) -> Result<String> {
        let desc = self
            .description
            .as_ref()
            .ok_or_else(|| OpeError::invalid("instance was built from closures and has no description"))?;
        toml::to_string(desc).map_err(|e| OpeError::Parse(e.to_string()))
    }

    pub fn description(&self) -> Option<&InstanceDescription> {
        self.description.as_ref()
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn states(&self) -> &StateDistribution {
        &self.states
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn actions(&self) -> &ActionSpace {
        self.design.actions()
    }

    pub fn outcome_mean(&self) -> &StateActionFunction {
        &self.outcome_mean
    }

    pub fn outcome_sd(&self) -> &StateActionFunction {
        &self.outcome_sd
    }

    #[inline]
    pub fn propensity(&self, x: f64, a: Action) -> f64 {
        self.design.propensity(x, a)
    }

    #[inline]
    pub fn weight(&self, x: f64, a: Action) -> f64 {
        self.design.weight(x, a)
    }

    #[inline]
    pub fn mu(&self, x: f64, a: Action) -> f64 {
        self.outcome_mean.eval(x, a)
    }

    #[inline]
    pub fn sigma(&self, x: f64, a: Action) -> f64 {
        self.outcome_sd.eval(x, a)
    }

    /// Copy with a different outcome mean.
    pub fn with_outcome_mean(&self, mu: StateActionFunction) -> Result<Self> {
        Self::new(self.id.clone(), self.states.clone(), self.design.clone(), mu, self.outcome_sd.clone())
    }

    /// Copy with a different noise scale.
    pub fn with_outcome_sd(&self, sd: StateActionFunction) -> Result<Self> {
        Self::new(self.id.clone(), self.states.clone(), self.design.clone(), self.outcome_mean.clone(), sd)
    }

    /// Copy with a different weight function.
    pub fn with_weight(&self, weight: StateActionFunction) -> Result<Self> {
        let design = Design::from_arcs(self.design.actions.clone(), Arc::clone(&self.design.propensity), weight.as_arc());
        Self::new(self.id.clone(), self.states.clone(), design, self.outcome_mean.clone(), self.outcome_sd.clone())
    }

    /// Copy with a different finite state law (same support).
    pub fn with_states(&self, states: StateDistribution) -> Result<Self> {
        Self::new(self.id.clone(), states, self.design.clone(), self.outcome_mean.clone(), self.outcome_sd.clone())
    }
}

/// The binary-action missing-data instance with uniform states on `[0, 1]`:
/// `g(x, a) = a`, `μ*(x, 1)` the tent, `μ*(x, 0) = 0`,
/// `σ²(x, 1) = σ₀² π(x, 1)^γ` and `σ(x, 0) = 0`.
pub fn missing_data(id: &str, family: PropensityFamily, gamma: f64, sigma0: f64, pi_min: f64) -> Result<ProblemInstance> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(OpeError::InvalidInstance(format!("gamma = {gamma} is outside [0, 1]")));
    }
    if !(sigma0 >= 0.0) {
        return Err(OpeError::InvalidInstance(format!("sigma0 = {sigma0} is negative")));
    }
    if !(pi_min > 0.0 && pi_min <= 0.5) {
        return Err(OpeError::InvalidInstance(format!("pi_min = {pi_min} is outside (0, 0.5]")));
    }
    let treated = move |x: f64| family.treated(x, pi_min);
    let design = Design::new(
        ActionSpace::counting(2)?,
        move |x, a| if a == 1 { treated(x) } else { 1.0 - treated(x) },
        |_, a| a as f64,
    );
    let mu = StateActionFunction::new(|x, a| if a == 1 { tent(x) } else { 0.0 });
    let sd = StateActionFunction::new(move |x, a| {
        if a == 1 {
            sigma0 * treated(x).powf(gamma / 2.0)
        } else {
            0.0
        }
    });
    let mut inst = ProblemInstance::new(id, StateDistribution::uniform_unit_interval(), design, mu, sd)?;
    inst.description = Some(InstanceDescription::MissingData { id: id.to_string(), propensity: family, gamma, sigma0, pi_min });
    Ok(inst)
}
