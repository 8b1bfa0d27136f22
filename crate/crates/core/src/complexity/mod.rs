//! Monte Carlo Rademacher complexities, critical radii, small-ball
//! probabilities and shattering certificates.
//!
//! Localized classes are restricted to families whose supremum over the
//! localized set has a closed form given the data:
//!
//! * `LinearEllipsoid`: `{ f_θ : θᵀΣθ ≤ r² }`, supremum `(r/m) ‖Σ^{-1/2} v‖₂`;
//! * `L1Ball`: `c·r · conv{±φ_j}`, supremum `(c·r/m) ‖v‖_∞`;
//! * `SingletonZero`: supremum zero.
//!
//! Here `v = Σ_i ε_i w_i φ(X_i, A_i)` is the signed, weighted score vector.

pub mod shatter;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use shatter::{
    hadamard_glm_shatter, sparse_packing_shatter, verify_certificate, Link, ShatteringCertificate, Verification, Witness,
};

use crate::dataset::{sample_with_stream, Dataset};
use crate::error::{OpeError, Result};
use crate::functionals::weighted_norm;
use crate::instance::{ProblemInstance, StateActionFunction};
use crate::regression::FeatureMap;
use crate::rng::{stream_id, substream};
use crate::stats::{mean_and_stderr, McEstimate};

pub const DEFAULT_REPS: usize = 10_000;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub enum LocalizedClass {
    LinearEllipsoid { features: FeatureMap, gram: DMatrix<f64> },
    L1Ball { features: FeatureMap, scale: f64 },
    SingletonZero,
}

#[derive(Debug, Clone)]
pub struct LocalizedClassSpec {
    pub class: LocalizedClass,
    pub radius: f64,
}

impl LocalizedClassSpec {
    pub fn new(class: LocalizedClass, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(OpeError::invalid(format!("radius must be finite and non-negative, got {radius}")));
        }
        if let LocalizedClass::LinearEllipsoid { gram, .. } = &class {
            if gram.nrows() != gram.ncols() || (gram - gram.transpose()).abs().max() > 1e-12 * gram.abs().max().max(1.0) {
                return Err(OpeError::invalid("ellipsoid matrix must be square and symmetric"));
            }
            if gram.clone().cholesky().is_none() {
                return Err(OpeError::invalid("ellipsoid matrix must be positive definite"));
            }
        }
        Ok(Self { class, radius })
    }

    pub fn with_radius(&self, radius: f64) -> Result<Self> {
        Self::new(self.class.clone(), radius)
    }
}

/// `Σ = Σ_a λ(a) E_ξ[ g²/π · φφᵀ ]`, the metric of `‖·‖_ω` on linear functions.
pub fn population_gram(instance: &ProblemInstance, features: FeatureMap) -> Result<DMatrix<f64>> {
    let design = instance.design();
    let k = design.actions().len();
    let d = features.dimension(k);
    let mut gram = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v = instance.states().expect(|x| {
                design.actions().integrate(|a| {
                    let g = design.weight(x, a);
                    if g == 0.0 {
                        return 0.0;
                    }
                    let phi = features.features(x, a, k);
                    g * g / design.propensity(x, a) * phi[i] * phi[j]
                })
            })?;
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    Ok(gram)
}

/// `Γ_σ = Σ_a λ(a) E_ξ[ g⁴/π³ · σ² · φφᵀ ]`.
pub fn noise_gram(instance: &ProblemInstance, features: FeatureMap) -> Result<DMatrix<f64>> {
    let design = instance.design();
    let k = design.actions().len();
    let d = features.dimension(k);
    let mut gram = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v = instance.states().expect(|x| {
                design.actions().integrate(|a| {
                    let g = design.weight(x, a);
                    let s = instance.sigma(x, a);
                    if g == 0.0 || s == 0.0 {
                        return 0.0;
                    }
                    let p = design.propensity(x, a);
                    let phi = features.features(x, a, k);
                    g.powi(4) / p.powi(3) * s * s * phi[i] * phi[j]
                })
            })?;
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    Ok(gram)
}

/// Multiplier in the squared complexity.
#[derive(Debug, Clone)]
pub enum Multiplier {
    /// `Y − μ*(X, A)`, giving `𝒮_m`.
    OutcomeNoise,
    /// A fixed function `h(X, A)`, e.g. `μ* − μ̄`, giving `𝒟_m`.
    Custom(StateActionFunction),
}

struct SupremumEvaluator {
    features: Option<FeatureMap>,
    kind: SupKind,
    radius: f64,
    num_actions: usize,
}

enum SupKind {
    Ellipsoid(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    L1(f64),
    Zero,
}

impl SupremumEvaluator {
    fn new(spec: &LocalizedClassSpec, num_actions: usize) -> Result<Self> {
        let (features, kind) = match &spec.class {
            LocalizedClass::LinearEllipsoid { features, gram } => {
                if gram.nrows() != features.dimension(num_actions) {
                    return Err(OpeError::invalid("ellipsoid matrix does not match the feature dimension"));
                }
                let chol = gram.clone().cholesky().ok_or_else(|| OpeError::invalid("ellipsoid matrix must be positive definite"))?;
                (Some(*features), SupKind::Ellipsoid(chol))
            }
            LocalizedClass::L1Ball { features, scale } => {
                if !(*scale >= 0.0) {
                    return Err(OpeError::invalid("ℓ1 scale must be non-negative"));
                }
                (Some(*features), SupKind::L1(*scale))
            }
            LocalizedClass::SingletonZero => (None, SupKind::Zero),
        };
        Ok(Self { features, kind, radius: spec.radius, num_actions })
    }

    /// `sup_f (1/m) Σ ε_i w_i f(X_i, A_i)` given the weighted, signed terms.
    fn supremum(&self, data: &Dataset, signed_weights: &[f64]) -> f64 {
        let Some(features) = self.features else { return 0.0 };
        let d = features.dimension(self.num_actions);
        let mut v = DVector::zeros(d);
        for (t, w) in data.triples.iter().zip(signed_weights) {
            if *w != 0.0 {
                for (j, p) in features.features(t.x, t.a, self.num_actions).into_iter().enumerate() {
                    v[j] += w * p;
                }
            }
        }
        let m = data.len() as f64;
        match &self.kind {
            SupKind::Ellipsoid(chol) => {
                let z = chol.l().solve_lower_triangular(&v).expect("cholesky factor is invertible");
                self.radius * z.norm() / m
            }
            SupKind::L1(scale) => scale * self.radius * v.amax() / m,
            SupKind::Zero => 0.0,
        }
    }
}

fn sign_stream(seed: u64, rep: u64) -> crate::rng::Rng {
    substream(stream_id(&[seed, rep, 0x5161]), 1)
}

fn per_rep<F>(instance: &ProblemInstance, m: usize, reps: usize, seed: u64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&Dataset, &mut crate::rng::Rng) -> Result<f64> + Sync,
{
    if m == 0 || reps == 0 {
        return Err(OpeError::invalid("sample size and reps must be positive"));
    }
    (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let data = sample_with_stream(instance, m, seed, stream_id(&[rep, 0xDA7A]))?;
            f(&data, &mut sign_stream(seed, rep))
        })
        .collect()
}

/// Monte Carlo estimate of `𝒮_m` (outcome-noise multiplier) or `𝒟_m`
/// (custom multiplier) of the localized class.
pub fn rademacher_s_mc(
    instance: &ProblemInstance,
    spec: &LocalizedClassSpec,
    m: usize,
    multiplier: &Multiplier,
    reps: usize,
    seed: u64,
) -> Result<McEstimate> {
    let design = instance.design();
    let eval = SupremumEvaluator::new(spec, design.actions().len())?;
    let squares = per_rep(instance, m, reps, seed, |data, rng| {
        let mut w = Vec::with_capacity(data.len());
        for t in &data.triples {
            let ratio = design.importance_ratio(t.x, t.a)?;
            let mult = match multiplier {
                Multiplier::OutcomeNoise => t.y - instance.mu(t.x, t.a),
                Multiplier::Custom(h) => h.eval(t.x, t.a),
            };
            let eps = if rng.random::<bool>() { 1.0 } else { -1.0 };
            w.push(eps * ratio * ratio * mult);
        }
        Ok(eval.supremum(data, &w).powi(2))
    })?;
    let (mean_sq, se_sq) = mean_and_stderr(&squares);
    let estimate = mean_sq.max(0.0).sqrt();
    let stderr = if estimate > 0.0 { se_sq / (2.0 * estimate) } else { 0.0 };
    Ok(McEstimate { estimate, stderr })
}

/// Monte Carlo estimate of `ℛ_m` of the localized class.
pub fn rademacher_r_mc(instance: &ProblemInstance, spec: &LocalizedClassSpec, m: usize, reps: usize, seed: u64) -> Result<McEstimate> {
    let design = instance.design();
    let eval = SupremumEvaluator::new(spec, design.actions().len())?;
    let sups = per_rep(instance, m, reps, seed, |data, rng| {
        let mut w = Vec::with_capacity(data.len());
        for t in &data.triples {
            let eps = if rng.random::<bool>() { 1.0 } else { -1.0 };
            w.push(eps * design.importance_ratio(t.x, t.a)?);
        }
        Ok(eval.supremum(data, &w))
    })?;
    Ok(McEstimate::from_samples(&sups))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadiusKind {
    /// `𝒮_m(s)/s ≤ s`.
    Squared,
    /// `ℛ_m(r)/r ≤ α₁α₂/32`.
    Plain { alpha1: f64, alpha2: f64 },
}

#[derive(Debug, Clone)]
pub enum ComplexitySource<'a> {
    /// `ℛ_m(r) ≤ r √(d/m)` and `𝒮_m(s) = s √(tr(Σ⁻¹Γ_σ)/m)`.
    ClosedFormLinear { d: usize, trace: f64 },
    MonteCarlo { instance: &'a ProblemInstance, class: LocalizedClass, multiplier: Multiplier, reps: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub r: f64,
    pub estimate: f64,
    pub stderr: f64,
}

pub fn profile_to_csv(profile: &[ProfilePoint]) -> String {
    let mut out = String::from("r,estimate,stderr\n");
    for p in profile {
        out.push_str(&format!("{},{},{}\n", p.r, p.estimate, p.stderr));
    }
    out
}

fn mc_complexity(source: &ComplexitySource<'_>, kind: RadiusKind, m: usize, r: f64, seed: u64) -> Result<McEstimate> {
    let ComplexitySource::MonteCarlo { instance, class, multiplier, reps, .. } = source else {
        unreachable!("closed form handled by the caller")
    };
    let spec = LocalizedClassSpec::new(class.clone(), r)?;
    match kind {
        RadiusKind::Squared => rademacher_s_mc(instance, &spec, m, multiplier, *reps, seed),
        RadiusKind::Plain { .. } => rademacher_r_mc(instance, &spec, m, *reps, seed),
    }
}

/// Complexity estimates at each radius, with independent seeds per radius.
pub fn complexity_profile(source: &ComplexitySource<'_>, kind: RadiusKind, m: usize, radii: &[f64]) -> Result<Vec<ProfilePoint>> {
    radii
        .iter()
        .enumerate()
        .map(|(k, &r)| match source {
            ComplexitySource::ClosedFormLinear { d, trace } => {
                let slope = match kind {
                    RadiusKind::Squared => (trace / m as f64).sqrt(),
                    RadiusKind::Plain { .. } => (*d as f64 / m as f64).sqrt(),
                };
                Ok(ProfilePoint { r, estimate: r * slope, stderr: 0.0 })
            }
            ComplexitySource::MonteCarlo { seed, .. } => {
                let est = mc_complexity(source, kind, m, r, stream_id(&[*seed, k as u64]))?;
                Ok(ProfilePoint { r, estimate: est.estimate, stderr: est.stderr })
            }
        })
        .collect()
}

/// Error if `estimate(r)/r` increases by more than `k` combined standard errors.
pub fn check_ratio_monotone(profile: &[ProfilePoint], k: f64) -> Result<()> {
    for w in profile.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.r <= 0.0 || b.r <= a.r {
            return Err(OpeError::invalid("profile radii must be positive and increasing"));
        }
        let (ra, rb) = (a.estimate / a.r, b.estimate / b.r);
        let se = ((a.stderr / a.r).powi(2) + (b.stderr / b.r).powi(2)).sqrt();
        if rb > ra + k * se {
            return Err(OpeError::NonMonotoneProfile { radius: b.r });
        }
    }
    Ok(())
}

/// Smallest non-negative radius satisfying the critical inequality, found
/// by bisection on the non-increasing ratio `r ↦ complexity(r)/r`. Returns
/// `+∞` when no radius up to `1e6` qualifies.
pub fn critical_radius(source: &ComplexitySource<'_>, kind: RadiusKind, m: usize, tolerance: f64) -> Result<f64> {
    if m == 0 {
        return Err(OpeError::invalid("m must be positive"));
    }
    if !(tolerance > 0.0) {
        return Err(OpeError::invalid("tolerance must be positive"));
    }
    let threshold = |r: f64| match kind {
        RadiusKind::Squared => r,
        RadiusKind::Plain { alpha1, alpha2 } => alpha1 * alpha2 / 32.0,
    };
    if let ComplexitySource::ClosedFormLinear { d, trace } = source {
        return Ok(match kind {
            RadiusKind::Squared => (trace / m as f64).sqrt(),
            RadiusKind::Plain { alpha1, alpha2 } => {
                if (m as f64) > 1024.0 * *d as f64 / (alpha1 * alpha1 * alpha2 * alpha2) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        });
    }
    let ComplexitySource::MonteCarlo { seed, .. } = source else { unreachable!() };

    let radii: Vec<f64> = (0..7).map(|k| 10f64.powi(k - 3)).collect();
    let profile = complexity_profile(source, kind, m, &radii)?;
    check_ratio_monotone(&profile, 3.0)?;

    // common random numbers across the bisection
    let bisect_seed = stream_id(&[*seed, 0xB15E]);
    let holds = |r: f64| -> Result<bool> { Ok(mc_complexity(source, kind, m, r, bisect_seed)?.estimate / r <= threshold(r)) };
    if holds(tolerance)? {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while !holds(hi)? {
        hi *= 2.0;
        if hi > 1e6 {
            return Ok(f64::INFINITY);
        }
    }
    let mut lo = tolerance;
    while hi - lo > tolerance {
        let mid = 0.5 * (lo + hi);
        if holds(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Monte Carlo estimate of `P[ |g h/π|(X, A) ≥ α₁ ‖h‖_ω ]`.
pub fn small_ball_estimate(instance: &ProblemInstance, h: &StateActionFunction, alpha1: f64, reps: usize, seed: u64) -> Result<McEstimate> {
    let norm = weighted_norm(instance, h)?;
    if norm == 0.0 {
        return Err(OpeError::invalid("small-ball probability needs ‖h‖_ω > 0"));
    }
    if !(alpha1 >= 0.0) {
        return Err(OpeError::invalid("alpha1 must be non-negative"));
    }
    let data = sample_with_stream(instance, reps, seed, 0x5B)?;
    let design = instance.design();
    let hits: Vec<f64> = data
        .triples
        .iter()
        .map(|t| Ok(((design.importance_ratio(t.x, t.a)? * h.eval(t.x, t.a)).abs() >= alpha1 * norm) as u8 as f64))
        .collect::<Result<_>>()?;
    Ok(McEstimate::from_samples(&hits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::fixtures::d1;

    fn constant_ellipsoid(inst: &ProblemInstance, r: f64) -> LocalizedClassSpec {
        let gram = population_gram(inst, FeatureMap::Constant).unwrap();
        LocalizedClassSpec::new(LocalizedClass::LinearEllipsoid { features: FeatureMap::Constant, gram }, r).unwrap()
    }

    #[test]
    fn singleton_is_zero() {
        let inst = d1(1.0);
        let spec = LocalizedClassSpec::new(LocalizedClass::SingletonZero, 1.0).unwrap();
        assert_eq!(rademacher_r_mc(&inst, &spec, 10, 50, 1).unwrap().estimate, 0.0);
        assert_eq!(rademacher_s_mc(&inst, &spec, 10, &Multiplier::OutcomeNoise, 50, 1).unwrap().estimate, 0.0);
    }

    #[test]
    fn noiseless_s_is_zero() {
        let inst = d1(0.0);
        let spec = constant_ellipsoid(&inst, 1.0);
        assert_eq!(rademacher_s_mc(&inst, &spec, 20, &Multiplier::OutcomeNoise, 100, 2).unwrap().estimate, 0.0);
    }

    #[test]
    fn s_matches_trace_formula() {
        let inst = d1(1.0);
        let spec = constant_ellipsoid(&inst, 1.0);
        let m = 50;
        let est = rademacher_s_mc(&inst, &spec, m, &Multiplier::OutcomeNoise, 20_000, 3).unwrap();
        let sigma = population_gram(&inst, FeatureMap::Constant).unwrap()[(0, 0)];
        let gamma = noise_gram(&inst, FeatureMap::Constant).unwrap()[(0, 0)];
        let exact = (gamma / sigma / m as f64).sqrt();
        assert!((est.estimate - exact).abs() < 4.0 * est.stderr, "{est:?} vs {exact}");
    }

    #[test]
    fn population_gram_of_constant_is_norm_of_one() {
        let g = population_gram(&d1(0.0), FeatureMap::Constant).unwrap();
        assert!((g[(0, 0)] - 125.0 / 24.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_radii() {
        let src = ComplexitySource::ClosedFormLinear { d: 4, trace: 2.0 };
        let plain = RadiusKind::Plain { alpha1: 1.0, alpha2: 1.0 };
        assert_eq!(critical_radius(&src, plain, 4097, 1e-4).unwrap(), 0.0);
        assert!(critical_radius(&src, plain, 4096, 1e-4).unwrap().is_infinite());
        assert!((critical_radius(&src, RadiusKind::Squared, 200, 1e-4).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn singleton_radii_zero() {
        let inst = d1(1.0);
        for kind in [RadiusKind::Squared, RadiusKind::Plain { alpha1: 0.5, alpha2: 0.5 }] {
            let src = ComplexitySource::MonteCarlo {
                instance: &inst,
                class: LocalizedClass::SingletonZero,
                multiplier: Multiplier::OutcomeNoise,
                reps: 20,
                seed: 1,
            };
            assert_eq!(critical_radius(&src, kind, 10, 1e-4).unwrap(), 0.0);
        }
    }

    #[test]
    fn monotone_check_flags_increase() {
        let ok = [ProfilePoint { r: 1.0, estimate: 1.0, stderr: 0.0 }, ProfilePoint { r: 2.0, estimate: 1.5, stderr: 0.0 }];
        assert!(check_ratio_monotone(&ok, 3.0).is_ok());
        let bad = [ProfilePoint { r: 1.0, estimate: 1.0, stderr: 0.01 }, ProfilePoint { r: 2.0, estimate: 3.0, stderr: 0.01 }];
        assert!(matches!(check_ratio_monotone(&bad, 3.0), Err(OpeError::NonMonotoneProfile { .. })));
    }

    #[test]
    fn small_ball_edges() {
        let inst = d1(0.0);
        let one = StateActionFunction::constant(1.0);
        assert_eq!(small_ball_estimate(&inst, &one, 0.0, 500, 1).unwrap().estimate, 1.0);
        assert_eq!(small_ball_estimate(&inst, &one, 1e9, 500, 1).unwrap().estimate, 0.0);
        assert!(small_ball_estimate(&inst, &StateActionFunction::zero(), 0.5, 10, 1).is_err());
    }

    #[test]
    fn profile_csv_shape() {
        let csv = profile_to_csv(&[ProfilePoint { r: 0.5, estimate: 0.25, stderr: 0.0 }]);
        assert_eq!(csv, "r,estimate,stderr\n0.5,0.25,0\n");
    }
}
