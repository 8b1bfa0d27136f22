//! Exact population quantities of a problem instance.
//!
//! Every quantity is an expectation over the state law of a finite sum over
//! actions, so finite instances are handled by enumeration and continuous
//! ones by adaptive quadrature at absolute tolerance `1e-8`.

use crate::error::Result;
use crate::instance::{ProblemInstance, StateActionFunction};

/// The target `τ* = Σ_a λ(a) E_ξ[g(X, a) μ*(X, a)]`.
pub fn true_functional(instance: &ProblemInstance) -> Result<f64> {
    let design = instance.design();
    instance.states().expect(|x| design.weight_inner(x, |a| instance.mu(x, a)))
}

/// `‖h‖_ω = ( Σ_a λ(a) E_ξ[ g²(X,a)/π(X,a) · h²(X,a) ] )^{1/2}`.
pub fn weighted_norm(instance: &ProblemInstance, h: &StateActionFunction) -> Result<f64> {
    Ok(weighted_norm_sq(instance, |x, a| h.eval(x, a))?.sqrt())
}

pub(crate) fn weighted_norm_sq(instance: &ProblemInstance, h: impl Fn(f64, usize) -> f64) -> Result<f64> {
    let design = instance.design();
    instance.states().expect(|x| {
        design.actions().integrate(|a| {
            let g = design.weight(x, a);
            let v = h(x, a);
            if g == 0.0 || v == 0.0 {
                0.0
            } else {
                g * g / design.propensity(x, a) * v * v
            }
        })
    })
}

/// `Var_ξ(⟨g(X,·), μ*(X,·)⟩_λ)`.
pub fn between_state_variance(instance: &ProblemInstance) -> Result<f64> {
    let design = instance.design();
    let contrast = |x: f64| design.weight_inner(x, |a| instance.mu(x, a));
    let m = instance.states().expect(contrast)?;
    instance.states().expect(|x| {
        let d = contrast(x) - m;
        d * d
    })
}

/// The efficient variance `v*² = Var_ξ(⟨g, μ*⟩_λ) + ‖σ‖²_ω`.
pub fn efficient_variance(instance: &ProblemInstance) -> Result<f64> {
    let between = between_state_variance(instance)?;
    let noise = weighted_norm_sq(instance, |x, a| instance.sigma(x, a))?;
    Ok(between + noise)
}

/// The variance-optimal auxiliary function
/// `f*(x, a) = g(x,a) μ*(x,a) / π(x,a) − ⟨g(x,·), μ*(x,·)⟩_λ`,
/// flagged (and checked) as having zero conditional mean.
pub fn optimal_auxiliary(instance: &ProblemInstance) -> Result<StateActionFunction> {
    let inst = instance.clone();
    StateActionFunction::new(move |x, a| {
        let design = inst.design();
        let g = design.weight(x, a);
        let head = if g == 0.0 { 0.0 } else { g * inst.mu(x, a) / design.propensity(x, a) };
        head - design.weight_inner(x, |b| inst.mu(x, b))
    })
    .with_zero_conditional_mean(instance.design(), instance.states())
}

/// Plug-in auxiliary function built from an outcome model `μ̂`:
/// `f̂(x, a) = g μ̂ / π − ⟨g, μ̂⟩_λ`.
pub fn auxiliary_from_model(instance_design: &crate::instance::Design, mu_hat: &StateActionFunction) -> StateActionFunction {
    let design = instance_design.clone();
    let mu = mu_hat.clone();
    StateActionFunction::new(move |x, a| {
        let g = design.weight(x, a);
        let head = if g == 0.0 { 0.0 } else { g * mu.eval(x, a) / design.propensity(x, a) };
        head - design.weight_inner(x, |b| mu.eval(x, b))
    })
}

/// Excess variance of a limiting first stage `μ̄` and the identity gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcessVariance {
    /// `v²(μ̄) = E_ξ[ Var_{A∼π(X,·)}( g/π · (μ* − μ̄)(X, A) | X ) ]`.
    pub excess_variance: f64,
    /// `Δ = ‖μ̄ − μ*‖²_ω − v²(μ̄) = E_ξ[⟨g(X,·), (μ* − μ̄)(X,·)⟩²_λ]`.
    pub identity_gap: f64,
}

pub fn excess_variance(instance: &ProblemInstance, mubar: &StateActionFunction) -> Result<ExcessVariance> {
    let design = instance.design();
    let diff = |x: f64, a: usize| instance.mu(x, a) - mubar.eval(x, a);
    let conditional = |x: f64| {
        let mean = design.weight_inner(x, |a| diff(x, a));
        let second = design.actions().integrate(|a| {
            let g = design.weight(x, a);
            if g == 0.0 {
                0.0
            } else {
                let d = diff(x, a);
                g * g * d * d / design.propensity(x, a)
            }
        });
        (second - mean * mean, mean * mean)
    };
    let excess = instance.states().expect(|x| conditional(x).0)?;
    let gap = instance.states().expect(|x| conditional(x).1)?;
    Ok(ExcessVariance { excess_variance: excess.max(0.0), identity_gap: gap })
}

/// Exact value of `n · E[(τ̂ₙ(f) − τ*)²]` for a zero-conditional-mean `f`:
/// `Var_ξ(⟨g, μ*⟩) + ‖σ‖²_ω + Σ_a λ(a) E_ξ[ π (f − gμ*/π + ⟨g, μ*⟩)² ]`.
pub fn generic_estimator_variance(instance: &ProblemInstance, f: &StateActionFunction) -> Result<f64> {
    let design = instance.design();
    let penalty = instance.states().expect(|x| {
        let contrast = design.weight_inner(x, |a| instance.mu(x, a));
        design.actions().integrate(|a| {
            let p = design.propensity(x, a);
            let r = f.eval(x, a) - design.weight(x, a) * instance.mu(x, a) / p + contrast;
            p * r * r
        })
    })?;
    Ok(efficient_variance(instance)? + penalty)
}
