//! Local minimax perturbations on finite spaces with exact divergences.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};
use crate::functionals::{true_functional, weighted_norm};
use crate::instance::{ProblemInstance, StateActionFunction, StateDistribution};
use crate::rng::{stream_id, substream};
use crate::stats::McEstimate;

pub const PROBABILITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDistribution {
    pub atoms: Vec<f64>,
    pub probs: Vec<f64>,
}

impl FiniteDistribution {
    pub fn new(atoms: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != probs.len() {
            return Err(OpeError::invalid("atoms and probabilities must be non-empty and of equal length"));
        }
        if probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(OpeError::invalid("probabilities must be non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(OpeError::invalid(format!("probabilities sum to {total}")));
        }
        Ok(Self { atoms, probs })
    }

    pub fn bernoulli(p: f64) -> Result<Self> {
        Self::new(vec![0.0, 1.0], vec![1.0 - p, p])
    }

    pub fn from_states(states: &StateDistribution) -> Result<Self> {
        match states {
            StateDistribution::Finite { states, probs } => Self::new(states.clone(), probs.clone()),
            StateDistribution::Continuous1D(_) => Err(OpeError::invalid("lower-bound constructions need a finite state space")),
        }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.atoms.iter().zip(&self.probs).map(|(x, p)| p * f(*x)).sum()
    }

    /// Product law `self ⊗ other`; atoms are indexed `i·|other| + j`.
    pub fn product(&self, other: &FiniteDistribution) -> FiniteDistribution {
        let mut probs = Vec::with_capacity(self.len() * other.len());
        for p in &self.probs {
            for q in &other.probs {
                probs.push(p * q);
            }
        }
        FiniteDistribution { atoms: (0..probs.len()).map(|i| i as f64).collect(), probs }
    }

    /// `k`-fold product.
    pub fn power(&self, k: usize) -> FiniteDistribution {
        let mut out = FiniteDistribution { atoms: vec![0.0], probs: vec![1.0] };
        for _ in 0..k {
            out = out.product(self);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DivergenceKind {
    Kl,
    Chi2,
    Tv,
}

/// Exact `KL(p‖q)`, `χ²(p‖q) = Σ (p−q)²/q` or `TV = ½ Σ |p − q|`.
pub fn divergence(kind: DivergenceKind, p: &FiniteDistribution, q: &FiniteDistribution) -> Result<f64> {
    if p.atoms != q.atoms {
        return Err(OpeError::invalid("distributions must share their atoms"));
    }
    let mut total = 0.0;
    for (i, (a, b)) in p.probs.iter().zip(&q.probs).enumerate() {
        total += match kind {
            DivergenceKind::Tv => 0.5 * (a - b).abs(),
            _ if *a == 0.0 && *b == 0.0 => 0.0,
            _ if *b == 0.0 => return Err(OpeError::Support { atom: i, p: *a }),
            DivergenceKind::Kl if *a == 0.0 => 0.0,
            DivergenceKind::Kl => a * (a / b).ln(),
            DivergenceKind::Chi2 => (a - b).powi(2) / b,
        };
    }
    Ok(total.max(0.0))
}

/// `√E[Z⁴] / E[Z²]` of a finite random variable.
pub fn moment_ratio(values: &[f64], probs: &[f64]) -> Result<f64> {
    let m2: f64 = values.iter().zip(probs).map(|(v, p)| p * v * v).sum();
    let m4: f64 = values.iter().zip(probs).map(|(v, p)| p * v.powi(4)).sum();
    if m2 == 0.0 {
        return Err(OpeError::invalid("moment ratio undefined for a variable that is zero almost surely"));
    }
    Ok(m4.sqrt() / m2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Perturbed {
    StateLaw { tilted: FiniteDistribution },
    OutcomePair { states: Vec<f64>, plus: Vec<Vec<f64>>, minus: Vec<Vec<f64>> },
    Mixture { states: Vec<f64>, rho: Vec<Vec<f64>>, truncated: Vec<Vec<bool>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, bound, passed: value <= bound }
    }

    fn at_least(name: &str, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, bound, passed: value >= bound }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub construction: String,
    pub n: usize,
    pub tweak: f64,
    pub gap: f64,
    pub moment_ratio: f64,
    pub kl: Option<f64>,
    pub chi2: Option<f64>,
    pub tv_bound: Option<f64>,
    pub degenerate: bool,
    pub checks: Vec<Check>,
    pub perturbed: Perturbed,
}

pub const REPORT_CSV_HEADER: &str = "construction,n,tweak,gap,moment_ratio,kl,chi2,tv_bound,degenerate,all_passed";

impl PerturbationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.construction,
            self.n,
            self.tweak,
            self.gap,
            self.moment_ratio,
            opt(self.kl),
            opt(self.chi2),
            opt(self.tv_bound),
            self.degenerate,
            self.all_passed()
        )
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("[{}]\nn = {}\ntweak = {}\ngap = {}\nmoment_ratio = {}\n", self.construction, self.n, self.tweak, self.gap, self.moment_ratio);
        for (name, v) in [("kl", self.kl), ("chi2", self.chi2), ("tv_bound", self.tv_bound)] {
            if let Some(v) = v {
                out.push_str(&format!("{name} = {v}\n"));
            }
        }
        if self.degenerate {
            out.push_str("degenerate = true\n");
        }
        for c in &self.checks {
            out.push_str(&format!("check {} : {} vs {} -> {}\n", c.name, c.value, c.bound, if c.passed { "pass" } else { "FAIL" }));
        }
        out
    }
}

fn finite_states(instance: &ProblemInstance) -> Result<(Vec<f64>, Vec<f64>)> {
    let law = FiniteDistribution::from_states(instance.states())?;
    Ok((law.atoms, law.probs))
}

/// Tilt the state law along the centred contrast `h = ⟨g, μ*⟩_λ − τ*`.
pub fn tilted_instance(instance: &ProblemInstance, n: usize) -> Result<PerturbationReport> {
    if n == 0 {
        return Err(OpeError::invalid("n must be positive"));
    }
    let (states, probs) = finite_states(instance)?;
    let design = instance.design();
    let tau = true_functional(instance)?;
    let h: Vec<f64> = states.iter().map(|&x| design.weight_inner(x, |a| instance.mu(x, a)) - tau).collect();
    let h_norm_sq: f64 = h.iter().zip(&probs).map(|(v, p)| p * v * v).sum();
    let base = FiniteDistribution::new(states.clone(), probs.clone())?;

    if h_norm_sq == 0.0 {
        return Ok(PerturbationReport {
            construction: "tilted".into(),
            n,
            tweak: 0.0,
            gap: 0.0,
            moment_ratio: f64::NAN,
            kl: Some(0.0),
            chi2: Some(0.0),
            tv_bound: Some(0.0),
            degenerate: true,
            checks: Vec::new(),
            perturbed: Perturbed::StateLaw { tilted: base },
        });
    }
    let h_norm = h_norm_sq.sqrt();
    let m_prime = moment_ratio(&h, &probs)?;
    let cut = 2.0 * m_prime * h_norm;
    let h_tr: Vec<f64> = h.iter().map(|&v| if v.abs() <= cut { v } else { v.signum() * h_norm }).collect();
    let h_tr_norm = h_tr.iter().zip(&probs).map(|(v, p)| p * v * v).sum::<f64>().sqrt();
    let s = 1.0 / (4.0 * h_tr_norm * (n as f64).sqrt());

    let unnorm: Vec<f64> = probs.iter().zip(&h_tr).map(|(p, v)| p * (s * v).exp()).collect();
    let z: f64 = unnorm.iter().sum();
    let mut tilted_probs: Vec<f64> = unnorm.iter().map(|u| u / z).collect();
    // absorb rounding so the tilted law passes the 1e-12 normalisation check
    let drift: f64 = tilted_probs.iter().sum::<f64>() - 1.0;
    if let Some(max) = tilted_probs.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *max -= drift;
    }
    let tilted = FiniteDistribution::new(states.clone(), tilted_probs)?;

    let gap: f64 = tilted.probs.iter().zip(&h).map(|(q, v)| q * v).sum::<f64>();
    let chi2 = divergence(DivergenceKind::Chi2, &tilted, &base)?;
    let kl = divergence(DivergenceKind::Kl, &tilted, &base)?;
    let sup = h_tr.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut checks = vec![Check::at_most("chi2 <= 1/(8n)", chi2, 1.0 / (8.0 * n as f64))];
    let sample_condition = n as f64 >= 4.0 * m_prime * m_prime;
    if sample_condition {
        checks.push(Check::at_least("gap >= |h|/(16 sqrt n)", gap, h_norm / (16.0 * (n as f64).sqrt())));
    }
    let factor_hi = h_tr.iter().map(|v| (s * v).exp()).fold(0.0f64, f64::max);
    let factor_lo = h_tr.iter().map(|v| (s * v).exp()).fold(f64::INFINITY, f64::min);
    let ratio_hi = tilted.probs.iter().zip(&probs).filter(|(_, p)| **p > 0.0).map(|(q, p)| q / p).fold(0.0f64, f64::max);
    let ratio_lo = tilted.probs.iter().zip(&probs).filter(|(_, p)| **p > 0.0).map(|(q, p)| q / p).fold(f64::INFINITY, f64::min);
    let (up, down) = ((s * sup).exp() * (1.0 + 1e-12), (-s * sup).exp() * (1.0 - 1e-12));
    checks.push(Check::at_most("tilt factor <= exp(s|h_tr|inf)", factor_hi, up));
    checks.push(Check::at_least("tilt factor >= exp(-s|h_tr|inf)", factor_lo, down));
    checks.push(Check::at_most("normaliser <= exp(s|h_tr|inf)", z, up));
    checks.push(Check::at_least("normaliser >= exp(-s|h_tr|inf)", z, down));
    checks.push(Check::at_most("tilt ratio <= exp(2s|h_tr|inf)", ratio_hi, up * up));
    checks.push(Check::at_least("tilt ratio >= exp(-2s|h_tr|inf)", ratio_lo, down * down));
    let tv_bound = (0.5 * n as f64 * chi2).sqrt();
    Ok(PerturbationReport {
        construction: "tilted".into(),
        n,
        tweak: s,
        gap,
        moment_ratio: m_prime,
        kl: Some(n as f64 * kl),
        chi2: Some(chi2),
        tv_bound: Some(tv_bound),
        degenerate: false,
        checks,
        perturbed: Perturbed::StateLaw { tilted },
    })
}

fn table(instance: &ProblemInstance, states: &[f64], f: impl Fn(f64, usize) -> f64) -> Vec<Vec<f64>> {
    states.iter().map(|&x| instance.actions().actions().map(|a| f(x, a)).collect()).collect()
}

/// The pair `μ_(±s) = μ* ± s (g/π) σ²` with `s = 1/(4‖σ‖_ω √n)`.
///
/// `kl` holds the exact `n`-sample Gaussian divergence `2 n s² ‖σ‖²_ω`; the
/// check compares the bound `4 n s² ‖σ‖²_ω` with `¼`. When `delta` is given
/// the report also checks `s |g| σ²/π ≤ δ` on every pair.
pub fn sigma_perturbed_pair(instance: &ProblemInstance, n: usize, delta: Option<&StateActionFunction>) -> Result<PerturbationReport> {
    if n == 0 {
        return Err(OpeError::invalid("n must be positive"));
    }
    let (states, _) = finite_states(instance)?;
    let sigma_norm = weighted_norm(instance, instance.outcome_sd())?;
    if sigma_norm == 0.0 {
        return Err(OpeError::invalid("sigma-perturbed pair needs ‖σ‖_ω > 0"));
    }
    let design = instance.design();
    let s = 1.0 / (4.0 * sigma_norm * (n as f64).sqrt());
    let shift = |x: f64, a: usize| {
        let g = design.weight(x, a);
        if g == 0.0 {
            0.0
        } else {
            s * g / design.propensity(x, a) * instance.sigma(x, a).powi(2)
        }
    };
    let plus_fn = {
        let (inst, s_) = (instance.clone(), s);
        StateActionFunction::new(move |x, a| {
            let d = inst.design();
            let g = d.weight(x, a);
            inst.mu(x, a) + if g == 0.0 { 0.0 } else { s_ * g / d.propensity(x, a) * inst.sigma(x, a).powi(2) }
        })
    };
    let minus_fn = {
        let (inst, s_) = (instance.clone(), s);
        StateActionFunction::new(move |x, a| {
            let d = inst.design();
            let g = d.weight(x, a);
            inst.mu(x, a) - if g == 0.0 { 0.0 } else { s_ * g / d.propensity(x, a) * inst.sigma(x, a).powi(2) }
        })
    };
    let tau_plus = true_functional(&instance.with_outcome_mean(plus_fn)?)?;
    let tau_minus = true_functional(&instance.with_outcome_mean(minus_fn)?)?;
    let gap = tau_plus - tau_minus;
    let target = sigma_norm / (2.0 * (n as f64).sqrt());

    // E_{X,A}[ per-pair KL ] with A ∼ π: Σ_a λ(a) E_ξ[ π · 2 s² g² σ² / π² ]
    let kl_exact = n as f64 * 2.0 * s * s * sigma_norm * sigma_norm;
    let kl_bound = n as f64 * 4.0 * s * s * sigma_norm * sigma_norm;
    let mut checks = vec![
        Check { name: "gap = |sigma|/(2 sqrt n)".into(), value: gap, bound: target, passed: (gap - target).abs() <= 1e-10 * target.max(1.0) },
        Check { name: "kl bound = 1/4".into(), value: kl_bound, bound: 0.25, passed: (kl_bound - 0.25).abs() <= 1e-12 },
        Check::at_most("pinsker tv <= 1/(2 sqrt 2)", (0.5 * kl_bound).sqrt(), 1.0 / (2.0 * 2f64.sqrt()) + 1e-15),
    ];
    if let Some(delta) = delta {
        let worst = states
            .iter()
            .flat_map(|&x| instance.actions().actions().map(move |a| (x, a)))
            .map(|(x, a)| shift(x, a).abs() - delta.eval(x, a))
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check::at_most("shift within neighbourhood", worst, 0.0));
    }
    Ok(PerturbationReport {
        construction: "sigma-pair".into(),
        n,
        tweak: s,
        gap,
        moment_ratio: f64::NAN,
        kl: Some(kl_exact),
        chi2: None,
        tv_bound: Some((0.5 * kl_bound).sqrt()),
        degenerate: false,
        checks,
        perturbed: Perturbed::OutcomePair {
            plus: table(instance, &states, |x, a| instance.mu(x, a) + shift(x, a)),
            minus: table(instance, &states, |x, a| instance.mu(x, a) - shift(x, a)),
            states,
        },
    })
}

/// Exact ingredients of the δ-mixture construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSetup {
    pub states: Vec<f64>,
    pub delta_norm: f64,
    /// `M₂→₄` of `Z = g δ / π` under `X ∼ ξ*`, `A ∼ π(X, ·)`.
    pub moment_ratio: f64,
    pub rho: Vec<Vec<f64>>,
    pub truncated: Vec<Vec<bool>>,
    /// `Σ_a λ(a) E_ξ[g δ ρ]`; the mean gap under `Q_z` is `2 s` times this.
    pub mean_gap_per_tweak: f64,
    /// `Σ_{x,a} (ξ(x) λ(a) g δ)²`, the Hoeffding variance proxy.
    pub hoeffding_proxy: f64,
}

pub fn mixture_setup(instance: &ProblemInstance, delta: &StateActionFunction) -> Result<MixtureSetup> {
    let (states, probs) = finite_states(instance)?;
    let design = instance.design();
    let actions = design.actions();
    let mut z_vals = Vec::new();
    let mut z_probs = Vec::new();
    for (&x, &p) in states.iter().zip(&probs) {
        for a in actions.actions() {
            let d = delta.eval(x, a);
            if !(d > 0.0) {
                return Err(OpeError::invalid(format!("δ must be positive, got {d} at state {x}, action {a}")));
            }
            let w = p * actions.weight(a) * design.propensity(x, a);
            if w > 0.0 {
                z_vals.push(design.importance_ratio(x, a)? * d);
                z_probs.push(w);
            }
        }
    }
    let delta_norm = weighted_norm(instance, delta)?;
    if delta_norm == 0.0 {
        return Err(OpeError::invalid("‖δ‖_ω must be positive"));
    }
    let m = moment_ratio(&z_vals, &z_probs)?;
    let cut = 2.0 * m * delta_norm;
    let mut rho = Vec::with_capacity(states.len());
    let mut truncated = Vec::with_capacity(states.len());
    let mut mean_gap = 0.0;
    let mut proxy = 0.0;
    for (&x, &p) in states.iter().zip(&probs) {
        let mut row = Vec::new();
        let mut trow = Vec::new();
        for a in actions.actions() {
            let g = design.weight(x, a);
            let d = delta.eval(x, a);
            let pi = design.propensity(x, a);
            let raw = if g == 0.0 { 0.0 } else { g * d / pi };
            let cut_here = raw.abs() > cut;
            let r = if cut_here { g.signum() } else { raw / delta_norm };
            mean_gap += p * actions.weight(a) * g * d * r;
            proxy += (p * actions.weight(a) * g * d).powi(2);
            row.push(r);
            trow.push(cut_here);
        }
        rho.push(row);
        truncated.push(trow);
    }
    Ok(MixtureSetup { states, delta_norm, moment_ratio: m, rho, truncated, mean_gap_per_tweak: mean_gap, hoeffding_proxy: proxy })
}

/// `τ(ξ*, μ_ζ)` for a sign table `ζ[state][action]`.
pub fn perturbed_functional(instance: &ProblemInstance, delta: &StateActionFunction, zeta: &[Vec<i8>]) -> Result<f64> {
    let (states, _) = finite_states(instance)?;
    let index = move |x: f64| states.iter().position(|s| *s == x).expect("finite state");
    let zeta = zeta.to_vec();
    let d = delta.clone();
    let inst = instance.clone();
    let mu = StateActionFunction::new(move |x, a| inst.mu(x, a) + zeta[index(x)][a] as f64 * d.eval(x, a));
    true_functional(&instance.with_outcome_mean(mu)?)
}

/// Le Cam mixture construction: draw `reps` sign tables from each of
/// `Q_{±1}^s` and compare the mean functional gap with `s‖δ‖_ω/2`.
pub fn delta_mixture(
    instance: &ProblemInstance,
    delta: &StateActionFunction,
    s: f64,
    reps: usize,
    seed: u64,
) -> Result<(PerturbationReport, McEstimate)> {
    let setup = mixture_setup(instance, delta)?;
    let cap = 1.0 / (2.0 * setup.moment_ratio);
    if !(s > 0.0) || s > cap * (1.0 + 1e-12) {
        return Err(OpeError::invalid(format!("tweak must lie in (0, {cap}], got {s}")));
    }
    if reps < 2 {
        return Err(OpeError::invalid("need at least two replications"));
    }
    let tau = true_functional(instance)?;
    let k = instance.actions().len();
    let mut diffs = Vec::with_capacity(reps);
    for rep in 0..reps as u64 {
        let mut values = [0.0; 2];
        for (slot, z) in [1.0f64, -1.0].into_iter().enumerate() {
            let mut rng = substream(stream_id(&[seed, rep, slot as u64]), 0x3C);
            let zeta: Vec<Vec<i8>> = setup
                .rho
                .iter()
                .map(|row| {
                    (0..k).map(|a| if rng.random::<f64>() < (1.0 + z * s * row[a]) / 2.0 { 1 } else { -1 }).collect()
                })
                .collect();
            values[slot] = perturbed_functional(instance, delta, &zeta)? - tau;
        }
        diffs.push(values[0] - values[1]);
    }
    let estimate = McEstimate::from_samples(&diffs);
    let exact = 2.0 * s * setup.mean_gap_per_tweak;
    let bound = s * setup.delta_norm / 2.0;
    let half_width = (8.0 * setup.hoeffding_proxy).sqrt();
    let checks = vec![
        Check::at_least("exact mean gap >= s|delta|/2", exact, bound),
        Check { name: "mc mean gap within 3 se of exact".into(), value: estimate.estimate, bound: exact, passed: estimate.within(exact, 3.0) },
    ];
    let report = PerturbationReport {
        construction: "delta-mixture".into(),
        n: 0,
        tweak: s,
        gap: exact,
        moment_ratio: setup.moment_ratio,
        kl: None,
        chi2: None,
        tv_bound: Some(half_width),
        degenerate: false,
        checks,
        perturbed: Perturbed::Mixture { states: setup.states.clone(), rho: setup.rho.clone(), truncated: setup.truncated.clone() },
    };
    Ok((report, estimate))
}

/// `(E[X² 1{|X| ≤ 2 M₂→₄ √E[X²]}], ½ E[X²])` for a finite variable.
pub fn truncation_lemma(values: &[f64], probs: &[f64]) -> Result<(f64, f64)> {
    let m = moment_ratio(values, probs)?;
    let m2: f64 = values.iter().zip(probs).map(|(v, p)| p * v * v).sum();
    let cut = 2.0 * m * m2.sqrt();
    let kept: f64 = values.iter().zip(probs).filter(|(v, _)| v.abs() <= cut).map(|(v, p)| p * v * v).sum();
    Ok((kept, 0.5 * m2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalTv {
    pub tv: f64,
    pub tv_conditional: f64,
    pub epsilon: f64,
    pub lower_holds: bool,
    pub upper_holds: bool,
}

fn condition(p: &FiniteDistribution, event: &[bool]) -> Result<FiniteDistribution> {
    let mass: f64 = p.probs.iter().zip(event).filter(|(_, e)| **e).map(|(q, _)| q).sum();
    if mass == 0.0 {
        return Err(OpeError::invalid("conditioning event has zero probability"));
    }
    let probs = p.probs.iter().zip(event).map(|(q, e)| if *e { q / mass } else { 0.0 }).collect();
    Ok(FiniteDistribution { atoms: p.atoms.clone(), probs })
}

/// Both sides of `TV − 4ε ≤ TV(·|E) ≤ TV/(1−ε) + 2ε` with
/// `ε = 1 − min(μ(E), ν(E))`, which must not exceed `¼`.
pub fn conditional_tv_lemma(mu: &FiniteDistribution, nu: &FiniteDistribution, event: &[bool]) -> Result<ConditionalTv> {
    if event.len() != mu.len() {
        return Err(OpeError::invalid("event mask must cover every atom"));
    }
    let mass = |p: &FiniteDistribution| p.probs.iter().zip(event).filter(|(_, e)| **e).map(|(q, _)| q).sum::<f64>();
    let epsilon = 1.0 - mass(mu).min(mass(nu));
    if epsilon > 0.25 {
        return Err(OpeError::invalid(format!("event leaves ε = {epsilon} > 1/4")));
    }
    let tv = divergence(DivergenceKind::Tv, mu, nu)?;
    let tv_conditional = divergence(DivergenceKind::Tv, &condition(mu, event)?, &condition(nu, event)?)?;
    let slack = 1e-12;
    Ok(ConditionalTv {
        tv,
        tv_conditional,
        epsilon,
        lower_holds: tv - 4.0 * epsilon <= tv_conditional + slack,
        upper_holds: tv_conditional <= tv / (1.0 - epsilon) + 2.0 * epsilon + slack,
    })
}

fn random_simplex(rng: &mut crate::rng::Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().max(f64::MIN_POSITIVE).ln()).collect();
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let drift = p.iter().sum::<f64>() - 1.0;
    p[0] -= drift;
    p
}

/// Run the truncation lemma on `cases` random finite variables; returns the
/// number that pass.
pub fn random_truncation_cases(cases: usize, seed: u64) -> Result<usize> {
    let mut passed = 0;
    for c in 0..cases as u64 {
        let mut rng = substream(stream_id(&[seed, c]), 0x7C);
        let k = rng.random_range(1..=12);
        let probs = random_simplex(&mut rng, k);
        // heavy tails on some atoms
        let values: Vec<f64> = (0..k).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * 10f64.powf(rng.random::<f64>() * 4.0 - 2.0)).collect();
        if values.iter().all(|v| *v == 0.0) {
            continue;
        }
        let (lhs, rhs) = truncation_lemma(&values, &probs)?;
        if lhs >= rhs * (1.0 - 1e-12) {
            passed += 1;
        }
    }
    Ok(passed)
}

/// Run the conditional-TV lemma on `cases` random triples with `ε ≤ ¼`;
/// returns the number where both inequalities hold.
pub fn random_conditional_tv_cases(cases: usize, seed: u64) -> Result<usize> {
    let mut passed = 0;
    for c in 0..cases as u64 {
        let mut rng = substream(stream_id(&[seed, c]), 0x7D);
        let k = rng.random_range(2..=10);
        let atoms: Vec<f64> = (0..k).map(|i| i as f64).collect();
        let mu = FiniteDistribution { atoms: atoms.clone(), probs: random_simplex(&mut rng, k) };
        let nu = FiniteDistribution { atoms, probs: random_simplex(&mut rng, k) };
        // drop atoms from the event while both laws keep ≥ 3/4 of their mass
        let mut event = vec![true; k];
        let mut order: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let budget = rng.random::<f64>() * 0.25;
        let (mut lost_mu, mut lost_nu) = (0.0, 0.0);
        for &i in &order[..k - 1] {
            if lost_mu + mu.probs[i] <= budget && lost_nu + nu.probs[i] <= budget {
                event[i] = false;
                lost_mu += mu.probs[i];
                lost_nu += nu.probs[i];
            }
        }
        let r = conditional_tv_lemma(&mu, &nu, &event)?;
        if r.lower_holds && r.upper_holds {
            passed += 1;
        }
    }
    Ok(passed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::fixtures::d1;

    #[test]
    fn bernoulli_divergences() {
        let p = FiniteDistribution::bernoulli(0.6).unwrap();
        let q = FiniteDistribution::bernoulli(0.5).unwrap();
        assert!((divergence(DivergenceKind::Chi2, &p, &q).unwrap() - 0.04).abs() < 1e-15);
        assert!((divergence(DivergenceKind::Tv, &p, &q).unwrap() - 0.1).abs() < 1e-15);
        for kind in [DivergenceKind::Kl, DivergenceKind::Chi2, DivergenceKind::Tv] {
            assert_eq!(divergence(kind, &p, &p).unwrap(), 0.0);
        }
    }

    #[test]
    fn support_violation_named() {
        let p = FiniteDistribution::bernoulli(0.5).unwrap();
        let q = FiniteDistribution::bernoulli(1.0).unwrap();
        assert!(matches!(divergence(DivergenceKind::Kl, &p, &q), Err(OpeError::Support { atom: 0, .. })));
        assert!(divergence(DivergenceKind::Tv, &p, &q).is_ok());
    }

    #[test]
    fn normalisation_enforced() {
        assert!(FiniteDistribution::new(vec![0.0, 1.0], vec![0.5, 0.6]).is_err());
    }

    #[test]
    fn tilted_d1() {
        let r = tilted_instance(&d1(0.0), 64).unwrap();
        assert!(r.all_passed(), "{}", r.to_text());
        assert!(r.chi2.unwrap() <= 1.0 / 512.0);
        assert_eq!(r.checks.len(), 8);
        // the normalised ratio leaves the one-sided band: e^{-s}/cosh(s) < e^{-s}
        let Perturbed::StateLaw { tilted: t } = &r.perturbed else { panic!() };
        assert!(t.probs[0] / 0.5 < (-1.0f64 / 32.0).exp() || t.probs[1] / 0.5 < (-1.0f64 / 32.0).exp());
        let Perturbed::StateLaw { tilted } = &r.perturbed else { panic!() };
        assert!((tilted.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // h = ±1, s = 1/32: gap = tanh(1/32)
        assert!((r.gap - (1.0f64 / 32.0).tanh()).abs() < 1e-14);
    }

    #[test]
    fn tilted_degenerate() {
        let flat = d1(0.0).with_outcome_mean(StateActionFunction::constant(1.0)).unwrap();
        let r = tilted_instance(&flat, 10).unwrap();
        assert!(r.degenerate && r.gap == 0.0);
    }

    #[test]
    fn sigma_pair_d1() {
        let r = sigma_perturbed_pair(&d1(1.0), 100, None).unwrap();
        assert!(r.all_passed(), "{}", r.to_text());
        assert_eq!(r.check("kl bound = 1/4").unwrap().value, 0.25);
        let doubled = sigma_perturbed_pair(&d1(2.0), 100, None).unwrap();
        assert!((doubled.tweak - r.tweak / 2.0).abs() < 1e-15);
        assert!((doubled.check("kl bound = 1/4").unwrap().value - 0.25).abs() < 1e-15);
        assert!(sigma_perturbed_pair(&d1(0.0), 100, None).is_err());
    }

    #[test]
    fn mixture_all_plus_pattern() {
        let inst = d1(0.0);
        let delta = StateActionFunction::constant(0.3);
        let zeta = vec![vec![1i8, 1], vec![1, 1]];
        let tau = perturbed_functional(&inst, &delta, &zeta).unwrap();
        // Σ_a E[g δ] = 0.3 · Σ_a (2a − 1) = 0
        assert!((tau - 2.0).abs() < 1e-14);
        assert!(delta_mixture(&inst, &StateActionFunction::zero(), 0.1, 10, 0).is_err());
    }

    #[test]
    fn mixture_tweak_range() {
        let inst = d1(0.0);
        let delta = StateActionFunction::constant(1.0);
        let setup = mixture_setup(&inst, &delta).unwrap();
        let cap = 1.0 / (2.0 * setup.moment_ratio);
        assert!(delta_mixture(&inst, &delta, cap * 1.01, 10, 0).is_err());
        let (report, _) = delta_mixture(&inst, &delta, cap, 200, 1).unwrap();
        assert!(report.check("exact mean gap >= s|delta|/2").unwrap().passed);
    }

    #[test]
    fn lemma_smoke() {
        assert_eq!(random_truncation_cases(50, 1).unwrap(), 50);
        assert_eq!(random_conditional_tv_cases(50, 1).unwrap(), 50);
    }

    #[test]
    fn power_tensorises_kl() {
        let p = FiniteDistribution::bernoulli(0.3).unwrap();
        let q = FiniteDistribution::bernoulli(0.45).unwrap();
        let one = divergence(DivergenceKind::Kl, &p, &q).unwrap();
        let three = divergence(DivergenceKind::Kl, &p.power(3), &q.power(3)).unwrap();
        assert!((three - 3.0 * one).abs() < 1e-13);
    }
}
