#![allow(dead_code)]

use ope_core::instance::{InstanceDescription, ProblemInstance};

pub const XI: [f64; 2] = [0.5, 0.5];
pub const PI: [[f64; 2]; 2] = [[0.8, 0.2], [0.4, 0.6]];
pub const G: [[f64; 2]; 2] = [[-1.0, 1.0], [-1.0, 1.0]];
pub const MU: [[f64; 2]; 2] = [[1.0, 2.0], [0.0, 3.0]];

pub fn d1(sd: f64) -> ProblemInstance {
    ProblemInstance::from_description(&InstanceDescription::Finite {
        id: "D1".into(),
        states: vec![0.0, 1.0],
        state_probs: XI.to_vec(),
        base_weights: None,
        propensity: PI.iter().map(|r| r.to_vec()).collect(),
        weight: G.iter().map(|r| r.to_vec()).collect(),
        outcome_mean: MU.iter().map(|r| r.to_vec()).collect(),
        outcome_sd: vec![vec![sd, sd]; 2],
    })
    .unwrap()
}

/// `Σ_x ξ(x) Σ_a h(x, a)`.
pub fn sum(h: impl Fn(usize, usize) -> f64) -> f64 {
    (0..2).map(|x| XI[x] * (0..2).map(|a| h(x, a)).sum::<f64>()).sum()
}

/// `Σ_x ξ(x) Σ_a π(x, a) h(x, a)`, the expectation under the sampling law.
pub fn sampling_expect(h: impl Fn(usize, usize) -> f64) -> f64 {
    sum(|x, a| PI[x][a] * h(x, a))
}

pub fn tau() -> f64 {
    sum(|x, a| G[x][a] * MU[x][a])
}
