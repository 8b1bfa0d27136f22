#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Estimation of linear functionals of outcome functions from observational
//! data with known propensity scores.
//!
//! The crate is organised around a [`ProblemInstance`]: a state law, a finite
//! action space with base measure, a known propensity, a weight function
//! defining the target functional, and the (simulation-side) outcome mean and
//! noise scale. On top of it:
//!
//! * [`functionals`] evaluates the target, the weighted norm, the efficient
//!   variance and related quantities exactly (enumeration or quadrature).
//! * [`estimators`] implements IPW, the generic unbiased family, the oracle
//!   and the cross-fitted two-stage estimator.
//! * [`regression`] holds the weighted first-stage regressors.
//! * [`complexity`] computes Monte Carlo Rademacher complexities, critical
//!   radii, small-ball probabilities and shattering certificates.
//! * [`lowerbounds`] builds the local minimax perturbations on finite spaces
//!   and evaluates their divergences exactly.

pub mod complexity;
pub mod dataset;
pub mod error;
pub mod estimators;
pub mod functionals;
pub mod instance;
pub mod lowerbounds;
pub mod quadrature;
pub mod regression;
pub mod rng;
pub mod stats;

pub use dataset::{sample_dataset, Dataset, Triple};
pub use error::{OpeError, Result};
pub use functionals::{
    efficient_variance, excess_variance, optimal_auxiliary, true_functional, weighted_norm,
    ExcessVariance,
};
pub use instance::{
    Action, ActionSpace, Design, InstanceDescription, ProblemInstance, StateActionFunction,
    StateDistribution,
};
