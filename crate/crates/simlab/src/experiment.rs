use ope_core::dataset::sample_with_stream;
use ope_core::estimators::{run_estimator, EstimatorId};
use ope_core::functionals::true_functional;
use ope_core::instance::{missing_data, ProblemInstance};
use ope_core::regression::FirstStageSpec;
use ope_core::rng::stream_id;
use ope_core::stats::{mean, sample_variance};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, InstanceConfig};
use crate::error::{LabError, Result};
use crate::results::{ResultRow, ResultsTable};

/// Stable 64-bit FNV-1a hash of an estimator name.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Seed of replicate `rep` for one (estimator, n) cell.
pub fn replicate_seed(master_seed: u64, estimator: &EstimatorId, n: usize, rep: usize) -> u64 {
    stream_id(&[master_seed, name_hash(&estimator.as_string()), n as u64, rep as u64])
}

fn format_number(v: f64) -> String {
    format!("{v}")
}

pub fn build_builtin_instance(config: &InstanceConfig) -> Result<ProblemInstance> {
    match config {
        InstanceConfig::MissingData { propensity, gamma, sigma0, pi_min } => {
            let id = format!("missing-data-{}-gamma{}-sigma{}", propensity.id(), format_number(*gamma), format_number(*sigma0));
            Ok(missing_data(&id, *propensity, *gamma, *sigma0, *pi_min)?)
        }
        InstanceConfig::FiniteCustom { path } => Err(LabError::Config(format!("{} is a custom instance, not a built-in one", path.display()))),
    }
}

pub fn build_instance(config: &InstanceConfig) -> Result<ProblemInstance> {
    match config {
        InstanceConfig::FiniteCustom { path } => {
            let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
            Ok(ProblemInstance::from_toml(&text)?)
        }
        builtin => build_builtin_instance(builtin),
    }
}

/// Squared errors of `reps` independent runs of one estimator at sample size `n`.
pub fn cell_squared_errors(
    instance: &ProblemInstance,
    tau: f64,
    estimator: &EstimatorId,
    n: usize,
    template: &FirstStageSpec,
    config: &ExperimentConfig,
) -> Result<Vec<f64>> {
    (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = replicate_seed(config.master_seed, estimator, n, rep);
            let cell = |source| LabError::Cell { estimator: estimator.as_string(), n, rep, source };
            let data = sample_with_stream(instance, n, seed, 0).map_err(cell)?;
            let report = run_estimator(*estimator, &data, instance, template, seed).map_err(cell)?;
            Ok((report.tau_hat - tau).powi(2))
        })
        .collect()
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultsTable> {
    config.validate()?;
    let instance = build_instance(&config.instance)?;
    let tau = true_functional(&instance)?;
    let mut template = FirstStageSpec::weighted_krr().with_grid(config.lambda_grid.clone());
    template.folds = config.folds;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| LabError::Config(format!("cannot build thread pool: {e}")))?;

    let mut rows = Vec::new();
    for estimator in &config.estimators {
        for &n in &config.n_grid {
            let errors = pool.install(|| cell_squared_errors(&instance, tau, estimator, n, &template, config))?;
            let scale = n as f64;
            let stderr = if errors.len() > 1 { scale * (sample_variance(&errors) / errors.len() as f64).sqrt() } else { 0.0 };
            rows.push(ResultRow {
                instance_id: instance.id().to_string(),
                estimator: estimator.as_string(),
                n,
                reps: config.reps,
                normalized_mse: scale * mean(&errors),
                mc_stderr: stderr,
                master_seed: config.master_seed,
            });
        }
    }
    Ok(ResultsTable::new(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ope_core::instance::PropensityFamily;

    #[test]
    fn builtin_propensities() {
        let pi1 = build_builtin_instance(&InstanceConfig::MissingData { propensity: PropensityFamily::Pi1, gamma: 0.0, sigma0: 1.0, pi_min: 0.005 }).unwrap();
        assert!((pi1.propensity(0.5, 1) - 0.005).abs() < 1e-15);
        assert_eq!(pi1.sigma(0.3, 1), 1.0);
        assert_eq!(pi1.sigma(0.3, 0), 0.0);
        let pi2 = build_builtin_instance(&InstanceConfig::MissingData { propensity: PropensityFamily::Pi2, gamma: 1.0, sigma0: 2.0, pi_min: 0.005 }).unwrap();
        assert_eq!(pi2.propensity(0.0, 1), 0.5);
        assert!((pi2.sigma(0.0, 1) - 2.0 * 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(pi2.weight(0.2, 1), 1.0);
        assert_eq!(pi2.weight(0.2, 0), 0.0);
    }

    #[test]
    fn seeds_differ_by_coordinate() {
        let e = EstimatorId::Oracle;
        let base = replicate_seed(1, &e, 100, 0);
        assert_ne!(base, replicate_seed(2, &e, 100, 0));
        assert_ne!(base, replicate_seed(1, &EstimatorId::Ipw, 100, 0));
        assert_ne!(base, replicate_seed(1, &e, 200, 0));
        assert_ne!(base, replicate_seed(1, &e, 100, 1));
    }

    #[test]
    fn single_rep_convention() {
        let mut c = ExperimentConfig::missing_data(PropensityFamily::Pi2, 0.0, 1.0);
        c.estimators = vec![EstimatorId::Ipw];
        c.n_grid = vec![50];
        c.reps = 1;
        let t = run_experiment(&c).unwrap();
        let row = &t.rows[0];
        assert_eq!(row.mc_stderr, 0.0);
        let inst = build_instance(&c.instance).unwrap();
        let data = sample_with_stream(&inst, 50, replicate_seed(0, &EstimatorId::Ipw, 50, 0), 0).unwrap();
        let tau_hat = ope_core::estimators::ipw_estimate(&data, inst.design()).unwrap().tau_hat;
        let tau = true_functional(&inst).unwrap();
        assert!((row.normalized_mse - 50.0 * (tau_hat - tau).powi(2)).abs() < 1e-12 * row.normalized_mse.max(1.0));
    }

    #[test]
    fn failing_cell_names_itself() {
        let mut c = ExperimentConfig::missing_data(PropensityFamily::Pi2, 0.0, 1.0);
        c.estimators = vec!["two-stage-weighted-krr".parse().unwrap()];
        c.n_grid = vec![4];
        c.reps = 2;
        match run_experiment(&c) {
            Err(LabError::Cell { estimator, n, .. }) => assert_eq!((estimator.as_str(), n), ("two-stage-weighted-krr", 4)),
            other => panic!("{other:?}"),
        }
    }
}
