use std::path::{Path, PathBuf};

use ope_core::estimators::EstimatorId;
use ope_core::instance::{default_pi_min, PropensityFamily};
use ope_core::regression::cv::{default_lambda_grid, DEFAULT_FOLDS};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const DEFAULT_REPS: usize = 200;
pub const DEFAULT_N_GRID: [usize; 5] = [500, 1000, 2000, 4000, 8000];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InstanceConfig {
    MissingData {
        propensity: PropensityFamily,
        gamma: f64,
        #[serde(default = "default_sigma0")]
        sigma0: f64,
        #[serde(default = "default_pi_min")]
        pi_min: f64,
    },
    /// Instance file in the core TOML format; relative paths resolve against
    /// the config file's directory.
    FiniteCustom { path: PathBuf },
}

fn default_sigma0() -> f64 {
    1.0
}

fn default_estimators() -> Vec<EstimatorId> {
    ["oracle", "two-stage-weighted-krr", "two-stage-unweighted-krr"].iter().map(|s| s.parse().unwrap()).collect()
}

fn default_n_grid() -> Vec<usize> {
    DEFAULT_N_GRID.to_vec()
}

fn default_reps() -> usize {
    DEFAULT_REPS
}

fn default_folds() -> usize {
    DEFAULT_FOLDS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceConfig,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorId>,
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub threads: usize,
}

impl ExperimentConfig {
    pub fn missing_data(propensity: PropensityFamily, gamma: f64, sigma0: f64) -> Self {
        Self {
            instance: InstanceConfig::MissingData { propensity, gamma, sigma0, pi_min: default_pi_min() },
            estimators: default_estimators(),
            n_grid: default_n_grid(),
            reps: DEFAULT_REPS,
            folds: DEFAULT_FOLDS,
            lambda_grid: default_lambda_grid(),
            master_seed: 0,
            output: None,
            threads: 0,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Parse a config file, resolving a relative instance path against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        if let InstanceConfig::FiniteCustom { path: inner } = &mut config.instance {
            if inner.is_relative() {
                if let Some(dir) = path.parent() {
                    *inner = dir.join(&*inner);
                }
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(LabError::Config("reps must be at least 1".into()));
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return Err(LabError::Config("n_grid must be non-empty and positive".into()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LabError::Config("n_grid must be strictly ascending".into()));
        }
        if self.estimators.is_empty() {
            return Err(LabError::Config("at least one estimator is required".into()));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(LabError::Config("lambda_grid must hold positive finite values".into()));
        }
        if self.folds < 2 {
            return Err(LabError::Config("folds must be at least 2".into()));
        }
        if let InstanceConfig::MissingData { gamma, sigma0, pi_min, .. } = &self.instance {
            if !(0.0..=1.0).contains(gamma) {
                return Err(LabError::Config(format!("gamma = {gamma} is outside [0, 1]")));
            }
            if !(*sigma0 >= 0.0) {
                return Err(LabError::Config(format!("sigma0 = {sigma0} is negative")));
            }
            if !(*pi_min > 0.0 && *pi_min <= 0.5) {
                return Err(LabError::Config(format!("pi_min = {pi_min} is outside (0, 0.5]")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml("[instance]\nkind = \"missing-data\"\npropensity = \"pi1\"\ngamma = 0.5\n").unwrap();
        assert_eq!(c.reps, 200);
        assert_eq!(c.n_grid, vec![500, 1000, 2000, 4000, 8000]);
        assert_eq!(c.estimators.len(), 3);
        assert_eq!(c.lambda_grid.len(), 10);
        assert!(matches!(c.instance, InstanceConfig::MissingData { sigma0, pi_min, .. } if sigma0 == 1.0 && pi_min == 0.005));
    }

    #[test]
    fn round_trip() {
        let mut c = ExperimentConfig::missing_data(PropensityFamily::Pi2, 1.0, 0.5);
        c.estimators.push(EstimatorId::Ipw);
        c.output = Some("out.csv".into());
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        let base = "[instance]\nkind = \"missing-data\"\npropensity = \"pi1\"\n";
        for extra in ["reps = 0\n", "n_grid = [100, 50]\n", "estimators = [\"bogus\"]\n", "folds = 1\n", "lambda_grid = [-1.0]\n", "colour = 3\n"] {
            let text = format!("{extra}{base}gamma = 0.0\n");
            assert!(ExperimentConfig::from_toml(&text).is_err(), "{extra}");
        }
        assert!(ExperimentConfig::from_toml(&format!("{base}gamma = 1.5\n")).is_err());
    }
}
