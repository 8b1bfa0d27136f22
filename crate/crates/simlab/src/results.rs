use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const RESULTS_HEADER: &str = "instance_id,estimator,n,reps,normalized_mse,mc_stderr,master_seed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub instance_id: String,
    pub estimator: String,
    pub n: usize,
    pub reps: usize,
    pub normalized_mse: f64,
    pub mc_stderr: f64,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

/// Round to 10 significant digits.
pub fn round_sig10(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.9e}").parse().unwrap_or(v)
}

impl ResultsTable {
    pub fn new(mut rows: Vec<ResultRow>) -> Self {
        rows.sort_by(|a, b| a.estimator.cmp(&b.estimator).then(a.n.cmp(&b.n)));
        Self { rows }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, estimator: &str, n: usize) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.n == n)
    }

    pub fn estimators(&self) -> Vec<String> {
        let mut out: Vec<String> = self.rows.iter().map(|r| r.estimator.clone()).collect();
        out.dedup();
        out
    }

    pub fn for_estimator(&self, estimator: &str) -> Vec<&ResultRow> {
        self.rows.iter().filter(|r| r.estimator == estimator).collect()
    }

    /// The table as it reads back from CSV.
    pub fn rounded(&self) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|r| ResultRow { normalized_mse: round_sig10(r.normalized_mse), mc_stderr: round_sig10(r.mc_stderr), ..r.clone() })
            .collect();
        Self::new(rows)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(RESULTS_HEADER);
        out.push('\n');
        for r in &self.rounded().rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.instance_id, r.estimator, r.n, r.reps, r.normalized_mse, r.mc_stderr, r.master_seed
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> std::result::Result<Self, String> {
        let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| e.to_string())?;
        if header.iter().collect::<Vec<_>>().join(",") != RESULTS_HEADER {
            return Err(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()));
        }
        let rows = reader.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>().map_err(|e| e.to_string())?;
        Ok(Self::new(rows))
    }
}

pub fn write_results_csv(table: &ResultsTable, path: &Path) -> Result<()> {
    std::fs::write(path, table.to_csv()).map_err(|e| LabError::io(path, e))
}

pub fn read_results_csv(path: &Path) -> Result<ResultsTable> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    ResultsTable::from_csv(&text).map_err(|message| LabError::Results { path: path.display().to_string(), message })
}
