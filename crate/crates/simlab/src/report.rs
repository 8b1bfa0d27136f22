use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::results::ResultsTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowRow {
    pub estimator: String,
    pub n_small: usize,
    pub n_large: usize,
    /// Normalized MSE at the smallest n over that at the largest.
    pub small_over_large: f64,
    /// Normalized MSE at the largest n over the oracle's there; `None`
    /// without an oracle row at that n.
    pub over_oracle: Option<f64>,
    /// Non-increasing in n up to 2 combined MC standard errors.
    pub decreasing: bool,
}

pub fn elbow_report(table: &ResultsTable) -> Result<Vec<ElbowRow>> {
    let mut out = Vec::new();
    for est in table.estimators() {
        let rows = table.for_estimator(&est);
        if rows.len() < 3 {
            return Err(LabError::Config(format!("estimator {est} has {} grid points; the elbow report needs at least 3", rows.len())));
        }
        let (first, last) = (rows[0], rows[rows.len() - 1]);
        let oracle = table.get("oracle", last.n).map(|o| last.normalized_mse / o.normalized_mse);
        let decreasing = rows.windows(2).all(|w| {
            let se = (w[0].mc_stderr.powi(2) + w[1].mc_stderr.powi(2)).sqrt();
            w[1].normalized_mse <= w[0].normalized_mse + 2.0 * se
        });
        out.push(ElbowRow {
            estimator: est,
            n_small: first.n,
            n_large: last.n,
            small_over_large: first.normalized_mse / last.normalized_mse,
            over_oracle: oracle,
            decreasing,
        });
    }
    if out.is_empty() {
        return Err(LabError::Config("empty results table".into()));
    }
    Ok(out)
}

pub fn elbow_text(rows: &[ElbowRow]) -> String {
    let mut out = String::from("estimator,n_small,n_large,small_over_large,over_oracle,decreasing\n");
    for r in rows {
        let oracle = r.over_oracle.map(|v| format!("{v:.4}")).unwrap_or_default();
        out.push_str(&format!("{},{},{},{:.4},{},{}\n", r.estimator, r.n_small, r.n_large, r.small_over_large, oracle, r.decreasing));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::results::ResultRow;

    fn table(entries: &[(&str, usize, f64)]) -> ResultsTable {
        ResultsTable::new(
            entries
                .iter()
                .map(|&(e, n, m)| ResultRow { instance_id: "t".into(), estimator: e.into(), n, reps: 100, normalized_mse: m, mc_stderr: 0.01, master_seed: 0 })
                .collect(),
        )
    }

    #[test]
    fn oracle_only_is_flat() {
        let r = elbow_report(&table(&[("oracle", 100, 1.0), ("oracle", 200, 1.0), ("oracle", 400, 1.0)])).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].small_over_large, 1.0);
        assert_eq!(r[0].over_oracle, Some(1.0));
        assert!(r[0].decreasing);
    }

    #[test]
    fn halving_mse() {
        let r = elbow_report(&table(&[("two-stage-weighted-krr", 100, 8.0), ("two-stage-weighted-krr", 200, 4.0), ("two-stage-weighted-krr", 400, 2.0), ("oracle", 100, 1.0), ("oracle", 200, 1.0), ("oracle", 400, 1.0)])).unwrap();
        let ts = r.iter().find(|e| e.estimator.starts_with("two-stage")).unwrap();
        assert_eq!(ts.small_over_large, 4.0);
        assert_eq!(ts.over_oracle, Some(2.0));
        assert!(ts.decreasing);
    }

    #[test]
    fn increasing_flagged() {
        let r = elbow_report(&table(&[("ipw", 1, 1.0), ("ipw", 2, 2.0), ("ipw", 3, 3.0)])).unwrap();
        assert!(!r[0].decreasing);
        assert_eq!(r[0].over_oracle, None);
    }

    #[test]
    fn single_n_errors() {
        assert!(elbow_report(&table(&[("oracle", 100, 1.0)])).is_err());
    }
}
