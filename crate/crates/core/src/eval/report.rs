use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A directional expectation checked by an experiment: recorded pass/fail,
/// fatal only if `required`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Expectation {
    pub description: String,
    pub satisfied: bool,
    pub required: bool,
}

/// Scored comparison table: rows are models/configs, columns are metrics,
/// with per-seed raw values behind every aggregate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub experiment_id: String,
    pub rows: Vec<String>,
    pub metrics: Vec<String>,
    pub seeds: Vec<u64>,
    /// raw[row][metric][seed_index]
    pub raw: Vec<Vec<Vec<f64>>>,
    /// aggregates[row][metric] = mean over seeds of raw[row][metric].
    pub aggregates: Vec<Vec<f64>>,
    pub expectations: Vec<Expectation>,
    /// Free-form context (reference anchors, config echoes); never asserted.
    /// No wall-clock fields live here: a report must hash identically across
    /// reruns with the same config and seed.
    pub metadata: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn from_raw(
        experiment_id: impl Into<String>,
        rows: Vec<String>,
        metrics: Vec<String>,
        seeds: Vec<u64>,
        raw: Vec<Vec<Vec<f64>>>,
    ) -> Result<EvalReport> {
        if raw.len() != rows.len()
            || raw.iter().any(|r| r.len() != metrics.len())
            || raw
                .iter()
                .any(|r| r.iter().any(|m| m.len() != seeds.len()))
        {
            return Err(Error::invalid("raw value tensor does not match rows x metrics x seeds"));
        }
        let aggregates = raw
            .iter()
            .map(|row| {
                row.iter()
                    .map(|vals| vals.iter().sum::<f64>() / vals.len().max(1) as f64)
                    .collect()
            })
            .collect();
        Ok(EvalReport {
            experiment_id: experiment_id.into(),
            rows,
            metrics,
            seeds,
            raw,
            aggregates,
            expectations: Vec::new(),
            metadata: BTreeMap::new(),
        })
    }

    pub fn aggregate(&self, row: &str, metric: &str) -> Option<f64> {
        let r = self.rows.iter().position(|x| x == row)?;
        let m = self.metrics.iter().position(|x| x == metric)?;
        Some(self.aggregates[r][m])
    }

    pub fn raw_values(&self, row: &str, metric: &str) -> Option<&[f64]> {
        let r = self.rows.iter().position(|x| x == row)?;
        let m = self.metrics.iter().position(|x| x == metric)?;
        Some(&self.raw[r][m])
    }

    /// Every aggregate must equal the mean of its stored raws to 1e-12.
    pub fn validate_self_consistency(&self) -> Result<()> {
        for (r, row) in self.raw.iter().enumerate() {
            for (m, vals) in row.iter().enumerate() {
                let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
                if (mean - self.aggregates[r][m]).abs() > 1e-12 {
                    return Err(Error::invalid(format!(
                        "aggregate [{}][{}] = {} does not match raw mean {mean}",
                        self.rows[r], self.metrics[m], self.aggregates[r][m]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Write `<stem>.json` (full report) and `<stem>.csv` (aggregate table).
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join(format!("{stem}.json")), json)?;
        let mut csv = String::from("config");
        for m in &self.metrics {
            csv.push(',');
            csv.push_str(m);
        }
        csv.push('\n');
        for (r, row) in self.rows.iter().enumerate() {
            csv.push_str(row);
            for m in 0..self.metrics.len() {
                csv.push_str(&format!(",{}", self.aggregates[r][m]));
            }
            csv.push('\n');
        }
        std::fs::write(dir.join(format!("{stem}.csv")), csv)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<EvalReport> {
        let text = std::fs::read_to_string(path)?;
        let report: EvalReport = serde_json::from_str(&text)?;
        report.validate_self_consistency()?;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_report() -> EvalReport {
        EvalReport::from_raw(
            "exp",
            vec!["base".into(), "both".into()],
            vec!["pref".into()],
            vec![1, 2, 3],
            vec![vec![vec![1.0, 2.0, 3.0]], vec![vec![2.0, 4.0, 6.0]]],
        )
        .unwrap()
    }

    #[test]
    fn aggregates_are_means_of_raws() {
        let r = toy_report();
        r.validate_self_consistency().unwrap();
        assert_eq!(r.aggregate("base", "pref"), Some(2.0));
        assert_eq!(r.aggregate("both", "pref"), Some(4.0));
    }

    #[test]
    fn json_round_trip_preserves_consistency() {
        let r = toy_report();
        let dir = tempfile::tempdir().unwrap();
        r.write(dir.path(), "report").unwrap();
        let loaded = EvalReport::load(&dir.path().join("report.json")).unwrap();
        assert_eq!(loaded.raw, r.raw);
        let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
        assert!(csv.starts_with("config,pref\n"));
        assert!(csv.contains("base,2\n"));
    }

    #[test]
    fn mismatched_tensor_rejected() {
        let err = EvalReport::from_raw(
            "exp",
            vec!["a".into()],
            vec!["m".into()],
            vec![1, 2],
            vec![vec![vec![1.0]]],
        );
        assert!(err.is_err());
    }

    #[test]
    fn tampered_aggregate_detected_on_load() {
        let mut r = toy_report();
        r.aggregates[0][0] += 0.5;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, serde_json::to_string(&r).unwrap()).unwrap();
        assert!(EvalReport::load(&path).is_err());
    }
}
