use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controllers::Method;
use crate::metrics::{mean, paired_comparison, std_dev, PairedComparison};

use super::run::{csv_error, ResultsTable, SCHEMA_VERSION};
use super::seeds::{derive_seed, Domain};
use super::{write_atomic, ExperimentError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdleAggregate {
    pub n_trials: usize,
    pub off_rate: f64,
    pub mean_flashes_before_off: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub n_subjects: usize,
    pub mean_bitrate: f64,
    pub sd_bitrate: f64,
    pub mean_accuracy: f64,
    pub mean_flashes: f64,
    /// Paired bootstrap of `method - optimal_stopping`.
    pub vs_optimal_stopping: Option<PairedComparison>,
    pub idle: Option<IdleAggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub methods: Vec<MethodReport>,
}

impl Report {
    pub fn method(&self, method: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == method)
    }
}

pub fn read_table(path: &Path) -> Result<ResultsTable, ExperimentError> {
    let bytes = std::fs::read(path).map_err(|e| ExperimentError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| ExperimentError::Malformed(e.to_string()))?;
    let found = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| ExperimentError::Malformed("missing schema_version".into()))?;
    if found != u64::from(SCHEMA_VERSION) {
        return Err(ExperimentError::SchemaMismatch {
            found: found as u32,
            expected: SCHEMA_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| ExperimentError::Malformed(e.to_string()))
}

/// Builds the report for an in-memory table.
pub fn summarize_table(table: &ResultsTable) -> Result<Report, ExperimentError> {
    let baseline = table.rows_for(Method::OptimalStopping);
    let mut methods = Vec::new();
    for &method in &table.metadata.methods {
        let rows = table.rows_for(method);
        if rows.is_empty() {
            continue;
        }
        let bitrates: Vec<f64> = rows.iter().map(|r| r.bitrate_bit_per_min).collect();
        let accuracies: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
        let flashes: Vec<f64> = rows.iter().map(|r| r.mean_flashes).collect();
        let vs_optimal_stopping = if method != Method::OptimalStopping && !baseline.is_empty() {
            let seed = derive_seed(
                table.metadata.master_seed,
                Domain::Bootstrap,
                0,
                method.id(),
                0,
            );
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Some(paired_comparison(
                &rows,
                &baseline,
                table.metadata.n_boot,
                &mut rng,
            )?)
        } else {
            None
        };
        let idle_rows = table.idle_for(method);
        let idle = (!idle_rows.is_empty()).then(|| {
            let n: usize = idle_rows.iter().map(|r| r.n_trials).sum();
            let offs: Vec<(f64, Option<f64>)> = idle_rows
                .iter()
                .map(|r| (r.off_rate * r.n_trials as f64, r.mean_flashes_before_off))
                .collect();
            let n_off: f64 = offs.iter().map(|o| o.0).sum();
            let flash_total: f64 = offs.iter().map(|(k, m)| k * m.unwrap_or(0.0)).sum();
            IdleAggregate {
                n_trials: n,
                off_rate: if n == 0 { 0.0 } else { n_off / n as f64 },
                mean_flashes_before_off: (n_off > 0.0).then(|| flash_total / n_off),
            }
        });
        methods.push(MethodReport {
            method,
            n_subjects: rows.len(),
            mean_bitrate: mean(&bitrates),
            sd_bitrate: std_dev(&bitrates),
            mean_accuracy: mean(&accuracies),
            mean_flashes: mean(&flashes),
            vs_optimal_stopping,
            idle,
        });
    }
    Ok(Report {
        config_hash: table.metadata.config_hash.clone(),
        methods,
    })
}

/// Reads a `results.json`, writes `plotdata.csv` beside it and returns the report.
pub fn report(table_path: &Path) -> Result<Report, ExperimentError> {
    let table = read_table(table_path)?;
    let dir = table_path.parent().unwrap_or(Path::new("."));
    write_plot_data(&dir.join("plotdata.csv"), &table)?;
    summarize_table(&table)
}

/// `method,subject,bitrate_bit_per_min` triples.
pub fn write_plot_data(path: &Path, table: &ResultsTable) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "subject", "bitrate_bit_per_min"])
        .map_err(csv_error)?;
    for r in &table.rows {
        w.write_record([
            r.method.to_string(),
            r.subject.clone(),
            r.bitrate_bit_per_min.to_string(),
        ])
        .map_err(csv_error)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| ExperimentError::Malformed(e.to_string()))?;
    write_atomic(path, &bytes)
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "config {}",
            &self.config_hash[..self.config_hash.len().min(12)]
        )?;
        writeln!(
            f,
            "{:<18} {:>9} {:>8} {:>9} {:>9}   vs optimal_stopping (95% CI)",
            "method", "bit/min", "sd", "accuracy", "flashes"
        )?;
        for m in &self.methods {
            write!(
                f,
                "{:<18} {:>9.2} {:>8.2} {:>9.3} {:>9.1}",
                m.method.name(),
                m.mean_bitrate,
                m.sd_bitrate,
                m.mean_accuracy,
                m.mean_flashes
            )?;
            if let Some(c) = &m.vs_optimal_stopping {
                write!(
                    f,
                    "   {:+.2} [{:+.2}, {:+.2}]",
                    c.mean_diff, c.ci_low, c.ci_high
                )?;
            }
            writeln!(f)?;
        }
        let idle: Vec<_> = self.methods.iter().filter(|m| m.idle.is_some()).collect();
        if !idle.is_empty() {
            writeln!(f, "idle trials")?;
            for m in idle {
                let s = m.idle.expect("filtered");
                let flashes = s
                    .mean_flashes_before_off
                    .map_or_else(|| "n/a".to_string(), |v| format!("{v:.1}"));
                writeln!(
                    f,
                    "{:<18} switched off {:>5.1}% of {} trials, after {} flashes",
                    m.method.name(),
                    100.0 * s.off_rate,
                    s.n_trials,
                    flashes
                )?;
            }
        }
        Ok(())
    }
}
