//! Experiment orchestration: configuration, seeded parallel simulation,
//! persistence and reporting.

mod config;
mod report;
mod run;
pub mod seeds;

use std::io::Write;
use std::path::Path;

use thiserror::Error;

pub use config::{
    CalibrationConfig, CalibrationMode, ControllerConfig, ExperimentConfig, OutputConfig,
    PopulationConfig, ReportConfig, SpellerConfig,
};
pub use report::{
    read_table, report, summarize_table, write_plot_data, IdleAggregate, MethodReport, Report,
};
pub use run::{
    calibrate, run, simulate, sweep, tabulate, write_results, CalibrationDump, IdleSummary,
    ResultsTable, RunMetadata, Simulation, SubjectCalibration, SweepEntry, SweepParam, SweepTable,
    SCHEMA_VERSION,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("results schema version {found}, expected {expected}")]
    SchemaMismatch { found: u32, expected: u32 },
    #[error("simulation failed: {0}")]
    Simulation(String),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed results file: {0}")]
    Malformed(String),
}

impl ExperimentError {
    pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Self {
        Self::Invalid {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    /// Whether the error stems from the configuration rather than execution.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Self::Parse(_) | Self::Invalid { .. })
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
    let file_name = path.file_name().ok_or_else(|| {
        ExperimentError::Malformed(format!("{} is not a file path", path.display()))
    })?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    let result = std::fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| std::fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(ExperimentError::io(path, e));
    }
    Ok(())
}
