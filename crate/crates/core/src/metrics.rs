//! Scoring: Wolpaw bit rate, per-(subject, method) summaries, idle detection
//! statistics and paired bootstrap comparisons across subjects.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controllers::{Method, TrialOutcome, TrialRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("trial duration must be positive (got {0} s)")]
    NonPositiveDuration(f64),
    #[error("invalid timing: {0}")]
    InvalidTiming(String),
    #[error("no records for subject {subject} / method {method}")]
    EmptyCell { subject: String, method: String },
    #[error("subject sets differ between compared summaries")]
    SubjectMismatch,
    #[error("need at least one bootstrap resample")]
    NoResamples,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingModel {
    /// Stimulus onset asynchrony per flash.
    pub soa_seconds: f64,
    /// Charged once per displayed letter (feedback and pause).
    pub inter_trial_seconds: f64,
}

impl Default for TimingModel {
    fn default() -> Self {
        Self {
            soa_seconds: 0.125,
            inter_trial_seconds: 1.0,
        }
    }
}

impl TimingModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.soa_seconds > 0.0 && self.soa_seconds.is_finite()) {
            return Err(MetricsError::InvalidTiming(format!(
                "soa_seconds = {} must be positive",
                self.soa_seconds
            )));
        }
        if !(self.inter_trial_seconds >= 0.0 && self.inter_trial_seconds.is_finite()) {
            return Err(MetricsError::InvalidTiming(format!(
                "inter_trial_seconds = {} must be non-negative",
                self.inter_trial_seconds
            )));
        }
        Ok(())
    }

    /// Seconds spent on a trial with the given flash and selection counts.
    pub fn trial_seconds(&self, flashes: f64, selections: f64) -> f64 {
        flashes * self.soa_seconds + selections * self.inter_trial_seconds
    }
}

/// Wolpaw bits per selection for `n_choices` equiprobable targets.
pub fn bits_per_selection(n_choices: usize, p_correct: f64) -> f64 {
    assert!(n_choices >= 2, "need at least two choices");
    let n = n_choices as f64;
    let p = p_correct.clamp(0.0, 1.0);
    if p <= 1.0 / n {
        return 0.0;
    }
    if p >= 1.0 {
        return n.log2();
    }
    n.log2() + p * p.log2() + (1.0 - p) * ((1.0 - p) / (n - 1.0)).log2()
}

/// Bit rate (bit/min) for a mean trial duration in seconds.
pub fn bitrate_from_seconds(bits: f64, trial_seconds: f64) -> Result<f64> {
    if !(trial_seconds > 0.0) {
        return Err(MetricsError::NonPositiveDuration(trial_seconds));
    }
    Ok(bits * 60.0 / trial_seconds)
}

/// Bit rate for one selection per trial: `bits · 60 / (flashes · soa + pause)`.
pub fn bitrate(bits: f64, mean_flashes: f64, timing: &TimingModel) -> Result<f64> {
    bitrate_from_seconds(bits, timing.trial_seconds(mean_flashes, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub subject: String,
    pub method: Method,
    pub n_trials: usize,
    pub accuracy: f64,
    pub mean_flashes: f64,
    pub mean_trial_seconds: f64,
    pub bitrate_bit_per_min: f64,
}

/// Per-(subject, method) accuracy, mean flashes and bit rate.
///
/// Rows come out sorted by subject then method, so the result does not depend
/// on record order. Sums are taken over per-cell records sorted into a
/// canonical order to keep floating-point results bit-identical.
pub fn aggregate(
    records: &[TrialRecord],
    timing: &TimingModel,
    n_choices: usize,
) -> Result<Vec<MethodSummary>> {
    timing.validate()?;
    let mut cells: BTreeMap<(&str, Method), Vec<(usize, usize, bool)>> = BTreeMap::new();
    for r in records {
        cells
            .entry((r.subject_id.as_str(), r.method))
            .or_default()
            .push((r.n_flashes, r.selections_made, r.correct));
    }
    cells
        .into_iter()
        .map(|((subject, method), mut cell)| {
            cell.sort_unstable();
            summarize(subject, method, &cell, timing, n_choices)
        })
        .collect()
}

/// Like [`aggregate`] but reports an [`MetricsError::EmptyCell`] for any
/// expected (subject, method) pair without records.
pub fn aggregate_expected(
    records: &[TrialRecord],
    subjects: &[String],
    methods: &[Method],
    timing: &TimingModel,
    n_choices: usize,
) -> Result<Vec<MethodSummary>> {
    let rows = aggregate(records, timing, n_choices)?;
    for s in subjects {
        for m in methods {
            if !rows.iter().any(|r| &r.subject == s && r.method == *m) {
                return Err(MetricsError::EmptyCell {
                    subject: s.clone(),
                    method: m.to_string(),
                });
            }
        }
    }
    Ok(rows)
}

fn summarize(
    subject: &str,
    method: Method,
    cell: &[(usize, usize, bool)],
    timing: &TimingModel,
    n_choices: usize,
) -> Result<MethodSummary> {
    if cell.is_empty() {
        return Err(MetricsError::EmptyCell {
            subject: subject.to_string(),
            method: method.to_string(),
        });
    }
    let n = cell.len() as f64;
    let flashes: usize = cell.iter().map(|c| c.0).sum();
    let selections: usize = cell.iter().map(|c| c.1).sum();
    let correct = cell.iter().filter(|c| c.2).count();
    let accuracy = correct as f64 / n;
    let mean_flashes = flashes as f64 / n;
    let mean_trial_seconds = timing.trial_seconds(mean_flashes, selections as f64 / n);
    let bits = bits_per_selection(n_choices, accuracy);
    Ok(MethodSummary {
        subject: subject.to_string(),
        method,
        n_trials: cell.len(),
        accuracy,
        mean_flashes,
        mean_trial_seconds,
        bitrate_bit_per_min: bitrate_from_seconds(bits, mean_trial_seconds)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdleStats {
    pub n_trials: usize,
    pub off_rate: f64,
    /// Absent when no trial switched off.
    pub mean_flashes_before_off: Option<f64>,
}

pub fn idle_stats(records: &[TrialRecord]) -> IdleStats {
    let off: Vec<usize> = records
        .iter()
        .filter(|r| r.outcome == TrialOutcome::SwitchedOff)
        .map(|r| r.n_flashes)
        .collect();
    let n = records.len();
    IdleStats {
        n_trials: n,
        off_rate: if n == 0 {
            0.0
        } else {
            off.len() as f64 / n as f64
        },
        mean_flashes_before_off: (!off.is_empty())
            .then(|| off.iter().sum::<usize>() as f64 / off.len() as f64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub mean_diff: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl PairedComparison {
    pub fn excludes_zero(&self) -> bool {
        self.ci_low > 0.0 || self.ci_high < 0.0
    }
}

/// Bootstrap over subjects of the mean bit-rate difference `a - b`, with a
/// 95% percentile interval. Each side must hold one row per subject.
pub fn paired_comparison<R: Rng + ?Sized>(
    a: &[MethodSummary],
    b: &[MethodSummary],
    n_boot: usize,
    rng: &mut R,
) -> Result<PairedComparison> {
    let by_subject = |rows: &[MethodSummary]| {
        rows.iter()
            .map(|r| (r.subject.clone(), r.bitrate_bit_per_min))
            .collect::<BTreeMap<_, _>>()
    };
    let (ma, mb) = (by_subject(a), by_subject(b));
    if ma.len() != a.len() || mb.len() != b.len() || ma.keys().ne(mb.keys()) || ma.is_empty() {
        return Err(MetricsError::SubjectMismatch);
    }
    let diffs: Vec<f64> = ma.iter().map(|(s, x)| x - mb[s]).collect();
    paired_bootstrap(&diffs, n_boot, rng)
}

/// Percentile bootstrap of the mean of paired differences.
pub fn paired_bootstrap<R: Rng + ?Sized>(
    diffs: &[f64],
    n_boot: usize,
    rng: &mut R,
) -> Result<PairedComparison> {
    if n_boot == 0 {
        return Err(MetricsError::NoResamples);
    }
    if diffs.is_empty() {
        return Err(MetricsError::SubjectMismatch);
    }
    let n = diffs.len();
    let mean_diff = diffs.iter().sum::<f64>() / n as f64;
    let mut means: Vec<f64> = (0..n_boot)
        .map(|_| (0..n).map(|_| diffs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    Ok(PairedComparison {
        mean_diff,
        ci_low: percentile(&means, 0.025),
        ci_high: percentile(&means, 0.975),
    })
}

/// Linear-interpolated percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}
