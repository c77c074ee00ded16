use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controllers::{
    ai_run_trial, fixed_run_trial, optimal_stopping_run_trial, AiOptions, Method, TrialRecord,
};
use crate::metrics::{aggregate_expected, idle_stats, MethodSummary};
use crate::speller::{
    build_speller_model, calibrate_likelihood, BinnedClassifier, SpellerModel, SpellerModelSpec,
};
use crate::subject::{generate_calibration_data, Behavior, SubjectProfile, TrueState};

use super::config::{CalibrationMode, ExperimentConfig};
use super::report::write_plot_data;
use super::seeds::{derive_seed, Domain};
use super::{write_atomic, ExperimentError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub master_seed: u64,
    pub artifact_version: String,
    pub n_choices: usize,
    pub n_boot: usize,
    pub letters_per_subject: usize,
    pub idle_trials_per_subject: usize,
    pub methods: Vec<Method>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdleSummary {
    pub subject: String,
    pub method: Method,
    pub n_trials: usize,
    pub off_rate: f64,
    pub mean_flashes_before_off: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub schema_version: u32,
    pub metadata: RunMetadata,
    pub rows: Vec<MethodSummary>,
    pub idle: Vec<IdleSummary>,
}

impl ResultsTable {
    pub fn rows_for(&self, method: Method) -> Vec<MethodSummary> {
        self.rows
            .iter()
            .filter(|r| r.method == method)
            .cloned()
            .collect()
    }

    pub fn idle_for(&self, method: Method) -> Vec<IdleSummary> {
        self.idle
            .iter()
            .filter(|r| r.method == method)
            .cloned()
            .collect()
    }

    pub fn summaries_csv(&self) -> Result<Vec<u8>, ExperimentError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "subject",
            "method",
            "n_trials",
            "accuracy",
            "mean_flashes",
            "mean_trial_seconds",
            "bitrate_bit_per_min",
        ])
        .map_err(csv_error)?;
        for r in &self.rows {
            w.write_record([
                r.subject.clone(),
                r.method.to_string(),
                r.n_trials.to_string(),
                r.accuracy.to_string(),
                r.mean_flashes.to_string(),
                r.mean_trial_seconds.to_string(),
                r.bitrate_bit_per_min.to_string(),
            ])
            .map_err(csv_error)?;
        }
        w.into_inner()
            .map_err(|e| ExperimentError::Malformed(e.to_string()))
    }
}

pub(crate) fn csv_error(e: csv::Error) -> ExperimentError {
    ExperimentError::Malformed(e.to_string())
}

/// Raw trial records of one run. Per-step traces are dropped.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub subjects: Vec<String>,
    pub spelling: Vec<TrialRecord>,
    pub idle: Vec<TrialRecord>,
}

struct SubjectContext {
    profile: SubjectProfile,
    /// Indexed like `config.methods`.
    models: Vec<SpellerModel>,
}

fn subject_classifier(
    config: &ExperimentConfig,
    index: usize,
    profile: &SubjectProfile,
) -> Result<BinnedClassifier, ExperimentError> {
    let cal = &config.calibration;
    match cal.mode {
        CalibrationMode::Oracle => Ok(profile.classifier()),
        CalibrationMode::Calibrated => {
            let seed = derive_seed(config.master_seed, Domain::Calibration, index as u64, 0, 0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = generate_calibration_data(profile, cal.n_target, cal.n_nontarget, &mut rng)
                .map_err(|e| ExperimentError::Simulation(e.to_string()))?;
            calibrate_likelihood(&data, profile.bins())
                .map_err(|e| ExperimentError::Simulation(e.to_string()))
        }
    }
}

/// ErrP parameters the controller model assumes and the simulator uses.
fn errp_for(method: Method, profile: &SubjectProfile) -> (f64, f64) {
    match method {
        Method::AiPerfectErrp => (1.0, 1.0),
        _ => (profile.errp_sens, profile.errp_spec),
    }
}

fn build_contexts(config: &ExperimentConfig) -> Result<Vec<SubjectContext>, ExperimentError> {
    config.validate()?;
    let population = config.population.build()?;
    let grid = config.speller.grid()?;
    let groups = config.speller.groups(&grid)?;
    population
        .profiles
        .iter()
        .enumerate()
        .map(|(index, profile)| {
            let classifier = subject_classifier(config, index, profile)?;
            let models = config
                .methods
                .iter()
                .map(|&method| {
                    let (errp_sens, errp_spec) = errp_for(method, profile);
                    build_speller_model(&SpellerModelSpec {
                        grid: &grid,
                        groups: &groups,
                        classifier: &classifier,
                        errp_sens,
                        errp_spec,
                        preferences: &config.preferences,
                        gamma: config.controller.gamma,
                        idle_prior: config.speller.idle_prior,
                    })
                    .map_err(|e| ExperimentError::invalid("speller", e.to_string()))
                })
                .collect::<Result<_, _>>()?;
            Ok(SubjectContext {
                profile: profile.clone(),
                models,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Job {
    subject: usize,
    method: usize,
    trial: usize,
    idle: bool,
}

fn run_job(
    config: &ExperimentConfig,
    contexts: &[SubjectContext],
    job: Job,
) -> Result<TrialRecord, ExperimentError> {
    let ctx = &contexts[job.subject];
    let method = config.methods[job.method];
    let model = &ctx.models[job.method];
    let (sens, spec) = errp_for(method, &ctx.profile);
    let mut profile = ctx.profile.with_errp(sens, spec);
    let (true_state, domain) = if job.idle {
        profile = profile.with_behavior(Behavior::Idle);
        (TrueState::Idle, Domain::Idle)
    } else {
        let target_seed = derive_seed(
            config.master_seed,
            Domain::Target,
            job.subject as u64,
            0,
            job.trial as u64,
        );
        let letter =
            ChaCha8Rng::seed_from_u64(target_seed).random_range(0..model.states.n_letters());
        (TrueState::Letter(letter), Domain::Trial)
    };
    let seed = derive_seed(
        config.master_seed,
        domain,
        job.subject as u64,
        method.id(),
        job.trial as u64,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = &config.controller;
    let record = match method {
        Method::Fixed => fixed_run_trial(model, &profile, true_state, c.repetitions, &mut rng),
        Method::OptimalStopping => optimal_stopping_run_trial(
            model,
            &profile,
            true_state,
            c.theta,
            c.repetitions,
            &mut rng,
        ),
        Method::Ai | Method::AiErrp | Method::AiPerfectErrp => ai_run_trial(
            model,
            &profile,
            true_state,
            &config.limits,
            &AiOptions {
                mode: c.selection_mode,
                use_feedback: method.uses_errp(),
                method,
            },
            &mut rng,
        ),
    };
    let mut record = record.map_err(|e| ExperimentError::Simulation(e.to_string()))?;
    record.steps = Vec::new();
    Ok(record)
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, ExperimentError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ExperimentError::Simulation(e.to_string()))
}

/// Runs every trial of the experiment. `workers = 0` uses all cores; the
/// result does not depend on the worker count.
pub fn simulate(config: &ExperimentConfig, workers: usize) -> Result<Simulation, ExperimentError> {
    let contexts = build_contexts(config)?;
    let mut jobs = Vec::new();
    for subject in 0..contexts.len() {
        for (method, m) in config.methods.iter().enumerate() {
            for trial in 0..config.letters_per_subject {
                jobs.push(Job {
                    subject,
                    method,
                    trial,
                    idle: false,
                });
            }
            if m.is_active_inference() {
                for trial in 0..config.idle_trials_per_subject {
                    jobs.push(Job {
                        subject,
                        method,
                        trial,
                        idle: true,
                    });
                }
            }
        }
    }
    let pool = thread_pool(workers)?;
    let records: Vec<Result<TrialRecord, ExperimentError>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| run_job(config, &contexts, *job))
            .collect()
    });
    let mut spelling = Vec::new();
    let mut idle = Vec::new();
    for (job, record) in jobs.iter().zip(records) {
        let record = record?;
        if job.idle {
            idle.push(record);
        } else {
            spelling.push(record);
        }
    }
    Ok(Simulation {
        subjects: contexts.iter().map(|c| c.profile.id.clone()).collect(),
        spelling,
        idle,
    })
}

/// Aggregates a simulation into the results table.
pub fn tabulate(
    config: &ExperimentConfig,
    sim: &Simulation,
) -> Result<ResultsTable, ExperimentError> {
    let n_choices = config.speller.grid()?.n_letters();
    let rows = aggregate_expected(
        &sim.spelling,
        &sim.subjects,
        &config.methods,
        &config.timing,
        n_choices,
    )?;
    let mut idle = Vec::new();
    for subject in &sim.subjects {
        for &method in config.methods.iter().filter(|m| m.is_active_inference()) {
            let cell: Vec<TrialRecord> = sim
                .idle
                .iter()
                .filter(|r| &r.subject_id == subject && r.method == method)
                .cloned()
                .collect();
            if cell.is_empty() {
                continue;
            }
            let s = idle_stats(&cell);
            idle.push(IdleSummary {
                subject: subject.clone(),
                method,
                n_trials: s.n_trials,
                off_rate: s.off_rate,
                mean_flashes_before_off: s.mean_flashes_before_off,
            });
        }
    }
    idle.sort_by(|a, b| (&a.subject, a.method).cmp(&(&b.subject, b.method)));
    Ok(ResultsTable {
        schema_version: SCHEMA_VERSION,
        metadata: RunMetadata {
            config_hash: config.semantic_hash(),
            master_seed: config.master_seed,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            n_choices,
            n_boot: config.report.n_boot,
            letters_per_subject: config.letters_per_subject,
            idle_trials_per_subject: config.idle_trials_per_subject,
            methods: config.methods.clone(),
        },
        rows,
        idle,
    })
}

/// Writes `summaries.csv`, `results.json` and `plotdata.csv` into `dir`.
pub fn write_results(dir: &Path, table: &ResultsTable) -> Result<(), ExperimentError> {
    write_atomic(&dir.join("summaries.csv"), &table.summaries_csv()?)?;
    let json =
        serde_json::to_vec_pretty(table).map_err(|e| ExperimentError::Malformed(e.to_string()))?;
    write_atomic(&dir.join("results.json"), &json)?;
    write_plot_data(&dir.join("plotdata.csv"), table)
}

/// Simulates, tabulates and persists one experiment.
pub fn run(config: &ExperimentConfig, workers: usize) -> Result<ResultsTable, ExperimentError> {
    let sim = simulate(config, workers)?;
    let table = tabulate(config, &sim)?;
    write_results(&config.output.dir, &table)?;
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Gamma,
    Theta,
    Soa,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Gamma => "gamma",
            SweepParam::Theta => "theta",
            SweepParam::Soa => "soa",
        }
    }

    pub fn apply(self, config: &mut ExperimentConfig, value: f64) {
        match self {
            SweepParam::Gamma => config.controller.gamma = value,
            SweepParam::Theta => config.controller.theta = value,
            SweepParam::Soa => config.timing.soa_seconds = value,
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gamma" => Ok(SweepParam::Gamma),
            "theta" => Ok(SweepParam::Theta),
            "soa" => Ok(SweepParam::Soa),
            other => Err(format!(
                "unknown sweep parameter {other:?} (gamma|theta|soa)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub value: f64,
    pub table: ResultsTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub param: SweepParam,
    pub entries: Vec<SweepEntry>,
}

impl SweepTable {
    pub fn to_csv(&self) -> Result<Vec<u8>, ExperimentError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "param",
            "value",
            "subject",
            "method",
            "n_trials",
            "accuracy",
            "mean_flashes",
            "mean_trial_seconds",
            "bitrate_bit_per_min",
        ])
        .map_err(csv_error)?;
        for e in &self.entries {
            for r in &e.table.rows {
                w.write_record([
                    self.param.name().to_string(),
                    e.value.to_string(),
                    r.subject.clone(),
                    r.method.to_string(),
                    r.n_trials.to_string(),
                    r.accuracy.to_string(),
                    r.mean_flashes.to_string(),
                    r.mean_trial_seconds.to_string(),
                    r.bitrate_bit_per_min.to_string(),
                ])
                .map_err(csv_error)?;
            }
        }
        w.into_inner()
            .map_err(|e| ExperimentError::Malformed(e.to_string()))
    }
}

/// One run per value, stacked. Writes `sweep.csv` and `sweep.json`.
pub fn sweep(
    config: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
    workers: usize,
) -> Result<SweepTable, ExperimentError> {
    if values.is_empty() {
        return Err(ExperimentError::invalid(
            "values",
            "at least one value is required",
        ));
    }
    let mut entries = Vec::with_capacity(values.len());
    for &value in values {
        let mut c = config.clone();
        param.apply(&mut c, value);
        c.validate()?;
        let sim = simulate(&c, workers)?;
        entries.push(SweepEntry {
            value,
            table: tabulate(&c, &sim)?,
        });
    }
    let table = SweepTable { param, entries };
    write_atomic(&config.output.dir.join("sweep.csv"), &table.to_csv()?)?;
    let json =
        serde_json::to_vec_pretty(&table).map_err(|e| ExperimentError::Malformed(e.to_string()))?;
    write_atomic(&config.output.dir.join("sweep.json"), &json)?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectCalibration {
    pub subject: String,
    pub true_classifier: BinnedClassifier,
    pub model_classifier: BinnedClassifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDump {
    pub mode: CalibrationMode,
    pub subjects: Vec<SubjectCalibration>,
}

/// The classifier each subject's controller model is built from.
pub fn calibrate(config: &ExperimentConfig) -> Result<CalibrationDump, ExperimentError> {
    config.validate()?;
    let population = config.population.build()?;
    let subjects = population
        .profiles
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Ok(SubjectCalibration {
                subject: p.id.clone(),
                true_classifier: p.classifier(),
                model_classifier: subject_classifier(config, i, p)?,
            })
        })
        .collect::<Result<_, ExperimentError>>()?;
    Ok(CalibrationDump {
        mode: config.calibration.mode,
        subjects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.population.n_subjects = 2;
        c.methods = vec![Method::Ai, Method::OptimalStopping];
        c.letters_per_subject = 10;
        c.idle_trials_per_subject = 3;
        c
    }

    #[test]
    fn tiny_run_shape() {
        let c = tiny();
        let sim = simulate(&c, 2).unwrap();
        assert_eq!(sim.spelling.len(), 40);
        assert_eq!(sim.idle.len(), 6);
        let t = tabulate(&c, &sim).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert_eq!(t.idle.len(), 2);
        assert_eq!(t.metadata.config_hash, c.semantic_hash());
    }

    #[test]
    fn targets_are_shared_across_methods() {
        let c = tiny();
        let sim = simulate(&c, 1).unwrap();
        let ai: Vec<_> = sim
            .spelling
            .iter()
            .filter(|r| r.method == Method::Ai)
            .map(|r| r.true_state)
            .collect();
        let os: Vec<_> = sim
            .spelling
            .iter()
            .filter(|r| r.method == Method::OptimalStopping)
            .map(|r| r.true_state)
            .collect();
        assert_eq!(ai, os);
    }

    #[test]
    fn sweep_param_parsing() {
        assert_eq!("soa".parse::<SweepParam>().unwrap(), SweepParam::Soa);
        assert!("delta".parse::<SweepParam>().is_err());
    }
}
