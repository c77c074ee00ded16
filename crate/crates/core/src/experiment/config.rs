use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controllers::{Method, TrialLimits};
use crate::inference::SelectionMode;
use crate::metrics::TimingModel;
use crate::speller::{default_flash_groups, FlashGroup, PreferenceConfig, SpellerGrid};
use crate::subject::{make_population, PopulationSpec, SubjectPopulation, SubjectProfile};

use super::ExperimentError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub letters_per_subject: usize,
    /// Idle trials per subject, run for the Active Inference methods only.
    pub idle_trials_per_subject: usize,
    pub methods: Vec<Method>,
    pub population: PopulationConfig,
    pub speller: SpellerConfig,
    pub controller: ControllerConfig,
    pub preferences: PreferenceConfig,
    pub timing: TimingModel,
    pub limits: TrialLimits,
    pub calibration: CalibrationConfig,
    pub report: ReportConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 20_180_918,
            letters_per_subject: 1000,
            idle_trials_per_subject: 200,
            methods: Method::ALL.to_vec(),
            population: PopulationConfig::default(),
            speller: SpellerConfig::default(),
            controller: ControllerConfig::default(),
            preferences: PreferenceConfig::default(),
            timing: TimingModel::default(),
            limits: TrialLimits::default(),
            calibration: CalibrationConfig::default(),
            report: ReportConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationConfig {
    pub seed: u64,
    pub n_subjects: usize,
    pub hit_range: (f64, f64),
    pub false_alarm_range: (f64, f64),
    pub bins: usize,
    pub errp_sens: f64,
    pub errp_spec: f64,
    /// Explicit profiles; when present the generator fields are ignored.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profiles: Option<Vec<SubjectProfile>>,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        let spec = PopulationSpec::default();
        Self {
            seed: 7,
            n_subjects: spec.n_subjects,
            hit_range: spec.hit_range,
            false_alarm_range: spec.false_alarm_range,
            bins: spec.bins,
            errp_sens: spec.errp_sens,
            errp_spec: spec.errp_spec,
            profiles: None,
        }
    }
}

impl PopulationConfig {
    pub fn build(&self) -> Result<SubjectPopulation, ExperimentError> {
        let population = match &self.profiles {
            Some(p) => SubjectPopulation::new(p.clone()),
            None => make_population(
                &PopulationSpec {
                    n_subjects: self.n_subjects,
                    hit_range: self.hit_range,
                    false_alarm_range: self.false_alarm_range,
                    bins: self.bins,
                    errp_sens: self.errp_sens,
                    errp_spec: self.errp_spec,
                },
                self.seed,
            ),
        };
        population.map_err(|e| ExperimentError::invalid("population", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpellerConfig {
    pub rows: usize,
    pub cols: usize,
    /// Defaults to A-Z, 1-9, `_` on a 6x6 grid, `L0..` otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub symbols: Option<Vec<String>>,
    /// Flash groups as letter-index lists; rows then columns when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub custom_groups: Option<Vec<Vec<usize>>>,
    pub idle_prior: f64,
}

impl Default for SpellerConfig {
    fn default() -> Self {
        Self {
            rows: 6,
            cols: 6,
            symbols: None,
            custom_groups: None,
            idle_prior: 1.0 / 37.0,
        }
    }
}

impl SpellerConfig {
    pub fn grid(&self) -> Result<SpellerGrid, ExperimentError> {
        let grid = match &self.symbols {
            Some(s) => SpellerGrid::new(self.rows, self.cols, s.clone()),
            None if (self.rows, self.cols) == (6, 6) => Ok(SpellerGrid::default()),
            None => SpellerGrid::with_size(self.rows, self.cols),
        };
        grid.map_err(|e| ExperimentError::invalid("speller", e.to_string()))
    }

    pub fn groups(&self, grid: &SpellerGrid) -> Result<Vec<FlashGroup>, ExperimentError> {
        match &self.custom_groups {
            None => Ok(default_flash_groups(grid)),
            Some(groups) if groups.is_empty() => Err(ExperimentError::invalid(
                "speller.custom_groups",
                "at least one group is required",
            )),
            Some(groups) => groups
                .iter()
                .map(|g| FlashGroup::new(g.clone(), grid.n_letters()))
                .collect::<Result<_, _>>()
                .map_err(|e| ExperimentError::invalid("speller.custom_groups", e.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub gamma: f64,
    /// Posterior threshold of the optimal-stopping baseline.
    pub theta: f64,
    /// Permutations per fixed schedule.
    pub repetitions: usize,
    pub selection_mode: SelectionMode,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            gamma: 8.0,
            theta: 0.95,
            repetitions: 12,
            selection_mode: SelectionMode::Sample,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Models use each subject's true classifier distributions.
    Oracle,
    /// Models use distributions estimated from simulated calibration data.
    Calibrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub mode: CalibrationMode,
    pub n_target: usize,
    pub n_nontarget: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            mode: CalibrationMode::Calibrated,
            n_target: 200,
            n_nontarget: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub n_boot: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { n_boot: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        let config: Self =
            toml::from_str(text).map_err(|e| ExperimentError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file. A relative `output.dir` resolves against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Parse(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text).map_err(|e| match e {
            ExperimentError::Parse(msg) => {
                ExperimentError::Parse(format!("{}: {msg}", path.display()))
            }
            other => other,
        })?;
        if config.output.dir.is_relative() {
            if let Some(parent) = path.parent() {
                config.output.dir = parent.join(&config.output.dir);
            }
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.letters_per_subject == 0 {
            return Err(ExperimentError::invalid(
                "letters_per_subject",
                "must be at least 1",
            ));
        }
        if self.methods.is_empty() {
            return Err(ExperimentError::invalid(
                "methods",
                "at least one method is required",
            ));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(m) = self.methods.iter().find(|m| !seen.insert(**m)) {
            return Err(ExperimentError::invalid(
                "methods",
                format!("{m} listed twice"),
            ));
        }
        let c = &self.controller;
        if !(c.gamma.is_finite() && c.gamma >= 0.0) {
            return Err(ExperimentError::invalid(
                "controller.gamma",
                "must be finite and non-negative",
            ));
        }
        if c.repetitions == 0 {
            return Err(ExperimentError::invalid(
                "controller.repetitions",
                "must be at least 1",
            ));
        }
        if self.limits.max_selections == 0 {
            return Err(ExperimentError::invalid(
                "limits.max_selections",
                "must be at least 1",
            ));
        }
        if self.limits.max_flashes == 0 {
            return Err(ExperimentError::invalid(
                "limits.max_flashes",
                "must be at least 1",
            ));
        }
        self.timing
            .validate()
            .map_err(|e| ExperimentError::invalid("timing", e.to_string()))?;
        if !(0.0..=1.0).contains(&self.speller.idle_prior) || self.speller.idle_prior >= 1.0 {
            return Err(ExperimentError::invalid(
                "speller.idle_prior",
                "must lie in [0, 1)",
            ));
        }
        let p = &self.preferences;
        if [p.errp_neg, p.errp_pos, p.off_good, p.off_bad, p.flash_bin]
            .iter()
            .any(|v| !v.is_finite())
        {
            return Err(ExperimentError::invalid(
                "preferences",
                "values must be finite",
            ));
        }
        let cal = &self.calibration;
        if cal.mode == CalibrationMode::Calibrated && (cal.n_target == 0 || cal.n_nontarget == 0) {
            return Err(ExperimentError::invalid(
                "calibration",
                "n_target and n_nontarget must be at least 1",
            ));
        }
        if self.report.n_boot == 0 {
            return Err(ExperimentError::invalid(
                "report.n_boot",
                "must be at least 1",
            ));
        }
        let grid = self.speller.grid()?;
        self.speller.groups(&grid)?;
        let chance = 1.0 / grid.n_letters() as f64;
        if !(c.theta > chance && c.theta <= 1.0) {
            return Err(ExperimentError::invalid(
                "controller.theta",
                format!("must lie in ({chance}, 1]"),
            ));
        }
        if grid.n_letters() < 2 {
            return Err(ExperimentError::invalid(
                "speller",
                "need at least two letters",
            ));
        }
        let population = self.population.build()?;
        if population.is_empty() {
            return Err(ExperimentError::invalid("population", "no subjects"));
        }
        for p in &population.profiles {
            if p.id.contains([',', '"', '\n', '\r']) {
                return Err(ExperimentError::invalid(
                    "population.profiles",
                    format!("subject id {:?} has CSV metacharacters", p.id),
                ));
            }
        }
        Ok(())
    }

    /// SHA-256 over every field that affects results (output paths excluded).
    pub fn semantic_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = OutputConfig::default();
        let json = serde_json::to_string(&canonical).expect("config serializes to JSON");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
