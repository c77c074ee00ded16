//! The P300-speller generative model.
//!
//! Hidden states are the grid letters plus one idle state (last index).
//! Actions are laid out as `[Flash(g) for each group] ++ [Select(l) for each
//! letter] ++ [SwitchOff]`. Observations form one flat alphabet:
//! `[bin_0 .. bin_{K-1}, errp+, errp-, off-good, off-bad]`, and each action
//! only ever emits symbols of its own modality.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{
    Belief, GenerativeModel, InferenceError, ObservationModel, Preferences, StochasticMatrix,
    TransitionModel, NORMALIZATION_TOL,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpellerError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid flash group: {0}")]
    InvalidGroup(String),
    #[error("invalid classifier: {0}")]
    InvalidClassifier(String),
    #[error("probability {name} = {value} outside [0, 1]")]
    InvalidProbability { name: &'static str, value: f64 },
    #[error("calibration data has no {0:?} samples")]
    MissingLabel(CalibrationLabel),
    #[error("calibration bin {bin} out of range for {bins} bins")]
    BinOutOfRange { bin: usize, bins: usize },
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

pub type Result<T> = std::result::Result<T, SpellerError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpellerGrid {
    pub rows: usize,
    pub cols: usize,
    pub symbols: Vec<String>,
}

impl Default for SpellerGrid {
    fn default() -> Self {
        let symbols = ('A'..='Z')
            .chain('1'..='9')
            .chain(std::iter::once('_'))
            .map(String::from)
            .collect();
        Self {
            rows: 6,
            cols: 6,
            symbols,
        }
    }
}

impl SpellerGrid {
    pub fn new(rows: usize, cols: usize, symbols: Vec<String>) -> Result<Self> {
        let grid = Self {
            rows,
            cols,
            symbols,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid with generated symbol names `L0, L1, ...`.
    pub fn with_size(rows: usize, cols: usize) -> Result<Self> {
        Self::new(
            rows,
            cols,
            (0..rows * cols).map(|i| format!("L{i}")).collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(SpellerError::InvalidGrid(
                "rows and cols must be positive".into(),
            ));
        }
        if self.symbols.len() != self.rows * self.cols {
            return Err(SpellerError::InvalidGrid(format!(
                "{} symbols for a {}x{} grid",
                self.symbols.len(),
                self.rows,
                self.cols
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.symbols.iter().find(|s| !seen.insert(s.as_str())) {
            return Err(SpellerError::InvalidGrid(format!(
                "duplicate symbol {dup:?}"
            )));
        }
        Ok(())
    }

    pub fn n_letters(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlashGroup {
    members: Vec<usize>,
}

impl FlashGroup {
    pub fn new(mut members: Vec<usize>, n_letters: usize) -> Result<Self> {
        members.sort_unstable();
        members.dedup();
        if members.is_empty() {
            return Err(SpellerError::InvalidGroup("empty group".into()));
        }
        if let Some(m) = members.iter().find(|m| **m >= n_letters) {
            return Err(SpellerError::InvalidGroup(format!(
                "member {m} outside [0, {n_letters})"
            )));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn contains(&self, letter: usize) -> bool {
        self.members.binary_search(&letter).is_ok()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Row groups followed by column groups.
pub fn default_flash_groups(grid: &SpellerGrid) -> Vec<FlashGroup> {
    let rows = (0..grid.rows).map(|r| (0..grid.cols).map(|c| r * grid.cols + c).collect());
    let cols = (0..grid.cols).map(|c| (0..grid.rows).map(|r| r * grid.cols + c).collect());
    rows.chain(cols)
        .map(|members| FlashGroup { members })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpellerStateSpace {
    n_letters: usize,
}

impl SpellerStateSpace {
    pub fn new(n_letters: usize) -> Self {
        Self { n_letters }
    }

    pub fn n_letters(&self) -> usize {
        self.n_letters
    }

    pub fn n_states(&self) -> usize {
        self.n_letters + 1
    }

    pub fn idle(&self) -> usize {
        self.n_letters
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpellerAction {
    Flash(usize),
    Select(usize),
    SwitchOff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpellerActionSet {
    n_groups: usize,
    n_letters: usize,
}

impl SpellerActionSet {
    pub fn new(n_groups: usize, n_letters: usize) -> Self {
        Self {
            n_groups,
            n_letters,
        }
    }

    pub fn len(&self) -> usize {
        self.n_groups + self.n_letters + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn index(&self, action: SpellerAction) -> usize {
        match action {
            SpellerAction::Flash(g) => g,
            SpellerAction::Select(l) => self.n_groups + l,
            SpellerAction::SwitchOff => self.n_groups + self.n_letters,
        }
    }

    pub fn decode(&self, id: usize) -> Option<SpellerAction> {
        if id < self.n_groups {
            Some(SpellerAction::Flash(id))
        } else if id < self.n_groups + self.n_letters {
            Some(SpellerAction::Select(id - self.n_groups))
        } else if id == self.n_groups + self.n_letters {
            Some(SpellerAction::SwitchOff)
        } else {
            None
        }
    }

    pub fn all(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }

    pub fn flashes(&self) -> Vec<usize> {
        (0..self.n_groups).collect()
    }

    /// Select and SwitchOff actions.
    pub fn terminal(&self) -> Vec<usize> {
        (self.n_groups..self.len()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObservationSpace {
    bins: usize,
}

impl ObservationSpace {
    pub fn new(bins: usize) -> Self {
        Self { bins }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn bin(&self, k: usize) -> usize {
        debug_assert!(k < self.bins);
        k
    }

    pub fn errp_pos(&self) -> usize {
        self.bins
    }

    pub fn errp_neg(&self) -> usize {
        self.bins + 1
    }

    pub fn off_good(&self) -> usize {
        self.bins + 2
    }

    pub fn off_bad(&self) -> usize {
        self.bins + 3
    }

    pub fn len(&self) -> usize {
        self.bins + 4
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Symbols an action may emit.
    pub fn valid_for(&self, action: SpellerAction) -> Vec<usize> {
        match action {
            SpellerAction::Flash(_) => (0..self.bins).collect(),
            SpellerAction::Select(_) => vec![self.errp_pos(), self.errp_neg()],
            SpellerAction::SwitchOff => vec![self.off_good(), self.off_bad()],
        }
    }
}

/// Binned P300 classifier output distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinnedClassifier {
    pub target_dist: Vec<f64>,
    pub nontarget_dist: Vec<f64>,
}

impl BinnedClassifier {
    pub fn new(target_dist: Vec<f64>, nontarget_dist: Vec<f64>) -> Result<Self> {
        let clf = Self {
            target_dist,
            nontarget_dist,
        };
        clf.validate()?;
        Ok(clf)
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_dist.len() != self.nontarget_dist.len() || self.target_dist.len() < 2 {
            return Err(SpellerError::InvalidClassifier(
                "target and non-target distributions need the same K >= 2 bins".into(),
            ));
        }
        for dist in [&self.target_dist, &self.nontarget_dist] {
            if dist.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(SpellerError::InvalidClassifier(
                    "entry outside [0, 1]".into(),
                ));
            }
            let sum: f64 = dist.iter().sum();
            if (sum - 1.0).abs() > NORMALIZATION_TOL {
                return Err(SpellerError::InvalidClassifier(format!(
                    "bins sum to {sum}"
                )));
            }
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.target_dist.len()
    }
}

pub fn build_flash_likelihood(
    group: &FlashGroup,
    clf: &BinnedClassifier,
    states: SpellerStateSpace,
    obs: ObservationSpace,
) -> Result<StochasticMatrix> {
    let columns: Vec<Vec<f64>> = (0..states.n_states())
        .map(|s| {
            let dist = if s != states.idle() && group.contains(s) {
                &clf.target_dist
            } else {
                &clf.nontarget_dist
            };
            let mut col = vec![0.0; obs.len()];
            col[..obs.bins()].copy_from_slice(dist);
            col
        })
        .collect();
    Ok(StochasticMatrix::from_columns(&columns)?)
}

fn check_probability(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(SpellerError::InvalidProbability { name, value })
    }
}

/// ErrP feedback likelihood after displaying `letter`. The idle state is
/// treated like any wrong letter.
pub fn build_select_likelihood(
    letter: usize,
    errp_sens: f64,
    errp_spec: f64,
    states: SpellerStateSpace,
    obs: ObservationSpace,
) -> Result<StochasticMatrix> {
    check_probability("errp_sens", errp_sens)?;
    check_probability("errp_spec", errp_spec)?;
    let columns: Vec<Vec<f64>> = (0..states.n_states())
        .map(|s| {
            let p_pos = if s == letter {
                1.0 - errp_spec
            } else {
                errp_sens
            };
            let mut col = vec![0.0; obs.len()];
            col[obs.errp_pos()] = p_pos;
            col[obs.errp_neg()] = 1.0 - p_pos;
            col
        })
        .collect();
    Ok(StochasticMatrix::from_columns(&columns)?)
}

pub fn build_off_likelihood(
    states: SpellerStateSpace,
    obs: ObservationSpace,
) -> Result<StochasticMatrix> {
    let columns: Vec<Vec<f64>> = (0..states.n_states())
        .map(|s| {
            let mut col = vec![0.0; obs.len()];
            if s == states.idle() {
                col[obs.off_good()] = 1.0;
            } else {
                col[obs.off_bad()] = 1.0;
            }
            col
        })
        .collect();
    Ok(StochasticMatrix::from_columns(&columns)?)
}

/// Log-preferences (nats) per observation modality.
///
/// The strong errp+ penalty makes a selection worthwhile only at roughly the
/// confidence the threshold baseline demands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreferenceConfig {
    pub errp_neg: f64,
    pub errp_pos: f64,
    pub off_good: f64,
    pub off_bad: f64,
    pub flash_bin: f64,
}

impl Default for PreferenceConfig {
    fn default() -> Self {
        Self {
            errp_neg: 4.0,
            errp_pos: -19.0,
            off_good: 2.0,
            off_bad: -6.0,
            flash_bin: -0.05,
        }
    }
}

impl PreferenceConfig {
    /// All-zero log-preferences.
    pub fn flat() -> Self {
        Self {
            errp_neg: 0.0,
            errp_pos: 0.0,
            off_good: 0.0,
            off_bad: 0.0,
            flash_bin: 0.0,
        }
    }
}

pub fn build_preferences(config: &PreferenceConfig, obs: ObservationSpace) -> Result<Preferences> {
    let mut c = vec![config.flash_bin; obs.len()];
    c[obs.errp_pos()] = config.errp_pos;
    c[obs.errp_neg()] = config.errp_neg;
    c[obs.off_good()] = config.off_good;
    c[obs.off_bad()] = config.off_bad;
    Ok(Preferences::new(c)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationLabel {
    Target,
    Nontarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub label: CalibrationLabel,
    pub bin: usize,
}

/// Per-label bin frequencies with add-one smoothing.
pub fn calibrate_likelihood(
    samples: &[CalibrationSample],
    bins: usize,
) -> Result<BinnedClassifier> {
    let mut target = vec![1.0; bins];
    let mut nontarget = vec![1.0; bins];
    let (mut n_target, mut n_nontarget) = (0usize, 0usize);
    for s in samples {
        if s.bin >= bins {
            return Err(SpellerError::BinOutOfRange { bin: s.bin, bins });
        }
        match s.label {
            CalibrationLabel::Target => {
                target[s.bin] += 1.0;
                n_target += 1;
            }
            CalibrationLabel::Nontarget => {
                nontarget[s.bin] += 1.0;
                n_nontarget += 1;
            }
        }
    }
    if n_target == 0 {
        return Err(SpellerError::MissingLabel(CalibrationLabel::Target));
    }
    if n_nontarget == 0 {
        return Err(SpellerError::MissingLabel(CalibrationLabel::Nontarget));
    }
    let normalize = |v: Vec<f64>| {
        let total: f64 = v.iter().sum();
        v.into_iter().map(|x| x / total).collect()
    };
    BinnedClassifier::new(normalize(target), normalize(nontarget))
}

/// The assembled speller model plus the index maps needed to drive it.
#[derive(Debug, Clone)]
pub struct SpellerModel {
    pub model: GenerativeModel,
    pub grid: SpellerGrid,
    pub groups: Vec<FlashGroup>,
    pub states: SpellerStateSpace,
    pub actions: SpellerActionSet,
    pub observations: ObservationSpace,
}

/// Inputs for [`build_speller_model`].
#[derive(Debug, Clone)]
pub struct SpellerModelSpec<'a> {
    pub grid: &'a SpellerGrid,
    pub groups: &'a [FlashGroup],
    pub classifier: &'a BinnedClassifier,
    pub errp_sens: f64,
    pub errp_spec: f64,
    pub preferences: &'a PreferenceConfig,
    pub gamma: f64,
    /// Prior probability of the idle state; letters share the rest equally.
    pub idle_prior: f64,
}

pub fn build_speller_model(spec: &SpellerModelSpec<'_>) -> Result<SpellerModel> {
    spec.grid.validate()?;
    spec.classifier.validate()?;
    check_probability("idle_prior", spec.idle_prior)?;
    if spec.groups.is_empty() {
        return Err(SpellerError::InvalidGroup("no flash groups".into()));
    }
    let n_letters = spec.grid.n_letters();
    for g in spec.groups {
        if g.members.iter().any(|m| *m >= n_letters) {
            return Err(SpellerError::InvalidGroup(format!(
                "group {:?} exceeds grid of {n_letters} letters",
                g.members
            )));
        }
    }
    let states = SpellerStateSpace::new(n_letters);
    let actions = SpellerActionSet::new(spec.groups.len(), n_letters);
    let obs = ObservationSpace::new(spec.classifier.bins());

    let mut matrices = Vec::with_capacity(actions.len());
    for g in spec.groups {
        matrices.push(build_flash_likelihood(g, spec.classifier, states, obs)?);
    }
    for l in 0..n_letters {
        matrices.push(build_select_likelihood(
            l,
            spec.errp_sens,
            spec.errp_spec,
            states,
            obs,
        )?);
    }
    matrices.push(build_off_likelihood(states, obs)?);

    let letter_mass = (1.0 - spec.idle_prior) / n_letters as f64;
    let mut prior = vec![letter_mass; states.n_states()];
    prior[states.idle()] = spec.idle_prior;

    let model = GenerativeModel::new(
        ObservationModel::new(matrices)?,
        TransitionModel::identity(actions.len(), states.n_states()),
        build_preferences(spec.preferences, obs)?,
        Belief::from_weights(prior)?,
        spec.gamma,
    )?;
    Ok(SpellerModel {
        model,
        grid: spec.grid.clone(),
        groups: spec.groups.to_vec(),
        states,
        actions,
        observations: obs,
    })
}
