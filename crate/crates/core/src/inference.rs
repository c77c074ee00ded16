//! Discrete Bayesian inference and expected-free-energy action selection.
//!
//! Everything here is model-agnostic: hidden states, observations and actions
//! are plain indices. A [`GenerativeModel`] bundles per-action likelihoods
//! `A(a)[o, s] = P(o | s, a)`, per-action transitions `B(a)[s', s]`,
//! log-preferences over observations and an inverse temperature `gamma`.
//!
//! Action valuation is one-step expected free energy,
//!
//! ```text
//! G(a) = KL( q(o|a) || softmax(c) ) + sum_s q(s|a) H[A(a)(.|s)]
//!        \________ risk ________/   \_______ ambiguity _______/
//! ```
//!
//! where `q(s|a) = B(a) b` and `q(o|a) = A(a) q(s|a)`. Actions are drawn from
//! `p(a) ∝ exp(-gamma G(a))`.

use rand::Rng;
use thiserror::Error;

/// Tolerance for stochasticity checks on constructed matrices and beliefs.
pub const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("observation {obs} has zero total evidence under action {action}")]
    TotalEvidenceZero { action: usize, obs: usize },
    #[error("invalid probability vector: {0}")]
    InvalidDistribution(String),
    #[error("column {col} of matrix for action {action} sums to {sum}")]
    NotStochastic { action: usize, col: usize, sum: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("action {0} out of range")]
    InvalidAction(usize),
    #[error("observation {0} out of range")]
    InvalidObservation(usize),
    #[error("enumeration of {states}^{steps} trajectories exceeds cap {cap}")]
    IntractableSize {
        states: usize,
        steps: usize,
        cap: u128,
    },
    #[error("gamma must be finite and non-negative, got {0}")]
    InvalidGamma(f64),
}

pub type Result<T> = std::result::Result<T, InferenceError>;

/// Categorical distribution over hidden states.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    probs: Vec<f64>,
}

impl Belief {
    /// Validates non-negativity and unit mass, then renormalizes exactly.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(InferenceError::InvalidDistribution("empty".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(InferenceError::InvalidDistribution(format!(
                "entry {p} is negative or non-finite"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(InferenceError::InvalidDistribution(format!(
                "entries sum to {sum}"
            )));
        }
        Ok(Self::normalized(probs))
    }

    /// Normalizes arbitrary non-negative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(InferenceError::InvalidDistribution(
                "weights must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(InferenceError::InvalidDistribution(
                "zero total mass".into(),
            ));
        }
        Ok(Self::normalized(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn one_hot(n: usize, k: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[k] = 1.0;
        Self { probs }
    }

    fn normalized(mut probs: Vec<f64>) -> Self {
        let sum: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= sum);
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest entry among `candidates`, lowest index on ties.
    pub fn argmax_over(&self, candidates: impl IntoIterator<Item = usize>) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for i in candidates {
            let p = self.probs[i];
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((i, p));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Log-domain belief accumulator for long observation runs.
///
/// Stores unnormalized log-weights; normalization happens on read.
#[derive(Debug, Clone)]
pub struct LogBelief {
    log_weights: Vec<f64>,
}

impl LogBelief {
    pub fn from_belief(belief: &Belief) -> Self {
        Self {
            log_weights: belief.probs.iter().map(|p| p.ln()).collect(),
        }
    }

    pub fn update(&mut self, model: &ObservationModel, action: usize, obs: usize) -> Result<()> {
        let a = model.matrix(action)?;
        if obs >= a.rows {
            return Err(InferenceError::InvalidObservation(obs));
        }
        let mut any_finite = false;
        for (s, lw) in self.log_weights.iter_mut().enumerate() {
            *lw += a.get(obs, s).ln();
            any_finite |= lw.is_finite();
        }
        if !any_finite {
            return Err(InferenceError::TotalEvidenceZero { action, obs });
        }
        Ok(())
    }

    pub fn to_belief(&self) -> Belief {
        let max = self
            .log_weights
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = self.log_weights.iter().map(|lw| (lw - max).exp()).collect();
        Belief::normalized(weights)
    }
}

/// Dense matrix whose columns are probability distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    rows: usize,
    cols: usize,
    /// Row-major storage.
    data: Vec<f64>,
}

impl StochasticMatrix {
    /// Builds from column vectors, one per conditioning state.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if cols == 0 || rows == 0 {
            return Err(InferenceError::DimensionMismatch("empty matrix".into()));
        }
        let mut data = vec![0.0; rows * cols];
        for (c, column) in columns.iter().enumerate() {
            if column.len() != rows {
                return Err(InferenceError::DimensionMismatch(format!(
                    "column {c} has {} rows, expected {rows}",
                    column.len()
                )));
            }
            for (r, v) in column.iter().enumerate() {
                data[r * cols + c] = *v;
            }
        }
        let m = Self { rows, cols, data };
        m.check_stochastic(0)?;
        Ok(m)
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self {
            rows: n,
            cols: n,
            data,
        }
    }

    fn check_stochastic(&self, action: usize) -> Result<()> {
        for c in 0..self.cols {
            let mut sum = 0.0;
            for r in 0..self.rows {
                let v = self.get(r, c);
                if !(0.0..=1.0).contains(&v) {
                    return Err(InferenceError::InvalidDistribution(format!(
                        "entry ({r},{c}) = {v} outside [0,1]"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > NORMALIZATION_TOL {
                return Err(InferenceError::NotStochastic {
                    action,
                    col: c,
                    sum,
                });
            }
        }
        Ok(())
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }
}

/// Per-action likelihood matrices `A(a)`: rows observations, columns states.
#[derive(Debug, Clone)]
pub struct ObservationModel {
    matrices: Vec<StochasticMatrix>,
    /// Rows with any non-zero entry, per action.
    support: Vec<Vec<usize>>,
    /// Entropy of each column, per action.
    column_entropy: Vec<Vec<f64>>,
}

impl ObservationModel {
    pub fn new(matrices: Vec<StochasticMatrix>) -> Result<Self> {
        let first = matrices
            .first()
            .ok_or_else(|| InferenceError::DimensionMismatch("no actions".into()))?;
        let (rows, cols) = (first.rows, first.cols);
        for (a, m) in matrices.iter().enumerate() {
            if m.rows != rows || m.cols != cols {
                return Err(InferenceError::DimensionMismatch(format!(
                    "A({a}) is {}x{}, expected {rows}x{cols}",
                    m.rows, m.cols
                )));
            }
            m.check_stochastic(a)?;
        }
        let support = matrices
            .iter()
            .map(|m| {
                (0..m.rows)
                    .filter(|&r| m.row(r).iter().any(|v| *v > 0.0))
                    .collect()
            })
            .collect();
        let column_entropy = matrices
            .iter()
            .map(|m| (0..m.cols).map(|c| entropy(&m.column(c))).collect())
            .collect();
        Ok(Self {
            matrices,
            support,
            column_entropy,
        })
    }

    pub fn matrix(&self, action: usize) -> Result<&StochasticMatrix> {
        self.matrices
            .get(action)
            .ok_or(InferenceError::InvalidAction(action))
    }

    pub fn num_actions(&self) -> usize {
        self.matrices.len()
    }

    pub fn num_observations(&self) -> usize {
        self.matrices[0].rows
    }

    pub fn num_states(&self) -> usize {
        self.matrices[0].cols
    }

    /// Observations with non-zero probability under some state for `action`.
    pub fn support(&self, action: usize) -> &[usize] {
        &self.support[action]
    }
}

/// Transition for one action; identity is kept symbolic.
#[derive(Debug, Clone)]
pub enum Transition {
    Identity(usize),
    Dense(StochasticMatrix),
}

impl Transition {
    fn dim(&self) -> usize {
        match self {
            Transition::Identity(n) => *n,
            Transition::Dense(m) => m.cols,
        }
    }

    pub fn get(&self, next: usize, prev: usize) -> f64 {
        match self {
            Transition::Identity(_) => f64::from(u8::from(next == prev)),
            Transition::Dense(m) => m.get(next, prev),
        }
    }
}

/// Per-action transition matrices `B(a)[s', s] = P(s' | s, a)`.
#[derive(Debug, Clone)]
pub struct TransitionModel {
    transitions: Vec<Transition>,
}

impl TransitionModel {
    pub fn new(transitions: Vec<Transition>) -> Result<Self> {
        for (a, t) in transitions.iter().enumerate() {
            if let Transition::Dense(m) = t {
                if m.rows != m.cols {
                    return Err(InferenceError::DimensionMismatch(format!(
                        "B({a}) is not square"
                    )));
                }
                m.check_stochastic(a)?;
            }
        }
        Ok(Self { transitions })
    }

    pub fn identity(num_actions: usize, num_states: usize) -> Self {
        Self {
            transitions: vec![Transition::Identity(num_states); num_actions],
        }
    }

    pub fn transition(&self, action: usize) -> Result<&Transition> {
        self.transitions
            .get(action)
            .ok_or(InferenceError::InvalidAction(action))
    }

    pub fn num_actions(&self) -> usize {
        self.transitions.len()
    }
}

/// Unnormalized log-preferences over observations (nats).
#[derive(Debug, Clone, PartialEq)]
pub struct Preferences {
    c: Vec<f64>,
    log_preferred: Vec<f64>,
}

impl Preferences {
    pub fn new(c: Vec<f64>) -> Result<Self> {
        if c.is_empty() || c.iter().any(|v| !v.is_finite()) {
            return Err(InferenceError::InvalidDistribution(
                "preferences must be finite and non-empty".into(),
            ));
        }
        let log_preferred = log_softmax(&c);
        Ok(Self { c, log_preferred })
    }

    pub fn values(&self) -> &[f64] {
        &self.c
    }

    /// `ln softmax(c)`.
    pub fn log_preferred(&self) -> &[f64] {
        &self.log_preferred
    }

    pub fn preferred_distribution(&self) -> Vec<f64> {
        self.log_preferred.iter().map(|l| l.exp()).collect()
    }
}

/// Decision rule applied to `p(a) ∝ exp(-gamma G(a))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Sample,
    Greedy,
}

#[derive(Debug, Clone)]
pub struct GenerativeModel {
    pub observations: ObservationModel,
    pub transitions: TransitionModel,
    pub preferences: Preferences,
    pub prior: Belief,
    pub gamma: f64,
}

impl GenerativeModel {
    pub fn new(
        observations: ObservationModel,
        transitions: TransitionModel,
        preferences: Preferences,
        prior: Belief,
        gamma: f64,
    ) -> Result<Self> {
        let n_states = observations.num_states();
        if prior.len() != n_states {
            return Err(InferenceError::DimensionMismatch(format!(
                "prior has {} states, likelihood has {n_states}",
                prior.len()
            )));
        }
        if transitions.num_actions() != observations.num_actions() {
            return Err(InferenceError::DimensionMismatch(format!(
                "{} transition actions vs {} observation actions",
                transitions.num_actions(),
                observations.num_actions()
            )));
        }
        if let Some(t) = transitions.transitions.iter().find(|t| t.dim() != n_states) {
            return Err(InferenceError::DimensionMismatch(format!(
                "transition of dimension {} for {n_states} states",
                t.dim()
            )));
        }
        if preferences.c.len() != observations.num_observations() {
            return Err(InferenceError::DimensionMismatch(format!(
                "{} preferences for {} observations",
                preferences.c.len(),
                observations.num_observations()
            )));
        }
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(InferenceError::InvalidGamma(gamma));
        }
        Ok(Self {
            observations,
            transitions,
            preferences,
            prior,
            gamma,
        })
    }

    pub fn num_states(&self) -> usize {
        self.observations.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.observations.num_actions()
    }

    pub fn num_observations(&self) -> usize {
        self.observations.num_observations()
    }
}

/// Single Bayes step: `posterior_s ∝ A(a)[obs, s] · belief_s`.
pub fn bayes_update(
    belief: &Belief,
    model: &ObservationModel,
    action: usize,
    obs: usize,
) -> Result<Belief> {
    let a = model.matrix(action)?;
    if obs >= a.rows {
        return Err(InferenceError::InvalidObservation(obs));
    }
    if belief.len() != a.cols {
        return Err(InferenceError::DimensionMismatch(format!(
            "belief over {} states, likelihood over {}",
            belief.len(),
            a.cols
        )));
    }
    let weights: Vec<f64> = a
        .row(obs)
        .iter()
        .zip(&belief.probs)
        .map(|(l, p)| l * p)
        .collect();
    let evidence: f64 = weights.iter().sum();
    if evidence <= 0.0 {
        return Err(InferenceError::TotalEvidenceZero { action, obs });
    }
    Ok(Belief::normalized(weights))
}

/// `B(a) · belief`.
pub fn predict(belief: &Belief, model: &TransitionModel, action: usize) -> Result<Belief> {
    match model.transition(action)? {
        Transition::Identity(n) => {
            if *n != belief.len() {
                return Err(InferenceError::DimensionMismatch("predict".into()));
            }
            Ok(belief.clone())
        }
        Transition::Dense(m) => {
            if m.cols != belief.len() {
                return Err(InferenceError::DimensionMismatch("predict".into()));
            }
            let probs = (0..m.rows)
                .map(|r| m.row(r).iter().zip(&belief.probs).map(|(b, p)| b * p).sum())
                .collect();
            Ok(Belief::normalized(probs))
        }
    }
}

/// `q(o) = sum_s A(a)[o, s] · belief_s` over the full observation alphabet.
pub fn predictive_observation(
    belief: &Belief,
    model: &ObservationModel,
    action: usize,
) -> Result<Vec<f64>> {
    let a = model.matrix(action)?;
    if belief.len() != a.cols {
        return Err(InferenceError::DimensionMismatch("predictive".into()));
    }
    Ok((0..a.rows)
        .map(|o| a.row(o).iter().zip(&belief.probs).map(|(l, p)| l * p).sum())
        .collect())
}

/// Risk and ambiguity terms of one action's expected free energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeEnergy {
    pub risk: f64,
    pub ambiguity: f64,
}

impl FreeEnergy {
    pub fn total(&self) -> f64 {
        self.risk + self.ambiguity
    }
}

/// One-step expected free energy of `action` from `belief`.
pub fn expected_free_energy(
    model: &GenerativeModel,
    belief: &Belief,
    action: usize,
) -> Result<FreeEnergy> {
    let predicted = predict(belief, &model.transitions, action)?;
    let a = model.observations.matrix(action)?;
    let log_pref = model.preferences.log_preferred();
    let mut risk = 0.0;
    for &o in model.observations.support(action) {
        let q: f64 = a
            .row(o)
            .iter()
            .zip(&predicted.probs)
            .map(|(l, p)| l * p)
            .sum();
        if q > 0.0 {
            risk += q * (q.ln() - log_pref[o]);
        }
    }
    let ambiguity = model.observations.column_entropy[action]
        .iter()
        .zip(&predicted.probs)
        .map(|(h, p)| h * p)
        .sum();
    Ok(FreeEnergy { risk, ambiguity })
}

/// `p(a) ∝ exp(-gamma G(a))`, computed with a max shift.
pub fn action_probabilities(gamma: f64, free_energies: &[f64]) -> Vec<f64> {
    let scaled: Vec<f64> = free_energies.iter().map(|g| -gamma * g).collect();
    log_softmax(&scaled).into_iter().map(f64::exp).collect()
}

/// Index of the minimum, lowest index on ties.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Draws an index from `probs` by inverse CDF.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave acc slightly below 1.
    probs
        .iter()
        .rposition(|p| *p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// Scores `actions` by expected free energy and picks one.
pub fn select_action<R: Rng + ?Sized>(
    model: &GenerativeModel,
    belief: &Belief,
    actions: &[usize],
    mode: SelectionMode,
    rng: &mut R,
) -> Result<usize> {
    if actions.is_empty() {
        return Err(InferenceError::InvalidAction(usize::MAX));
    }
    let g = actions
        .iter()
        .map(|&a| expected_free_energy(model, belief, a).map(|f| f.total()))
        .collect::<Result<Vec<_>>>()?;
    Ok(actions[choose(model.gamma, &g, mode, rng)])
}

/// Applies the selection rule to precomputed free energies.
pub fn choose<R: Rng + ?Sized>(
    gamma: f64,
    free_energies: &[f64],
    mode: SelectionMode,
    rng: &mut R,
) -> usize {
    match mode {
        SelectionMode::Greedy => argmin(free_energies),
        SelectionMode::Sample => {
            sample_categorical(&action_probabilities(gamma, free_energies), rng)
        }
    }
}

/// Exact posterior over the final state by enumerating all trajectories.
///
/// Step `t` applies `B(actions[t])` and then observes `observations[t]`
/// through `A(actions[t])`. `cap` bounds `states^(steps + 1)`.
pub fn joint_posterior_oracle(
    model: &GenerativeModel,
    actions: &[usize],
    observations: &[usize],
    cap: u128,
) -> Result<Belief> {
    if actions.len() != observations.len() {
        return Err(InferenceError::DimensionMismatch(
            "action and observation sequences differ in length".into(),
        ));
    }
    let n = model.num_states();
    let steps = actions.len();
    let total = (n as u128).checked_pow(steps as u32 + 1);
    if total.is_none_or(|t| t > cap) {
        return Err(InferenceError::IntractableSize {
            states: n,
            steps: steps + 1,
            cap,
        });
    }
    let mut marginal = vec![0.0; n];
    let mut path = vec![0usize; steps + 1];
    let total = total.unwrap_or(0);
    for index in 0..total {
        let mut rem = index;
        for slot in path.iter_mut() {
            *slot = (rem % n as u128) as usize;
            rem /= n as u128;
        }
        let mut w = model.prior.probs[path[0]];
        for t in 0..steps {
            if w == 0.0 {
                break;
            }
            let b = model.transitions.transition(actions[t])?;
            let a = model.observations.matrix(actions[t])?;
            if observations[t] >= a.rows {
                return Err(InferenceError::InvalidObservation(observations[t]));
            }
            w *= b.get(path[t + 1], path[t]) * a.get(observations[t], path[t + 1]);
        }
        marginal[path[steps]] += w;
    }
    let evidence: f64 = marginal.iter().sum();
    if evidence <= 0.0 {
        return Err(InferenceError::TotalEvidenceZero {
            action: actions.last().copied().unwrap_or(0),
            obs: observations.last().copied().unwrap_or(0),
        });
    }
    Ok(Belief::normalized(marginal))
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|v| **v > 0.0)
        .map(|v| v * v.ln())
        .sum::<f64>()
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}
