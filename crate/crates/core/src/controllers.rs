//! Spelling strategies: the Active Inference controller and the two
//! pseudo-random baselines (fixed repetitions and threshold stopping).

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{
    choose, expected_free_energy, Belief, InferenceError, LogBelief, SelectionMode,
};
use crate::speller::{SpellerAction, SpellerModel};
use crate::subject::{
    sample_feedback_observation, sample_flash_observation, Feedback, SubjectProfile, TrueState,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("subject has {subject} bins but the model expects {model}")]
    BinMismatch { subject: usize, model: usize },
    #[error("stopping threshold {0} outside (1/N, 1]")]
    InvalidThreshold(f64),
    #[error("true letter {0} outside the grid")]
    InvalidTarget(usize),
    #[error("repetitions must be at least 1")]
    NoRepetitions,
}

pub type Result<T> = std::result::Result<T, ControllerError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Active Inference, selection is final.
    Ai,
    /// Active Inference with the subject's ErrP classifier.
    AiErrp,
    /// Active Inference with a perfect ErrP classifier.
    AiPerfectErrp,
    Fixed,
    OptimalStopping,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Ai,
        Method::AiErrp,
        Method::AiPerfectErrp,
        Method::Fixed,
        Method::OptimalStopping,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ai => "ai",
            Method::AiErrp => "ai_errp",
            Method::AiPerfectErrp => "ai_perfect_errp",
            Method::Fixed => "fixed",
            Method::OptimalStopping => "optimal_stopping",
        }
    }

    pub fn is_active_inference(self) -> bool {
        matches!(self, Method::Ai | Method::AiErrp | Method::AiPerfectErrp)
    }

    /// Whether feedback after a selection is observed and acted on.
    pub fn uses_errp(self) -> bool {
        matches!(self, Method::AiErrp | Method::AiPerfectErrp)
    }

    /// Stable numeric id used in seed derivation.
    pub fn id(self) -> u64 {
        match self {
            Method::Ai => 1,
            Method::AiErrp => 2,
            Method::AiPerfectErrp => 3,
            Method::Fixed => 4,
            Method::OptimalStopping => 5,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrialLimits {
    pub max_flashes: usize,
    /// Bounds ErrP-driven re-selection.
    pub max_selections: usize,
}

impl Default for TrialLimits {
    fn default() -> Self {
        Self {
            max_flashes: 144,
            max_selections: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialOutcome {
    Selected(usize),
    SwitchedOff,
    /// Selection budget spent and the last selection was rejected.
    BudgetExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub action: SpellerAction,
    /// Flat observation index; `None` when nothing was observed.
    pub observation: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub subject_id: String,
    pub method: Method,
    pub true_state: TrueState,
    pub steps: Vec<Step>,
    pub n_flashes: usize,
    pub outcome: TrialOutcome,
    pub correct: bool,
    pub selections_made: usize,
}

fn is_correct(true_state: TrueState, outcome: TrialOutcome) -> bool {
    match (true_state, outcome) {
        (TrueState::Letter(l), TrialOutcome::Selected(s)) => l == s,
        (TrueState::Idle, TrialOutcome::SwitchedOff) => true,
        _ => false,
    }
}

fn check_inputs(
    model: &SpellerModel,
    subject: &SubjectProfile,
    true_state: TrueState,
) -> Result<()> {
    if subject.bins() != model.observations.bins() {
        return Err(ControllerError::BinMismatch {
            subject: subject.bins(),
            model: model.observations.bins(),
        });
    }
    if let TrueState::Letter(l) = true_state {
        if l >= model.states.n_letters() {
            return Err(ControllerError::InvalidTarget(l));
        }
    }
    Ok(())
}

/// Expected free energy of every action id in `actions`.
pub fn free_energies(model: &SpellerModel, belief: &Belief, actions: &[usize]) -> Result<Vec<f64>> {
    Ok(actions
        .iter()
        .map(|&a| expected_free_energy(&model.model, belief, a).map(|g| g.total()))
        .collect::<std::result::Result<Vec<_>, _>>()?)
}

/// One decision of the Active Inference controller. Once the flash budget is
/// spent only Select and SwitchOff remain available.
pub fn ai_controller_step<R: Rng + ?Sized>(
    model: &SpellerModel,
    belief: &Belief,
    n_flashes: usize,
    limits: &TrialLimits,
    mode: SelectionMode,
    rng: &mut R,
) -> Result<SpellerAction> {
    let candidates = if n_flashes >= limits.max_flashes {
        model.actions.terminal()
    } else {
        model.actions.all()
    };
    let g = free_energies(model, belief, &candidates)?;
    let id = candidates[choose(model.model.gamma, &g, mode, rng)];
    Ok(model
        .actions
        .decode(id)
        .expect("candidate ids come from the action set"))
}

/// Options distinguishing the Active Inference variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AiOptions {
    pub mode: SelectionMode,
    /// Observe ErrP feedback after a selection and keep going on errp+.
    pub use_feedback: bool,
    pub method: Method,
}

/// Simulates one letter (or idle period) under the Active Inference controller.
pub fn ai_run_trial<R: Rng + ?Sized>(
    model: &SpellerModel,
    subject: &SubjectProfile,
    true_state: TrueState,
    limits: &TrialLimits,
    options: &AiOptions,
    rng: &mut R,
) -> Result<TrialRecord> {
    check_inputs(model, subject, true_state)?;
    let obs_space = model.observations;
    let likelihoods = &model.model.observations;
    let mut belief = LogBelief::from_belief(&model.model.prior);
    let mut steps = Vec::new();
    let mut n_flashes = 0;
    let mut selections = 0;
    let outcome = loop {
        let current = belief.to_belief();
        let action = ai_controller_step(model, &current, n_flashes, limits, options.mode, rng)?;
        let action_id = model.actions.index(action);
        match action {
            SpellerAction::Flash(g) => {
                let bin = sample_flash_observation(subject, true_state, &model.groups[g], rng);
                let obs = obs_space.bin(bin);
                belief.update(likelihoods, action_id, obs)?;
                steps.push(Step {
                    action,
                    observation: Some(obs),
                });
                n_flashes += 1;
            }
            SpellerAction::Select(letter) => {
                selections += 1;
                if !options.use_feedback {
                    steps.push(Step {
                        action,
                        observation: None,
                    });
                    break TrialOutcome::Selected(letter);
                }
                let obs = match sample_feedback_observation(subject, true_state, letter, rng) {
                    Feedback::ErrpPos => obs_space.errp_pos(),
                    Feedback::ErrpNeg => obs_space.errp_neg(),
                };
                steps.push(Step {
                    action,
                    observation: Some(obs),
                });
                if obs == obs_space.errp_neg() {
                    break TrialOutcome::Selected(letter);
                }
                if selections >= limits.max_selections {
                    break TrialOutcome::BudgetExhausted;
                }
                belief.update(likelihoods, action_id, obs)?;
            }
            SpellerAction::SwitchOff => {
                steps.push(Step {
                    action,
                    observation: None,
                });
                break TrialOutcome::SwitchedOff;
            }
        }
    };
    Ok(TrialRecord {
        subject_id: subject.id.clone(),
        method: options.method,
        true_state,
        steps,
        n_flashes,
        outcome,
        correct: is_correct(true_state, outcome),
        selections_made: selections,
    })
}

/// `repetitions` independent uniform permutations of the group ids, concatenated.
pub fn fixed_schedule<R: Rng + ?Sized>(
    n_groups: usize,
    repetitions: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut schedule = Vec::with_capacity(n_groups * repetitions);
    for _ in 0..repetitions {
        let mut block: Vec<usize> = (0..n_groups).collect();
        block.shuffle(rng);
        schedule.extend(block);
    }
    schedule
}

fn letter_argmax(model: &SpellerModel, belief: &Belief) -> (usize, f64) {
    let l = belief
        .argmax_over(0..model.states.n_letters())
        .expect("grid has letters");
    (l, belief.probs()[l])
}

/// Pseudo-random flashing, stopping when the best letter reaches `threshold`
/// (`None` flashes the whole schedule).
fn scheduled_trial<R: Rng + ?Sized>(
    model: &SpellerModel,
    subject: &SubjectProfile,
    true_state: TrueState,
    repetitions: usize,
    threshold: Option<f64>,
    method: Method,
    rng: &mut R,
) -> Result<TrialRecord> {
    check_inputs(model, subject, true_state)?;
    if repetitions == 0 {
        return Err(ControllerError::NoRepetitions);
    }
    let schedule = fixed_schedule(model.groups.len(), repetitions, rng);
    let mut belief = LogBelief::from_belief(&model.model.prior);
    let mut steps = Vec::with_capacity(schedule.len() + 1);
    let mut n_flashes = 0;
    for &g in &schedule {
        let action = SpellerAction::Flash(g);
        let obs = model.observations.bin(sample_flash_observation(
            subject,
            true_state,
            &model.groups[g],
            rng,
        ));
        belief.update(&model.model.observations, model.actions.index(action), obs)?;
        steps.push(Step {
            action,
            observation: Some(obs),
        });
        n_flashes += 1;
        if let Some(theta) = threshold {
            if letter_argmax(model, &belief.to_belief()).1 >= theta {
                break;
            }
        }
    }
    let (letter, _) = letter_argmax(model, &belief.to_belief());
    steps.push(Step {
        action: SpellerAction::Select(letter),
        observation: None,
    });
    let outcome = TrialOutcome::Selected(letter);
    Ok(TrialRecord {
        subject_id: subject.id.clone(),
        method,
        true_state,
        steps,
        n_flashes,
        outcome,
        correct: is_correct(true_state, outcome),
        selections_made: 1,
    })
}

/// Flashes `repetitions` full permutations, then selects the most probable letter.
pub fn fixed_run_trial<R: Rng + ?Sized>(
    model: &SpellerModel,
    subject: &SubjectProfile,
    true_state: TrueState,
    repetitions: usize,
    rng: &mut R,
) -> Result<TrialRecord> {
    scheduled_trial(
        model,
        subject,
        true_state,
        repetitions,
        None,
        Method::Fixed,
        rng,
    )
}

/// Same schedule as the fixed baseline, stopping once the best letter's
/// posterior reaches `theta`.
pub fn optimal_stopping_run_trial<R: Rng + ?Sized>(
    model: &SpellerModel,
    subject: &SubjectProfile,
    true_state: TrueState,
    theta: f64,
    repetitions: usize,
    rng: &mut R,
) -> Result<TrialRecord> {
    let chance = 1.0 / model.states.n_letters() as f64;
    if !(theta > chance && theta <= 1.0) {
        return Err(ControllerError::InvalidThreshold(theta));
    }
    scheduled_trial(
        model,
        subject,
        true_state,
        repetitions,
        Some(theta),
        Method::OptimalStopping,
        rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::speller::{
        build_speller_model, default_flash_groups, BinnedClassifier, PreferenceConfig, SpellerGrid,
        SpellerModelSpec,
    };
    use crate::subject::Behavior;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model_for(h: f64, f: f64, sens: f64, spec: f64) -> SpellerModel {
        let grid = SpellerGrid::default();
        let groups = default_flash_groups(&grid);
        build_speller_model(&SpellerModelSpec {
            grid: &grid,
            groups: &groups,
            classifier: &BinnedClassifier::new(vec![1.0 - h, h], vec![1.0 - f, f]).unwrap(),
            errp_sens: sens,
            errp_spec: spec,
            preferences: &PreferenceConfig::default(),
            gamma: 8.0,
            idle_prior: 1.0 / 37.0,
        })
        .unwrap()
    }

    fn subject(h: f64, f: f64) -> SubjectProfile {
        SubjectProfile {
            id: "s".into(),
            target_dist: vec![1.0 - h, h],
            nontarget_dist: vec![1.0 - f, f],
            errp_sens: 1.0,
            errp_spec: 1.0,
            behavior: Behavior::Spelling,
        }
    }

    #[test]
    fn schedule_is_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = fixed_schedule(12, 12, &mut rng);
        assert_eq!(s.len(), 144);
        for g in 0..12 {
            assert_eq!(s.iter().filter(|x| **x == g).count(), 12);
        }
        let mut one = fixed_schedule(12, 1, &mut rng);
        one.sort_unstable();
        assert_eq!(one, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn schedules_differ_across_seeds() {
        let schedules: std::collections::HashSet<Vec<usize>> = (0..100)
            .map(|seed| fixed_schedule(12, 1, &mut ChaCha8Rng::seed_from_u64(seed)))
            .collect();
        assert_eq!(schedules.len(), 100);
    }

    #[test]
    fn fixed_always_flashes_144() {
        let m = model_for(0.7, 0.2, 0.85, 0.9);
        let s = subject(0.7, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in 0..20 {
            let r = fixed_run_trial(&m, &s, TrueState::Letter(t), 12, &mut rng).unwrap();
            assert_eq!(r.n_flashes, 144);
            assert_eq!(r.selections_made, 1);
        }
    }

    #[test]
    fn threshold_one_runs_full_budget() {
        let m = model_for(0.7, 0.2, 0.85, 0.9);
        let s = subject(0.7, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let full = (0..50)
            .filter(|t| {
                optimal_stopping_run_trial(&m, &s, TrueState::Letter(t % 36), 1.0, 12, &mut rng)
                    .unwrap()
                    .n_flashes
                    == 144
            })
            .count();
        assert!(full >= 45, "{full}");
    }

    #[test]
    fn threshold_just_above_chance_stops_after_first_flash() {
        let m = model_for(0.7, 0.2, 0.85, 0.9);
        let s = subject(0.7, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = 1.0 / 36.0 + 1e-9;
        for t in 0..20 {
            let r = optimal_stopping_run_trial(&m, &s, TrueState::Letter(t), theta, 12, &mut rng)
                .unwrap();
            assert_eq!(r.n_flashes, 1);
        }
        assert!(
            optimal_stopping_run_trial(&m, &s, TrueState::Letter(0), 1.0 / 36.0, 12, &mut rng)
                .is_err()
        );
    }

    #[test]
    fn ai_selects_confident_letter_and_switches_off_idle() {
        let m = model_for(0.95, 0.02, 0.85, 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let limits = TrialLimits::default();
        let mut probs = vec![0.0005 / 36.0; 37];
        probs[7] = 0.9995;
        let b = Belief::new(probs).unwrap();
        let d = ai_controller_step(&m, &b, 0, &limits, SelectionMode::Greedy, &mut rng).unwrap();
        assert_eq!(d, SpellerAction::Select(7));

        let mut probs = vec![0.01 / 36.0; 37];
        probs[36] = 0.99;
        let b = Belief::new(probs).unwrap();
        let d = ai_controller_step(&m, &b, 0, &limits, SelectionMode::Greedy, &mut rng).unwrap();
        assert_eq!(d, SpellerAction::SwitchOff);

        let mut probs = vec![1.0 / 36.0; 37];
        probs[36] = 0.0;
        let b = Belief::new(probs).unwrap();
        let d = ai_controller_step(&m, &b, 0, &limits, SelectionMode::Greedy, &mut rng).unwrap();
        assert!(matches!(d, SpellerAction::Flash(_)), "{d:?}");
    }

    #[test]
    fn exhausted_budget_forces_terminal_action() {
        let m = model_for(0.7, 0.2, 0.85, 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let limits = TrialLimits {
            max_flashes: 0,
            max_selections: 1,
        };
        for _ in 0..50 {
            let d = ai_controller_step(
                &m,
                &m.model.prior,
                0,
                &limits,
                SelectionMode::Sample,
                &mut rng,
            )
            .unwrap();
            assert!(!matches!(d, SpellerAction::Flash(_)));
        }
    }

    #[test]
    fn bin_mismatch_rejected() {
        let m = model_for(0.7, 0.2, 0.85, 0.9);
        let mut s = subject(0.7, 0.2);
        s.target_dist = vec![0.1, 0.2, 0.7];
        s.nontarget_dist = vec![0.7, 0.2, 0.1];
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert!(fixed_run_trial(&m, &s, TrueState::Letter(0), 12, &mut rng).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("bogus".parse::<Method>().is_err());
    }
}
