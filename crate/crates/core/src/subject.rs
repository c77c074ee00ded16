//! Synthetic subjects: binned classifier statistics, ErrP detection and
//! idle behavior, plus the sampling routines the simulator draws from.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::speller::{BinnedClassifier, CalibrationLabel, CalibrationSample, FlashGroup};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubjectError {
    #[error("subject {id}: {reason}")]
    InvalidProfile { id: String, reason: String },
    #[error("calibration needs at least one sample per label (got {n_target} target, {n_nontarget} non-target)")]
    EmptyCalibration { n_target: usize, n_nontarget: usize },
    #[error("duplicate subject id {0}")]
    DuplicateId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Spelling,
    Idle,
}

/// What the user actually intends during a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrueState {
    Letter(usize),
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    ErrpPos,
    ErrpNeg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectProfile {
    pub id: String,
    pub target_dist: Vec<f64>,
    pub nontarget_dist: Vec<f64>,
    pub errp_sens: f64,
    pub errp_spec: f64,
    #[serde(default = "default_behavior")]
    pub behavior: Behavior,
}

fn default_behavior() -> Behavior {
    Behavior::Spelling
}

impl SubjectProfile {
    pub fn validate(&self) -> Result<(), SubjectError> {
        let invalid = |reason: String| SubjectError::InvalidProfile {
            id: self.id.clone(),
            reason,
        };
        BinnedClassifier::new(self.target_dist.clone(), self.nontarget_dist.clone())
            .map_err(|e| invalid(e.to_string()))?;
        for (name, v) in [("errp_sens", self.errp_sens), ("errp_spec", self.errp_spec)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.behavior == Behavior::Spelling {
            let detected = self.target_dist.len() - 1;
            if self.target_dist[detected] <= self.nontarget_dist[detected] {
                return Err(invalid(
                    "hit rate must exceed false-alarm rate on the detected bin".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn classifier(&self) -> BinnedClassifier {
        BinnedClassifier {
            target_dist: self.target_dist.clone(),
            nontarget_dist: self.nontarget_dist.clone(),
        }
    }

    pub fn bins(&self) -> usize {
        self.target_dist.len()
    }

    pub fn with_behavior(&self, behavior: Behavior) -> Self {
        Self {
            behavior,
            ..self.clone()
        }
    }

    pub fn with_errp(&self, sens: f64, spec: f64) -> Self {
        Self {
            errp_sens: sens,
            errp_spec: spec,
            ..self.clone()
        }
    }
}

fn draw_bin<R: Rng + ?Sized>(dist: &[f64], rng: &mut R) -> usize {
    crate::inference::sample_categorical(dist, rng)
}

/// Classifier bin for one flash of `group`.
pub fn sample_flash_observation<R: Rng + ?Sized>(
    profile: &SubjectProfile,
    true_state: TrueState,
    group: &FlashGroup,
    rng: &mut R,
) -> usize {
    let is_target = match (profile.behavior, true_state) {
        (Behavior::Spelling, TrueState::Letter(l)) => group.contains(l),
        _ => false,
    };
    if is_target {
        draw_bin(&profile.target_dist, rng)
    } else {
        draw_bin(&profile.nontarget_dist, rng)
    }
}

/// ErrP classifier output after `selected_letter` is displayed.
pub fn sample_feedback_observation<R: Rng + ?Sized>(
    profile: &SubjectProfile,
    true_state: TrueState,
    selected_letter: usize,
    rng: &mut R,
) -> Feedback {
    let correct =
        profile.behavior == Behavior::Spelling && true_state == TrueState::Letter(selected_letter);
    let p_pos = if correct {
        1.0 - profile.errp_spec
    } else {
        profile.errp_sens
    };
    if rng.random::<f64>() < p_pos {
        Feedback::ErrpPos
    } else {
        Feedback::ErrpNeg
    }
}

/// Labeled iid classifier outputs, targets first.
pub fn generate_calibration_data<R: Rng + ?Sized>(
    profile: &SubjectProfile,
    n_target: usize,
    n_nontarget: usize,
    rng: &mut R,
) -> Result<Vec<CalibrationSample>, SubjectError> {
    if n_target == 0 || n_nontarget == 0 {
        return Err(SubjectError::EmptyCalibration {
            n_target,
            n_nontarget,
        });
    }
    let mut out = Vec::with_capacity(n_target + n_nontarget);
    for _ in 0..n_target {
        out.push(CalibrationSample {
            label: CalibrationLabel::Target,
            bin: draw_bin(&profile.target_dist, rng),
        });
    }
    for _ in 0..n_nontarget {
        out.push(CalibrationSample {
            label: CalibrationLabel::Nontarget,
            bin: draw_bin(&profile.nontarget_dist, rng),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubjectPopulation {
    pub profiles: Vec<SubjectProfile>,
}

impl SubjectPopulation {
    pub fn new(profiles: Vec<SubjectProfile>) -> Result<Self, SubjectError> {
        let mut seen = std::collections::HashSet::new();
        for p in &profiles {
            p.validate()?;
            if !seen.insert(p.id.as_str()) {
                return Err(SubjectError::DuplicateId(p.id.clone()));
            }
        }
        Ok(Self { profiles })
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }
}

/// Parameters of a generated population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationSpec {
    pub n_subjects: usize,
    pub hit_range: (f64, f64),
    pub false_alarm_range: (f64, f64),
    pub bins: usize,
    pub errp_sens: f64,
    pub errp_spec: f64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            n_subjects: 18,
            hit_range: (0.55, 0.90),
            false_alarm_range: (0.05, 0.25),
            bins: 3,
            errp_sens: 0.85,
            errp_spec: 0.90,
        }
    }
}

fn even_grid(range: (f64, f64), n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(range.0 + range.1) / 2.0];
    }
    let step = (range.1 - range.0) / (n - 1) as f64;
    (0..n).map(|i| range.0 + step * i as f64).collect()
}

/// Bin distributions for a detector with detected-bin rates `(hit, fa)`.
///
/// Scores follow an equal-variance Gaussian model (non-target `N(0,1)`,
/// target `N(d',1)`). The top bin is always "score above the detection
/// criterion", so its probabilities are exactly `hit` and `fa`; with more
/// than two bins the region below the criterion is split at evenly spaced
/// thresholds.
pub fn binned_detector(hit: f64, fa: f64, bins: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(bins >= 2, "need at least two bins");
    if bins == 2 {
        return (vec![1.0 - hit, hit], vec![1.0 - fa, fa]);
    }
    let std = Normal::standard();
    let criterion = std.inverse_cdf(1.0 - fa);
    let d_prime = criterion - std.inverse_cdf(1.0 - hit);
    let spacing = d_prime.abs().max(0.5) / (bins - 1) as f64;
    // Thresholds t_1 < ... < t_{K-1} = criterion.
    let thresholds: Vec<f64> = (1..bins)
        .map(|j| criterion - spacing * (bins - 1 - j) as f64)
        .collect();
    let dist = |shift: f64, top: f64| {
        let mut cdf: Vec<f64> = thresholds.iter().map(|t| std.cdf(t - shift)).collect();
        // Pin the top bin to the exact rate.
        *cdf.last_mut().unwrap() = 1.0 - top;
        let mut out = Vec::with_capacity(bins);
        let mut prev = 0.0;
        for c in cdf {
            out.push(c - prev);
            prev = c;
        }
        out.push(top);
        out
    };
    (dist(d_prime, hit), dist(0.0, fa))
}

/// Evenly spaced hit and false-alarm rates, paired by a seeded shuffle.
pub fn make_population(
    spec: &PopulationSpec,
    population_seed: u64,
) -> Result<SubjectPopulation, SubjectError> {
    let hits = even_grid(spec.hit_range, spec.n_subjects);
    let mut fas = even_grid(spec.false_alarm_range, spec.n_subjects);
    let mut rng = ChaCha8Rng::seed_from_u64(population_seed);
    fas.shuffle(&mut rng);
    let profiles = hits
        .iter()
        .zip(&fas)
        .enumerate()
        .map(|(i, (&h, &f))| {
            let (target_dist, nontarget_dist) = binned_detector(h, f, spec.bins);
            SubjectProfile {
                id: format!("s{:02}", i + 1),
                target_dist,
                nontarget_dist,
                errp_sens: spec.errp_sens,
                errp_spec: spec.errp_spec,
                behavior: Behavior::Spelling,
            }
        })
        .collect();
    SubjectPopulation::new(profiles)
}

pub fn make_default_population(population_seed: u64) -> SubjectPopulation {
    make_population(&PopulationSpec::default(), population_seed)
        .expect("default population parameters are valid")
}
