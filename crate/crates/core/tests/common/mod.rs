//! Shared fixtures and independent oracles for the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use speller_core::controllers::{
    ai_run_trial, fixed_run_trial, optimal_stopping_run_trial, AiOptions, Method, TrialLimits,
};
use speller_core::inference::{
    bayes_update, expected_free_energy, joint_posterior_oracle, predict, Belief, GenerativeModel,
    ObservationModel, Preferences, SelectionMode, StochasticMatrix, Transition, TransitionModel,
};
use speller_core::metrics::bits_per_selection;
use speller_core::speller::{
    build_speller_model, default_flash_groups, BinnedClassifier, PreferenceConfig, SpellerGrid,
    SpellerModel, SpellerModelSpec,
};
use speller_core::subject::{Behavior, SubjectProfile, TrueState};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Columns with entries bounded away from zero, so every observation has evidence.
pub fn random_columns<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..cols)
        .map(|_| {
            let raw: Vec<f64> = (0..rows).map(|_| rng.random_range(0.05..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / sum).collect()
        })
        .collect()
}

pub fn random_distribution<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    random_columns(rng, n, 1).pop().unwrap()
}

/// A small model with dense or identity transitions per action.
pub fn random_model<R: Rng>(rng: &mut R) -> GenerativeModel {
    let n_states = rng.random_range(2..=4);
    let n_obs = rng.random_range(2..=4);
    let n_actions = rng.random_range(1..=3);
    let matrices = (0..n_actions)
        .map(|_| StochasticMatrix::from_columns(&random_columns(rng, n_obs, n_states)).unwrap())
        .collect();
    let transitions = (0..n_actions)
        .map(|_| {
            if rng.random_bool(0.3) {
                Transition::Identity(n_states)
            } else {
                Transition::Dense(
                    StochasticMatrix::from_columns(&random_columns(rng, n_states, n_states))
                        .unwrap(),
                )
            }
        })
        .collect();
    let c = (0..n_obs).map(|_| rng.random_range(-3.0..3.0)).collect();
    GenerativeModel::new(
        ObservationModel::new(matrices).unwrap(),
        TransitionModel::new(transitions).unwrap(),
        Preferences::new(c).unwrap(),
        Belief::new(random_distribution(rng, n_states)).unwrap(),
        1.0,
    )
    .unwrap()
}

/// Largest deviation between sequential filtering and full path enumeration.
pub fn filtering_max_error(n_models: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n_models {
        let model = random_model(&mut rng);
        let steps = rng.random_range(1..=4);
        let actions: Vec<usize> = (0..steps)
            .map(|_| rng.random_range(0..model.num_actions()))
            .collect();
        let obs: Vec<usize> = (0..steps)
            .map(|_| rng.random_range(0..model.num_observations()))
            .collect();
        let mut belief = model.prior.clone();
        for (&a, &o) in actions.iter().zip(&obs) {
            belief = predict(&belief, &model.transitions, a).unwrap();
            belief = bayes_update(&belief, &model.observations, a, o).unwrap();
        }
        let exact = joint_posterior_oracle(&model, &actions, &obs, 1 << 20).unwrap();
        for (x, y) in belief.probs().iter().zip(exact.probs()) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

/// `-MI(s; o | a) - E_q[ln softmax(c)]` from the joint distribution directly.
pub fn brute_force_efe(model: &GenerativeModel, belief: &Belief, action: usize) -> f64 {
    let b = model.transitions.transition(action).unwrap();
    let n = belief.len();
    let prior: Vec<f64> = (0..n)
        .map(|next| {
            (0..n)
                .map(|prev| b.get(next, prev) * belief.probs()[prev])
                .sum()
        })
        .collect();
    let a = model.observations.matrix(action).unwrap();
    let n_obs = a.rows();
    let joint: Vec<Vec<f64>> = (0..n_obs)
        .map(|o| (0..n).map(|s| a.get(o, s) * prior[s]).collect())
        .collect();
    let q: Vec<f64> = joint.iter().map(|row| row.iter().sum()).collect();
    let mut mi = 0.0;
    for o in 0..n_obs {
        for s in 0..n {
            let j = joint[o][s];
            if j > 0.0 {
                mi += j * (j / (prior[s] * q[o])).ln();
            }
        }
    }
    let c = model.preferences.values();
    let z: f64 = c.iter().map(|v| v.exp()).sum::<f64>().ln();
    let expected_log_pref: f64 = q.iter().zip(c).map(|(qo, co)| qo * (co - z)).sum();
    -mi - expected_log_pref
}

pub fn efe_identity_max_error(n_models: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n_models {
        let model = random_model(&mut rng);
        let belief = Belief::new(random_distribution(&mut rng, model.num_states())).unwrap();
        for a in 0..model.num_actions() {
            let g = expected_free_energy(&model, &belief, a).unwrap().total();
            worst = worst.max((g - brute_force_efe(&model, &belief, a)).abs());
        }
    }
    worst
}

/// Wolpaw bits for 36 choices at accuracy k/50, evaluated to 50 digits offline.
pub const WOLPAW_36: [(u32, f64); 50] = [
    (1, 0.0),
    (2, 0.0035211160927298042626),
    (3, 0.020954046359567699901),
    (4, 0.04880543565067037079),
    (5, 0.084574692602561331873),
    (6, 0.12679508124337751372),
    (7, 0.17450279522678531808),
    (8, 0.22701771256797448738),
    (9, 0.28383588181916002753),
    (10, 0.34457049299897685079),
    (11, 0.40891674526327293503),
    (12, 0.47662962917961561996),
    (13, 0.54750919641041929051),
    (14, 0.62139041868180587072),
    (15, 0.69813599035014322596),
    (16, 0.77763109219524127517),
    (17, 0.85977950528560447432),
    (18, 0.94450068134204158641),
    (19, 1.031727508710133582),
    (20, 1.1214045968206638507),
    (21, 1.2134869565805782744),
    (22, 1.3079389907310755451),
    (23, 1.4047337334718047165),
    (24, 1.5038522966357280009),
    (25, 1.6052834929698291353),
    (26, 1.7090236173135266591),
    (27, 1.8150763748274020329),
    (28, 1.9234529527644715197),
    (29, 2.0341722392917729073),
    (30, 2.1472612002096571418),
    (31, 2.2627554327769255312),
    (32, 2.3806999260866321939),
    (33, 2.50115007070799374),
    (34, 2.6241729782954291991),
    (35, 2.7498491971281298081),
    (36, 2.8782749461375911111),
    (37, 3.0095650445440031891),
    (38, 3.1438567979909981767),
    (39, 3.28131523475245415),
    (40, 3.422140303165956724),
    (41, 3.5665770126639385589),
    (42, 3.714930164090551677),
    (43, 3.8675865674271611659),
    (44, 4.0250501741215520198),
    (45, 4.1880011061585344961),
    (46, 4.3574031698844421933),
    (47, 4.5347231012711381806),
    (48, 4.7224614916820989431),
    (49, 4.9258987985615923886),
    (50, 5.1699250014423123629),
];

pub fn bits_max_error() -> f64 {
    WOLPAW_36
        .iter()
        .map(|&(k, expected)| (bits_per_selection(36, f64::from(k) / 50.0) - expected).abs())
        .fold(0.0, f64::max)
}

pub fn two_bin_profile(id: &str, target: [f64; 2], nontarget: [f64; 2]) -> SubjectProfile {
    SubjectProfile {
        id: id.into(),
        target_dist: target.to_vec(),
        nontarget_dist: nontarget.to_vec(),
        errp_sens: 1.0,
        errp_spec: 1.0,
        behavior: Behavior::Spelling,
    }
}

/// Default 6x6 speller model over a two-bin classifier.
pub fn speller_model(
    target: [f64; 2],
    nontarget: [f64; 2],
    errp: (f64, f64),
    preferences: &PreferenceConfig,
    gamma: f64,
) -> SpellerModel {
    let grid = SpellerGrid::default();
    let groups = default_flash_groups(&grid);
    build_speller_model(&SpellerModelSpec {
        grid: &grid,
        groups: &groups,
        classifier: &BinnedClassifier::new(target.to_vec(), nontarget.to_vec()).unwrap(),
        errp_sens: errp.0,
        errp_spec: errp.1,
        preferences,
        gamma,
        idle_prior: 1.0 / 37.0,
    })
    .unwrap()
}

/// Accuracy of `method` over `trials` random letters with a noiseless classifier.
pub fn perfect_classifier_accuracy(method: Method, trials: usize, seed: u64) -> f64 {
    let (t, nt) = ([0.0, 1.0], [1.0, 0.0]);
    let model = speller_model(t, nt, (1.0, 1.0), &PreferenceConfig::default(), 8.0);
    let subject = two_bin_profile("perfect", t, nt);
    let limits = TrialLimits::default();
    let mut rng = rng(seed);
    let mut correct = 0;
    for _ in 0..trials {
        let ts = TrueState::Letter(rng.random_range(0..36));
        let record = match method {
            Method::Fixed => fixed_run_trial(&model, &subject, ts, 12, &mut rng),
            Method::OptimalStopping => {
                optimal_stopping_run_trial(&model, &subject, ts, 0.95, 12, &mut rng)
            }
            _ => {
                let options = AiOptions {
                    mode: SelectionMode::Sample,
                    use_feedback: method.uses_errp(),
                    method,
                };
                ai_run_trial(&model, &subject, ts, &limits, &options, &mut rng)
            }
        }
        .unwrap();
        correct += usize::from(record.correct);
    }
    correct as f64 / trials as f64
}

/// Fixed-controller accuracy when targets and non-targets look alike.
pub fn chance_fixed_accuracy(trials: usize, seed: u64) -> f64 {
    let dist = [0.7, 0.3];
    let model = speller_model(dist, dist, (0.85, 0.9), &PreferenceConfig::default(), 8.0);
    let subject = two_bin_profile("chance", dist, dist);
    let mut rng = rng(seed);
    let mut correct = 0;
    for _ in 0..trials {
        let ts = TrueState::Letter(rng.random_range(0..36));
        correct += usize::from(
            fixed_run_trial(&model, &subject, ts, 12, &mut rng)
                .unwrap()
                .correct,
        );
    }
    correct as f64 / trials as f64
}
