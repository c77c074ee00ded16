mod common;

use rand::Rng;

use speller_core::controllers::{
    ai_controller_step, free_energies, optimal_stopping_run_trial, Method, TrialLimits,
};
use speller_core::experiment::{simulate, ExperimentConfig};
use speller_core::inference::{
    bayes_update, predictive_observation, select_action, Belief, LogBelief, SelectionMode,
};
use speller_core::speller::{
    build_speller_model, calibrate_likelihood, default_flash_groups, BinnedClassifier, FlashGroup,
    PreferenceConfig, SpellerAction, SpellerGrid, SpellerModelSpec,
};
use speller_core::subject::{
    generate_calibration_data, sample_feedback_observation, sample_flash_observation, Behavior,
    Feedback, TrueState,
};

use common::*;

const H: [f64; 2] = [0.3, 0.7];
const F: [f64; 2] = [0.85, 0.15];

fn default_model() -> speller_core::speller::SpellerModel {
    speller_model(H, F, (0.85, 0.9), &PreferenceConfig::default(), 8.0)
}

fn uniform_prior(n: usize) -> Belief {
    Belief::uniform(n)
}

#[test]
fn flash_groups_are_equivalent_on_a_uniform_belief() {
    let model = default_model();
    let belief = uniform_prior(37);
    let g = free_energies(&model, &belief, &model.actions.flashes()).unwrap();
    let spread =
        g.iter().copied().fold(f64::MIN, f64::max) - g.iter().copied().fold(f64::MAX, f64::min);
    assert_eq!(g.len(), 12);
    assert!(spread <= 1e-9, "spread {spread:e}");
}

#[test]
fn greedy_decisions_at_reference_beliefs() {
    let model = default_model();
    let limits = TrialLimits::default();
    let mut r = rng(0);
    let step = |b: &Belief, r: &mut _| {
        ai_controller_step(&model, b, 0, &limits, SelectionMode::Greedy, r).unwrap()
    };
    assert!(matches!(
        step(&model.model.prior, &mut r),
        SpellerAction::Flash(_)
    ));
    let mut confident = vec![0.001 / 36.0; 37];
    confident[4] = 0.999;
    assert_eq!(
        step(&Belief::new(confident).unwrap(), &mut r),
        SpellerAction::Select(4)
    );
    let mut idle = vec![0.01 / 36.0; 37];
    idle[36] = 0.99;
    assert_eq!(
        step(&Belief::new(idle).unwrap(), &mut r),
        SpellerAction::SwitchOff
    );
}

#[test]
fn idle_mass_grows_with_every_silent_flash() {
    let model = default_model();
    let mut belief = LogBelief::from_belief(&model.model.prior);
    let mut last = model.model.prior.probs()[36];
    for round in 0..5 {
        for g in 0..12 {
            let a = model.actions.index(SpellerAction::Flash(g));
            belief
                .update(&model.model.observations, a, model.observations.bin(0))
                .unwrap();
            let idle = belief.to_belief().probs()[36];
            assert!(idle > last, "round {round} group {g}: {idle} <= {last}");
            last = idle;
        }
    }
}

#[test]
fn letters_sharing_every_group_stay_tied() {
    let grid = SpellerGrid::default();
    // Letters 0 and 1 are always flashed together.
    let groups: Vec<FlashGroup> = [
        vec![0, 1, 2],
        vec![0, 1, 3, 4],
        vec![5, 6, 7],
        vec![0, 1, 8, 9, 10],
    ]
    .into_iter()
    .map(|m| FlashGroup::new(m, 36).unwrap())
    .collect();
    let model = build_speller_model(&SpellerModelSpec {
        grid: &grid,
        groups: &groups,
        classifier: &BinnedClassifier::new(H.to_vec(), F.to_vec()).unwrap(),
        errp_sens: 0.85,
        errp_spec: 0.9,
        preferences: &PreferenceConfig::default(),
        gamma: 8.0,
        idle_prior: 1.0 / 37.0,
    })
    .unwrap();
    let mut r = rng(3);
    let mut belief = model.model.prior.clone();
    for _ in 0..40 {
        let a = model
            .actions
            .index(SpellerAction::Flash(r.random_range(0..4)));
        belief = bayes_update(&belief, &model.model.observations, a, r.random_range(0..2)).unwrap();
        assert_eq!(belief.probs()[0], belief.probs()[1]);
    }
}

#[test]
fn flashing_the_target_raises_its_expected_mass() {
    let model = default_model();
    let subject = two_bin_profile("s", H, F);
    let mut r = rng(4);
    let trials = 10_000;
    let mut total = 0.0;
    for _ in 0..trials {
        let target = r.random_range(0..36);
        let g = (0..12).find(|&g| model.groups[g].contains(target)).unwrap();
        let bin = sample_flash_observation(
            &subject,
            TrueState::Letter(target),
            &model.groups[g],
            &mut r,
        );
        let a = model.actions.index(SpellerAction::Flash(g));
        let post = bayes_update(
            &model.model.prior,
            &model.model.observations,
            a,
            model.observations.bin(bin),
        )
        .unwrap();
        total += post.probs()[target];
    }
    let mean = total / trials as f64;
    assert!(mean > 1.0 / 37.0, "mean target mass {mean}");
}

#[test]
fn flat_preferences_pick_the_most_informative_flash() {
    let model = speller_model(H, F, (0.85, 0.9), &PreferenceConfig::flat(), 8.0);
    let flashes = model.actions.flashes();
    let mut r = rng(5);
    let mut checked = 0;
    for _ in 0..200 {
        let belief = Belief::new(random_distribution(&mut r, 37)).unwrap();
        let mi: Vec<f64> = flashes
            .iter()
            .map(|&a| -(brute_force_efe(&model.model, &belief, a) - (6f64).ln()))
            .collect();
        let best = (0..mi.len())
            .max_by(|&i, &j| mi[i].total_cmp(&mi[j]))
            .unwrap();
        let runner_up = (0..mi.len())
            .filter(|&i| i != best)
            .map(|i| mi[i])
            .fold(f64::MIN, f64::max);
        if mi[best] - runner_up < 1e-9 {
            continue;
        }
        let chosen = select_action(
            &model.model,
            &belief,
            &flashes,
            SelectionMode::Greedy,
            &mut r,
        )
        .unwrap();
        assert_eq!(chosen, flashes[best]);
        checked += 1;
    }
    assert!(checked > 150);
}

#[test]
fn active_inference_uses_fewest_flashes() {
    let mut config = ExperimentConfig::default();
    config.letters_per_subject = 40;
    config.idle_trials_per_subject = 0;
    config.methods = vec![Method::Ai, Method::OptimalStopping, Method::Fixed];
    let sim = simulate(&config, 0).unwrap();
    let mean_flashes = |m: Method| {
        let r: Vec<_> = sim.spelling.iter().filter(|r| r.method == m).collect();
        r.iter().map(|r| r.n_flashes as f64).sum::<f64>() / r.len() as f64
    };
    let (ai, os, fixed) = (
        mean_flashes(Method::Ai),
        mean_flashes(Method::OptimalStopping),
        mean_flashes(Method::Fixed),
    );
    assert!(ai <= os && os <= fixed, "ai {ai}, os {os}, fixed {fixed}");
}

#[test]
fn threshold_stopping_stops_exactly_when_confident() {
    let model = default_model();
    let subject = two_bin_profile("s", H, F);
    let mut r = rng(6);
    let theta = 0.95;
    for _ in 0..300 {
        let ts = TrueState::Letter(r.random_range(0..36));
        let record = optimal_stopping_run_trial(&model, &subject, ts, theta, 12, &mut r).unwrap();
        let mut belief = LogBelief::from_belief(&model.model.prior);
        let letter_max = |b: &LogBelief| {
            b.to_belief().probs()[..36]
                .iter()
                .copied()
                .fold(0.0, f64::max)
        };
        let (last, flashes) = record.steps.split_last().unwrap();
        for (i, step) in flashes.iter().enumerate() {
            let a = model.actions.index(step.action);
            belief
                .update(&model.model.observations, a, step.observation.unwrap())
                .unwrap();
            if i + 1 < flashes.len() {
                assert!(letter_max(&belief) < theta, "continued past the threshold");
            }
        }
        assert!(letter_max(&belief) >= theta || record.n_flashes == 144);
        let chosen = belief.to_belief().argmax_over(0..36).unwrap();
        assert_eq!(last.action, SpellerAction::Select(chosen));
    }
}

#[test]
fn threshold_stopping_with_noiseless_classifier_never_needs_the_full_budget() {
    let (t, nt) = ([0.0, 1.0], [1.0, 0.0]);
    let model = speller_model(t, nt, (1.0, 1.0), &PreferenceConfig::default(), 8.0);
    let subject = two_bin_profile("p", t, nt);
    let mut r = rng(7);
    for _ in 0..1000 {
        let ts = TrueState::Letter(r.random_range(0..36));
        let rec = optimal_stopping_run_trial(&model, &subject, ts, 0.95, 12, &mut r).unwrap();
        assert!(rec.n_flashes < 144);
        assert!(rec.correct);
    }
}

/// |empirical - predicted| within 3 binomial standard deviations.
fn assert_agrees(counts: &[usize], predicted: &[f64], n: usize, what: &str) {
    for (c, p) in counts.iter().zip(predicted) {
        let sigma = (p * (1.0 - p) / n as f64).sqrt().max(1e-12);
        let freq = *c as f64 / n as f64;
        assert!((freq - p).abs() <= 3.0 * sigma, "{what}: {freq} vs {p}");
    }
}

#[test]
fn simulated_observations_follow_the_generative_model() {
    let model = default_model();
    let subject = two_bin_profile("s", H, F).with_errp(0.85, 0.9);
    let n = 100_000;
    let mut r = rng(8);
    for (state, group) in [
        (TrueState::Letter(0), 0),
        (TrueState::Letter(0), 1),
        (TrueState::Idle, 0),
    ] {
        let profile = match state {
            TrueState::Idle => subject.with_behavior(Behavior::Idle),
            _ => subject.clone(),
        };
        let mut counts = [0usize; 2];
        for _ in 0..n {
            counts[sample_flash_observation(&profile, state, &model.groups[group], &mut r)] += 1;
        }
        let index = match state {
            TrueState::Letter(l) => l,
            TrueState::Idle => 36,
        };
        let a = model.actions.index(SpellerAction::Flash(group));
        let q = predictive_observation(&Belief::one_hot(37, index), &model.model.observations, a)
            .unwrap();
        assert_agrees(&counts, &q[..2], n, &format!("{state:?} flash {group}"));
    }
    for (state, letter) in [(TrueState::Letter(3), 3), (TrueState::Letter(3), 9)] {
        let mut pos = 0;
        for _ in 0..n {
            pos += usize::from(
                sample_feedback_observation(&subject, state, letter, &mut r) == Feedback::ErrpPos,
            );
        }
        let a = model.actions.index(SpellerAction::Select(letter));
        let q =
            predictive_observation(&Belief::one_hot(37, 3), &model.model.observations, a).unwrap();
        let p = q[model.observations.errp_pos()];
        assert_agrees(&[pos, n - pos], &[p, 1.0 - p], n, "feedback");
    }
}

#[test]
fn calibration_converges_at_the_sampling_rate() {
    let profile = two_bin_profile("s", [0.25, 0.75], [0.9, 0.1]);
    for n in [1_000usize, 10_000, 100_000] {
        let samples = generate_calibration_data(&profile, n, n, &mut rng(n as u64)).unwrap();
        let clf = calibrate_likelihood(&samples, 2).unwrap();
        let tol = 3.0 / (n as f64).sqrt();
        for (got, want) in clf
            .target_dist
            .iter()
            .chain(&clf.nontarget_dist)
            .zip(profile.target_dist.iter().chain(&profile.nontarget_dist))
        {
            assert!((got - want).abs() <= tol, "n={n}: {got} vs {want}");
        }
    }
}

#[test]
fn default_groups_cover_each_letter_twice() {
    let groups = default_flash_groups(&SpellerGrid::default());
    for l in 0..36 {
        assert_eq!(groups.iter().filter(|g| g.contains(l)).count(), 2);
    }
}
