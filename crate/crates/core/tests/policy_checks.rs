//! Gradient and distribution checks for both policies against independent
//! oracles: central finite differences for every analytic gradient, and
//! empirical sampling frequencies against exact probabilities.

mod common;

use common::{finite_difference, max_rel_err, random_obs, random_params, FD_STEP};
use dpa_grpo::env::{generate_split, GenConfig, Split};
use dpa_grpo::eval::{evaluate, overall_score};
use dpa_grpo::policy::{CategoricalPolicy, Observation, Policy, PolicyParams, TokenPolicy};
use dpa_grpo::rng::substream;
use dpa_grpo::sft::{build_sft_examples, sft_train, SftHyperparams, TargetKind};

#[test]
fn categorical_grad_matches_finite_differences() {
    let policy = CategoricalPolicy::new(5);
    let mut rng = substream(101, &[0]);
    for instance in 0..20 {
        let params = random_params(policy.layout(), &mut rng, 0.8);
        let obs = random_obs(5, &mut rng);
        let action = instance % 16;
        let (_, grad) = policy.log_prob_and_grad(&params, &obs, &[action]).unwrap();
        let numeric = finite_difference(&params.values, FD_STEP, |values| {
            let p = PolicyParams {
                layout: params.layout,
                values: values.to_vec(),
            };
            policy.log_prob(&p, &obs, &[action]).unwrap()
        });
        let err = max_rel_err(&grad, &numeric);
        assert!(err < 1e-4, "instance {instance}: max rel err {err}");
    }
}

#[test]
fn token_grad_matches_finite_differences() {
    let policy = TokenPolicy::new(4, 10);
    let mut rng = substream(202, &[0]);
    for instance in 0..20 {
        let params = random_params(policy.layout(), &mut rng, 0.5);
        let obs = random_obs(4, &mut rng);
        let sample = policy.sample_response(&params, &obs, &mut rng).unwrap();
        let (lp, grad) = policy
            .log_prob_and_grad(&params, &obs, &sample.trace)
            .unwrap();
        assert!((lp - sample.log_prob).abs() < 1e-10);
        let numeric = finite_difference(&params.values, FD_STEP, |values| {
            let p = PolicyParams {
                layout: params.layout,
                values: values.to_vec(),
            };
            policy.log_prob(&p, &obs, &sample.trace).unwrap()
        });
        let err = max_rel_err(&grad, &numeric);
        assert!(err < 1e-4, "instance {instance}: max rel err {err}");
    }
}

/// At uniform parameters the categorical gradient has the closed softmax
/// form: (one_hot(action) - 1/16) outer-product with the features.
#[test]
fn categorical_grad_softmax_identity_at_uniform() {
    let feature_dim = 3;
    let policy = CategoricalPolicy::new(feature_dim);
    let params = policy.init_params(0);
    let obs = Observation::new(vec![0.7, -1.1, 0.4]);
    let action = 5usize;
    let (_, grad) = policy.log_prob_and_grad(&params, &obs, &[action]).unwrap();
    for k in 0..16 {
        let coef = if k == action {
            1.0 - 1.0 / 16.0
        } else {
            -1.0 / 16.0
        };
        for j in 0..feature_dim {
            let expected = coef * obs.features[j];
            assert!((grad[k * feature_dim + j] - expected).abs() < 1e-12);
        }
        let bias = grad[16 * feature_dim + k];
        assert!((bias - coef).abs() < 1e-12);
    }
}

/// A zero observation kills every weight-block gradient; only biases move.
#[test]
fn zero_observation_zeroes_weight_gradients() {
    let policy = CategoricalPolicy::new(4);
    let mut rng = substream(33, &[1]);
    let params = random_params(policy.layout(), &mut rng, 0.7);
    let obs = Observation::new(vec![0.0; 4]);
    let (_, grad) = policy.log_prob_and_grad(&params, &obs, &[9]).unwrap();
    assert!(grad[..16 * 4].iter().all(|&g| g == 0.0));
    assert!(grad[16 * 4..].iter().any(|&g| g != 0.0));
}

/// Empirical frequencies over 50k token-policy first steps match the exact
/// per-token probabilities within 3 standard errors.
#[test]
fn sampling_frequencies_match_exact_probabilities() {
    let policy = CategoricalPolicy::new(2);
    let mut rng = substream(55, &[2]);
    let params = random_params(policy.layout(), &mut rng, 0.4);
    let obs = random_obs(2, &mut rng);
    let n = 50_000usize;
    let mut counts = [0usize; 16];
    for _ in 0..n {
        let s = policy.sample_response(&params, &obs, &mut rng).unwrap();
        counts[s.trace[0]] += 1;
    }
    for (action, &count) in counts.iter().enumerate() {
        let p = policy.log_prob(&params, &obs, &[action]).unwrap().exp();
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let freq = count as f64 / n as f64;
        assert!(
            (freq - p).abs() <= 3.0 * se.max(1e-6),
            "action {action}: freq {freq} vs p {p} (3se {})",
            3.0 * se
        );
    }
}

/// Learnability smoke check: supervised training on the synthetic task
/// beats always answering the most common label.
#[test]
fn sft_beats_majority_label_baseline() {
    let gen = GenConfig {
        defect_prob: 0.3,
        block_size: 2,
        noise_sigma: 0.1,
    };
    let policy = CategoricalPolicy::new(gen.feature_dim());
    let train = generate_split(&gen, Split::Train, 500, 7);
    let test = generate_split(&gen, Split::Test, 200, 7);

    let examples =
        build_sft_examples(&policy.layout(), &train, TargetKind::AnswerDriven, 7).unwrap();
    let hp = SftHyperparams {
        lr: 0.2,
        batch_size: 32,
        momentum: 0.0,
    };
    let params = sft_train(
        &policy,
        policy.init_params(7),
        &examples,
        &hp,
        25,
        7,
        1,
        0,
        |_| {},
    )
    .unwrap();

    let judgments = evaluate(&policy, &params, &test).unwrap();
    let trained_score = overall_score(&judgments).unwrap();

    // Majority baseline: the most frequent train label, scored by the same
    // subset rule on the test split.
    let mut counts = std::collections::HashMap::new();
    for s in &train {
        *counts.entry(s.label.unwrap()).or_insert(0usize) += 1;
    }
    let majority = counts.into_iter().max_by_key(|(_, c)| *c).unwrap().0;
    let majority_correct = test
        .iter()
        .filter(|s| dpa_grpo::eval::judge_response(Some(&majority), &s.label.unwrap()))
        .count();
    let majority_score = 100.0 * majority_correct as f64 / test.len() as f64;

    assert!(
        trained_score > majority_score,
        "trained {trained_score} should beat majority baseline {majority_score}"
    );
}
