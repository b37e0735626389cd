//! Python bindings for the core types and operations: answer-set algebra,
//! verifiable rewards, group-relative advantage/KL math, dataset
//! generation, and checkpoint inference.
//!
//! Answer sets cross the boundary as their canonical strings ("AC", "N").

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use dpa_grpo::answers::{self, AnswerSet};
use dpa_grpo::env::{generate_dataset, GenConfig, SplitSizes};
use dpa_grpo::grpo::{self, RatioDiagnostics};
use dpa_grpo::policy::{
    load_params, policy_for_layout, save_params, Observation, PolicyLayout, PolicyParams,
};
use dpa_grpo::rewards::{self, RewardMode};
use dpa_grpo::rng::substream;

fn parse(text: &str) -> PyResult<AnswerSet> {
    answers::parse_answer_set(text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn mode_of(text: &str) -> PyResult<RewardMode> {
    match text {
        "binary" => Ok(RewardMode::Binary),
        "dpa" => Ok(RewardMode::Dpa),
        other => Err(PyValueError::new_err(format!(
            "reward mode must be \"binary\" or \"dpa\", got {other:?}"
        ))),
    }
}

/// Canonical form of an answer label ("ca, a" -> "AC"). Raises ValueError
/// on anything outside the label grammar.
#[pyfunction]
fn parse_answer_set(text: &str) -> PyResult<String> {
    Ok(parse(text)?.to_string())
}

/// Subset test used by both the reward and the evaluation metric.
#[pyfunction]
fn is_subset_of(response: &str, label: &str) -> PyResult<bool> {
    Ok(answers::is_subset_of(&parse(response)?, &parse(label)?))
}

/// Proportional accuracy reward |R|/|A| for R a subset of A, else 0.
#[pyfunction]
fn dpa_accuracy_reward(response: &str, label: &str) -> PyResult<f64> {
    Ok(rewards::dpa_accuracy_reward(
        &parse(response)?,
        &parse(label)?,
    ))
}

/// All-or-nothing accuracy reward.
#[pyfunction]
fn binary_accuracy_reward(response: &str, label: &str) -> PyResult<f64> {
    Ok(rewards::binary_accuracy_reward(
        &parse(response)?,
        &parse(label)?,
    ))
}

/// Answer span of a structured `<think>…</think><answer>…</answer>`
/// response, in canonical form. Raises ValueError on format violations.
#[pyfunction]
fn extract_answer_span(response: &str) -> PyResult<String> {
    rewards::extract_answer_span(response)
        .map(|a| a.to_string())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// 1.0 if the response is well-formed with a parseable answer, else 0.0.
#[pyfunction]
fn format_reward(response: &str) -> f64 {
    rewards::format_reward(response)
}

/// Overall verifiable reward of a raw response: (fmt, acc, total).
#[pyfunction]
fn total_reward(response: &str, label: &str, mode: &str) -> PyResult<(f64, f64, f64)> {
    let b = rewards::total_reward(response, &parse(label)?, mode_of(mode)?);
    Ok((b.fmt, b.acc, b.total))
}

/// Subset-correctness judgment; `None` for an unparseable prediction.
#[pyfunction]
fn judge_response(prediction: Option<&str>, label: &str) -> PyResult<bool> {
    let label = parse(label)?;
    let pred = match prediction {
        Some(text) => Some(parse(text)?),
        None => None,
    };
    Ok(dpa_grpo::eval::judge_response(pred.as_ref(), &label))
}

/// Group-normalized advantages (population std, floored denominator).
#[pyfunction]
#[pyo3(signature = (rewards, std_floor = 1e-6))]
fn compute_advantages(rewards: Vec<f64>, std_floor: f64) -> Vec<f64> {
    grpo::compute_advantages(&rewards, std_floor)
}

/// Importance sampling coefficient exp(cur - old), exponent clamped.
#[pyfunction]
fn importance_ratio(cur_log_prob: f64, old_log_prob: f64) -> f64 {
    let mut diag = RatioDiagnostics::default();
    grpo::importance_ratio(cur_log_prob, old_log_prob, &mut diag)
}

/// Per-sample KL estimate toward the reference policy:
/// (value, d value / d cur_log_prob).
#[pyfunction]
fn kl_penalty(cur_log_prob: f64, ref_log_prob: f64) -> (f64, f64) {
    let mut diag = RatioDiagnostics::default();
    let kl = grpo::kl_penalty(cur_log_prob, ref_log_prob, &mut diag);
    (kl.value, kl.grad_cur)
}

/// Writes the train/test/explore split files and returns their sizes.
#[pyfunction]
#[pyo3(signature = (out_dir, *, defect_prob = 0.3, block_size = 2, noise_sigma = 0.1,
                    train = 500, test = 200, explore = 100, seed = 42))]
#[allow(clippy::too_many_arguments)]
fn generate_splits(
    out_dir: PathBuf,
    defect_prob: f64,
    block_size: usize,
    noise_sigma: f64,
    train: usize,
    test: usize,
    explore: usize,
    seed: u64,
) -> PyResult<(usize, usize, usize)> {
    let cfg = GenConfig {
        defect_prob,
        block_size,
        noise_sigma,
    };
    let sizes = SplitSizes {
        train,
        test,
        explore,
    };
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| PyIOError::new_err(format!("{}: {e}", out_dir.display())))?;
    let [a, b, c] = generate_dataset(&cfg, &sizes, seed, &out_dir)
        .map_err(|e| PyIOError::new_err(e.to_string()))?;
    Ok((a, b, c))
}

/// A policy plus its parameters; enough to sample, score, and decode.
#[pyclass]
struct PolicyModel {
    params: PolicyParams,
}

impl PolicyModel {
    fn policy(&self) -> Box<dyn dpa_grpo::policy::Policy> {
        policy_for_layout(self.params.layout)
    }

    fn obs(&self, features: Vec<f64>) -> PyResult<Observation> {
        let expected = self.params.layout.feature_dim();
        if features.len() != expected {
            return Err(PyValueError::new_err(format!(
                "expected {expected} features, got {}",
                features.len()
            )));
        }
        Ok(Observation::new(features))
    }
}

#[pymethods]
impl PolicyModel {
    /// Fresh categorical policy (16-way label head) over `feature_dim`
    /// features.
    #[staticmethod]
    #[pyo3(signature = (feature_dim, seed = 0))]
    fn categorical(feature_dim: usize, seed: u64) -> Self {
        let layout = PolicyLayout::Categorical { feature_dim };
        Self {
            params: policy_for_layout(layout).init_params(seed),
        }
    }

    /// Fresh autoregressive token policy with a length cap.
    #[staticmethod]
    #[pyo3(signature = (feature_dim, max_len = 32, seed = 0))]
    fn token(feature_dim: usize, max_len: usize, seed: u64) -> Self {
        let layout = PolicyLayout::Token {
            feature_dim,
            max_len,
        };
        Self {
            params: policy_for_layout(layout).init_params(seed),
        }
    }

    /// Loads a text checkpoint written by the trainer.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            params: load_params(&path).map_err(|e| PyIOError::new_err(e.to_string()))?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_params(Path::new(&path), &self.params).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.params.layout.feature_dim()
    }

    #[getter]
    fn param_len(&self) -> usize {
        self.params.values.len()
    }

    /// One seeded stochastic response: (text, log_prob).
    fn sample(&self, features: Vec<f64>, seed: u64) -> PyResult<(String, f64)> {
        let obs = self.obs(features)?;
        let mut rng = substream(seed, &[0]);
        let response = self
            .policy()
            .sample_response(&self.params, &obs, &mut rng)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok((response.text, response.log_prob))
    }

    /// Most-probable response: (text, log_prob).
    fn greedy(&self, features: Vec<f64>) -> PyResult<(String, f64)> {
        let obs = self.obs(features)?;
        let response = self
            .policy()
            .greedy_response(&self.params, &obs)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok((response.text, response.log_prob))
    }
}

#[pymodule]
fn dpagrpo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(parse_answer_set, m)?)?;
    m.add_function(wrap_pyfunction!(is_subset_of, m)?)?;
    m.add_function(wrap_pyfunction!(dpa_accuracy_reward, m)?)?;
    m.add_function(wrap_pyfunction!(binary_accuracy_reward, m)?)?;
    m.add_function(wrap_pyfunction!(extract_answer_span, m)?)?;
    m.add_function(wrap_pyfunction!(format_reward, m)?)?;
    m.add_function(wrap_pyfunction!(total_reward, m)?)?;
    m.add_function(wrap_pyfunction!(judge_response, m)?)?;
    m.add_function(wrap_pyfunction!(compute_advantages, m)?)?;
    m.add_function(wrap_pyfunction!(importance_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(kl_penalty, m)?)?;
    m.add_function(wrap_pyfunction!(generate_splits, m)?)?;
    m.add_class::<PolicyModel>()?;
    Ok(())
}
