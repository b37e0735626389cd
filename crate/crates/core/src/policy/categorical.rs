//! Single-shot categorical policy over the 16 possible labels.
//!
//! A linear map from the observation features to 16 logits, softmax on top.
//! The emitted text is always well-formed: the chosen label wrapped in the
//! fixed structure with a constant placeholder think block.

use rand_chacha::ChaCha8Rng;

use super::{
    argmax, check_params, log_softmax, sample_from_log_probs, Observation, Policy, PolicyError,
    PolicyLayout, PolicyParams, ResponseSample,
};
use crate::answers::AnswerSet;

const NUM_ACTIONS: usize = 16;
const THINK_PLACEHOLDER: &str = "options reviewed";

#[derive(Debug, Clone, Copy)]
pub struct CategoricalPolicy {
    feature_dim: usize,
}

impl CategoricalPolicy {
    pub fn new(feature_dim: usize) -> Self {
        Self { feature_dim }
    }

    fn logits(&self, params: &PolicyParams, obs: &Observation) -> Vec<f64> {
        let w = &params.values[..NUM_ACTIONS * self.feature_dim];
        let bias = &params.values[NUM_ACTIONS * self.feature_dim..];
        (0..NUM_ACTIONS)
            .map(|k| {
                let row = &w[k * self.feature_dim..(k + 1) * self.feature_dim];
                row.iter()
                    .zip(&obs.features)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + bias[k]
            })
            .collect()
    }

    fn action_of(&self, trace: &[usize]) -> Result<usize, PolicyError> {
        match trace {
            [action] if *action < NUM_ACTIONS => Ok(*action),
            [action] => Err(PolicyError::InvalidTrace(format!(
                "action {action} out of range"
            ))),
            _ => Err(PolicyError::InvalidTrace(format!(
                "categorical trace must hold exactly one action, got {}",
                trace.len()
            ))),
        }
    }

    fn response(&self, action: usize, log_prob: f64) -> ResponseSample {
        let label = AnswerSet::from_index(action).expect("action in range");
        ResponseSample {
            text: format!("<think>{THINK_PLACEHOLDER}</think><answer>{label}</answer>"),
            trace: vec![action],
            log_prob,
        }
    }
}

impl Policy for CategoricalPolicy {
    fn layout(&self) -> PolicyLayout {
        PolicyLayout::Categorical {
            feature_dim: self.feature_dim,
        }
    }

    fn init_params(&self, _seed: u64) -> PolicyParams {
        // Zero parameters give an exactly uniform policy.
        PolicyParams::zeros(self.layout())
    }

    fn sample_response(
        &self,
        params: &PolicyParams,
        obs: &Observation,
        rng: &mut ChaCha8Rng,
    ) -> Result<ResponseSample, PolicyError> {
        check_params(self, params, obs)?;
        let lsm = log_softmax(&self.logits(params, obs));
        let action = sample_from_log_probs(&lsm, rng);
        Ok(self.response(action, lsm[action]))
    }

    fn greedy_response(
        &self,
        params: &PolicyParams,
        obs: &Observation,
    ) -> Result<ResponseSample, PolicyError> {
        check_params(self, params, obs)?;
        let lsm = log_softmax(&self.logits(params, obs));
        let action = argmax(&lsm);
        Ok(self.response(action, lsm[action]))
    }

    fn log_prob(
        &self,
        params: &PolicyParams,
        obs: &Observation,
        trace: &[usize],
    ) -> Result<f64, PolicyError> {
        check_params(self, params, obs)?;
        let action = self.action_of(trace)?;
        Ok(log_softmax(&self.logits(params, obs))[action])
    }

    fn log_prob_and_grad(
        &self,
        params: &PolicyParams,
        obs: &Observation,
        trace: &[usize],
    ) -> Result<(f64, Vec<f64>), PolicyError> {
        check_params(self, params, obs)?;
        let action = self.action_of(trace)?;
        let lsm = log_softmax(&self.logits(params, obs));
        let mut grad = vec![0.0; params.values.len()];
        let bias_base = NUM_ACTIONS * self.feature_dim;
        for k in 0..NUM_ACTIONS {
            // d log p(a) / d logit_k = [k == a] - softmax_k
            let coef = if k == action { 1.0 } else { 0.0 } - lsm[k].exp();
            let row = &mut grad[k * self.feature_dim..(k + 1) * self.feature_dim];
            for (g, x) in row.iter_mut().zip(&obs.features) {
                *g += coef * x;
            }
            grad[bias_base + k] += coef;
        }
        Ok((lsm[action], grad))
    }
}
