//! Autoregressive token policy over a 16-entry vocabulary.
//!
//! Each step's logits come from a linear map on (observation features,
//! position one-hot, bag of previously emitted tokens). Emission stops at
//! `<eos>` or the length cap. Unlike the categorical policy, nothing forces
//! the structure tags to appear in order, so responses can be malformed.

use rand_chacha::ChaCha8Rng;

use super::{
    argmax, check_params, log_softmax, sample_from_log_probs, Observation, Policy, PolicyError,
    PolicyLayout, PolicyParams, ResponseSample,
};

pub const VOCAB_SIZE: usize = 16;

pub const THINK_TOKEN: usize = 0;
pub const THINK_END_TOKEN: usize = 1;
pub const ANSWER_TOKEN: usize = 2;
pub const ANSWER_END_TOKEN: usize = 3;
/// Tokens 4..=7 are the option letters A..D.
pub const LETTER_BASE_TOKEN: usize = 4;
pub const NONE_TOKEN: usize = 8;
pub const EOS_TOKEN: usize = 9;
/// Tokens 10.. are think-block content words; `ok`/`bad` double as the
/// per-option verdicts in templated targets.
pub const OK_TOKEN: usize = 10;
pub const BAD_TOKEN: usize = 11;

const SURFACES: [&str; VOCAB_SIZE] = [
    "<think>",
    "</think>",
    "<answer>",
    "</answer>",
    "A",
    "B",
    "C",
    "D",
    "N",
    "<eos>",
    "ok",
    "bad",
    "shadow",
    "warp",
    "float",
    "halo",
];

/// The fixed token vocabulary.
pub struct TokenVocab;

impl TokenVocab {
    pub fn surfaces() -> &'static [&'static str; VOCAB_SIZE] {
        &SURFACES
    }

    /// Token id for option letter `index` (0 = A .. 3 = D).
    pub fn letter(index: usize) -> usize {
        assert!(index < 4);
        LETTER_BASE_TOKEN + index
    }

    /// Joins token surfaces into response text. `<eos>` emits nothing.
    pub fn render(trace: &[usize]) -> String {
        trace
            .iter()
            .filter(|&&t| t != EOS_TOKEN)
            .map(|&t| SURFACES[t])
            .collect()
    }

    /// Greedy longest-match tokenization of rendered text (no `<eos>`).
    /// Returns `None` when some position matches no surface.
    pub fn tokenize(text: &str) -> Option<Vec<usize>> {
        let mut by_len: Vec<usize> = (0..VOCAB_SIZE).filter(|&t| t != EOS_TOKEN).collect();
        by_len.sort_by_key(|&t| std::cmp::Reverse(SURFACES[t].len()));
        let mut rest = text;
        let mut out = Vec::new();
        'outer: while !rest.is_empty() {
            for &t in &by_len {
                if let Some(tail) = rest.strip_prefix(SURFACES[t]) {
                    out.push(t);
                    rest = tail;
                    continue 'outer;
                }
            }
            return None;
        }
        Some(out)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TokenPolicy {
    feature_dim: usize,
    max_len: usize,
}

impl TokenPolicy {
    pub fn new(feature_dim: usize, max_len: usize) -> Self {
        Self {
            feature_dim,
            max_len,
        }
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    fn input_dim(&self) -> usize {
        self.feature_dim + self.max_len + VOCAB_SIZE
    }

    /// Logits at step `position` given the bag of previously emitted tokens.
    fn step_logits(
        &self,
        params: &PolicyParams,
        obs: &Observation,
        position: usize,
        bag: &[f64; VOCAB_SIZE],
    ) -> Vec<f64> {
        let d = self.input_dim();
        let w = &params.values[..VOCAB_SIZE * d];
        let bias = &params.values[VOCAB_SIZE * d..];
        let mut logits = Vec::with_capacity(VOCAB_SIZE);
        for k in 0..VOCAB_SIZE {
            let row = &w[k * d..(k + 1) * d];
            let mut acc = bias[k];
            for (a, b) in row[..self.feature_dim].iter().zip(&obs.features) {
                acc += a * b;
            }
            acc += row[self.feature_dim + position];
            for (a, b) in row[self.feature_dim + self.max_len..].iter().zip(bag) {
                acc += a * b;
            }
            logits.push(acc);
        }
        logits
    }

    fn validate_trace(&self, trace: &[usize]) -> Result<(), PolicyError> {
        if trace.len() > self.max_len {
            return Err(PolicyError::InvalidTrace(format!(
                "trace length {} exceeds cap {}",
                trace.len(),
                self.max_len
            )));
        }
        for (i, &t) in trace.iter().enumerate() {
            if t >= VOCAB_SIZE {
                return Err(PolicyError::InvalidTrace(format!("token {t} out of range")));
            }
            if t == EOS_TOKEN && i + 1 != trace.len() {
                return Err(PolicyError::InvalidTrace(
                    "<eos> before end of trace".into(),
                ));
            }
        }
        if trace.len() < self.max_len && trace.last() != Some(&EOS_TOKEN) {
            return Err(PolicyError::InvalidTrace(
                "trace below the length cap must end with <eos>".into(),
            ));
        }
        Ok(())
    }

    fn decode(
        &self,
        params: &PolicyParams,
        obs: &Observation,
        mut pick: impl FnMut(&[f64]) -> usize,
    ) -> ResponseSample {
        let mut trace = Vec::new();
        let mut log_prob = 0.0;
        let mut bag = [0.0; VOCAB_SIZE];
        for position in 0..self.max_len {
            let lsm = log_softmax(&self.step_logits(params, obs, position, &bag));
            let token = pick(&lsm);
            log_prob += lsm[token];
            trace.push(token);
            if token == EOS_TOKEN {
                break;
            }
            bag[token] += 1.0;
        }
        ResponseSample {
            text: TokenVocab::render(&trace),
            trace,
            log_prob,
        }
    }
}

impl Policy for TokenPolicy {
    fn layout(&self) -> PolicyLayout {
        PolicyLayout::Token {
            feature_dim: self.feature_dim,
            max_len: self.max_len,
        }
    }

    fn init_params(&self, seed: u64) -> PolicyParams {
        use rand::Rng;
        let mut rng = crate::rng::substream(seed, &[crate::rng::tags::SFT_INIT]);
        let values = (0..self.layout().param_len())
            .map(|_| rng.random_range(-0.01..0.01))
            .collect();
        PolicyParams {
            layout: self.layout(),
            values,
        }
    }

    fn sample_response(
        &self,
        params: &PolicyParams,
        obs: &Observation,
        rng: &mut ChaCha8Rng,
    ) -> Result<ResponseSample, PolicyError> {
        check_params(self, params, obs)?;
        Ok(self.decode(params, obs, |lsm| sample_from_log_probs(lsm, rng)))
    }

    fn greedy_response(
        &self,
        params: &PolicyParams,
        obs: &Observation,
    ) -> Result<ResponseSample, PolicyError> {
        check_params(self, params, obs)?;
        Ok(self.decode(params, obs, argmax))
    }

    fn log_prob(
        &self,
        params: &PolicyParams,
        obs: &Observation,
        trace: &[usize],
    ) -> Result<f64, PolicyError> {
        check_params(self, params, obs)?;
        self.validate_trace(trace)?;
        let mut bag = [0.0; VOCAB_SIZE];
        let mut log_prob = 0.0;
        for (position, &token) in trace.iter().enumerate() {
            let lsm = log_softmax(&self.step_logits(params, obs, position, &bag));
            log_prob += lsm[token];
            bag[token] += 1.0;
        }
        Ok(log_prob)
    }

    fn log_prob_and_grad(
        &self,
        params: &PolicyParams,
        obs: &Observation,
        trace: &[usize],
    ) -> Result<(f64, Vec<f64>), PolicyError> {
        check_params(self, params, obs)?;
        self.validate_trace(trace)?;
        let d = self.input_dim();
        let bias_base = VOCAB_SIZE * d;
        let mut grad = vec![0.0; params.values.len()];
        let mut bag = [0.0; VOCAB_SIZE];
        let mut log_prob = 0.0;
        for (position, &token) in trace.iter().enumerate() {
            let lsm = log_softmax(&self.step_logits(params, obs, position, &bag));
            log_prob += lsm[token];
            for k in 0..VOCAB_SIZE {
                let coef = if k == token { 1.0 } else { 0.0 } - lsm[k].exp();
                if coef == 0.0 {
                    continue;
                }
                let row = &mut grad[k * d..(k + 1) * d];
                for (g, x) in row[..self.feature_dim].iter_mut().zip(&obs.features) {
                    *g += coef * x;
                }
                row[self.feature_dim + position] += coef;
                for (g, x) in row[self.feature_dim + self.max_len..].iter_mut().zip(&bag) {
                    *g += coef * x;
                }
                grad[bias_base + k] += coef;
            }
            bag[token] += 1.0;
        }
        Ok((log_prob, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn obs(features: &[f64]) -> Observation {
        Observation::new(features.to_vec())
    }

    #[test]
    fn vocabulary_has_sixteen_unique_tokens() {
        let mut sorted = SURFACES.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), VOCAB_SIZE);
    }

    #[test]
    fn render_tokenize_round_trip() {
        let trace = vec![
            THINK_TOKEN,
            TokenVocab::letter(0),
            OK_TOKEN,
            BAD_TOKEN,
            THINK_END_TOKEN,
            ANSWER_TOKEN,
            TokenVocab::letter(0),
            TokenVocab::letter(2),
            ANSWER_END_TOKEN,
        ];
        let text = TokenVocab::render(&trace);
        assert_eq!(text, "<think>Aokbad</think><answer>AC</answer>");
        assert_eq!(TokenVocab::tokenize(&text).unwrap(), trace);
        assert_eq!(TokenVocab::tokenize("<thonk>"), None);
    }

    #[test]
    fn sampling_is_deterministic_and_rescorable() {
        let policy = TokenPolicy::new(3, 12);
        let params = policy.init_params(7);
        let o = obs(&[0.4, -0.8, 1.2]);
        let a = policy
            .sample_response(&params, &o, &mut substream(2, &[0]))
            .unwrap();
        let b = policy
            .sample_response(&params, &o, &mut substream(2, &[0]))
            .unwrap();
        assert_eq!(a, b);
        let lp = policy.log_prob(&params, &o, &a.trace).unwrap();
        assert!((lp - a.log_prob).abs() < 1e-10);
        assert!(a.log_prob <= 0.0);
    }

    #[test]
    fn zero_length_cap_yields_unparseable_text() {
        let policy = TokenPolicy::new(2, 0);
        let params = policy.init_params(1);
        let o = obs(&[1.0, 2.0]);
        let s = policy
            .sample_response(&params, &o, &mut substream(0, &[0]))
            .unwrap();
        assert!(s.trace.is_empty());
        assert_eq!(s.log_prob, 0.0);
        assert!(crate::rewards::extract_answer_span(&s.text).is_err());
    }

    #[test]
    fn trace_validation() {
        let policy = TokenPolicy::new(2, 8);
        let params = policy.init_params(1);
        let o = obs(&[1.0, 2.0]);
        // <eos> must terminate the trace.
        let bad = vec![THINK_TOKEN, EOS_TOKEN, THINK_TOKEN];
        assert!(matches!(
            policy.log_prob(&params, &o, &bad),
            Err(PolicyError::InvalidTrace(_))
        ));
        // Short traces without <eos> are incomplete.
        assert!(matches!(
            policy.log_prob(&params, &o, &[THINK_TOKEN]),
            Err(PolicyError::InvalidTrace(_))
        ));
        // Token out of range.
        assert!(matches!(
            policy.log_prob(&params, &o, &[99, EOS_TOKEN]),
            Err(PolicyError::InvalidTrace(_))
        ));
        // Full-length trace needs no <eos>.
        let full = vec![OK_TOKEN; 8];
        policy.log_prob(&params, &o, &full).unwrap();
    }

    #[test]
    fn per_step_normalization() {
        let policy = TokenPolicy::new(2, 4);
        let params = policy.init_params(3);
        let o = obs(&[0.7, -0.2]);
        // Sum over single-step continuations from an empty prefix.
        let bag = [0.0; VOCAB_SIZE];
        let lsm = log_softmax(&policy.step_logits(&params, &o, 0, &bag));
        let total: f64 = lsm.iter().map(|lp| lp.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn greedy_is_stable() {
        let policy = TokenPolicy::new(2, 10);
        let params = policy.init_params(11);
        let o = obs(&[0.1, 0.9]);
        let a = policy.greedy_response(&params, &o).unwrap();
        let b = policy.greedy_response(&params, &o).unwrap();
        assert_eq!(a, b);
    }
}
