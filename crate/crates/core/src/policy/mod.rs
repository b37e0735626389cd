//! Differentiable stochastic policies over structured responses.
//!
//! A policy maps an observation to a distribution over responses, supports
//! seeded sampling, exact log-probabilities of a sampled action trace, and
//! analytic parameter gradients of those log-probabilities. Two concrete
//! policies are provided: a 16-way categorical policy whose emissions are
//! always well-formed, and a small autoregressive token policy whose
//! emissions can be malformed (so the format reward and the cold start have
//! observable effect).

mod categorical;
mod token;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use categorical::CategoricalPolicy;
pub use token::{
    TokenPolicy, TokenVocab, ANSWER_END_TOKEN, ANSWER_TOKEN, BAD_TOKEN, EOS_TOKEN, NONE_TOKEN,
    OK_TOKEN, THINK_END_TOKEN, THINK_TOKEN, VOCAB_SIZE,
};

/// Feature vector a policy conditions on.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub features: Vec<f64>,
}

impl Observation {
    pub fn new(features: Vec<f64>) -> Self {
        Self { features }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// Identifies a policy architecture and fixes its parameter count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PolicyLayout {
    Categorical { feature_dim: usize },
    Token { feature_dim: usize, max_len: usize },
}

impl PolicyLayout {
    pub fn param_len(&self) -> usize {
        match *self {
            // 16 logit rows over the features, plus a bias per row.
            PolicyLayout::Categorical { feature_dim } => 16 * feature_dim + 16,
            // One logit row per vocab entry over (features, position one-hot,
            // bag of previous tokens), plus a bias per row.
            PolicyLayout::Token {
                feature_dim,
                max_len,
            } => VOCAB_SIZE * (feature_dim + max_len + VOCAB_SIZE) + VOCAB_SIZE,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match *self {
            PolicyLayout::Categorical { feature_dim } => feature_dim,
            PolicyLayout::Token { feature_dim, .. } => feature_dim,
        }
    }
}

/// Flattened policy parameters together with their layout descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub layout: PolicyLayout,
    pub values: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(layout: PolicyLayout) -> Self {
        Self {
            layout,
            values: vec![0.0; layout.param_len()],
        }
    }
}

/// One sampled response: emitted text, the discrete choices made while
/// sampling, and the total log-probability of those choices.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSample {
    pub text: String,
    pub trace: Vec<usize>,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid action trace: {0}")]
    InvalidTrace(String),
}

pub trait Policy {
    fn layout(&self) -> PolicyLayout;

    /// Fresh parameters for this architecture. The categorical policy starts
    /// at exactly zero (uniform); the token policy breaks symmetry with
    /// seeded uniform values in [-0.01, 0.01).
    fn init_params(&self, seed: u64) -> PolicyParams;

    /// Draws one response. Deterministic given the stream state.
    fn sample_response(
        &self,
        params: &PolicyParams,
        obs: &Observation,
        rng: &mut ChaCha8Rng,
    ) -> Result<ResponseSample, PolicyError>;

    /// Most-probable response under the current parameters (ties break to
    /// the lowest action index). Used for evaluation decoding.
    fn greedy_response(
        &self,
        params: &PolicyParams,
        obs: &Observation,
    ) -> Result<ResponseSample, PolicyError>;

    /// Exact log-probability of an action trace.
    fn log_prob(
        &self,
        params: &PolicyParams,
        obs: &Observation,
        trace: &[usize],
    ) -> Result<f64, PolicyError>;

    /// Log-probability and its analytic gradient with respect to the
    /// flattened parameters.
    fn log_prob_and_grad(
        &self,
        params: &PolicyParams,
        obs: &Observation,
        trace: &[usize],
    ) -> Result<(f64, Vec<f64>), PolicyError>;

    fn grad_log_prob(
        &self,
        params: &PolicyParams,
        obs: &Observation,
        trace: &[usize],
    ) -> Result<Vec<f64>, PolicyError> {
        self.log_prob_and_grad(params, obs, trace).map(|(_, g)| g)
    }
}

pub(crate) fn check_params<P: Policy + ?Sized>(
    policy: &P,
    params: &PolicyParams,
    obs: &Observation,
) -> Result<(), PolicyError> {
    if params.layout != policy.layout() {
        return Err(PolicyError::DimensionMismatch {
            what: "params layout",
            expected: policy.layout().param_len(),
            got: params.layout.param_len(),
        });
    }
    if params.values.len() != params.layout.param_len() {
        return Err(PolicyError::DimensionMismatch {
            what: "params length",
            expected: params.layout.param_len(),
            got: params.values.len(),
        });
    }
    if obs.dim() != policy.layout().feature_dim() {
        return Err(PolicyError::DimensionMismatch {
            what: "observation",
            expected: policy.layout().feature_dim(),
            got: obs.dim(),
        });
    }
    Ok(())
}

/// Numerically stable log-softmax.
pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - max - log_sum).collect()
}

/// Draws an index from the distribution given in log space.
pub(crate) fn sample_from_log_probs(log_probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    use rand::Rng;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    log_probs.len() - 1
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Builds the policy named in a layout descriptor.
pub fn policy_for_layout(layout: PolicyLayout) -> Box<dyn Policy> {
    match layout {
        PolicyLayout::Categorical { feature_dim } => Box::new(CategoricalPolicy::new(feature_dim)),
        PolicyLayout::Token {
            feature_dim,
            max_len,
        } => Box::new(TokenPolicy::new(feature_dim, max_len)),
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Schema {
        path: String,
        line: usize,
        msg: String,
    },
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    layout: PolicyLayout,
    vocab: Vec<String>,
}

/// Writes parameters as a text checkpoint: a JSON header line followed by
/// one value per line at 17 significant digits (round-trips f64 exactly).
pub fn save_params(path: &Path, params: &PolicyParams) -> Result<(), CheckpointError> {
    let io_err = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let header = CheckpointHeader {
        version: 1,
        layout: params.layout,
        vocab: checkpoint_vocab(&params.layout),
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    serde_json::to_writer(&mut w, &header).map_err(|e| io_err(e.into()))?;
    w.write_all(b"\n").map_err(io_err)?;
    for v in &params.values {
        writeln!(w, "{}", crate::textio::fmt_f64(*v)).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Loads a text checkpoint written by [`save_params`].
pub fn load_params(path: &Path) -> Result<PolicyParams, CheckpointError> {
    let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let schema = |line: usize, msg: String| CheckpointError::Schema {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| schema(1, "empty checkpoint".into()))?;
    let header: CheckpointHeader =
        serde_json::from_str(header_line).map_err(|e| schema(1, e.to_string()))?;
    if header.version != 1 {
        return Err(schema(
            1,
            format!("unsupported checkpoint version {}", header.version),
        ));
    }
    if header.vocab != checkpoint_vocab(&header.layout) {
        return Err(schema(1, "vocabulary does not match the layout".into()));
    }
    let mut values = Vec::with_capacity(header.layout.param_len());
    for (idx, line) in lines {
        let v: f64 = line
            .trim()
            .parse()
            .map_err(|e| schema(idx + 1, format!("bad parameter value: {e}")))?;
        if !v.is_finite() {
            return Err(schema(idx + 1, "non-finite parameter value".into()));
        }
        values.push(v);
    }
    if values.len() != header.layout.param_len() {
        return Err(schema(
            1,
            format!(
                "expected {} parameter values, found {}",
                header.layout.param_len(),
                values.len()
            ),
        ));
    }
    Ok(PolicyParams {
        layout: header.layout,
        values,
    })
}

/// The action vocabulary recorded in checkpoint headers: canonical labels
/// for the categorical policy, token surfaces for the token policy.
fn checkpoint_vocab(layout: &PolicyLayout) -> Vec<String> {
    match layout {
        PolicyLayout::Categorical { .. } => crate::answers::AnswerSet::all()
            .map(|a| a.to_string())
            .collect(),
        PolicyLayout::Token { .. } => TokenVocab::surfaces()
            .iter()
            .map(|s| s.to_string())
            .collect(),
    }
}
