//! Supervised cold start: negative log-likelihood training on templated
//! target responses, run before RL to establish format compliance and basic
//! task competence.
//!
//! Targets come in two qualities, mirroring how real annotation pipelines
//! trade cost for accuracy: answer-driven targets carry the true label,
//! weak-oracle targets carry a noisy label that is correct only with a
//! configurable probability. Both use the same think-block template listing
//! a verdict per option, so the format signal is identical.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answers::{AnswerSet, NUM_OPTIONS};
use crate::env::SyntheticSample;
use crate::policy::{
    Observation, Policy, PolicyError, PolicyLayout, PolicyParams, TokenVocab, ANSWER_END_TOKEN,
    ANSWER_TOKEN, BAD_TOKEN, EOS_TOKEN, NONE_TOKEN, OK_TOKEN, THINK_END_TOKEN, THINK_TOKEN,
};
use crate::rng::{substream, tags};
use crate::textio::{fmt_f64, LineWriter};

/// One supervised example: an observation and the target action trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SftExample {
    pub id: String,
    pub obs: Observation,
    pub target: Vec<usize>,
    pub target_text: String,
}

/// How target labels are produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TargetKind {
    /// Template filled with the true label and verdicts consistent with it.
    AnswerDriven,
    /// Template filled by a noisy oracle: the answer is right with
    /// probability `accuracy` (else a uniformly wrong label), and each
    /// per-option verdict is independently flipped with probability
    /// `verdict_noise`. Hallucinated reasoning is not self-consistent, so
    /// the verdicts do not reliably reveal the answer.
    Weak { accuracy: f64, verdict_noise: f64 },
}

#[derive(Debug, Error)]
pub enum SftError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("sample {0} carries no label; cannot build supervised targets")]
    MissingLabel(String),
    #[error("empty dataset")]
    EmptyDataset,
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

fn weak_label(true_label: &AnswerSet, accuracy: f64, rng: &mut ChaCha8Rng) -> AnswerSet {
    if rng.random::<f64>() < accuracy {
        return *true_label;
    }
    // Uniform over the 15 wrong labels.
    let offset = rng.random_range(1..16usize);
    AnswerSet::from_index((true_label.index() + offset) % 16).expect("index in range")
}

fn verdicts_of(label: &AnswerSet) -> [bool; NUM_OPTIONS] {
    std::array::from_fn(|option| match label {
        AnswerSet::NoneMarker => false,
        AnswerSet::Options(set) => set.contains(option),
    })
}

/// Token-policy target: think block with one verdict per option, then the
/// answer span, then `<eos>`.
fn token_template(label: &AnswerSet, verdicts: &[bool; NUM_OPTIONS]) -> Vec<usize> {
    let mut trace = vec![THINK_TOKEN];
    for (option, good) in verdicts.iter().enumerate() {
        trace.push(TokenVocab::letter(option));
        trace.push(if *good { OK_TOKEN } else { BAD_TOKEN });
    }
    trace.push(THINK_END_TOKEN);
    trace.push(ANSWER_TOKEN);
    match label {
        AnswerSet::NoneMarker => trace.push(NONE_TOKEN),
        AnswerSet::Options(set) => {
            for option in set.iter() {
                trace.push(TokenVocab::letter(option));
            }
        }
    }
    trace.push(ANSWER_END_TOKEN);
    trace.push(EOS_TOKEN);
    trace
}

fn target_for(
    layout: &PolicyLayout,
    label: &AnswerSet,
    verdicts: &[bool; NUM_OPTIONS],
) -> (Vec<usize>, String) {
    match layout {
        PolicyLayout::Categorical { .. } => {
            let trace = vec![label.index()];
            let text = format!("<think>options reviewed</think><answer>{label}</answer>");
            (trace, text)
        }
        PolicyLayout::Token { .. } => {
            let trace = token_template(label, verdicts);
            let text = TokenVocab::render(&trace);
            (trace, text)
        }
    }
}

/// Builds supervised examples for `layout` from labeled samples.
pub fn build_sft_examples(
    layout: &PolicyLayout,
    samples: &[SyntheticSample],
    kind: TargetKind,
    seed: u64,
) -> Result<Vec<SftExample>, SftError> {
    samples
        .iter()
        .enumerate()
        .map(|(index, sample)| {
            let true_label = sample
                .label
                .as_ref()
                .ok_or_else(|| SftError::MissingLabel(sample.id.clone()))?;
            let (label, verdicts) = match kind {
                TargetKind::AnswerDriven => (*true_label, verdicts_of(true_label)),
                TargetKind::Weak {
                    accuracy,
                    verdict_noise,
                } => {
                    let mut rng = substream(seed, &[tags::SFT_TARGET, index as u64]);
                    let label = weak_label(true_label, accuracy, &mut rng);
                    let mut verdicts = verdicts_of(&label);
                    for v in verdicts.iter_mut() {
                        if rng.random::<f64>() < verdict_noise {
                            *v = !*v;
                        }
                    }
                    (label, verdicts)
                }
            };
            let (target, target_text) = target_for(layout, &label, &verdicts);
            Ok(SftExample {
                id: sample.id.clone(),
                obs: sample.obs.clone(),
                target,
                target_text,
            })
        })
        .collect()
}

/// Mean per-example negative log-likelihood of a batch, plus its analytic
/// gradient with respect to the parameters.
pub fn nll_loss(
    policy: &dyn Policy,
    params: &PolicyParams,
    batch: &[SftExample],
) -> Result<(f64, Vec<f64>), SftError> {
    if batch.is_empty() {
        return Err(SftError::EmptyDataset);
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.values.len()];
    for example in batch {
        let (lp, g) = policy.log_prob_and_grad(params, &example.obs, &example.target)?;
        loss -= lp;
        for (acc, gi) in grad.iter_mut().zip(&g) {
            *acc -= gi;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    loss *= inv;
    for g in grad.iter_mut() {
        *g *= inv;
    }
    Ok((loss, grad))
}

/// Optimizer settings for one SFT run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SftHyperparams {
    pub lr: f64,
    pub batch_size: usize,
    /// 0.0 selects plain mini-batch gradient descent.
    pub momentum: f64,
}

/// Per-epoch training record for the metrics stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SftEpochRecord {
    pub phase: usize,
    pub epoch: usize,
    pub loss: f64,
}

/// Mini-batch gradient descent on the NLL for `epochs` passes.
///
/// Batch order is shuffled per epoch from the seed's substream; reduction
/// order inside a batch follows dataset index order, so the whole run is
/// deterministic given (seed, dataset order, config). Zero epochs return
/// the parameters unchanged. `phase` tags the emitted records and
/// `epoch_offset` continues their numbering when resuming.
#[allow(clippy::too_many_arguments)]
pub fn sft_train(
    policy: &dyn Policy,
    mut params: PolicyParams,
    examples: &[SftExample],
    hp: &SftHyperparams,
    epochs: usize,
    seed: u64,
    phase: usize,
    epoch_offset: usize,
    mut on_epoch: impl FnMut(&SftEpochRecord),
) -> Result<PolicyParams, SftError> {
    if examples.is_empty() {
        return Err(SftError::EmptyDataset);
    }
    let batch_size = hp.batch_size.max(1);
    let mut velocity = vec![0.0; params.values.len()];
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut rng = substream(seed, &[tags::SFT_SHUFFLE, phase as u64, epoch as u64]);
        shuffle(&mut order, &mut rng);

        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<SftExample> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let (loss, grad) = nll_loss(policy, &params, &batch)?;
            epoch_loss += loss * chunk.len() as f64;
            for ((v, g), p) in velocity.iter_mut().zip(&grad).zip(params.values.iter_mut()) {
                *v = hp.momentum * *v + g;
                *p -= hp.lr * *v;
            }
        }
        let record = SftEpochRecord {
            phase,
            epoch: epoch_offset + epoch,
            loss: epoch_loss / examples.len() as f64,
        };
        on_epoch(&record);
    }
    Ok(params)
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

/// Writes the supervised dataset as line-delimited {id, features,
/// target_text} records, reals at 17 significant digits.
pub fn write_sft_file(path: &Path, examples: &[SftExample]) -> Result<(), SftError> {
    let err = |source| SftError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = LineWriter::create(path).map_err(err)?;
    for e in examples {
        let mut features = String::from("[");
        for (i, v) in e.obs.features.iter().enumerate() {
            if i > 0 {
                features.push(',');
            }
            features.push_str(&fmt_f64(*v));
        }
        features.push(']');
        w.write_line(&format!(
            "{{\"id\":\"{}\",\"features\":{},\"target_text\":{}}}",
            e.id,
            features,
            serde_json::to_string(&e.target_text).map_err(|e| err(e.into()))?
        ))
        .map_err(err)?;
    }
    w.finish().map_err(err)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SftRecord {
    id: String,
    features: Vec<f64>,
    target_text: String,
}

/// Loads a supervised dataset file, re-deriving each action trace from the
/// target text for the given policy layout.
pub fn load_sft_file(path: &Path, layout: &PolicyLayout) -> Result<Vec<SftExample>, SftError> {
    let text = fs::read_to_string(path).map_err(|source| SftError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let schema = |line: usize, msg: String| SftError::Schema {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let record: SftRecord =
            serde_json::from_str(line).map_err(|e| schema(line_no, e.to_string()))?;
        if record.features.len() != layout.feature_dim() {
            return Err(schema(
                line_no,
                format!(
                    "expected {} features, got {}",
                    layout.feature_dim(),
                    record.features.len()
                ),
            ));
        }
        let target =
            trace_from_text(layout, &record.target_text).map_err(|msg| schema(line_no, msg))?;
        out.push(SftExample {
            id: record.id,
            obs: Observation::new(record.features),
            target,
            target_text: record.target_text,
        });
    }
    Ok(out)
}

fn trace_from_text(layout: &PolicyLayout, text: &str) -> Result<Vec<usize>, String> {
    match layout {
        PolicyLayout::Categorical { .. } => {
            let answer = crate::rewards::extract_answer_span(text)
                .map_err(|e| format!("target text is not a valid response: {e}"))?;
            Ok(vec![answer.index()])
        }
        PolicyLayout::Token { max_len, .. } => {
            let mut trace = TokenVocab::tokenize(text)
                .ok_or_else(|| "target text does not tokenize".to_string())?;
            trace.push(EOS_TOKEN);
            if trace.len() > *max_len {
                return Err(format!(
                    "target needs {} tokens, cap is {max_len}",
                    trace.len()
                ));
            }
            Ok(trace)
        }
    }
}
