//! Verifiable rewards: format reward, binary and proportional accuracy
//! rewards, and their additive composition `r = r_fmt + r_acc`.
//!
//! Responses are expected in the fixed structure
//! `<think>…</think><answer>…</answer>`. Accuracy is gated on format
//! validity: a response with no extractable answer scores zero on both
//! components.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answers::{is_subset_of, parse_answer_set, AnswerSet, ParseError};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

/// Which accuracy reward the trainer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    /// All-or-nothing: 1 only on exact label match.
    Binary,
    /// Proportional: |R|/|A| when the response is a subset of the label.
    Dpa,
}

impl std::fmt::Display for RewardMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RewardMode::Binary => f.write_str("binary"),
            RewardMode::Dpa => f.write_str("dpa"),
        }
    }
}

/// Structure violations detected by [`extract_answer_span`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("missing {0} tag")]
    MissingTag(&'static str),
    #[error("repeated {0} tag")]
    RepeatedTag(&'static str),
    #[error("tags out of order")]
    TagOrder,
    #[error("text outside the think/answer blocks")]
    StrayText,
    #[error("answer span does not parse: {0}")]
    Answer(#[from] ParseError),
}

/// Per-response reward components. `total` is always `fmt + acc`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub fmt: f64,
    pub acc: f64,
    pub total: f64,
}

impl RewardBreakdown {
    fn new(fmt: f64, acc: f64) -> Self {
        Self {
            fmt,
            acc,
            total: fmt + acc,
        }
    }
}

fn find_single(text: &str, tag: &'static str) -> Result<usize, FormatError> {
    let mut matches = text.match_indices(tag).map(|(i, _)| i);
    let first = matches.next().ok_or(FormatError::MissingTag(tag))?;
    if matches.next().is_some() {
        return Err(FormatError::RepeatedTag(tag));
    }
    Ok(first)
}

/// Extracts and parses the answer span from a structured response.
///
/// The response must consist of exactly one `<think>` block followed by
/// exactly one `<answer>` block, with nothing but whitespace before,
/// between, or after them. No tag is a substring of another, so counting
/// occurrences per tag is unambiguous.
pub fn extract_answer_span(resp: &str) -> Result<AnswerSet, FormatError> {
    let think_close = find_single(resp, THINK_CLOSE)?;
    let answer_close = find_single(resp, ANSWER_CLOSE)?;
    let think_open = find_single(resp, THINK_OPEN)?;
    let answer_open = find_single(resp, ANSWER_OPEN)?;

    if !(think_open < think_close && think_close < answer_open && answer_open < answer_close) {
        return Err(FormatError::TagOrder);
    }
    let before = &resp[..think_open];
    let between = &resp[think_close + THINK_CLOSE.len()..answer_open];
    let after = &resp[answer_close + ANSWER_CLOSE.len()..];
    if !before.trim().is_empty() || !between.trim().is_empty() || !after.trim().is_empty() {
        return Err(FormatError::StrayText);
    }
    let span = &resp[answer_open + ANSWER_OPEN.len()..answer_close];
    Ok(parse_answer_set(span)?)
}

/// 1.0 if the response follows the fixed structure and carries a parseable
/// answer, else 0.0.
pub fn format_reward(resp: &str) -> f64 {
    if extract_answer_span(resp).is_ok() {
        1.0
    } else {
        0.0
    }
}

/// Proportional accuracy: |R|/|A| if R ⊆ A, else 0. A correct "N" scores 1.
pub fn dpa_accuracy_reward(r: &AnswerSet, a: &AnswerSet) -> f64 {
    if is_subset_of(r, a) {
        r.cardinality() as f64 / a.cardinality() as f64
    } else {
        0.0
    }
}

/// All-or-nothing accuracy: 1.0 on exact match, else 0.0.
pub fn binary_accuracy_reward(r: &AnswerSet, a: &AnswerSet) -> f64 {
    if r == a {
        1.0
    } else {
        0.0
    }
}

/// Overall verifiable reward `r = r_fmt + r_acc` for a raw response against
/// the ground-truth label. Unparseable responses score zero on both parts.
pub fn total_reward(resp: &str, label: &AnswerSet, mode: RewardMode) -> RewardBreakdown {
    match extract_answer_span(resp) {
        Ok(answer) => {
            let acc = match mode {
                RewardMode::Binary => binary_accuracy_reward(&answer, label),
                RewardMode::Dpa => dpa_accuracy_reward(&answer, label),
            };
            RewardBreakdown::new(1.0, acc)
        }
        Err(_) => RewardBreakdown::new(0.0, 0.0),
    }
}
