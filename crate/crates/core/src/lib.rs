//! Two-stage training engine for synthetic multi-answer selection tasks:
//! supervised cold start followed by group-relative policy optimization,
//! with a choice between the classic binary accuracy reward and a
//! proportional (subset-credit) accuracy reward, plus the matching
//! subset-correctness evaluation protocol.

pub mod answers;
pub mod cli;
pub mod config;
pub mod env;
pub mod eval;
pub mod grpo;
pub mod policy;
pub mod rewards;
pub mod rng;
pub mod sft;
pub mod textio;

pub use answers::{format_answer_set, is_subset_of, parse_answer_set, AnswerSet};
pub use rewards::{
    binary_accuracy_reward, dpa_accuracy_reward, extract_answer_span, format_reward, total_reward,
    RewardBreakdown, RewardMode,
};
