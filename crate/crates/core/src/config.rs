//! Run configuration: a TOML file with command-scoped sections, plus
//! dotted-path flag overrides. Unknown keys are errors, and every command
//! freezes its resolved config next to its outputs so a run is reproducible
//! from (config, seed, build) alone.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{GenConfig, SplitSizes};
use crate::grpo::TrainConfig;
use crate::policy::PolicyLayout;
use crate::rewards::RewardMode;
use crate::sft::TargetKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("bad override {0:?} (expected key.path=value)")]
    BadOverride(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Categorical,
    Token,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub kind: PolicyKind,
    /// Length cap for the token policy; ignored by the categorical policy.
    pub max_len: usize,
}

impl PolicySection {
    pub fn layout(&self, feature_dim: usize) -> PolicyLayout {
        match self.kind {
            PolicyKind::Categorical => PolicyLayout::Categorical { feature_dim },
            PolicyKind::Token => PolicyLayout::Token {
                feature_dim,
                max_len: self.max_len,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub gen: GenConfig,
    pub sizes: SplitSizes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseTargets {
    Weak,
    AnswerDriven,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftPhase {
    pub targets: PhaseTargets,
    pub epochs: usize,
    /// Leading fraction of the train split used for this phase.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftSection {
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    /// Probability that the weak oracle emits the true label.
    pub weak_accuracy: f64,
    /// Per-option flip probability of the weak oracle's verdict tokens.
    pub weak_verdict_noise: f64,
    pub phases: Vec<SftPhase>,
}

impl SftSection {
    pub fn target_kind(&self, phase: &SftPhase) -> TargetKind {
        match phase.targets {
            PhaseTargets::Weak => TargetKind::Weak {
                accuracy: self.weak_accuracy,
                verdict_noise: self.weak_verdict_noise,
            },
            PhaseTargets::AnswerDriven => TargetKind::AnswerDriven,
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.epochs).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlSection {
    pub group_size: usize,
    pub eps_clip: f64,
    pub beta: f64,
    pub lr: f64,
    pub mu: usize,
    pub std_floor: f64,
    pub reward_mode: RewardMode,
    pub steps: usize,
    pub batch_prompts: usize,
}

impl RlSection {
    pub fn train_config(&self, seed: u64, sft_epochs: usize) -> TrainConfig {
        TrainConfig {
            group_size: self.group_size,
            eps_clip: self.eps_clip,
            beta: self.beta,
            lr: self.lr,
            mu: self.mu,
            std_floor: self.std_floor,
            reward_mode: self.reward_mode,
            steps: self.steps,
            batch_prompts: self.batch_prompts,
            seed,
            sft_epochs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Test file override; defaults to `test.jsonl` in the data directory.
    pub test_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoSection {
    /// Steps between periodic RL checkpoints; 0 disables them.
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub policy: PolicySection,
    pub env: EnvSection,
    pub sft: SftSection,
    pub rl: RlSection,
    pub eval: EvalSection,
    pub io: IoSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            policy: PolicySection {
                kind: PolicyKind::Token,
                max_len: 32,
            },
            env: EnvSection {
                gen: GenConfig {
                    defect_prob: 0.3,
                    block_size: 2,
                    noise_sigma: 0.1,
                },
                sizes: SplitSizes {
                    train: 500,
                    test: 200,
                    explore: 100,
                },
            },
            sft: SftSection {
                lr: 0.2,
                batch_size: 32,
                momentum: 0.9,
                weak_accuracy: 0.38,
                weak_verdict_noise: 0.25,
                phases: vec![
                    SftPhase {
                        targets: PhaseTargets::Weak,
                        epochs: 30,
                        fraction: 1.0,
                    },
                    SftPhase {
                        targets: PhaseTargets::AnswerDriven,
                        epochs: 4,
                        fraction: 0.05,
                    },
                ],
            },
            rl: RlSection {
                group_size: 8,
                eps_clip: 0.2,
                beta: 0.02,
                lr: 0.05,
                mu: 1,
                std_floor: 1e-6,
                reward_mode: RewardMode::Dpa,
                steps: 300,
                batch_prompts: 4,
            },
            eval: EvalSection::default(),
            io: IoSection {
                checkpoint_every: 100,
            },
        }
    }
}

impl RunConfig {
    /// Loads a config file and applies dotted-path overrides like
    /// `rl.reward_mode=binary` or `env.sizes.train=100`.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let parse_err = |msg: String| ConfigError::Parse {
            path: path.display().to_string(),
            msg,
        };
        let table: toml::Table = text.parse().map_err(|e| parse_err(format!("{e}")))?;
        let mut value = toml::Value::Table(table);
        for entry in overrides {
            apply_override(&mut value, entry)?;
        }
        RunConfig::deserialize(value).map_err(|e| parse_err(format!("{e}")))
    }

    /// Serializes the resolved config for freezing next to run outputs.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        fs::write(path, self.to_toml()).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn apply_override(root: &mut toml::Value, entry: &str) -> Result<(), ConfigError> {
    let bad = || ConfigError::BadOverride(entry.to_string());
    let (key_path, raw) = entry.split_once('=').ok_or_else(bad)?;
    let segments: Vec<&str> = key_path.trim().split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(bad());
    }
    let mut node = root;
    for segment in &segments[..segments.len() - 1] {
        let table = node.as_table_mut().ok_or_else(bad)?;
        node = table
            .entry(segment.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node.as_table_mut().ok_or_else(bad)?;
    table.insert(
        segments[segments.len() - 1].to_string(),
        parse_scalar(raw.trim()),
    );
    Ok(())
}

/// Interprets an override value as bool, integer, float, then string.
fn parse_scalar(raw: &str) -> toml::Value {
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    toml::Value::String(raw.to_string())
}
