//! Group-relative policy optimization.
//!
//! For each prompt the trainer samples a group of G responses from the
//! frozen old policy, scores them with the verifiable reward, normalizes
//! rewards into advantages within the group (mean/std baseline, no critic),
//! and ascends a clipped importance-sampling surrogate with a per-sample KL
//! penalty toward the frozen reference policy. The reward mode selects the
//! binary accuracy reward or the proportional (subset-credit) one.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answers::AnswerSet;
use crate::env::SyntheticSample;
use crate::policy::{Observation, Policy, PolicyError, PolicyParams, ResponseSample};
use crate::rewards::{total_reward, RewardBreakdown, RewardMode};
use crate::rng::{substream, tags};

/// Exponent clamp for probability ratios; anything beyond e^±30 is a
/// numerical blow-up we refuse to follow.
pub const EXP_CLAMP: f64 = 30.0;

/// Cadence (in steps) of held-out evaluation rows in the metrics stream.
pub const EVAL_EVERY: usize = 10;

/// RL trainer configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Responses sampled per prompt (G).
    pub group_size: usize,
    /// Clip range for the importance ratio (ε).
    pub eps_clip: f64,
    /// KL penalty weight toward the reference policy (β).
    pub beta: f64,
    pub lr: f64,
    /// Inner gradient-ascent updates per sampled batch; old log-probs stay
    /// frozen across them, so clipping can bind when greater than 1.
    pub mu: usize,
    /// Lower bound on the advantage denominator.
    pub std_floor: f64,
    pub reward_mode: RewardMode,
    pub steps: usize,
    /// Prompts drawn per outer step.
    pub batch_prompts: usize,
    pub seed: u64,
    /// Cold-start epochs that produced the starting checkpoint; recorded so
    /// a frozen config reproduces the whole pipeline.
    pub sft_epochs: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::Config(msg));
        if self.group_size < 2 {
            return fail(format!(
                "group_size must be at least 2, got {}",
                self.group_size
            ));
        }
        if !(self.eps_clip > 0.0 && self.eps_clip < 1.0) {
            return fail(format!("eps_clip must be in (0, 1), got {}", self.eps_clip));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return fail(format!("beta must be non-negative, got {}", self.beta));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if self.mu == 0 {
            return fail("mu must be at least 1".into());
        }
        if self.std_floor <= 0.0 || self.std_floor.is_nan() {
            return fail(format!(
                "std_floor must be positive, got {}",
                self.std_floor
            ));
        }
        if self.steps == 0 {
            return fail("steps must be at least 1".into());
        }
        if self.batch_prompts == 0 {
            return fail("batch_prompts must be at least 1".into());
        }
        Ok(())
    }
}

/// One prompt's sampled group with everything the update needs.
#[derive(Debug, Clone)]
pub struct GroupRollout {
    pub obs: Observation,
    pub label: AnswerSet,
    pub responses: Vec<ResponseSample>,
    pub old_log_probs: Vec<f64>,
    pub ref_log_probs: Vec<f64>,
    pub cur_log_probs: Vec<f64>,
    pub rewards: Vec<RewardBreakdown>,
    pub advantages: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("sample {0} carries no label; RL needs labeled prompts")]
    MissingLabel(String),
    #[error("empty prompt set")]
    EmptyDataset,
    #[error("non-finite objective at step {step}")]
    NonFiniteObjective { step: usize },
    #[error("held-out evaluation failed: {0}")]
    Eval(String),
}

/// Counters for the exponent clamp guard.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RatioDiagnostics {
    pub clamp_events: u64,
}

fn clamped_exp(exponent: f64, diag: &mut RatioDiagnostics) -> f64 {
    if exponent.abs() > EXP_CLAMP {
        diag.clamp_events += 1;
        exponent.clamp(-EXP_CLAMP, EXP_CLAMP).exp()
    } else {
        exponent.exp()
    }
}

/// Group-normalized advantages: (r - mean) / max(popstd, floor).
/// A group of identical rewards yields exactly zero advantages.
pub fn compute_advantages(rewards: &[f64], std_floor: f64) -> Vec<f64> {
    let n = rewards.len();
    if n == 0 {
        return Vec::new();
    }
    let first = rewards[0];
    if rewards.iter().all(|&r| r == first) {
        return vec![0.0; n];
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    let variance = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n as f64;
    let denom = variance.sqrt().max(std_floor);
    rewards.iter().map(|r| (r - mean) / denom).collect()
}

/// Importance sampling coefficient w = exp(cur - old), exponent clamped.
pub fn importance_ratio(cur_log_prob: f64, old_log_prob: f64, diag: &mut RatioDiagnostics) -> f64 {
    clamped_exp(cur_log_prob - old_log_prob, diag)
}

/// Per-sample KL estimate toward the reference policy and its derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlTerm {
    /// ρ - ln ρ - 1 with ρ = π_ref/π_θ; non-negative, zero iff ρ = 1.
    pub value: f64,
    /// d value / d cur_log_prob = 1 - ρ.
    pub grad_cur: f64,
}

pub fn kl_penalty(cur_log_prob: f64, ref_log_prob: f64, diag: &mut RatioDiagnostics) -> KlTerm {
    let log_rho_raw = ref_log_prob - cur_log_prob;
    let log_rho = if log_rho_raw.abs() > EXP_CLAMP {
        diag.clamp_events += 1;
        log_rho_raw.clamp(-EXP_CLAMP, EXP_CLAMP)
    } else {
        log_rho_raw
    };
    let rho = log_rho.exp();
    KlTerm {
        value: rho - log_rho - 1.0,
        grad_cur: 1.0 - rho,
    }
}

/// Samples one group for a prompt: G responses from the current policy
/// (which becomes the old policy for the ensuing inner updates), rewards
/// against the prompt's label, and normalized advantages. Each member draws
/// from its own substream of (seed, step, prompt_index, member).
pub fn sample_group(
    policy: &dyn Policy,
    params: &PolicyParams,
    ref_params: &PolicyParams,
    sample: &SyntheticSample,
    cfg: &TrainConfig,
    step: u64,
    prompt_index: u64,
) -> Result<GroupRollout, TrainError> {
    let label = *sample
        .label
        .as_ref()
        .ok_or_else(|| TrainError::MissingLabel(sample.id.clone()))?;
    let g = cfg.group_size;
    let mut responses = Vec::with_capacity(g);
    let mut old_log_probs = Vec::with_capacity(g);
    let mut ref_log_probs = Vec::with_capacity(g);
    let mut rewards = Vec::with_capacity(g);
    for member in 0..g {
        let mut rng = substream(
            cfg.seed,
            &[tags::RL_ROLLOUT, step, prompt_index, member as u64],
        );
        let response = policy.sample_response(params, &sample.obs, &mut rng)?;
        ref_log_probs.push(policy.log_prob(ref_params, &sample.obs, &response.trace)?);
        rewards.push(total_reward(&response.text, &label, cfg.reward_mode));
        old_log_probs.push(response.log_prob);
        responses.push(response);
    }
    let totals: Vec<f64> = rewards.iter().map(|r| r.total).collect();
    let advantages = compute_advantages(&totals, cfg.std_floor);
    Ok(GroupRollout {
        obs: sample.obs.clone(),
        label,
        responses,
        cur_log_probs: old_log_probs.clone(),
        old_log_probs,
        ref_log_probs,
        rewards,
        advantages,
    })
}

/// Clipped-surrogate objective with KL penalty, averaged over groups, and
/// its analytic gradient with respect to the current parameters.
///
/// Per response the surrogate is min(wA, clip(w, 1-ε, 1+ε)A); when the
/// clipped branch is the active minimum the response contributes no
/// gradient through its log-probability. Advantages are treated as
/// constants. Refreshes `cur_log_probs` as a side effect.
pub fn grpo_objective(
    policy: &dyn Policy,
    params: &PolicyParams,
    groups: &mut [GroupRollout],
    cfg: &TrainConfig,
    diag: &mut RatioDiagnostics,
) -> Result<(f64, Vec<f64>), TrainError> {
    if groups.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut objective = 0.0;
    let mut grad = vec![0.0; params.values.len()];
    let scale = 1.0 / (groups.len() as f64 * cfg.group_size as f64);
    for group in groups.iter_mut() {
        for i in 0..group.responses.len() {
            let (cur_lp, response_grad) =
                policy.log_prob_and_grad(params, &group.obs, &group.responses[i].trace)?;
            group.cur_log_probs[i] = cur_lp;
            let advantage = group.advantages[i];
            let w = importance_ratio(cur_lp, group.old_log_probs[i], diag);
            let clipped_w = w.clamp(1.0 - cfg.eps_clip, 1.0 + cfg.eps_clip);
            let surrogate = (w * advantage).min(clipped_w * advantage);
            // The unclipped branch carries gradient w*A*∇logπ; when the
            // clipped branch is strictly smaller the ratio is out of range
            // on the wrong side and the term is constant in θ.
            let clip_active = (advantage > 0.0 && w > 1.0 + cfg.eps_clip)
                || (advantage < 0.0 && w < 1.0 - cfg.eps_clip);
            let surrogate_coef = if clip_active { 0.0 } else { w * advantage };

            let kl = kl_penalty(cur_lp, group.ref_log_probs[i], diag);
            objective += scale * (surrogate - cfg.beta * kl.value);
            let coef = scale * (surrogate_coef - cfg.beta * kl.grad_cur);
            if coef != 0.0 {
                for (g, d) in grad.iter_mut().zip(&response_grad) {
                    *g += coef * d;
                }
            }
        }
    }
    Ok((objective, grad))
}

/// Mean per-response KL value of the current parameters against the
/// reference, over all groups.
pub fn mean_kl(groups: &[GroupRollout]) -> f64 {
    let mut throwaway = RatioDiagnostics::default();
    let mut total = 0.0;
    let mut count = 0usize;
    for group in groups {
        for (&cur, &ref_lp) in group.cur_log_probs.iter().zip(&group.ref_log_probs) {
            total += kl_penalty(cur, ref_lp, &mut throwaway).value;
            count += 1;
        }
    }
    total / count.max(1) as f64
}

/// One line of the RL metrics stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlStepRecord {
    pub step: usize,
    pub mean_total_reward: f64,
    pub mean_r_fmt: f64,
    pub mean_r_acc: f64,
    pub mean_kl: f64,
    pub objective: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_score: Option<f64>,
}

#[derive(Debug)]
pub struct TrainResult {
    pub params: PolicyParams,
    pub metrics: Vec<RlStepRecord>,
    pub diagnostics: RatioDiagnostics,
}

/// The outer RL loop. The reference policy is the entry checkpoint, frozen
/// for the whole run. Per step: draw prompts, sample groups from the
/// current policy, then run `mu` inner ascent updates with old log-probs
/// frozen. Every [`EVAL_EVERY`] steps the held-out slice is scored by
/// greedy decoding. Aborts on a non-finite objective.
pub fn train(
    policy: &dyn Policy,
    mut params: PolicyParams,
    prompts: &[SyntheticSample],
    held_out: &[SyntheticSample],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&RlStepRecord, &PolicyParams),
) -> Result<TrainResult, TrainError> {
    cfg.validate()?;
    if prompts.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let ref_params = params.clone();
    let mut diag = RatioDiagnostics::default();
    let mut metrics = Vec::with_capacity(cfg.steps);

    for step in 1..=cfg.steps {
        let mut prompt_rng = substream(cfg.seed, &[tags::RL_PROMPTS, step as u64]);
        let mut groups = Vec::with_capacity(cfg.batch_prompts);
        for prompt_index in 0..cfg.batch_prompts {
            use rand::Rng;
            let chosen = prompt_rng.random_range(0..prompts.len());
            groups.push(sample_group(
                policy,
                &params,
                &ref_params,
                &prompts[chosen],
                cfg,
                step as u64,
                prompt_index as u64,
            )?);
        }

        let mut step_record = None;
        for inner in 0..cfg.mu {
            let (objective, grad) = grpo_objective(policy, &params, &mut groups, cfg, &mut diag)?;
            if !objective.is_finite() {
                return Err(TrainError::NonFiniteObjective { step });
            }
            if inner == 0 {
                let count = (groups.len() * cfg.group_size) as f64;
                let sum = |f: fn(&RewardBreakdown) -> f64| {
                    groups
                        .iter()
                        .flat_map(|g| g.rewards.iter().map(f))
                        .sum::<f64>()
                        / count
                };
                let eval_score = if step % EVAL_EVERY == 0 && !held_out.is_empty() {
                    Some(held_out_score(policy, &params, held_out)?)
                } else {
                    None
                };
                step_record = Some(RlStepRecord {
                    step,
                    mean_total_reward: sum(|r| r.total),
                    mean_r_fmt: sum(|r| r.fmt),
                    mean_r_acc: sum(|r| r.acc),
                    mean_kl: mean_kl(&groups),
                    objective,
                    eval_score,
                });
            }
            for (p, g) in params.values.iter_mut().zip(&grad) {
                *p += cfg.lr * g;
            }
        }
        let record = step_record.expect("mu >= 1 guarantees one inner update");
        on_step(&record, &params);
        metrics.push(record);
    }

    Ok(TrainResult {
        params,
        metrics,
        diagnostics: diag,
    })
}

/// Held-out overall score (0-100) by greedy decoding.
pub fn held_out_score(
    policy: &dyn Policy,
    params: &PolicyParams,
    samples: &[SyntheticSample],
) -> Result<f64, TrainError> {
    let judgments = crate::eval::evaluate(policy, params, samples)
        .map_err(|e| TrainError::Eval(e.to_string()))?;
    Ok(crate::eval::overall_score(&judgments).unwrap_or(0.0))
}
