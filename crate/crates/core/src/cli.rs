//! Command implementations behind the binary: data generation, cold-start
//! SFT, RL training, evaluation, and A/B comparison. Every command resolves
//! a config (file plus dotted-path overrides), acquires a fresh write-once
//! run directory, and freezes the resolved config next to its outputs.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::env::{load_dataset, Dataset, EnvError, Split};
use crate::eval::{compare_report, evaluate, render_report, EvalError, EvalReport, JudgmentRecord};
use crate::grpo::{train, TrainError};
use crate::policy::{
    load_params, policy_for_layout, save_params, CheckpointError, Policy, PolicyParams,
};
use crate::sft::{
    build_sft_examples, load_sft_file, sft_train, write_sft_file, SftError, SftHyperparams,
};
use crate::textio::{file_checksum, LineWriter, RunDir, RunDirError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] EnvError),
    #[error(transparent)]
    Sft(#[from] SftError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    RunDir(#[from] RunDirError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    State(String),
}

impl CliError {
    /// Short category printed on the exit line.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Sft(_) => "sft",
            CliError::Train(_) => "train",
            CliError::Eval(_) => "eval",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::RunDir(_) => "run-dir",
            CliError::Io { .. } => "io",
            CliError::State(_) => "state",
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn load_split(data_dir: &Path, split: Split) -> Result<Dataset, CliError> {
    Ok(load_dataset(
        &data_dir.join(format!("{}.jsonl", split.name())),
    )?)
}

/// Generates the three split files. Returns (train, test, explore) counts.
pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<[usize; 3], CliError> {
    let run = RunDir::create(out)?;
    let counts = crate::env::generate_dataset(&cfg.env.gen, &cfg.env.sizes, cfg.seed, run.path())?;
    cfg.save(&run.file("config.toml"))?;
    Ok(counts)
}

pub struct SftOutcome {
    pub checkpoint: PathBuf,
    pub final_loss: Option<f64>,
}

/// Cold-start training over the configured phase schedule. Each phase's
/// dataset is written out and read back through the supervised-file format,
/// and metrics rows are tagged with the phase id. `init` resumes from a
/// checkpoint, continuing epoch numbering at `epoch_offset`.
pub fn cmd_sft(
    cfg: &RunConfig,
    data_dir: &Path,
    out: &Path,
    init: Option<&Path>,
    epoch_offset: usize,
) -> Result<SftOutcome, CliError> {
    let run = RunDir::create(out)?;
    let dataset = load_split(data_dir, Split::Train)?;
    let layout = cfg.policy.layout(dataset.feature_dim());
    let policy = policy_for_layout(layout);
    let mut params = match init {
        Some(path) => checked_params(load_params(path)?, &*policy)?,
        None => policy.init_params(cfg.seed),
    };

    let hp = SftHyperparams {
        lr: cfg.sft.lr,
        batch_size: cfg.sft.batch_size,
        momentum: cfg.sft.momentum,
    };
    let mut metrics = LineWriter::create(&run.file("metrics.jsonl"))
        .map_err(io_err(&run.file("metrics.jsonl")))?;
    let mut offset = epoch_offset;
    let mut final_loss = None;
    for (index, phase) in cfg.sft.phases.iter().enumerate() {
        let take = ((phase.fraction * dataset.samples.len() as f64).ceil() as usize)
            .min(dataset.samples.len());
        let slice = &dataset.samples[..take];
        let examples = build_sft_examples(&layout, slice, cfg.sft.target_kind(phase), cfg.seed)?;
        let file = run.file(&format!("sft_phase{}.jsonl", index + 1));
        write_sft_file(&file, &examples)?;
        let examples = load_sft_file(&file, &layout)?;
        params = sft_train(
            &*policy,
            params,
            &examples,
            &hp,
            phase.epochs,
            cfg.seed,
            index + 1,
            offset,
            |record| {
                final_loss = Some(record.loss);
                let line = serde_json::to_string(record).expect("record serializes");
                metrics.write_line(&line).expect("metrics stream writable");
            },
        )?;
        offset += phase.epochs;
    }
    metrics
        .finish()
        .map_err(io_err(&run.file("metrics.jsonl")))?;

    let checkpoint = run.file("checkpoint.txt");
    save_params(&checkpoint, &params)?;
    cfg.save(&run.file("config.toml"))?;
    Ok(SftOutcome {
        checkpoint,
        final_loss,
    })
}

pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub steps: usize,
    pub final_eval_score: Option<f64>,
    pub ratio_clamp_events: u64,
}

/// RL training. A cold-start checkpoint is required; `allow_raw` overrides
/// that precondition and starts from fresh parameters (with a warning),
/// which is expected to fail to learn.
pub fn cmd_train(
    cfg: &RunConfig,
    data_dir: &Path,
    out: &Path,
    init: Option<&Path>,
    allow_raw: bool,
) -> Result<TrainOutcome, CliError> {
    let run = RunDir::create(out)?;
    let train_split = load_split(data_dir, Split::Train)?;
    let held_out = load_split(data_dir, Split::Test)?;
    let layout = cfg.policy.layout(train_split.feature_dim());
    let policy = policy_for_layout(layout);
    let params =
        match init {
            Some(path) => checked_params(load_params(path)?, &*policy)?,
            None if allow_raw => {
                eprintln!(
                    "warning: starting RL from raw parameters; without a cold start the policy is \
                 not expected to learn"
                );
                policy.init_params(cfg.seed)
            }
            None => return Err(CliError::State(
                "RL requires a cold-start checkpoint (--init); pass --allow-raw-init to override"
                    .into(),
            )),
        };

    let train_cfg = cfg.rl.train_config(cfg.seed, cfg.sft.total_epochs());
    let metrics_path = run.file("metrics.jsonl");
    let mut metrics = LineWriter::create(&metrics_path).map_err(io_err(&metrics_path))?;
    let every = cfg.io.checkpoint_every;
    let result = train(
        &*policy,
        params,
        &train_split.samples,
        &held_out.samples,
        &train_cfg,
        |record, step_params| {
            let line = serde_json::to_string(record).expect("record serializes");
            metrics.write_line(&line).expect("metrics stream writable");
            if every > 0 && record.step % every == 0 && record.step < train_cfg.steps {
                let path = run.file(&format!("checkpoint_step{}.txt", record.step));
                save_params(&path, step_params).expect("periodic checkpoint writable");
            }
        },
    );
    let result = match result {
        Ok(result) => result,
        Err(err) => {
            if let TrainError::NonFiniteObjective { step } = &err {
                let _ = metrics.write_line(&format!(
                    "{{\"step\":{step},\"error\":\"non-finite objective\"}}"
                ));
                let _ = metrics.finish();
            }
            return Err(err.into());
        }
    };
    metrics.finish().map_err(io_err(&metrics_path))?;

    let checkpoint = run.file("checkpoint.txt");
    save_params(&checkpoint, &result.params)?;
    cfg.save(&run.file("config.toml"))?;
    Ok(TrainOutcome {
        checkpoint,
        steps: result.metrics.len(),
        final_eval_score: result.metrics.iter().rev().find_map(|r| r.eval_score),
        ratio_clamp_events: result.diagnostics.clamp_events,
    })
}

pub struct EvalOutcome {
    pub report: EvalReport,
    pub report_text: String,
    pub report_path: PathBuf,
}

/// Greedy-decodes a checkpoint over the labeled test split, dumps one
/// judgment per line, and writes the report in both machine-readable and
/// plain-text form.
pub fn cmd_eval(
    cfg: &RunConfig,
    data_dir: &Path,
    checkpoint: &Path,
    out: &Path,
) -> Result<EvalOutcome, CliError> {
    let run = RunDir::create(out)?;
    let test_path = cfg
        .eval
        .test_file
        .clone()
        .unwrap_or_else(|| data_dir.join("test.jsonl"));
    let dataset = load_dataset(&test_path)?;
    let params = load_params(checkpoint)?;
    let policy = policy_for_layout(params.layout);
    if params.layout.feature_dim() != dataset.feature_dim() {
        return Err(CliError::State(format!(
            "checkpoint expects {} features but the test file provides {}",
            params.layout.feature_dim(),
            dataset.feature_dim()
        )));
    }

    let judgments = evaluate(&*policy, &params, &dataset.samples)?;
    let dump_path = run.file("judgments.jsonl");
    let mut dump = LineWriter::create(&dump_path).map_err(io_err(&dump_path))?;
    for judgment in &judgments {
        let record = JudgmentRecord::from(judgment);
        dump.write_line(&serde_json::to_string(&record).expect("record serializes"))
            .map_err(io_err(&dump_path))?;
    }
    dump.finish().map_err(io_err(&dump_path))?;

    let checksum = file_checksum(&test_path).map_err(io_err(&test_path))?;
    let report = EvalReport::from_judgments(&judgments, checksum)?;
    let report_path = run.file("report.json");
    fs::write(
        &report_path,
        serde_json::to_string(&report).expect("report serializes"),
    )
    .map_err(io_err(&report_path))?;
    let report_text = render_report(&report);
    fs::write(run.file("report.txt"), &report_text).map_err(io_err(&run.file("report.txt")))?;
    cfg.save(&run.file("config.toml"))?;
    Ok(EvalOutcome {
        report,
        report_text,
        report_path,
    })
}

/// Loads two evaluation runs and renders the comparison table. Refuses runs
/// that were not evaluated on byte-identical test files.
pub fn cmd_report(run_a: &Path, run_b: &Path, out: Option<&Path>) -> Result<String, CliError> {
    let load = |dir: &Path| -> Result<EvalReport, CliError> {
        let path = dir.join("report.json");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::State(format!("{}: bad report: {e}", path.display())))
    };
    let a = load(run_a)?;
    let b = load(run_b)?;
    let name = |dir: &Path| {
        dir.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into())
    };
    let table = compare_report(&name(run_a), &a, &name(run_b), &b)?;
    if let Some(path) = out {
        // Write-once, like every other artifact.
        let mut options = fs::OpenOptions::new();
        options.write(true).create_new(true);
        use std::io::Write;
        let mut file = options.open(path).map_err(io_err(path))?;
        file.write_all(table.as_bytes()).map_err(io_err(path))?;
    }
    Ok(table)
}

fn checked_params(params: PolicyParams, policy: &dyn Policy) -> Result<PolicyParams, CliError> {
    if params.layout != policy.layout() {
        return Err(CliError::State(format!(
            "checkpoint layout {:?} does not match the configured policy {:?}",
            params.layout,
            policy.layout()
        )));
    }
    Ok(params)
}
