//! End-to-end command pipeline: gen-data → sft → train → eval → report,
//! exercised through the real binary with a small config.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dpa_grpo::config::RunConfig;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dpa-grpo"))
}

fn run_ok(args: &[&str]) -> Output {
    let output = binary().args(args).output().expect("binary runs");
    assert!(
        output.status.success(),
        "command {:?} failed:\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn run_err(args: &[&str]) -> Output {
    let output = binary().args(args).output().expect("binary runs");
    assert!(
        !output.status.success(),
        "command {:?} unexpectedly succeeded",
        args
    );
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("error["),
        "missing categorized error line: {stderr}"
    );
    output
}

/// Small, fast categorical-policy config.
fn write_config(dir: &Path) -> PathBuf {
    let mut cfg = RunConfig::default();
    cfg.policy.kind = dpa_grpo::config::PolicyKind::Categorical;
    cfg.env.sizes = dpa_grpo::env::SplitSizes {
        train: 60,
        test: 40,
        explore: 8,
    };
    cfg.sft.phases = vec![
        dpa_grpo::config::SftPhase {
            targets: dpa_grpo::config::PhaseTargets::Weak,
            epochs: 4,
            fraction: 1.0,
        },
        dpa_grpo::config::SftPhase {
            targets: dpa_grpo::config::PhaseTargets::AnswerDriven,
            epochs: 4,
            fraction: 0.5,
        },
    ];
    cfg.rl.steps = 20;
    cfg.rl.batch_prompts = 2;
    cfg.io.checkpoint_every = 10;
    let path = dir.join("config.toml");
    cfg.save(&path).unwrap();
    path
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn full_pipeline_runs_and_artifacts_line_up() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let data = tmp.path().join("data");
    let sft = tmp.path().join("sft");
    let rl_dpa = tmp.path().join("rl-dpa");
    let rl_bin = tmp.path().join("rl-binary");
    let eval_dpa = tmp.path().join("eval-dpa");
    let eval_bin = tmp.path().join("eval-binary");

    let out = run_ok(&[
        "gen-data",
        "--config",
        &path_str(&cfg),
        "--out",
        &path_str(&data),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("train=60 test=40 explore=8"), "{stdout}");
    for file in ["train.jsonl", "test.jsonl", "explore.jsonl", "config.toml"] {
        assert!(data.join(file).exists(), "missing {file}");
    }
    assert!(!data.join(".lock").exists(), "lock should be released");

    run_ok(&[
        "sft",
        "--config",
        &path_str(&cfg),
        "--data",
        &path_str(&data),
        "--out",
        &path_str(&sft),
    ]);
    let sft_ckpt = sft.join("checkpoint.txt");
    assert!(sft_ckpt.exists());
    assert!(sft.join("sft_phase1.jsonl").exists());
    assert!(sft.join("sft_phase2.jsonl").exists());
    // Metrics rows are tagged with phase ids and epochs run contiguously.
    let metrics = fs::read_to_string(sft.join("metrics.jsonl")).unwrap();
    let epochs: Vec<(u64, u64)> = metrics
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            (v["phase"].as_u64().unwrap(), v["epoch"].as_u64().unwrap())
        })
        .collect();
    assert_eq!(epochs.len(), 8);
    assert_eq!(epochs.first(), Some(&(1, 0)));
    assert_eq!(epochs.last(), Some(&(2, 7)));

    run_ok(&[
        "train",
        "--config",
        &path_str(&cfg),
        "--data",
        &path_str(&data),
        "--init",
        &path_str(&sft_ckpt),
        "--out",
        &path_str(&rl_dpa),
    ]);
    assert!(rl_dpa.join("checkpoint.txt").exists());
    assert!(rl_dpa.join("checkpoint_step10.txt").exists());
    let metrics = fs::read_to_string(rl_dpa.join("metrics.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> = metrics
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 20);
    // Held-out eval rows appear exactly every 10 steps.
    for row in &rows {
        let step = row["step"].as_u64().unwrap();
        assert_eq!(
            row.get("eval_score").is_some(),
            step % 10 == 0,
            "step {step}"
        );
    }

    run_ok(&[
        "train",
        "--config",
        &path_str(&cfg),
        "--set",
        "rl.reward_mode=binary",
        "--data",
        &path_str(&data),
        "--init",
        &path_str(&sft_ckpt),
        "--out",
        &path_str(&rl_bin),
    ]);
    let frozen = fs::read_to_string(rl_bin.join("config.toml")).unwrap();
    assert!(frozen.contains("reward_mode = \"binary\""), "{frozen}");

    run_ok(&[
        "eval",
        "--config",
        &path_str(&cfg),
        "--data",
        &path_str(&data),
        "--checkpoint",
        &path_str(&rl_dpa.join("checkpoint.txt")),
        "--out",
        &path_str(&eval_dpa),
    ]);
    let dump = fs::read_to_string(eval_dpa.join("judgments.jsonl")).unwrap();
    assert_eq!(dump.lines().count(), 40);
    assert!(eval_dpa.join("report.json").exists());
    assert!(eval_dpa.join("report.txt").exists());

    run_ok(&[
        "eval",
        "--config",
        &path_str(&cfg),
        "--data",
        &path_str(&data),
        "--checkpoint",
        &path_str(&rl_bin.join("checkpoint.txt")),
        "--out",
        &path_str(&eval_bin),
    ]);

    let out = run_ok(&[
        "report",
        "--run-a",
        &path_str(&eval_bin),
        "--run-b",
        &path_str(&eval_dpa),
    ]);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("Overall Score"), "{table}");
    assert!(
        table.contains("eval-binary") && table.contains("eval-dpa"),
        "{table}"
    );

    // Comparing a run with itself shows all-zero deltas.
    let out = run_ok(&[
        "report",
        "--run-a",
        &path_str(&eval_dpa),
        "--run-b",
        &path_str(&eval_dpa),
    ]);
    let table = String::from_utf8_lossy(&out.stdout);
    for line in table.lines().skip(3) {
        if !line.trim().is_empty() {
            assert!(
                line.trim_end().ends_with("+0.00") || line.trim_end().ends_with('-'),
                "{line}"
            );
        }
    }
}

#[test]
fn rerunning_gen_data_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let a = tmp.path().join("data-a");
    let b = tmp.path().join("data-b");
    run_ok(&[
        "gen-data",
        "--config",
        &path_str(&cfg),
        "--out",
        &path_str(&a),
    ]);
    run_ok(&[
        "gen-data",
        "--config",
        &path_str(&cfg),
        "--out",
        &path_str(&b),
    ]);
    for file in ["train.jsonl", "test.jsonl", "explore.jsonl", "config.toml"] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file} differs between identical runs"
        );
    }
}

#[test]
fn empty_explore_split_writes_header_only_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let data = tmp.path().join("data");
    run_ok(&[
        "gen-data",
        "--config",
        &path_str(&cfg),
        "--set",
        "env.sizes.explore=0",
        "--out",
        &path_str(&data),
    ]);
    let explore = fs::read_to_string(data.join("explore.jsonl")).unwrap();
    assert_eq!(explore.lines().count(), 1, "expected header record only");
    assert!(explore.starts_with("{\"version\":1,"));
}

#[test]
fn output_directories_are_write_once() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let data = tmp.path().join("data");
    run_ok(&[
        "gen-data",
        "--config",
        &path_str(&cfg),
        "--out",
        &path_str(&data),
    ]);
    let out = run_err(&[
        "gen-data",
        "--config",
        &path_str(&cfg),
        "--out",
        &path_str(&data),
    ]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error[run-dir]"), "{stderr}");
}

#[test]
fn train_requires_cold_start_unless_overridden() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let data = tmp.path().join("data");
    run_ok(&[
        "gen-data",
        "--config",
        &path_str(&cfg),
        "--out",
        &path_str(&data),
    ]);

    let out = run_err(&[
        "train",
        "--config",
        &path_str(&cfg),
        "--data",
        &path_str(&data),
        "--out",
        &path_str(&tmp.path().join("rl-missing")),
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[state]"));

    let out = run_ok(&[
        "train",
        "--config",
        &path_str(&cfg),
        "--data",
        &path_str(&data),
        "--out",
        &path_str(&tmp.path().join("rl-raw")),
        "--allow-raw-init",
    ]);
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("warning"),
        "raw init should warn"
    );
}

#[test]
fn eval_on_explore_split_fails_for_missing_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path());
    let data = tmp.path().join("data");
    run_ok(&[
        "gen-data",
        "--config",
        &path_str(&cfg_path),
        "--out",
        &path_str(&data),
    ]);
    run_ok(&[
        "sft",
        "--config",
        &path_str(&cfg_path),
        "--data",
        &path_str(&data),
        "--out",
        &path_str(&tmp.path().join("sft")),
    ]);

    let out = run_err(&[
        "eval",
        "--config",
        &path_str(&cfg_path),
        "--set",
        &format!("eval.test_file={}", path_str(&data.join("explore.jsonl"))),
        "--data",
        &path_str(&data),
        "--checkpoint",
        &path_str(&tmp.path().join("sft").join("checkpoint.txt")),
        "--out",
        &path_str(&tmp.path().join("eval-explore")),
    ]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("no label"), "{stderr}");
}

#[test]
fn report_refuses_mismatched_test_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path());
    let data_a = tmp.path().join("data-a");
    run_ok(&[
        "gen-data",
        "--config",
        &path_str(&cfg_path),
        "--out",
        &path_str(&data_a),
    ]);
    // Different seed → different test file bytes.
    let data_b = tmp.path().join("data-b");
    run_ok(&[
        "gen-data",
        "--config",
        &path_str(&cfg_path),
        "--set",
        "seed=43",
        "--out",
        &path_str(&data_b),
    ]);

    let sft = tmp.path().join("sft");
    run_ok(&[
        "sft",
        "--config",
        &path_str(&cfg_path),
        "--data",
        &path_str(&data_a),
        "--out",
        &path_str(&sft),
    ]);
    let ckpt = sft.join("checkpoint.txt");
    let eval_a = tmp.path().join("eval-a");
    let eval_b = tmp.path().join("eval-b");
    for (data, out) in [(&data_a, &eval_a), (&data_b, &eval_b)] {
        run_ok(&[
            "eval",
            "--config",
            &path_str(&cfg_path),
            "--data",
            &path_str(data),
            "--checkpoint",
            &path_str(&ckpt),
            "--out",
            &path_str(out),
        ]);
    }
    let out = run_err(&[
        "report",
        "--run-a",
        &path_str(&eval_a),
        "--run-b",
        &path_str(&eval_b),
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));
}

#[test]
fn sft_resume_continues_epoch_numbering() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path());
    let data = tmp.path().join("data");
    run_ok(&[
        "gen-data",
        "--config",
        &path_str(&cfg_path),
        "--out",
        &path_str(&data),
    ]);
    let first = tmp.path().join("sft-1");
    run_ok(&[
        "sft",
        "--config",
        &path_str(&cfg_path),
        "--data",
        &path_str(&data),
        "--out",
        &path_str(&first),
    ]);
    let resumed = tmp.path().join("sft-2");
    run_ok(&[
        "sft",
        "--config",
        &path_str(&cfg_path),
        "--data",
        &path_str(&data),
        "--out",
        &path_str(&resumed),
        "--init",
        &path_str(&first.join("checkpoint.txt")),
        "--epoch-offset",
        "8",
    ]);
    let metrics = fs::read_to_string(resumed.join("metrics.jsonl")).unwrap();
    let first_row: serde_json::Value =
        serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    assert_eq!(first_row["epoch"].as_u64(), Some(8));
}
