//! The binary surface: flag/file/default precedence, the resolved-config
//! dump, fixture training, and exit codes.

use std::path::Path;
use std::process::Command;

fn rco() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rco"))
}

fn stdout_of(output: std::process::Output) -> String {
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8(output.stdout).unwrap()
}

#[test]
fn explain_config_shows_defaults_and_precedence() {
    let defaults = stdout_of(rco().arg("explain-config").output().unwrap());
    assert!(defaults.contains("n_critiques = 4"));
    assert!(defaults.contains("m_refinements = 5"));
    assert!(defaults.contains("beta = 0.1"));
    assert!(defaults.contains("judge_mock_behavior = consistent"));

    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("rco.conf");
    std::fs::write(&config_path, "beta = 0.2\nseed = 9\n").unwrap();

    // Flags override the file, the file overrides defaults.
    let resolved = stdout_of(
        rco()
            .args(["explain-config", "--config"])
            .arg(&config_path)
            .args(["--beta", "0.5"])
            .output()
            .unwrap(),
    );
    assert!(resolved.contains("beta = 0.5"));
    assert!(resolved.contains("seed = 9"));

    // Equal inputs resolve to an equal hash.
    let hash_line = |text: &str| {
        text.lines()
            .find(|l| l.starts_with("config_hash"))
            .unwrap()
            .to_string()
    };
    let again = stdout_of(
        rco()
            .args(["explain-config", "--config"])
            .arg(&config_path)
            .args(["--beta", "0.5"])
            .output()
            .unwrap(),
    );
    assert_eq!(hash_line(&resolved), hash_line(&again));
    assert_ne!(hash_line(&resolved), hash_line(&defaults));
}

#[test]
fn conflicting_flag_values_are_rejected() {
    let output = rco()
        .args(["explain-config", "--beta", "0.5", "--beta", "0.7"])
        .output()
        .unwrap();
    assert!(!output.status.success());
}

#[test]
fn train_toy_fixture_converges_to_the_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/k4.json");
    let out = dir.path().join("toy");
    let output = rco()
        .args(["train-toy", "--fixture"])
        .arg(&fixture)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let report = std::fs::read_to_string(out.join("convergence_report.jsonl")).unwrap();
    let row: serde_json::Value = serde_json::from_str(report.lines().next().unwrap()).unwrap();
    assert_eq!(row["converged"], true);
    assert!(row["kl_to_closed_form"].as_f64().unwrap() < 1e-6);
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let prompts = dir.path().join("prompts.jsonl");
    assert!(rco()
        .args(["write-fixture", "--out"])
        .arg(&prompts)
        .output()
        .unwrap()
        .status
        .success());

    // Configuration violation: exit 2.
    let bad_config = rco()
        .args(["collect-responses", "--records"])
        .arg(&prompts)
        .arg("--out")
        .arg(dir.path().join("a"))
        .args(["--beta", "0"])
        .output()
        .unwrap();
    assert_eq!(bad_config.status.code(), Some(2));

    // Missing endpoint variable for an http backend: exit 2.
    let missing_env = rco()
        .args(["collect-responses", "--records"])
        .arg(&prompts)
        .arg("--out")
        .arg(dir.path().join("b"))
        .args(["--actor-backend", "http"])
        .env_remove("RCO_ACTOR_URL")
        .output()
        .unwrap();
    assert_eq!(missing_env.status.code(), Some(2));

    // Unreachable endpoint: exit 3 with per-record failures reported.
    let unreachable = rco()
        .args(["collect-responses", "--records"])
        .arg(&prompts)
        .arg("--out")
        .arg(dir.path().join("c"))
        .args([
            "--actor-backend",
            "http",
            "--retry-attempts",
            "2",
            "--retry-base-ms",
            "1",
            "--parallelism",
            "8",
        ])
        .env("RCO_ACTOR_URL", "http://127.0.0.1:9/v1/chat/completions")
        .output()
        .unwrap();
    assert_eq!(unreachable.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&unreachable.stderr).contains("failed"));

    // Missing input file: exit 4.
    let missing_input = rco()
        .args(["reward", "--judgments"])
        .arg(dir.path().join("absent.jsonl"))
        .arg("--out")
        .arg(dir.path().join("d"))
        .output()
        .unwrap();
    assert_eq!(missing_input.status.code(), Some(4));
}

#[test]
fn reward_by_flags_produces_four_targets_per_prompt() {
    let dir = tempfile::tempdir().unwrap();
    let prompts = dir.path().join("prompts.jsonl");
    stdout_of(rco().args(["write-fixture", "--out"]).arg(&prompts).output().unwrap());

    let run = |args: &[&str]| {
        let output = rco().args(args).args(["--seed", "7"]).output().unwrap();
        assert!(
            output.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    };
    let path = |suffix: &str| dir.path().join(suffix).display().to_string();
    run(&[
        "collect-responses",
        "--records",
        &path("prompts.jsonl"),
        "--out",
        &path("responses"),
    ]);
    run(&[
        "critique",
        "--records",
        &path("prompts.jsonl"),
        "--responses",
        &path("responses/responses.jsonl"),
        "--out",
        &path("critiques"),
    ]);
    run(&[
        "refine",
        "--records",
        &path("prompts.jsonl"),
        "--responses",
        &path("responses/responses.jsonl"),
        "--critiques",
        &path("critiques/critiques.jsonl"),
        "--out",
        &path("refinements"),
    ]);
    run(&[
        "judge",
        "--records",
        &path("prompts.jsonl"),
        "--responses",
        &path("responses/responses.jsonl"),
        "--refinements",
        &path("refinements/refinements.jsonl"),
        "--out",
        &path("judgments"),
    ]);
    run(&[
        "reward",
        "--judgments",
        &path("judgments/judgments.jsonl"),
        "--out",
        &path("rewards"),
        "--beta",
        "0.1",
        "-N",
        "4",
    ]);

    let rewards = std::fs::read_to_string(dir.path().join("rewards/rewards.jsonl")).unwrap();
    let mut per_prompt = std::collections::BTreeMap::<String, usize>::new();
    for line in rewards.lines() {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        *per_prompt
            .entry(row["prompt_id"].as_str().unwrap().to_string())
            .or_default() += 1;
    }
    assert_eq!(per_prompt.len(), 20);
    assert!(per_prompt.values().all(|n| *n == 4));
}
