//! Command-line behaviour: stage ordering, reruns, config errors and locking.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use rag_selftrain::cli::{self, Cli, CliError};

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

/// A scratch workspace holding the fixture corpus, items and config.
fn workspace(edit: impl FnOnce(String) -> String) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    for f in ["corpus.jsonl", "eval_items.jsonl"] {
        fs::copy(Path::new(FIXTURES).join(f), dir.path().join(f)).unwrap();
    }
    let toml = fs::read_to_string(Path::new(FIXTURES).join("run.toml")).unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, edit(toml)).unwrap();
    (dir, config)
}

fn run(config: &Path, args: &[&str]) -> Result<(), CliError> {
    let mut argv = vec!["rag-selftrain", "--config", config.to_str().unwrap()];
    argv.extend_from_slice(args);
    cli::run(Cli::try_parse_from(argv).unwrap())
}

fn exit_code(config: &Path, args: &[&str]) -> i32 {
    let mut argv = vec!["rag-selftrain", "--config", config.to_str().unwrap()];
    argv.extend_from_slice(args);
    cli::main_with_args(argv)
}

#[test]
fn synthesize_before_index_names_the_missing_command() {
    let (_dir, config) = workspace(|t| t);
    run(&config, &["ingest"]).unwrap();
    let err = run(&config, &["synthesize"]).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    let msg = err.to_string();
    assert!(msg.contains("run `index` first"), "{msg}");
}

#[test]
fn rerunning_blend_is_byte_identical() {
    let (dir, config) = workspace(|t| t);
    for cmd in ["ingest", "index", "synthesize", "blend"] {
        run(&config, &[cmd]).unwrap();
    }
    let records = dir.path().join("out/blend/records.jsonl");
    let first = fs::read(&records).unwrap();
    run(&config, &["blend"]).unwrap();
    assert_eq!(fs::read(&records).unwrap(), first);
    assert!(!dir.path().join("out/.lock").exists());
}

#[test]
fn seed_override_changes_the_blend_order() {
    let (dir, config) = workspace(|t| t);
    for cmd in ["ingest", "index", "synthesize", "blend"] {
        run(&config, &[cmd]).unwrap();
    }
    let records = dir.path().join("out/blend/records.jsonl");
    let base = fs::read(&records).unwrap();
    for cmd in ["synthesize", "blend"] {
        run(&config, &["--seed", "99", cmd]).unwrap();
    }
    assert_ne!(fs::read(&records).unwrap(), base);
    // The upstream synth stage now carries seed 99, so the plain config is stale.
    let msg = run(&config, &["blend"]).unwrap_err().to_string();
    assert!(msg.contains("different configuration"), "{msg}");
}

#[test]
fn changed_chunking_invalidates_downstream_stages() {
    let (_dir, config) = workspace(|t| t);
    run(&config, &["ingest"]).unwrap();
    run(&config, &["index"]).unwrap();
    let text = fs::read_to_string(&config)
        .unwrap()
        .replace("window = 56\nstride = 56", "window = 40\nstride = 40");
    fs::write(&config, text).unwrap();
    let err = run(&config, &["synthesize"]).unwrap_err();
    let msg = err.to_string();
    assert!(
        msg.contains("corpus artifacts") || msg.contains("index artifacts"),
        "{msg}"
    );
    assert!(msg.contains("rerun"), "{msg}");
}

#[test]
fn config_problems_exit_with_2() {
    let (_dir, typo) = workspace(|t| t.replace("[blend]\ntotal", "[blend]\ntotl"));
    assert_eq!(exit_code(&typo, &["ingest"]), 2);

    let (_dir, secret) =
        workspace(|t| t.replace("kind = \"mock\"", "kind = \"mock\"\napi_key = \"sk-x\""));
    assert_eq!(exit_code(&secret, &["ingest"]), 2);

    let (_dir, missing) = workspace(|t| t.replace("\"corpus.jsonl\"", "\"nowhere.jsonl\""));
    assert_eq!(exit_code(&missing, &["ingest"]), 2);

    let dir = tempfile::tempdir().unwrap();
    assert_eq!(exit_code(&dir.path().join("absent.toml"), &["ingest"]), 2);
}

#[test]
fn remote_backend_without_token_is_a_config_error() {
    let (_dir, config) = workspace(|t| {
        t.replace(
            "kind = \"mock\"",
            "kind = \"remote\"\nurl = \"http://127.0.0.1:9/v1/chat/completions\"\nmodel = \"m\"\napi_key_env = \"RAG_SELFTRAIN_TEST_UNSET_TOKEN\"",
        )
    });
    run(&config, &["ingest"]).unwrap();
    run(&config, &["index"]).unwrap();
    let err = run(&config, &["synthesize"]).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
    assert!(
        err.to_string().contains("RAG_SELFTRAIN_TEST_UNSET_TOKEN"),
        "{err}"
    );
}

#[test]
fn held_lock_blocks_commands_and_is_left_alone() {
    let (dir, config) = workspace(|t| t);
    let out = dir.path().join("out");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".lock"), "4242\n").unwrap();
    let err = run(&config, &["ingest"]).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains(".lock"), "{err}");
    assert!(out.join(".lock").exists());

    fs::remove_file(out.join(".lock")).unwrap();
    run(&config, &["ingest"]).unwrap();
    assert!(!out.join(".lock").exists());
}

#[test]
fn evaluate_writes_report_and_summary() {
    let (dir, config) = workspace(|t| t);
    for cmd in ["ingest", "index", "evaluate"] {
        run(&config, &[cmd]).unwrap();
    }
    let eval = dir.path().join("out/eval");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["n"], 25);
    assert!(report["external"]["mauve"].is_null());
    let summary = fs::read_to_string(eval.join("summary.txt")).unwrap();
    assert!(summary.contains("rouge_l"), "{summary}");
    run(&config, &["stats"]).unwrap();
}
