use std::path::Path;
use std::process::{Command, Output};

fn fixture_copy() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic");
    for name in ["config.json", "sentiment.jsonl", "suicide.csv", "personality.jsonl"] {
        std::fs::copy(src.join(name), tmp.path().join(name)).unwrap();
    }
    tmp
}

fn affectfuse(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_affectfuse")).args(args).current_dir(dir).env("RUST_LOG", "info").output().unwrap()
}

fn set_config(dir: &Path, edit: impl FnOnce(&mut serde_json::Value)) {
    let path = dir.join("config.json");
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    edit(&mut v);
    std::fs::write(path, serde_json::to_vec(&v).unwrap()).unwrap();
}

#[test]
fn missing_embedding_file_is_a_config_error_naming_the_path() {
    let tmp = fixture_copy();
    let out = affectfuse(tmp.path(), &["featurize", "--config", "config.json", "--mock-llm"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("embeddings/sentiment.text.emb"), "{stderr}");
}

#[test]
fn invalid_config_exits_with_code_2() {
    let tmp = fixture_copy();
    set_config(tmp.path(), |v| v["plans"] = serde_json::json!(["late:text+emb"]));
    let out = affectfuse(tmp.path(), &["run", "--config", "config.json", "--mock-llm", "--mock-embeddings"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stage_failure_exits_with_code_1_and_names_the_stage() {
    let tmp = fixture_copy();
    std::fs::write(tmp.path().join("sentiment.jsonl"), "{\"id\": \"a\", \"text\": \"x\"\n").unwrap();
    let out = affectfuse(tmp.path(), &["collect", "--config", "config.json", "--mock-llm"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("collect stage failed"));
}

#[test]
fn rerun_logs_cached_and_earlier_stage_reuses_outputs() {
    let tmp = fixture_copy();
    set_config(tmp.path(), |v| v["plans"] = serde_json::json!(["text+bow", "late:text+bow&chat+bow"]));
    let args = ["run", "--config", "config.json", "--mock-llm", "--mock-embeddings", "--jobs", "2"];
    assert!(affectfuse(tmp.path(), &args).status.success());
    let again = affectfuse(tmp.path(), &args);
    assert!(again.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&again.stdout).unwrap();
    assert_eq!(summary["steps_run"], serde_json::json!([]));
    assert_eq!(summary["llm_requests"], 0);
    assert!(String::from_utf8_lossy(&again.stderr).contains("cached"));

    // a changed search space reruns tuning onwards but not collection or features
    set_config(tmp.path(), |v| v["search"]["n_samples"] = serde_json::json!(2));
    let changed = affectfuse(tmp.path(), &args);
    let summary: serde_json::Value = serde_json::from_slice(&changed.stdout).unwrap();
    let steps: Vec<&str> = summary["steps_run"].as_array().unwrap().iter().map(|s| s.as_str().unwrap()).collect();
    assert!(steps.iter().all(|s| !s.starts_with("collect") && !s.starts_with("featurize")), "{steps:?}");
    assert!(steps.contains(&"tune sentiment text+bow"));
    assert!(steps.contains(&"report"));
}

#[test]
fn cache_compact_reports_each_cache() {
    let tmp = fixture_copy();
    assert!(affectfuse(tmp.path(), &["collect", "--config", "config.json", "--mock-llm"]).status.success());
    let out = affectfuse(tmp.path(), &["cache", "compact", "--config", "config.json"]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 7, "{stdout}");
    assert!(stdout.lines().all(|l| l.ends_with("dropped 0 duplicate lines")));
}
