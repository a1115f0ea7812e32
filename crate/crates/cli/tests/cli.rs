use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use csm_cli::commands::{self, RunTarget};
use csm_cli::pipeline::{Run, StageRun};
use csm_cli::rundir::{read_jsonl, MERGE_OVERRIDE};
use csm_cli::CliError;
use csm_core::domain::{SummaryRecord, TopicCluster};
use csm_core::gateway::mock::PlantedCorpusSpec;
use csm_core::stages::{Stage, INGESTED_BACKEND};

fn small_spec() -> PlantedCorpusSpec {
    PlantedCorpusSpec {
        documents: 6,
        categories: 4,
        ..PlantedCorpusSpec::default()
    }
}

/// Planted inputs under `root/in`, returning the config path.
fn setup(root: &Path) -> PathBuf {
    commands::plant(&root.join("in"), &small_spec(), 2).unwrap()
}

fn edit_config(path: &Path, f: impl FnOnce(&mut serde_json::Value)) {
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    f(&mut v);
    fs::write(path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

fn approve(root: &Path, body: &str) {
    fs::write(root.join("runs/planted").join(MERGE_OVERRIDE), body).unwrap();
}

fn csm(root: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_csm"))
        .arg("--root")
        .arg(root)
        .args(args)
        .env_remove("CSM_CACHE_DIR")
        .output()
        .unwrap()
}

#[test]
fn init_writes_the_run_skeleton_and_refuses_to_clobber() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let run = commands::init(dir.path(), &cfg, false).unwrap();
    for f in ["config.snapshot.json", "corpus.jsonl", "manifest.json"] {
        assert!(run.file(f).is_file(), "{f}");
    }
    let err = commands::init(dir.path(), &cfg, false).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("--force"));
    commands::init(dir.path(), &cfg, true).unwrap();

    edit_config(&cfg, |v| v["corpus_path"] = "missing.jsonl".into());
    let err = commands::init(dir.path(), &cfg, true).unwrap_err();
    assert!(err.to_string().contains("missing.jsonl"), "{err}");
}

#[test]
fn snapshot_freezes_prompt_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    fs::write(
        dir.path().join("in/answer.txt"),
        "Document:\n{document}\n\nQuestion: {question}\nAnswer or say UNANSWERABLE.",
    )
    .unwrap();
    edit_config(&cfg, |v| v["prompts"] = serde_json::json!({"answer": "answer.txt"}));
    let run = commands::init(dir.path(), &cfg, false).unwrap();
    let snap = fs::read_to_string(run.file("config.snapshot.json")).unwrap();
    assert!(snap.contains("Answer or say UNANSWERABLE."));

    edit_config(&cfg, |v| v["prompts"] = serde_json::json!({"answer": "nope.txt"}));
    assert!(commands::init(dir.path(), &cfg, true).is_err());
}

#[test]
fn run_all_stops_at_the_review_gate_then_finishes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    commands::init(root, &setup(root), false).unwrap();

    let out = commands::run(root, "planted", RunTarget::All).unwrap();
    assert!(out.halted);
    let last = out.messages.last().unwrap();
    assert!(last.contains("review/merge_override.json"), "{last}");
    assert!(root.join("runs/planted/review/report.txt").is_file());

    let err = commands::run(root, "planted", RunTarget::Stage(Stage::ReviewApply)).unwrap_err();
    assert_eq!(err.exit_code(), 4);

    approve(root, "{}");
    let out = commands::run(root, "planted", RunTarget::All).unwrap();
    assert!(!out.halted);
    assert_eq!(out.messages.len(), Stage::ALL.len());
    assert!(root.join("runs/planted/report/summary.txt").is_file());

    let again = commands::run(root, "planted", RunTarget::All).unwrap();
    assert!(again.messages.iter().all(|m| m.ends_with("up to date")), "{:?}", again.messages);
    let run = Run::open(root, "planted").unwrap();
    assert_eq!(run.run_stage(Stage::Build).unwrap(), StageRun::UpToDate);
}

#[test]
fn entail_before_claims_is_a_dependency_error() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    commands::init(root, &setup(root), false).unwrap();
    commands::run(root, "planted", RunTarget::Stage(Stage::Summarize)).unwrap();

    let out = csm(root, &["run", "planted", "entail"]);
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("claims"), "{err}");

    let out = csm(root, &["run", "planted", "summarize"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("summarize: up to date"));

    let out = csm(root, &["run", "unknown-run", "all"]);
    assert_eq!(out.status.code(), Some(4));
    let out = csm(root, &["run", "planted", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn edited_upstream_outputs_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    commands::init(root, &setup(root), false).unwrap();
    commands::run(root, "planted", RunTarget::Stage(Stage::Summarize)).unwrap();
    let path = root.join("runs/planted/summaries.jsonl");
    let mut text = fs::read_to_string(&path).unwrap();
    text.push('\n');
    fs::write(&path, text).unwrap();

    let err = commands::run(root, "planted", RunTarget::Stage(Stage::Qgen)).unwrap_err();
    assert!(matches!(err, CliError::Dependency(_)));
    assert!(err.to_string().contains("outputs of summarize changed"), "{err}");

    commands::run(root, "planted", RunTarget::Stage(Stage::Summarize)).unwrap();
    commands::run(root, "planted", RunTarget::Stage(Stage::Qgen)).unwrap();
}

#[test]
fn new_review_decision_reruns_downstream_stages() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    commands::init(root, &setup(root), false).unwrap();
    commands::run(root, "planted", RunTarget::All).unwrap();
    approve(root, "{}");
    commands::run(root, "planted", RunTarget::All).unwrap();
    let before: Vec<TopicCluster> = read_jsonl(&root.join("runs/planted/topics.jsonl")).unwrap();

    approve(root, r#"{"merge_groups": [["T03", "T04"]]}"#);
    let err = commands::run(root, "planted", RunTarget::Stage(Stage::Answer)).unwrap_err();
    assert!(err.to_string().contains("review-apply is stale"), "{err}");

    let out = commands::run(root, "planted", RunTarget::All).unwrap();
    assert!(out.messages.contains(&"review-apply: done".to_string()));
    assert!(out.messages.contains(&"report: done".to_string()));
    let after: Vec<TopicCluster> = read_jsonl(&root.join("runs/planted/topics.jsonl")).unwrap();
    assert_eq!(after.len(), before.len() - 1);
    assert!(after.iter().any(|t| t.merged_from.contains("T04")));

    approve(root, r#"{"merge_groups": [["T03", "T99"]]}"#);
    let err = commands::run(root, "planted", RunTarget::Stage(Stage::ReviewApply)).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("T99"));
}

#[test]
fn ingested_summaries_complete_the_probe() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = setup(root);
    edit_config(&cfg, |v| v["roles"]["summarizers"] = serde_json::json!([]));
    commands::init(root, &cfg, false).unwrap();

    let err = commands::run(root, "planted", RunTarget::Stage(Stage::Summarize)).unwrap_err();
    assert_eq!(err.exit_code(), 2);

    let words = |n: usize| vec!["word"; n].join(" ");
    let rows = [
        serde_json::json!({"doc_id": "doc000", "text": words(47)}),
        serde_json::json!({"doc_id": "doc000", "summary": words(70)}),
        serde_json::json!({"doc_id": "doc000", "text": words(11)}),
        serde_json::json!({"doc_id": "doc001", "text": words(50)}),
        serde_json::json!({"doc_id": "nobody", "text": words(20)}),
    ];
    let file = root.join("summaries_in.jsonl");
    fs::write(&file, rows.iter().map(|r| format!("{r}\n")).collect::<String>()).unwrap();
    let messages = commands::ingest(root, "planted", &file, 0.10).unwrap();
    assert!(messages[0].starts_with("3 summaries accepted; skipped 1 out of tolerance, 1 for unknown"), "{messages:?}");

    let s: Vec<SummaryRecord> = read_jsonl(&root.join("runs/planted/summaries.jsonl")).unwrap();
    let cells: Vec<(String, u32)> = s.iter().map(|r| (r.doc_id.clone(), r.budget.words())).collect();
    assert_eq!(cells, vec![("doc000".into(), 10), ("doc000".into(), 50), ("doc001".into(), 50)]);
    assert!(s.iter().all(|r| r.backend_id == INGESTED_BACKEND && r.replicate == 0));
    let status = commands::status(root, "planted").unwrap();
    assert!(status[0].ends_with("up to date"), "{status:?}");

    let empty = root.join("none.jsonl");
    fs::write(&empty, format!("{}\n", serde_json::json!({"doc_id": "doc000", "text": words(70)}))).unwrap();
    assert_eq!(commands::ingest(root, "planted", &empty, 0.10).unwrap_err().exit_code(), 2);
}

#[test]
fn temperature_sweep_on_the_mock() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    commands::init(root, &setup(root), false).unwrap();
    commands::run(root, "planted", RunTarget::All).unwrap();

    let err = commands::sweep_temperature(root, "planted", &[0.0]).unwrap_err();
    assert_eq!(err.exit_code(), 4, "claims must exist first");
    approve(root, "{}");
    commands::run(root, "planted", RunTarget::Stage(Stage::ReviewApply)).unwrap();
    commands::run(root, "planted", RunTarget::Stage(Stage::Answer)).unwrap();
    commands::run(root, "planted", RunTarget::Stage(Stage::Claims)).unwrap();

    let lines = commands::sweep_temperature(root, "planted", &[0.0]).unwrap();
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0].row.ic, 1.0);
    assert_eq!(lines[0].row.length_mad, 0.0);
    let table = root.join("runs/planted/sweep/temperature_sweep.csv");
    let first = fs::read(&table).unwrap();
    commands::sweep_temperature(root, "planted", &[0.0]).unwrap();
    assert_eq!(fs::read(&table).unwrap(), first);

    let err = commands::sweep_temperature(root, "planted", &[]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let out = csm(root, &["sweep-temp", "planted", "-t"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cache_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cache = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = setup(root);
    let out = csm(root, &["init", "-c", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = Command::new(env!("CARGO_BIN_EXE_csm"))
        .arg("--root")
        .arg(root)
        .args(["run", "planted", "summarize"])
        .env("CSM_CACHE_DIR", cache.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_dir(cache.path()).unwrap().next().is_some());
    assert!(!root.join("cache").exists());
}

#[test]
fn a_held_lock_blocks_other_writers() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let run = commands::init(root, &setup(root), false).unwrap();
    let guard = run.lock().unwrap();
    let err = commands::run(root, "planted", RunTarget::Stage(Stage::Summarize)).unwrap_err();
    assert!(err.to_string().contains("locked"), "{err}");
    drop(guard);
    commands::run(root, "planted", RunTarget::Stage(Stage::Summarize)).unwrap();
}

#[test]
fn human_ratings_add_alignment_rows() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    commands::init(root, &setup(root), false).unwrap();
    commands::run(root, "planted", RunTarget::All).unwrap();
    approve(root, "{}");
    commands::run(root, "planted", RunTarget::All).unwrap();

    let topics: Vec<TopicCluster> = read_jsonl(&root.join("runs/planted/topics.jsonl")).unwrap();
    let mut csv = String::from("rater_id,topic_id,rating,rationale\n");
    for h in ["h1", "h2"] {
        for (i, t) in topics.iter().enumerate() {
            csv.push_str(&format!("{h},{},{},ok\n", t.topic_id, 5 - i.min(4)));
        }
    }
    let file = root.join("human.csv");
    fs::write(&file, &csv).unwrap();
    assert_eq!(commands::ingest_ratings(root, "planted", &file).unwrap(), 2 * topics.len());

    let out = commands::run(root, "planted", RunTarget::All).unwrap();
    assert!(out.messages.contains(&"metrics: done".to_string()), "{:?}", out.messages);
    let alignment = fs::read_to_string(root.join("runs/planted/report/alignment.csv")).unwrap();
    assert!(alignment.contains("perceived-vs-human"));
    assert!(alignment.contains("observed-vs-human"));

    fs::write(&file, "rater_id,topic_id,rating,rationale\nh1,T01,9,x\n").unwrap();
    assert_eq!(commands::ingest_ratings(root, "planted", &file).unwrap_err().exit_code(), 2);
}
