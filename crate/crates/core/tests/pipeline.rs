use std::path::{Path, PathBuf};

use screenkit::io::read_jsonl;
use screenkit::pipeline::{list_tree, load_manifest, run_pipeline, verify_manifest, PipelineError, RunConfig};
use screenkit::task::{TaskSample, Turn};

fn synthetic() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/synthetic")
}

fn config() -> (RunConfig, PathBuf) {
    RunConfig::load(&synthetic().join("pipeline.json")).unwrap()
}

#[test]
fn manifest_lists_exactly_the_tree() {
    let (cfg, base) = config();
    let out = tempfile::tempdir().unwrap();
    let manifest = run_pipeline(&cfg, &base, out.path()).unwrap();
    assert_eq!(manifest.status, "ok");
    assert!(!manifest.is_failed());
    assert!(verify_manifest(out.path(), &manifest).is_empty());
    let listed: std::collections::BTreeSet<String> = manifest.files.iter().map(|f| f.path.clone()).collect();
    assert_eq!(listed, list_tree(out.path()));
    assert_eq!(load_manifest(out.path()).unwrap(), manifest);
}

#[test]
fn seed_changes_sampled_prompts_only() {
    let (mut cfg, base) = config();
    cfg.advanced = false;
    cfg.partition = false;
    cfg.som = false;
    cfg.mixture = None;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(&cfg, &base, a.path()).unwrap();
    cfg.seed += 1;
    run_pipeline(&cfg, &base, b.path()).unwrap();
    let rel = "elementary/iphone/ocr.jsonl";
    let xs: Vec<TaskSample> = read_jsonl(&a.path().join(rel)).unwrap();
    let ys: Vec<TaskSample> = read_jsonl(&b.path().join(rel)).unwrap();
    assert_eq!(xs.len(), ys.len());
    let answers = |v: &[TaskSample]| -> Vec<Vec<Turn>> { v.iter().map(|s| s.turns[1..].to_vec()).collect() };
    assert_eq!(answers(&xs), answers(&ys));
    assert!(xs.iter().zip(&ys).any(|(x, y)| x.turns[0] != y.turns[0]));
}

#[test]
fn missing_fixtures_are_reported_per_screen() {
    let (mut cfg, base) = config();
    cfg.fixtures = Some(PathBuf::from("fixtures/judge"));
    cfg.partition = false;
    cfg.som = false;
    cfg.mixture = None;
    let out = tempfile::tempdir().unwrap();
    run_pipeline(&cfg, &base, out.path()).unwrap();
    let report = std::fs::read_to_string(out.path().join("advanced/report.json")).unwrap();
    assert!(report.contains("no fixture recorded"));
    let samples: Vec<TaskSample> = read_jsonl(&out.path().join("advanced/conv_interaction.jsonl")).unwrap();
    assert!(samples.is_empty());
}

#[test]
fn empty_pool_fails_mix_stage() {
    let (mut cfg, base) = config();
    cfg.fixtures = Some(PathBuf::from("fixtures/judge"));
    cfg.partition = false;
    cfg.som = false;
    let out = tempfile::tempdir().unwrap();
    let err = run_pipeline(&cfg, &base, out.path()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(matches!(err, PipelineError::Stage { ref stage, .. } if stage == "mix"), "{err}");
    let manifest = load_manifest(out.path()).unwrap();
    assert!(manifest.is_failed());
    assert_eq!(manifest.failed_stage.as_deref(), Some("mix"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let err = RunConfig::from_json(r#"{"annotations": "a", "sead": 3}"#).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
