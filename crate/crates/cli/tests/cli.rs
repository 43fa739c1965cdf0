use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(rel)
        .display()
        .to_string()
}

fn cardstack(store: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cardstack"))
        .arg("--store")
        .arg(store)
        .args(args)
        .output()
        .expect("binary runs")
}

fn steve_store() -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("store");
    let out = cardstack(
        &store,
        &[
            "--now",
            "2011-12-31T00:00:00Z",
            "run",
            "--ontology",
            &fixture("ontologies/ocpd.json"),
            "--corpus",
            &fixture("corpus/steve_jobs.jsonl"),
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (tmp, store)
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn run_summary_json_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("s");
    let out = cardstack(
        &store,
        &[
            "--json",
            "--now",
            "2011-12-31T00:00:00Z",
            "run",
            "--ontology",
            &fixture("ontologies/ocpd.json"),
            "--corpus",
            &fixture("corpus/steve_jobs.jsonl"),
        ],
    );
    let value = json(&out);
    assert_eq!(value["cards_committed"], 1);
    assert_eq!(value["documents_ingested"], 20);
    let reparsed: serde_json::Value = serde_json::from_str(&serde_json::to_string(&value).unwrap()).unwrap();
    assert_eq!(reparsed, value);
}

#[test]
fn card_show_reaches_every_evidence_row() {
    let (_tmp, store) = steve_store();
    let trace = json(&cardstack(&store, &["--json", "card", "show", "ocpd@steve_jobs#1"]));
    let refined = trace["refined"].as_array().unwrap();
    assert_eq!(refined.len(), 20);
    let uris: std::collections::BTreeSet<&str> = refined
        .iter()
        .flat_map(|r| r["notes"].as_array().unwrap())
        .flat_map(|n| n["chunks"].as_array().unwrap())
        .map(|c| c["document"]["meta"]["source_uri"].as_str().unwrap())
        .collect();
    assert_eq!(uris.len(), 20);
    assert!(uris.contains("biography/O3-3b"));
}

#[test]
fn listing_and_querying() {
    let (_tmp, store) = steve_store();
    let cards = json(&cardstack(&store, &["--json", "cards", "list", "--status", "committed"]));
    assert_eq!(cards.as_array().unwrap().len(), 1);
    let none = json(&cardstack(&store, &["--json", "cards", "list", "--min-met", "7"]));
    assert!(none.as_array().unwrap().is_empty());
    let notes = json(&cardstack(&store, &["--json", "notes", "list", "--subject", "steve_jobs"]));
    assert_eq!(notes.as_array().unwrap().len(), 20);
    let text = cardstack(&store, &["cards", "list"]);
    assert!(String::from_utf8_lossy(&text.stdout).contains("(4,5,2,11,0,5,0,10)"));
}

#[test]
fn export_and_routes() {
    let (tmp, store) = steve_store();
    let dot = cardstack(&store, &["export"]);
    assert_eq!(String::from_utf8_lossy(&dot.stdout).matches("->").count(), 1);
    let out_path = tmp.path().join("g.json");
    let out = cardstack(&store, &["export", "--format", "json", "--out", out_path.to_str().unwrap()]);
    assert!(out.status.success());
    let graph: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(graph["nodes"].as_array().unwrap().len(), 2);
    let routes = json(&cardstack(&store, &["--json", "routes", "ocpd@steve_jobs#1", "subject:steve_jobs"]));
    assert_eq!(routes, serde_json::json!([["ocpd@steve_jobs#1", "subject:steve_jobs"]]));
    let unknown = cardstack(&store, &["routes", "nope", "subject:steve_jobs"]);
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("s");
    let ok = cardstack(&store, &["ontology", "validate", &fixture("ontologies/ocpd.json")]);
    assert_eq!(ok.status.code(), Some(0));

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"id": "x", "version": "1", "concepts": [{"concept_id": "c", "threshold": 3, "criteria": []}]}"#).unwrap();
    let findings = cardstack(&store, &["ontology", "validate", bad.to_str().unwrap()]);
    assert_eq!(findings.status.code(), Some(1));

    let missing = cardstack(&store, &["ontology", "validate", "/no/such/file.json"]);
    assert_eq!(missing.status.code(), Some(2));
    let no_store = cardstack(&tmp.path().join("absent"), &["cards", "list"]);
    assert_eq!(no_store.status.code(), Some(2));
    let no_card = cardstack(&store, &["card", "show", "x@y#1"]);
    assert_eq!(no_card.status.code(), Some(2));
}

#[test]
fn config_file_supplies_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("cardstack.toml");
    std::fs::write(
        &config,
        format!(
            "store = \"store\"\nnow = \"2020-03-01T00:00:00Z\"\nontologies = [{:?}]\ncorpora = [{:?}]\n[organize]\nwindow = \"7d\"\n",
            fixture("ontologies/alcohol.json"),
            fixture("corpus/predictor_a.jsonl")
        ),
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cardstack"))
        .args(["--config", config.to_str().unwrap(), "--json", "run"])
        .output()
        .unwrap();
    let summary = json(&out);
    assert_eq!(summary["notes_synthesized"], 1);
    assert!(tmp.path().join("store/cards/log.jsonl").exists());
}

#[test]
fn masking_hides_subject_ids() {
    let tmp = tempfile::tempdir().unwrap();
    let key = tmp.path().join("key");
    std::fs::write(&key, "0123456789abcdef0123\n").unwrap();
    let store = tmp.path().join("s");
    let out = cardstack(
        &store,
        &[
            "--mask-key-file",
            key.to_str().unwrap(),
            "--now",
            "2011-12-31T00:00:00Z",
            "--json",
            "run",
            "--ontology",
            &fixture("ontologies/ocpd.json"),
            "--corpus",
            &fixture("corpus/steve_jobs.jsonl"),
        ],
    );
    assert_eq!(json(&out)["cards_committed"], 1);
    let cards = json(&cardstack(&store, &["--json", "cards", "list"]));
    let subject = cards[0]["subject"].as_str().unwrap();
    assert_eq!(subject.len(), 64);
    assert_ne!(subject, "steve_jobs");
}
