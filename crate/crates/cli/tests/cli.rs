use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--set", "epochs=1",
    "--set", "hidden_dim=8",
    "--set", "n_heads=2",
    "--set", "ffn_dim=8",
    "--set", "projection_dim=4",
    "--set", "fusion_dim=4",
    "--set", "gibbs_iterations=20",
    "--set", "learning_rate=0.001",
    "--set", "synthetic.instances_per_target=30",
    "--set", "synthetic.train_targets=3",
];

fn stancekit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stancekit"))
        .current_dir(dir)
        .env_remove("RUST_LOG")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let mut full: Vec<&str> = args.to_vec();
    full.extend_from_slice(TINY);
    let out = stancekit(dir, &full);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn staged_pipeline_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let prepared = ok(d, &["prepare", "--seed", "3", "--out", "b"]);
    assert!(prepared.contains("test"));
    assert!(d.join("b/manifest.json").exists());

    ok(d, &["fit-topics", "--seed", "3", "--bundle", "b", "--out", "lex.tsv"]);
    let lexicon = std::fs::read_to_string(d.join("lex.tsv")).unwrap();
    assert_eq!(lexicon.lines().count(), 5);

    ok(d, &["augment", "--bundle", "b", "--lexicon", "lex.tsv", "--out", "m"]);
    let history = ok(d, &["train", "--seed", "3", "--bundle", "m", "--out", "ck"]);
    assert!(history.contains('*'));
    assert!(d.join("ck/manifest.json").exists());

    let table = ok(d, &["evaluate", "--seed", "3", "--checkpoint", "ck", "--bundle", "m", "--report", "r.jsonl"]);
    assert!(table.contains("headline"));
    ok(d, &["evaluate", "--seed", "3", "--checkpoint", "ck", "--bundle", "m", "--report", "r.jsonl"]);
    let reports = std::fs::read_to_string(d.join("r.jsonl")).unwrap();
    let lines: Vec<&str> = reports.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], lines[1], "evaluation is deterministic");

    ok(d, &["export-embeddings", "--checkpoint", "ck", "--bundle", "m", "--out", "e.tsv", "--projector", "pca2d"]);
    let emb = std::fs::read_to_string(d.join("e.tsv")).unwrap();
    assert!(emb.starts_with("id\ttarget\tsplit\tlabel\tdim0\tdim1\n"));

    let trace = ok(d, &["trace", "--bundle", "m", "--out", "t.jsonl", "--probes", "8"]);
    assert!(trace.contains("uniformity"));
    let first = std::fs::read_to_string(d.join("t.jsonl")).unwrap();
    assert!(first.lines().next().unwrap().contains("\"step\":0"));
}

#[test]
fn run_writes_reports_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = ok(d, &["run", "--set", "repeats=2", "--set", "variant=\"NO_CL\"", "--out", "runs"]);
    assert!(out.contains("over 2/2 runs"));
    assert!(d.join("runs/summary.json").exists());
    assert!(d.join("runs/run-1/checkpoint/manifest.json").exists());
    let shown = stancekit(d, &["show", "runs/reports.jsonl"]);
    assert!(shown.status.success());
    assert_eq!(String::from_utf8_lossy(&shown.stdout).lines().count(), 3);
}

#[test]
fn errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for args in [
        vec!["run", "--set", "no_such_field=1"],
        vec!["train", "--bundle", "missing", "--out", "x"],
        vec!["prepare", "--set", "dataset=\"sem16\"", "--out", "x"],
        vec!["run", "--set", "eta"],
    ] {
        let out = stancekit(d, &args);
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn train_refuses_unmasked_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["prepare", "--out", "b"]);
    let out = stancekit(d, &["train", "--bundle", "b", "--out", "ck"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("augment"));
}
