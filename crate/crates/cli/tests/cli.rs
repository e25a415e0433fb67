use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rawgnn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rawgnn"))
        .current_dir(dir)
        .env_remove("RAWGNN_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(&rawgnn(dir.path(), &["synth", "planted", "--nodes", "60", "--seed", "4"]));
    fs::write(
        dir.path().join("run.conf"),
        "# tiny run\ndataset = planted\nhidden = 4\nmax_epochs = 4\npatience = 2\nn_splits = 2\nseed = 8\n",
    )
    .unwrap();
    dir
}

#[test]
fn stats_prints_one_row_per_dataset() {
    let dir = setup();
    let out = ok(&rawgnn(dir.path(), &["stats", "planted", "planted"]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    let fields: Vec<&str> = lines[0].split(' ').collect();
    assert_eq!(fields.len(), 7);
    assert_eq!(&fields[..2], &["planted", "60"]);
    assert_eq!(fields[3], "30");
}

#[test]
fn train_then_export_is_reproducible() {
    let dir = setup();
    let out = ok(&rawgnn(dir.path(), &["train", "run.conf", "--split", "1", "--out", "m.ckpt", "--dropout", "0.2"]));
    assert!(out.starts_with("split 1:"), "{out}");
    assert!(fs::read_to_string(dir.path().join("m.ckpt")).unwrap().starts_with("rawgnn-checkpoint v1"));

    ok(&rawgnn(dir.path(), &["export-embeddings", "m.ckpt", "planted", "a.txt"]));
    ok(&rawgnn(dir.path(), &["export-embeddings", "m.ckpt", "planted", "b.txt"]));
    let a = fs::read(dir.path().join("a.txt")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.txt")).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("# nodes=60 d_final=16 strategies=bfs,dfs"), "{text}");
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(' ').collect();
    assert_eq!(row.len(), 17);
    assert_eq!(row[0], "0");
}

#[test]
fn experiment_honors_seed_variable_and_flags() {
    let dir = setup();
    let out = ok(&rawgnn(dir.path(), &["experiment", "run.conf", "--out", "r1.json"]));
    assert!(out.contains("result written to r1.json"));
    ok(&rawgnn(dir.path(), &["experiment", "run.conf", "--out=r2.json"]));
    let r1 = fs::read(dir.path().join("r1.json")).unwrap();
    assert_eq!(r1, fs::read(dir.path().join("r2.json")).unwrap());

    let seeded = Command::new(env!("CARGO_BIN_EXE_rawgnn"))
        .current_dir(dir.path())
        .env("RAWGNN_SEED", "77")
        .args(["experiment", "run.conf", "--out", "r3.json"])
        .output()
        .unwrap();
    ok(&seeded);
    let r3: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("r3.json")).unwrap()).unwrap();
    assert_eq!(r3["spec"]["seed"], 77);

    ok(&rawgnn(dir.path(), &["experiment", "run.conf", "--out", "r4.json", "--seed", "78"]));
    let r4: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("r4.json")).unwrap()).unwrap();
    assert_eq!(r4["spec"]["seed"], 78);
    assert_eq!(r4["splits"].as_array().unwrap().len(), 2);
}

#[test]
fn splits_and_walks_are_written() {
    let dir = setup();
    ok(&rawgnn(dir.path(), &["splits", "run.conf", "s.json", "--n-splits", "3"]));
    let s: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("s.json")).unwrap()).unwrap();
    assert_eq!(s["splits"].as_array().unwrap().len(), 3);

    ok(&rawgnn(dir.path(), &["walks", "run.conf", "w.tsv", "--walks-per-node", "2"]));
    let walks = fs::read_to_string(dir.path().join("w.tsv")).unwrap();
    // two strategies, 60 targets, two walks each
    assert_eq!(walks.lines().count(), 240);
}

#[test]
fn grad_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&rawgnn(dir.path(), &["grad-check"]));
    assert!(out.lines().count() >= 20);
    assert!(out.lines().all(|l| l.starts_with("ok")), "{out}");
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = setup();
    let missing = rawgnn(dir.path(), &["stats", "nowhere"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nowhere"));

    let bad_key = rawgnn(dir.path(), &["train", "run.conf", "--no-such-key", "1"]);
    assert!(!bad_key.status.success());

    let dangling = rawgnn(dir.path(), &["experiment", "run.conf", "--seed"]);
    assert!(!dangling.status.success());
}
