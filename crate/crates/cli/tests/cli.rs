use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ctgwin::synthetic::write_corpus;
use tempfile::TempDir;

fn ctgwin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctgwin"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn workspace() -> TempDir {
    let dir = TempDir::new().unwrap();
    write_corpus(&dir.path().join("corpus"), 6, 12, 2400, 11).unwrap();
    fs::write(
        dir.path().join("exp.toml"),
        r#"manifest = "corpus/manifest.csv"
output = "out"
window_sizes = [100, 200]
families = ["cnn1d", "flda", "random_forest"]
seed_split = 1
seed_balance = 2
seed_init = 3
seed_train = 4
epochs = 2
n_trees = 15
workers = 2
"#,
    )
    .unwrap();
    dir
}

#[test]
fn run_is_reproducible_byte_for_byte() {
    let dir = workspace();
    let p = dir.path();
    ok(&ctgwin(&["run", "--config", "exp.toml"], p));
    ok(&ctgwin(&["run", "--config", "exp.toml", "--out", "again"], p));
    for file in ["metrics.csv", "metrics_unbalanced.csv", "roc.csv", "seeds.toml"] {
        let a = fs::read(p.join("out").join(file)).unwrap();
        let b = fs::read(p.join("again").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
    let metrics = fs::read_to_string(p.join("out/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 3 * 2);
    assert!(p.join("out/report.md").exists());
    assert!(p.join("out/train_log_cnn1d_W100.csv").exists());
}

#[test]
fn seed_override_changes_split() {
    let dir = workspace();
    let p = dir.path();
    ok(&ctgwin(&["run", "--config", "exp.toml", "--out", "a"], p));
    ok(&ctgwin(&["run", "--config", "exp.toml", "--out", "b", "--seed-split", "99"], p));
    let a = fs::read_to_string(p.join("a/seeds.toml")).unwrap();
    let b = fs::read_to_string(p.join("b/seeds.toml")).unwrap();
    assert_ne!(a, b);
    assert!(b.contains("99"));
}

#[test]
fn compare_ranks_cells_from_a_run() {
    let dir = workspace();
    let p = dir.path();
    ok(&ctgwin(&["run", "--config", "exp.toml"], p));
    let table = ok(&ctgwin(&["compare", "out/metrics.csv"], p));
    let mut lines = table.lines();
    assert!(lines.next().unwrap().contains("auc"));
    assert_eq!(lines.count(), 6);
}

#[test]
fn segment_train_evaluate_flow() {
    let dir = workspace();
    let p = dir.path();
    ok(&ctgwin(&["segment", "--config", "exp.toml", "--window", "100", "--out", "seg"], p));
    for f in ["train_W100.csv", "test_W100.csv", "test_all_W100.csv"] {
        assert!(p.join("seg").join(f).exists(), "{f}");
    }
    ok(&ctgwin(
        &[
            "train", "--family", "mlp_baseline", "--windows", "seg/train_W100.csv", "--out", "mlp.json",
            "--epochs", "2", "--log", "mlp_log.csv",
        ],
        p,
    ));
    assert_eq!(fs::read_to_string(p.join("mlp_log.csv")).unwrap().lines().count(), 3);
    let report = ok(&ctgwin(
        &["evaluate", "--model", "mlp.json", "--windows", "seg/test_W100.csv", "--roc", "roc.csv"],
        p,
    ));
    let row = report.lines().nth(1).unwrap();
    assert!(row.starts_with("mlp_baseline,100,"));
    let roc = fs::read_to_string(p.join("roc.csv")).unwrap();
    assert!(roc.lines().nth(1).unwrap().starts_with("0,0,"));
}

#[test]
fn ingest_preprocess_and_figo() {
    let dir = workspace();
    let p = dir.path();
    let summary = ok(&ctgwin(&["ingest", "--manifest", "corpus/manifest.csv"], p));
    assert_eq!(summary.lines().count(), 19);
    assert_eq!(summary.lines().filter(|l| l.contains(",case,")).count(), 6);

    ok(&ctgwin(&["preprocess", "--manifest", "corpus/manifest.csv", "--out", "clean"], p));
    let again = ok(&ctgwin(&["ingest", "--manifest", "clean/manifest.csv"], p));
    assert_eq!(summary, again);
    let report = fs::read_to_string(p.join("clean/repair_report.csv")).unwrap();
    assert_eq!(report.lines().count(), 19);

    let first = summary.lines().nth(1).unwrap().split(',').next().unwrap().to_string();
    let record = format!("clean/{first}.csv");
    let figo = ok(&ctgwin(&["figo", &record], p));
    let fields: Vec<&str> = figo.lines().nth(1).unwrap().split(',').collect();
    let vbl: f64 = fields[1].parse().unwrap();
    assert!((100.0..=180.0).contains(&vbl), "vbl {vbl}");
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = workspace();
    let p = dir.path();
    assert_eq!(ctgwin(&["run", "--config", "missing.toml"], p).status.code(), Some(1));

    fs::write(p.join("bad.toml"), "manifest = \"x\"\noutput = \"o\"\nbogus_key = 1\n").unwrap();
    assert_eq!(ctgwin(&["run", "--config", "bad.toml"], p).status.code(), Some(1));

    let text = fs::read_to_string(p.join("exp.toml")).unwrap();
    fs::write(p.join("nodata.toml"), text.replace("corpus/manifest.csv", "nowhere/manifest.csv")).unwrap();
    assert_eq!(ctgwin(&["run", "--config", "nodata.toml"], p).status.code(), Some(2));

    assert_eq!(ctgwin(&["train", "--family", "lstm", "--windows", "w.csv", "--out", "m.json"], p).status.code(), Some(1));
    assert_eq!(ctgwin(&["frobnicate"], p).status.code(), Some(1));
    assert_eq!(ctgwin(&["--help"], p).status.code(), Some(0));
    assert_eq!(ctgwin(&["--version"], p).status.code(), Some(0));
}
