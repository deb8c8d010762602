use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fairtab::cli::{read_predictions, Manifest};
use fairtab::data::synthetic;
use fairtab::fairness::{ConfigEcho, FairnessReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

const SMALL: &[&str] = &[
    "--epochs",
    "2",
    "--batch-size",
    "32",
    "--embed-dim",
    "4",
    "--layers",
    "1",
    "--heads",
    "2",
    "--mlp-hidden",
    "8",
    "--latents",
    "2",
];

fn fairtab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairtab")).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// A temp dir holding a synthetic Law School file and a prepared split.
fn prepared(rows: usize) -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("law.csv"), synthetic::law_school_csv(rows, 11)).unwrap();
    let o = fairtab(dir.path(), &["prep", "--data", "law.csv", "--dataset", "law", "--out", "split", "--seed", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn prep_is_byte_identical_for_the_same_seed() {
    let dir = prepared(300);
    let o = fairtab(dir.path(), &["prep", "--data", "law.csv", "--dataset", "law", "--out", "again", "--seed", "4"]);
    assert_eq!(code(&o), 0);
    for f in ["manifest.json", "train.csv", "test.csv"] {
        assert_eq!(
            fs::read(dir.path().join("split").join(f)).unwrap(),
            fs::read(dir.path().join("again").join(f)).unwrap(),
            "{f}"
        );
    }
    let o = fairtab(dir.path(), &["prep", "--data", "law.csv", "--dataset", "law", "--out", "other", "--seed", "5"]);
    assert_eq!(code(&o), 0);
    assert_ne!(
        fs::read(dir.path().join("split/manifest.json")).unwrap(),
        fs::read(dir.path().join("other/manifest.json")).unwrap()
    );
}

#[test]
fn full_size_split_uses_floor_arithmetic() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("law.csv"), synthetic::law_school_csv(20_798, 1)).unwrap();
    let o = fairtab(dir.path(), &["prep", "--data", "law.csv", "--dataset", "law", "--out", "split"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("20798 rows -> 14559 train / 6239 test"), "{}", stdout(&o));
    let m = Manifest::read(&dir.path().join("split")).unwrap();
    assert_eq!((m.train_count, m.test_count, m.rows), (14_559, 6_239, 20_798));
    let mut all: Vec<usize> = m.train_rows.iter().chain(&m.test_rows).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..20_798).collect::<Vec<_>>());
}

#[test]
fn prep_error_paths() {
    let dir = prepared(60);
    let o = fairtab(dir.path(), &["prep", "--data", "law.csv", "--schema", "nope.toml", "--out", "x"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--schema"), "{}", stderr(&o));

    fs::write(dir.path().join("bad.csv"), "decile1b,lsat\n1,2\n").unwrap();
    let o = fairtab(dir.path(), &["prep", "--data", "bad.csv", "--dataset", "law", "--out", "x"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let o = fairtab(dir.path(), &["prep", "--data", "missing.csv", "--dataset", "law", "--out", "x"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn train_writes_artifacts_and_a_summary_line() {
    let dir = prepared(300);
    let mut args = vec!["train", "--split", "split", "--model", "saint", "--lambda", "0", "--out", "saint"];
    args.extend(SMALL);
    let o = fairtab(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let line = stdout(&o);
    for key in ["accuracy=", "f1=", "spd=", "eod=", "abroca="] {
        assert!(line.contains(key), "{line}");
    }
    let run = dir.path().join("saint");
    let record = json(&run.join("run.json"));
    assert!(record["report"]["degenerate_predictor"].is_boolean());
    assert_eq!(record["report"]["model"], "saint");
    assert_eq!(record["test_rows"], 90);
    assert!(run.join("model.bin").is_file());
    let model = fairtab::models::Classifier::load(&run.join("model.bin")).unwrap();
    assert_eq!(model.kind(), fairtab::models::ModelKind::Saint);
    let gp = read_predictions(&run.join("predictions.csv"), 0.5).unwrap();
    assert_eq!(gp.len(), 90);
}

#[test]
fn embedded_config_reproduces_the_run() {
    let dir = prepared(200);
    let mut args = vec!["train", "--split", "split", "--model", "ft", "--lambda", "0.5", "--seed", "9", "--out", "a"];
    args.extend(SMALL);
    assert_eq!(code(&fairtab(dir.path(), &args)), 0);
    let o = fairtab(dir.path(), &["train", "--split", "split", "--config", "a/config.toml", "--out", "b"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let strip = |p: &str| {
        let mut v = json(&dir.path().join(p).join("run.json"));
        v.as_object_mut().unwrap().remove("duration_secs");
        v
    };
    assert_eq!(strip("a"), strip("b"));
    for f in ["model.bin", "predictions.csv", "config.toml"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn flags_override_the_config_file() {
    let dir = prepared(120);
    fs::write(dir.path().join("c.toml"), "model = \"lr\"\nepochs = 3\nlambda = 2.0\nbatch_size = 16\n").unwrap();
    let o = fairtab(dir.path(), &["train", "--split", "split", "--config", "c.toml", "--epochs", "1", "--out", "r"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rec = json(&dir.path().join("r/run.json"));
    assert_eq!(rec["config"]["epochs"], 1);
    assert_eq!(rec["config"]["lambda"], 2.0);
    assert_eq!(rec["config"]["batch_size"], 16);
    assert_eq!(rec["config"]["patience"], 10);

    fs::write(dir.path().join("typo.toml"), "epoch = 3\n").unwrap();
    let o = fairtab(dir.path(), &["train", "--split", "split", "--model", "lr", "--config", "typo.toml", "--out", "r"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn train_error_paths() {
    let dir = prepared(80);
    let o = fairtab(dir.path(), &["train", "--split", "split", "--model", "xgboost", "--out", "r"]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    for kind in ["lr", "tab", "ft", "saint", "perceiver"] {
        assert!(err.contains(kind), "{err}");
    }
    let o =
        fairtab(dir.path(), &["train", "--split", "split", "--model", "lr", "--learning-rate", "1e308", "--out", "r"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let o = fairtab(dir.path(), &["train", "--split", "nowhere", "--model", "lr", "--out", "r"]);
    assert_eq!(code(&o), 2);
    let o = fairtab(dir.path(), &["train", "--split", "split", "--out", "r"]);
    assert_eq!(code(&o), 1);
    let o = fairtab(
        dir.path(),
        &["train", "--split", "split", "--model", "ft", "--embed-dim", "6", "--heads", "4", "--out", "r"],
    );
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn unknown_flags_are_usage_errors_with_a_hint() {
    let dir = TempDir::new().unwrap();
    let o = fairtab(dir.path(), &["train", "--split", "s", "--model", "lr", "--out", "r", "--lamda", "1"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--lambda"), "{}", stderr(&o));
    let o = fairtab(dir.path(), &["frobnicate"]);
    assert_eq!(code(&o), 1);
    let o = fairtab(dir.path(), &["train", "--help"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("command-line flags, then the --config TOML file, then built-in defaults"));
}

fn write_predictions(dir: &Path, name: &str, rows: &[(f64, u8, u8)]) {
    let mut s = String::from("group,score,label\n");
    for (score, label, group) in rows {
        s.push_str(&format!("{group},{score:?},{label}\n"));
    }
    fs::write(dir.join(name), s).unwrap();
}

#[test]
fn audit_of_perfect_predictions_has_zero_differences() {
    let dir = TempDir::new().unwrap();
    let rows: Vec<(f64, u8, u8)> =
        (0..40).map(|i| ((i % 2) as f64 * 0.8 + 0.1, (i % 2) as u8, u8::from(i % 4 < 2))).collect();
    write_predictions(dir.path(), "p.csv", &rows);
    let o = fairtab(dir.path(), &["audit", "--predictions", "p.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
    for key in ["spd", "eod", "error_rate_diff", "fpr_diff", "fnr_diff", "abroca"] {
        assert_eq!(r[key], 0.0, "{key}");
    }
    assert_eq!(r["accuracy"], 1.0);
}

#[test]
fn audit_error_paths() {
    let dir = TempDir::new().unwrap();
    write_predictions(dir.path(), "one.csv", &[(0.2, 0, 1), (0.9, 1, 1)]);
    let o = fairtab(dir.path(), &["audit", "--predictions", "one.csv"]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("unprivileged") && err.contains("both"), "{err}");

    fs::write(dir.path().join("nolabel.csv"), "score,group\n0.5,1\n").unwrap();
    let o = fairtab(dir.path(), &["audit", "--predictions", "nolabel.csv"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("`label`"));

    write_predictions(dir.path(), "range.csv", &[(1.5, 0, 1), (0.9, 1, 0)]);
    assert_eq!(code(&fairtab(dir.path(), &["audit", "--predictions", "range.csv"])), 2);
}

#[test]
fn audit_matches_the_library_report() {
    let dir = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let rows: Vec<(f64, u8, u8)> = (0..100)
        .map(|_| (rng.random::<f64>(), u8::from(rng.random_bool(0.6)), u8::from(rng.random_bool(0.7))))
        .collect();
    write_predictions(dir.path(), "random.csv", &rows);
    let o =
        fairtab(dir.path(), &["audit", "--predictions", "random.csv", "--threshold", "0.4", "--out", "report.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cli: FairnessReport = serde_json::from_value(json(&dir.path().join("report.json"))).unwrap();

    let gp = fairtab::fairness::GroupedPredictions::new(
        rows.iter().map(|r| r.0).collect(),
        rows.iter().map(|r| r.1).collect(),
        rows.iter().map(|r| r.2).collect(),
        0.4,
    )
    .unwrap();
    let lib = FairnessReport::compute(&gp, cli.config.clone()).unwrap();
    assert_eq!(cli, lib);
    assert_eq!(
        cli.config,
        ConfigEcho {
            model: "external".into(),
            dataset: "random".into(),
            seed: 0,
            lambda: 0.0,
            sensitive_mapping: cli.config.sensitive_mapping.clone(),
            sensitive_feature_included: false,
            threshold: 0.4,
        }
    );
}

#[test]
fn roc_writes_a_panel() {
    let dir = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<(f64, u8, u8)> =
        (0..60).map(|i| (rng.random::<f64>(), u8::from(i % 3 == 0), u8::from(i % 2 == 0))).collect();
    write_predictions(dir.path(), "p.csv", &rows);
    let o = fairtab(dir.path(), &["roc", "--predictions", "p.csv", "--out", "roc.svg", "--curves", "roc.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let svg = fs::read_to_string(dir.path().join("roc.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("ABROCA"));
    let curves = fs::read_to_string(dir.path().join("roc.csv")).unwrap();
    assert!(curves.starts_with("group,fpr,tpr\n1,0.0,0.0\n"));
}

#[test]
fn reproduce_tables() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("law.csv"), synthetic::law_school_csv(240, 2)).unwrap();
    fs::write(dir.path().join("math.csv"), synthetic::student_math_csv(200, 2)).unwrap();

    let mut args = vec!["reproduce", "--dataset", "law", "--data", "law.csv", "--constrained", "false", "--seeds", "1"];
    args.extend(SMALL);
    args.extend(["--jobs", "3", "--out", "law"]);
    let o = fairtab(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("law/table.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), ["lr", "ft", "tab", "perceiver", "saint"]);
    for (i, h) in header.iter().enumerate() {
        if h.ends_with("_std") {
            assert!(rows.iter().all(|r| r[i].is_empty() || r[i] == "0"), "{h}");
        }
    }
    assert!(stdout(&o).contains("0.90721"));
    for m in ["lr", "ft", "tab", "perceiver", "saint"] {
        assert!(dir.path().join(format!("law/abroca_{m}.svg")).is_file(), "{m}");
    }
    assert_eq!(json(&dir.path().join("law/runs.json")).as_array().unwrap().len(), 5);

    let mut args = vec!["reproduce", "--dataset", "student-math", "--data", "math.csv", "--seeds", "2"];
    args.extend(SMALL);
    let o = fairtab(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("LR") && text.contains("SAINT") && !text.contains("FT-Transformer"), "{text}");

    let o = fairtab(dir.path(), &["reproduce", "--dataset", "adult", "--data", "law.csv"]);
    assert_eq!(code(&o), 1);
}
