use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn cfmf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfmf")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = cfmf(args);
    assert!(out.status.success(), "cfmf {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(format: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("data");
        ok(&[
            "gen",
            "--users",
            "60",
            "--items",
            "40",
            "--density",
            "0.25",
            "--seed",
            "3",
            "--format",
            format,
            "--out",
            out.to_str().unwrap(),
        ]);
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }
}

#[test]
fn train_then_eval_saved_model() {
    let w = Workspace::new("movietweetings");
    let (train, test) = (w.s("data/train.dat"), w.s("data/test.dat"));
    let data = ["--train", train.as_str(), "--test", test.as_str(), "--k", "4", "--max-iter", "10"];
    for algo in ["baseline", "cf_item", "mf_als", "cf_mf_v2"] {
        let model = w.s(&format!("{algo}.model"));
        let mut args = vec!["train", "--algo", algo, "--model", &model];
        args.extend(data);
        let trained = w.s(&format!("{algo}.train.json"));
        args.extend(["--out", &trained]);
        ok(&args);

        let mut args = vec!["eval", "--algo", algo, "--model", &model];
        args.extend(data);
        let out = ok(&args);
        let loaded: Value = serde_json::from_slice(&out.stdout).unwrap();
        let fresh = json(&w.path(&format!("{algo}.train.json")));
        assert_eq!(loaded["mae"], fresh["mae"], "{algo}");
        assert_eq!(loaded["coverage"], fresh["coverage"], "{algo}");
        assert_eq!(loaded["algorithm"], algo);
    }
}

#[test]
fn csv_format_and_timing() {
    let w = Workspace::new("csv");
    let out = ok(&[
        "eval",
        "--algo",
        "cf_user",
        "--format",
        "csv",
        "--train",
        &w.s("data/train.csv"),
        "--test",
        &w.s("data/test.csv"),
        "--timing",
    ]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["wall_time"].as_f64().unwrap() >= 0.0);
    assert!(report["mae"].as_f64().unwrap().is_finite());
}

#[test]
fn flags_override_config_file() {
    let w = Workspace::new("movietweetings");
    std::fs::write(w.path("exp.toml"), "k = 3\ntop_n = 7\nmax_iter = 4\nlambda1 = 0.5\nselect_by = \"final\"\n").unwrap();
    let out = ok(&[
        "eval",
        "--algo",
        "cf_mf_v1",
        "--train",
        &w.s("data/train.dat"),
        "--test",
        &w.s("data/test.dat"),
        "--config",
        &w.s("exp.toml"),
        "--k",
        "5",
        "--lr1",
        "0.004",
    ]);
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    let p = &r["params"];
    assert_eq!(p["k"], 5);
    assert_eq!(p["top_n"], 7);
    assert_eq!(p["max_iter"], 4);
    assert_eq!(p["lambda1"], 0.5);
    assert_eq!(p["lr1"], 0.004);
    assert_eq!(p["select_by"], "final");
    assert_eq!(r["selected_epoch"], 4);
}

#[test]
fn sweep_writes_csv() {
    let w = Workspace::new("movietweetings");
    let csv = w.s("sweep.csv");
    ok(&[
        "sweep",
        "--axis",
        "N",
        "--values",
        "2,4,8",
        "--algos",
        "cf_item,cf_user",
        "--train",
        &w.s("data/train.dat"),
        "--test",
        &w.s("data/test.dat"),
        "--jobs",
        "3",
        "--out",
        &csv,
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "algorithm,axis,value,mae,wall_time_s");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("cf_item,N,2,"));
    assert!(lines[6].starts_with("cf_user,N,8,"));
}

#[test]
fn errors_exit_nonzero_with_diagnostic() {
    let w = Workspace::new("movietweetings");
    let (train, test) = (w.s("data/train.dat"), w.s("data/test.dat"));
    std::fs::write(w.path("bad.toml"), "nonsense = 1\n").unwrap();
    std::fs::write(w.path("bad.dat"), "1::2::eleven::3\n").unwrap();
    std::fs::write(w.path("bad.model"), "not a model\n").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["eval", "--algo", "forest", "--train", &train, "--test", &test],
        vec!["eval", "--algo", "baseline", "--train", "/nonexistent/train.dat", "--test", &test],
        vec!["eval", "--algo", "baseline", "--train", &train, "--test", &test, "--config", "/nonexistent.toml"],
        vec!["eval", "--algo", "baseline", "--train", &train, "--test", &test, "--config"],
        vec!["eval", "--algo", "mf_als", "--train", &train, "--test", &test, "--k", "0"],
        vec!["eval", "--algo", "cf_mf_v1", "--train", &train, "--test", &test, "--lr1", "0"],
        vec!["sweep", "--axis", "K", "--values", "5,3", "--algos", "mf_als", "--train", &train, "--test", &test],
        vec!["gen", "--density", "0", "--out", "/tmp/unused"],
    ];
    let bad_toml = w.s("bad.toml");
    let bad_dat = w.s("bad.dat");
    let bad_model = w.s("bad.model");
    let mut cases = cases;
    cases.push(vec!["eval", "--algo", "baseline", "--train", &train, "--test", &test, "--config", &bad_toml]);
    cases.push(vec!["eval", "--algo", "baseline", "--train", &bad_dat, "--test", &test]);
    cases.push(vec!["eval", "--algo", "baseline", "--train", &train, "--test", &test, "--model", &bad_model]);
    for args in &cases {
        let out = cfmf(args);
        assert!(!out.status.success(), "cfmf {args:?} succeeded");
        assert!(!out.stderr.is_empty(), "cfmf {args:?} printed no diagnostic");
    }
    let out = cfmf(&["eval", "--algo", "baseline", "--train", &bad_dat, "--test", &test]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}
