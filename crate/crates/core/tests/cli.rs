use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"{
    "dataset": "planted:small:5",
    "condense": {"mode": "timgroc", "nodes": 6, "epochs": 6, "inits": 1, "hidden": 16, "generator_hidden": 8, "batch_cap": 32},
    "train": {"epochs": 30, "hidden": 16},
    "curve_every": 3,
    "profile_epochs": 3
}"#;

fn groc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_groc")).args(args).output().expect("spawn groc")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("tiny.json"), TINY).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self) -> String {
        self.path("tiny.json").display().to_string()
    }

    fn run(&self, cmd: &str, out: &str, extra: &[&str]) -> (Output, PathBuf) {
        let dir = self.path(out);
        let config = self.config();
        let mut args = vec![cmd, "--config", &config, "--out", dir.to_str().unwrap()];
        args.extend_from_slice(extra);
        (groc(&args), dir)
    }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

#[test]
fn help_exits_zero_and_lists_flags() {
    let top = groc(&["--help"]);
    assert_eq!(code(&top), 0);
    let text = String::from_utf8_lossy(&top.stdout);
    for cmd in ["condense", "evaluate", "coreset", "profile", "export-viz"] {
        assert!(text.contains(cmd), "{cmd} missing from top-level help");
    }
    for cmd in ["condense", "evaluate", "coreset", "profile"] {
        let out = groc(&[cmd, "--help"]);
        assert_eq!(code(&out), 0, "{cmd} --help");
        let text = String::from_utf8_lossy(&out.stdout);
        for flag in ["--config", "--seed", "--mode", "--out", "--jobs"] {
            assert!(text.contains(flag), "{cmd} --help lacks {flag}");
        }
    }
    let viz = groc(&["export-viz", "--help"]);
    assert_eq!(code(&viz), 0);
    assert!(String::from_utf8_lossy(&viz.stdout).contains("--input"));
    assert_eq!(code(&groc(&["--version"])), 0);
}

#[test]
fn usage_and_validation_errors_exit_one() {
    let ws = Workspace::new();
    let bogus = groc(&["frobnicate"]);
    assert_eq!(code(&bogus), 1);
    assert!(stderr(&bogus).contains("Usage"), "{}", stderr(&bogus));
    assert_eq!(code(&groc(&["condense", "--config", &ws.config(), "--bogus"])), 1);
    assert_eq!(code(&groc(&["condense"])), 1);
    assert_eq!(code(&groc(&["condense", "--config", "/nonexistent.json"])), 1);

    fs::write(ws.path("unknown.json"), r#"{"dataset": "planted:small", "condense": {"omega3": 2}}"#).unwrap();
    let unknown = groc(&["condense", "--config", ws.path("unknown.json").to_str().unwrap()]);
    assert_eq!(code(&unknown), 1);
    assert!(stderr(&unknown).contains("omega3"), "{}", stderr(&unknown));

    fs::write(ws.path("missing.json"), r#"{"dataset": "no/such/dir"}"#).unwrap();
    assert_eq!(code(&groc(&["condense", "--config", ws.path("missing.json").to_str().unwrap()])), 1);

    let (wrong_mode, _) = ws.run("coreset", "c", &["--mode", "groc"]);
    assert_eq!(code(&wrong_mode), 1);
    let (bad_mode, _) = ws.run("condense", "c", &["--mode", "fastest"]);
    assert_eq!(code(&bad_mode), 1);
    assert_eq!(code(&groc(&["--jobs", "0", "profile", "--config", &ws.config()])), 1);
}

#[test]
fn runtime_errors_exit_two() {
    let ws = Workspace::new();
    let blocker = ws.path("blocker");
    fs::write(&blocker, "not a directory").unwrap();
    let out = groc(&["condense", "--config", &ws.config(), "--out", blocker.join("run").to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn condense_writes_outputs_and_reproduces_from_resolved_config() {
    let ws = Workspace::new();
    let (out, dir) = ws.run("condense", "first", &["--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for file in ["condensed.json", "report.csv", "resolved-config.json", "curve.csv", "curve.svg"] {
        assert!(dir.join(file).is_file(), "{file} missing");
    }
    let resolved = read_json(&dir.join("resolved-config.json"));
    assert_eq!(resolved["condense"]["seed"], 3);
    assert_eq!(resolved["condense"]["mode"], "timgroc");
    assert_eq!(resolved["dataset"], "planted:small:5");
    for key in ["omega1", "eta2", "absorber", "budget_rule"] {
        assert!(resolved["condense"].get(key).is_some(), "resolved config lacks condense.{key}");
    }
    let header = fs::read_to_string(dir.join("report.csv")).unwrap();
    assert!(header.starts_with("init,epoch,update,round,distance"));

    let again = ws.path("again");
    let rerun = groc(&[
        "condense",
        "--config",
        dir.join("resolved-config.json").to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert_eq!(code(&rerun), 0, "{}", stderr(&rerun));
    assert_eq!(
        fs::read(dir.join("condensed.json")).unwrap(),
        fs::read(again.join("condensed.json")).unwrap(),
        "rerun from the resolved config is not bit-identical"
    );
    assert_eq!(fs::read(dir.join("curve.csv")).unwrap(), fs::read(again.join("curve.csv")).unwrap());

    let viz = ws.path("viz");
    let out = groc(&["export-viz", "--input", dir.to_str().unwrap(), "--out", viz.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let graphml = fs::read_to_string(viz.join("condensed.graphml")).unwrap();
    assert_eq!(graphml.matches("<node ").count(), 6);
    assert!(fs::read_to_string(viz.join("curve.svg")).unwrap().contains("<svg"));
    assert_eq!(code(&groc(&["export-viz", "--input", viz.to_str().unwrap()])), 1);

    let scored = ws.path("scored");
    let eval = groc(&[
        "evaluate",
        "--config",
        &ws.config(),
        "--condensed",
        dir.join("condensed.json").to_str().unwrap(),
        "--backbone",
        "sgc",
        "--out",
        scored.to_str().unwrap(),
    ]);
    assert_eq!(code(&eval), 0, "{}", stderr(&eval));
    let report = read_json(&scored.join("report.json"));
    assert_eq!(report["runs"].as_array().unwrap().len(), 3);
    assert_eq!(report["backbone"], "sgc");
}

#[test]
fn evaluate_runs_nine_protocol_runs() {
    let ws = Workspace::new();
    let (out, dir) = ws.run("evaluate", "eval", &["--mode", "gcond"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_json(&dir.join("report.json"));
    let runs = report["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 9);
    assert_eq!(report["method"], "gcond");
    assert!(runs.iter().all(|r| (0.0..=1.0).contains(&r["test_accuracy"].as_f64().unwrap())));
    assert!(report["std"].as_f64().unwrap() >= 0.0);
    assert!(dir.join("report.csv").is_file());
    assert_eq!(read_json(&dir.join("resolved-config.json"))["method"], "gcond");

    let (coreset_eval, cdir) = ws.run("evaluate", "eval-herding", &["--mode", "herding"]);
    assert_eq!(code(&coreset_eval), 0, "{}", stderr(&coreset_eval));
    assert_eq!(read_json(&cdir.join("report.json"))["method"], "herding");
}

#[test]
fn coreset_and_profile_write_outputs() {
    let ws = Workspace::new();
    let (out, dir) = ws.run("coreset", "core", &["--mode", "kcenter"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let coreset = read_json(&dir.join("coreset.json"));
    assert_eq!(coreset["method"], "kcenter");
    assert_eq!(coreset["nodes"].as_array().unwrap().len(), 6);

    let (out, dir) = ws.run("profile", "prof", &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = String::from_utf8_lossy(&out.stdout);
    for mode in ["gcond", "groc", "timgroc"] {
        assert!(table.contains(mode), "{table}");
    }
    let profile = read_json(&dir.join("profile.json"));
    let passes: Vec<u64> = profile["rows"].as_array().unwrap().iter().map(|r| r["passes"].as_u64().unwrap()).collect();
    assert_eq!(passes, vec![3, 9, 3]);

    let (out, dir) = ws.run("profile", "prof-one", &["--mode", "timgroc"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(read_json(&dir.join("profile.json"))["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn toml_configs_and_jobs_flag() {
    let ws = Workspace::new();
    fs::write(
        ws.path("tiny.toml"),
        r#"dataset = "planted:small:5"
eval_seeds = [0]
condense_seeds = [0]

[condense]
nodes = 6
epochs = 2
inits = 1
hidden = 16
generator_hidden = 8

[train]
epochs = 10
hidden = 8
"#,
    )
    .unwrap();
    let dir = ws.path("toml-run");
    let out = groc(&[
        "--jobs",
        "2",
        "evaluate",
        "--config",
        ws.path("tiny.toml").to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(read_json(&dir.join("report.json"))["runs"].as_array().unwrap().len(), 1);
}
