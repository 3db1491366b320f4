use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bayesrm::io;
use bayesrm::synthetic::{expected_row_count, WorldConfig};
use tempfile::TempDir;

fn bayesrm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bayesrm"))
        .args(args)
        .output()
        .expect("run bayesrm")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config() -> WorldConfig {
    let mut cfg = WorldConfig {
        prompts_train: 30,
        prompts_val: 4,
        responses_per_prompt: 32,
        ensemble_size: 2,
        k_grid: vec![0.0, 1.0],
        ..WorldConfig::default()
    };
    cfg.training.steps = 200;
    cfg.training.learning_rate = 5e-3;
    cfg
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Workspace {
            dir: tempfile::tempdir().unwrap(),
        };
        io::write_json(&ws.path("config.json"), &small_config()).unwrap();
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn run_ok(&self, args: &[&str]) -> Output {
        let o = bayesrm(args);
        assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
        o
    }

    /// gen-data, train-reward and fit-laplace into `data/`, `model.json`
    /// and `posterior.json`.
    fn pipeline(&self) {
        self.run_ok(&[
            "gen-data",
            "--config",
            &self.arg("config.json"),
            "--out",
            &self.arg("data"),
        ]);
        self.run_ok(&[
            "train-reward",
            "--config",
            &self.arg("config.json"),
            "--data",
            &self.arg("data"),
            "--out",
            &self.arg("model.json"),
        ]);
        self.run_ok(&[
            "fit-laplace",
            "--model",
            &self.arg("model.json"),
            "--data",
            &self.arg("data"),
            "--out",
            &self.arg("posterior.json"),
        ]);
    }
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn gen_data_is_deterministic_and_records_config_hash() {
    let ws = Workspace::new();
    for out in ["a", "b"] {
        ws.run_ok(&["gen-data", "--config", &ws.arg("config.json"), "--out", &ws.arg(out)]);
    }
    for f in ["preferences.csv", "validation.csv", "manifest.json", "config.json"] {
        assert_eq!(read(&ws.path("a").join(f)), read(&ws.path("b").join(f)), "{f}");
    }
    let manifest = String::from_utf8(read(&ws.path("a/manifest.json"))).unwrap();
    assert!(manifest.contains(&small_config().hash()));

    ws.run_ok(&[
        "gen-data",
        "--config",
        &ws.arg("config.json"),
        "--seed",
        "77",
        "--out",
        &ws.arg("c"),
    ]);
    assert_ne!(read(&ws.path("a/preferences.csv")), read(&ws.path("c/preferences.csv")));
}

#[test]
fn missing_config_is_a_usage_error() {
    let ws = Workspace::new();
    let o = bayesrm(&["gen-data", "--config", &ws.arg("absent.json"), "--out", &ws.arg("x")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cannot read config file"), "{}", stderr(&o));

    let o = bayesrm(&["gen-data", "--out", &ws.arg("x")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn version_mismatch_is_a_schema_error() {
    let ws = Workspace::new();
    let text = fs::read_to_string(ws.path("config.json")).unwrap();
    fs::write(
        ws.path("v2.json"),
        text.replace("\"format_version\": 1", "\"format_version\": 2"),
    )
    .unwrap();
    let o = bayesrm(&["gen-data", "--config", &ws.arg("v2.json"), "--out", &ws.arg("x")]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("version 2"));

    fs::write(ws.path("broken.json"), "{\"format_version\": 1, \"d_in\": }").unwrap();
    let o = bayesrm(&["gen-data", "--config", &ws.arg("broken.json"), "--out", &ws.arg("x")]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("line 1"));
}

#[test]
fn score_with_zero_k_equals_mean() {
    let ws = Workspace::new();
    ws.pipeline();
    let o = ws.run_ok(&[
        "score",
        "--model",
        &ws.arg("model.json"),
        "--posterior",
        &ws.arg("posterior.json"),
        "--input",
        "0.3,-1,0.2,0,0.5,1.5,-0.7,0.1",
        "--penalty",
        "std",
        "--k",
        "0,2",
    ]);
    let line = stdout(&o);
    let field = |key: &str| -> f64 {
        line.split_whitespace()
            .find_map(|t| t.strip_prefix(key))
            .unwrap_or_else(|| panic!("{key} missing in {line}"))
            .parse()
            .unwrap()
    };
    let mean = field("mean=");
    let variance = field("variance=");
    assert!(variance > 0.0);
    assert_eq!(field("std@0="), mean);
    assert!((field("std@2=") - (mean - 2.0 * variance.sqrt())).abs() < 1e-12);
}

#[test]
fn stale_posterior_has_its_own_exit_code() {
    let ws = Workspace::new();
    ws.pipeline();
    let mut cfg = small_config();
    cfg.training.steps += 1;
    io::write_json(&ws.path("other.json"), &cfg).unwrap();
    ws.run_ok(&[
        "train-reward",
        "--config",
        &ws.arg("other.json"),
        "--data",
        &ws.arg("data"),
        "--out",
        &ws.arg("model2.json"),
    ]);
    let o = bayesrm(&[
        "score",
        "--model",
        &ws.arg("model2.json"),
        "--posterior",
        &ws.arg("posterior.json"),
        "--input",
        "0,0,0,0,0,0,0,0",
    ]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
}

#[test]
fn bon_curve_at_n_one_is_the_column_mean() {
    let ws = Workspace::new();
    ws.pipeline();
    ws.run_ok(&[
        "score",
        "--model",
        &ws.arg("model.json"),
        "--posterior",
        &ws.arg("posterior.json"),
        "--validation",
        &ws.arg("data/validation.csv"),
        "--k",
        "1",
        "--out",
        &ws.arg("pool.csv"),
    ]);
    let o = ws.run_ok(&[
        "bon-curve",
        "--pool",
        &ws.arg("pool.csv"),
        "--n",
        "1",
        "--evaluator",
        "proxy,gold",
    ]);
    let rows = io::parse_curve(Path::new("stdout"), &stdout(&o)).unwrap();
    let pool = io::load_pool(&ws.path("pool.csv")).unwrap();
    for ev in ["proxy", "gold"] {
        let col = pool.column_values(ev).unwrap();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let row = rows.iter().find(|r| r.evaluator == ev).unwrap();
        assert_eq!((row.n, row.kl), (1, 0.0));
        assert!((row.value - mean).abs() < 1e-12, "{ev}");
    }

    let o = bayesrm(&[
        "bon-curve",
        "--pool",
        &ws.arg("pool.csv"),
        "--n",
        "1",
        "--evaluator",
        "silver",
    ]);
    assert_eq!(o.status.code(), Some(6));
    let o = bayesrm(&["bon-curve", "--pool", &ws.arg("pool.csv"), "--n", "33"]);
    assert_eq!(o.status.code(), Some(7));
    let o = bayesrm(&[
        "bon-curve",
        "--pool",
        &ws.arg("pool.csv"),
        "--n",
        "2",
        "--penalty",
        "var",
        "--k",
        "1",
    ]);
    assert!(o.status.success());
}

#[test]
fn experiment_emits_one_row_per_grid_cell() {
    let ws = Workspace::new();
    ws.run_ok(&[
        "experiment",
        "--config",
        &ws.arg("config.json"),
        "--out",
        &ws.arg("exp"),
    ]);
    let rows = io::load_curve(&ws.path("exp/curves.csv")).unwrap();
    let cfg = small_config();
    // MAP and Ens, plus LA and LA-Ens per (kind, k).
    let methods = 2 + 2 * cfg.penalty_kinds.len() * cfg.k_grid.len();
    assert_eq!(rows.len(), methods * cfg.ns().len() * 2);
    assert_eq!(rows.len(), expected_row_count(&cfg));

    // k = 0 penalized curves coincide with their unpenalized baselines.
    for r in rows.iter().filter(|r| r.method == "LA-var" && r.k == 0.0) {
        let map = rows
            .iter()
            .find(|m| m.method == "MAP" && m.n == r.n && m.evaluator == r.evaluator)
            .unwrap();
        assert_eq!(r.value, map.value);
    }
}

#[test]
fn verify_passes_and_detects_a_perturbed_weight() {
    let o = bayesrm(&["verify"]);
    assert!(o.status.success());
    let report = stdout(&o);
    assert!(!report.contains("FAIL"));
    let families: std::collections::HashSet<&str> = report
        .lines()
        .filter_map(|l| l.split_once('[').and_then(|(_, r)| r.split_once(']')).map(|(f, _)| f))
        .collect();
    assert!(families.len() >= 4, "{families:?}");

    let o = bayesrm(&["verify", "--perturb-bon-weight", "1e-6"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL [BoN weight-sum identity]"));
}
