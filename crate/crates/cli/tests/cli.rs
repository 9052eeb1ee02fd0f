//! End-to-end runs of the `sivstark` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const EXAMPLE: &str = include_str!("../config/e4.toml");

/// Fast settings: fixed kappa, so no field solve.
const QUICK: &str = r#"
[probe]
kappa_MVpm_per_V = 0.21

[emitter]
f_max_GHz = 406600.0
alpha_MHz_per_MVpm2 = 15.0
e0_MVpm = 3.0
"#;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn config(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn run(&self, config: &Path, out: &str, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_sivstark"))
            .arg("--config")
            .arg(config)
            .arg("--out")
            .arg(self.path(out))
            .args(args)
            .output()
            .unwrap()
    }

    fn json(&self, rel: &str) -> Value {
        serde_json::from_str(&fs::read_to_string(self.path(rel)).unwrap()).unwrap()
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let ws = Workspace::new();
    let cfg = ws.config("run.toml", QUICK);
    for out in ["a", "b"] {
        assert_eq!(code(&ws.run(&cfg, out, &["--seed", "9", "simulate"])), 0);
    }
    assert_eq!(code(&ws.run(&cfg, "c", &["--seed", "10", "simulate"])), 0);
    let read = |out: &str, f: &str| fs::read(ws.path(&format!("{out}/spectra/{f}"))).unwrap();
    assert_eq!(read("a", "manifest.json"), read("b", "manifest.json"));
    assert_eq!(read("a", "spectrum_004.csv"), read("b", "spectrum_004.csv"));
    assert_ne!(read("a", "manifest.json"), read("c", "manifest.json"));
    let m = ws.json("a/spectra/manifest.json");
    assert_eq!(m["seed"], 9);
    assert_eq!(m["files"].as_array().unwrap().len(), 11);
}

#[test]
fn match_plan_is_deterministic() {
    let ws = Workspace::new();
    let cfg = ws.config("run.toml", QUICK);
    for out in ["a", "b"] {
        assert_eq!(code(&ws.run(&cfg, out, &["match"])), 0);
    }
    let plan = |out: &str| fs::read(ws.path(&format!("{out}/match/plan.json"))).unwrap();
    assert_eq!(plan("a"), plan("b"));
}

#[test]
fn malformed_config_exits_1_with_key_path() {
    let ws = Workspace::new();
    let cfg = ws.config("bad.toml", "[scan]\nintegration_time_s = \"long\"\n");
    let o = ws.run(&cfg, "out", &["simulate"]);
    assert_eq!(code(&o), 1);
    assert!(
        stderr(&o).contains("scan.integration_time_s"),
        "{}",
        stderr(&o)
    );

    let cfg = ws.config("unknown.toml", "[geometry]\ngap = 7.6\n");
    let o = ws.run(&cfg, "out", &["field"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("geometry.gap"), "{}", stderr(&o));

    let cfg = ws.config("syntax.toml", "[scan\n");
    assert_eq!(code(&ws.run(&cfg, "out", &["field"])), 1);
    assert!(!ws.path("out").exists());
}

#[test]
fn vacuum_local_field_equals_external() {
    let ws = Workspace::new();
    let cfg = ws.config(
        "vac.toml",
        "[geometry]\nepsilon = 1.0\nresolution_cells_per_gap = 128\n",
    );
    let o = ws.run(&cfg, "out", &["field"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = ws.json("out/field/report.json");
    assert_eq!(r["E_local_MVpm"], r["E_ext_MVpm"]);
    assert!(r["E_ext_MVpm"].as_f64().unwrap() > 0.0);
    let cut = fs::read_to_string(ws.path("out/field/line_cut.csv")).unwrap();
    assert_eq!(cut.lines().count(), 402);
}

#[test]
fn single_emitter_is_always_matched() {
    let ws = Workspace::new();
    let cfg = ws.config("one.toml", &format!("{QUICK}\n[ensemble]\nn = 1\n"));
    let o = ws.run(&cfg, "out", &["match"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(ws.json("out/match/plan.json")["matched_fraction"], 1.0);
}

#[test]
fn oracle_flag_on_small_and_large_ensembles() {
    let ws = Workspace::new();
    for (n, obj) in [(4, "max-matched"), (3, "min-max-residual")] {
        let cfg = ws.config(
            "small.toml",
            &format!("{QUICK}\n[ensemble]\nn = {n}\nseed = 5\n[matching]\nobjective = \"{obj}\"\n"),
        );
        let o = ws.run(&cfg, obj, &["match", "--oracle"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert_eq!(
            ws.json(&format!("{obj}/match/oracle.json"))["agreement"]["agrees"],
            true
        );
    }
    let cfg = ws.config("big.toml", QUICK);
    assert_eq!(code(&ws.run(&cfg, "big", &["match", "--oracle"])), 1);
}

#[test]
fn ensemble_file_round_trip() {
    let ws = Workspace::new();
    let cfg = ws.config("run.toml", QUICK);
    assert_eq!(code(&ws.run(&cfg, "a", &["match"])), 0);
    let cfg = ws.config(
        "from_file.toml",
        &format!("{QUICK}\n[ensemble]\nfile = \"a/match/ensemble.csv\"\n"),
    );
    assert_eq!(code(&ws.run(&cfg, "b", &["match"])), 0);
    let plan = |out: &str| fs::read(ws.path(&format!("{out}/match/plan.json"))).unwrap();
    assert_eq!(plan("a"), plan("b"));
}

#[test]
fn empty_voltage_list_gives_empty_manifest() {
    let ws = Workspace::new();
    let cfg = ws.config("empty.toml", &format!("{QUICK}\n[scan]\nvoltages_V = []\n"));
    assert_eq!(code(&ws.run(&cfg, "out", &["simulate"])), 0);
    assert_eq!(
        ws.json("out/spectra/manifest.json")["files"],
        Value::Array(vec![])
    );
}

#[test]
fn example_config_spans_more_than_10_ghz() {
    let ws = Workspace::new();
    // the example as shipped, with the field solve coarsened for speed
    let text = EXAMPLE.replace(
        "resolution_cells_per_gap = 304",
        "resolution_cells_per_gap = 128",
    );
    let cfg = ws.config("e4.toml", &text);
    let o = ws.run(&cfg, "out", &["simulate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = ws.json("out/spectra/manifest.json");
    let centers: Vec<f64> = m["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["predicted_center_GHz"].as_f64().unwrap())
        .collect();
    let span = centers.iter().cloned().fold(f64::MIN, f64::max)
        - centers.iter().cloned().fold(f64::MAX, f64::min);
    assert!(span >= 10.0, "span {span}");
}

#[test]
fn line_outside_fixed_window_exits_2() {
    let ws = Workspace::new();
    let cfg = ws.config(
        "far.toml",
        &format!(
            "{QUICK}\n[scan]\nvoltages_V = [0, 50]\nwindow = \"fixed\"\nstart_GHz = 406500.0\nstop_GHz = 406505.0\n"
        ),
    );
    let o = ws.run(&cfg, "out", &["simulate"]);
    assert_eq!(code(&o), 2);
    assert!(
        stderr(&o).contains("0 V") && stderr(&o).contains("50 V"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn fit_needs_four_usable_spectra() {
    let ws = Workspace::new();
    let cfg = ws.config(
        "three.toml",
        &format!("{QUICK}\n[scan]\nvoltages_V = [40, 60, 80]\n"),
    );
    assert_eq!(code(&ws.run(&cfg, "out", &["simulate"])), 0);
    let o = ws.run(&cfg, "out", &["fit"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn noiseless_pipeline_recovers_parameters() {
    let ws = Workspace::new();
    let cfg = ws.config(
        "clean.toml",
        &format!("{QUICK}\n[scan]\nnoise = \"noiseless\"\n"),
    );
    for cmd in ["simulate", "fit"] {
        let o = ws.run(&cfg, "out", &[cmd]);
        assert_eq!(code(&o), 0, "{cmd}: {}", stderr(&o));
    }
    let s = ws.json("out/fit/stark.json");
    let rel = |key: &str, truth: f64| (s[key].as_f64().unwrap() - truth).abs() / truth;
    assert!(rel("alpha_MHz_per_MVpm2", 15.0) < 1e-4, "{s}");
    assert!(rel("e0_MVpm", 3.0) < 1e-4, "{s}");
    assert!(rel("f_max_GHz", 406_600.0) < 1e-4, "{s}");
}

#[test]
fn noisy_pipeline_and_report() {
    let ws = Workspace::new();
    let cfg = ws.config("run.toml", QUICK);
    for cmd in ["simulate", "fit", "match", "report"] {
        let o = ws.run(&cfg, "out", &[cmd]);
        assert_eq!(code(&o), 0, "{cmd}: {}", stderr(&o));
    }
    let s = ws.json("out/fit/stark.json");
    let alpha = s["alpha_MHz_per_MVpm2"].as_f64().unwrap();
    assert!((alpha - 15.0).abs() / 15.0 < 0.03, "{alpha}");
    let table = fs::read_to_string(ws.path("out/fit/table.csv")).unwrap();
    assert_eq!(table.lines().count(), 12);

    let r = ws.json("out/report/report.json");
    assert_eq!(r["stark"], s);
    assert!(r.get("field").is_none());
    assert!(r["match"]["matched_count"].as_u64().unwrap() >= 1);
    let ladder = &r["transition_ladder_GHz"];
    let gap = |a: &str, b: &str| ladder[a].as_f64().unwrap() - ladder[b].as_f64().unwrap();
    assert!(gap("B", "C") > 0.0 && gap("A", "B") > 0.0);
    let manifest = ws.json("out/fit/manifest.json");
    assert_eq!(
        manifest["config_sha256"],
        ws.json("out/spectra/manifest.json")["config_sha256"]
    );
}

#[test]
fn reference_report_quarter_gap_field() {
    let ws = Workspace::new();
    let cfg = ws.config("ref.toml", "");
    let o = ws.run(&cfg, "out", &["field"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = ws.json("out/field/report.json");
    let e_ext = r["E_ext_MVpm"].as_f64().unwrap();
    assert!((e_ext - 0.82).abs() <= 0.082, "E_ext {e_ext} MV/m");
}
