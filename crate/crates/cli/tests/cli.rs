use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use belllab_cli::config::LoadedConfig;
use belllab_cli::config::ProtocolSpec;
use belllab_core::pipeline::{match_coincidences, postselect, table_of, CoincidencePolicy, MatchStrategy};
use belllab_core::protocol::run_source_experiment;
use belllab_core::{chsh, estimate};
use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn belllab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_belllab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn event_ready_run_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("event_ready.json");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = belllab(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let first = fs::read(a.join("trials.csv")).unwrap();
    assert_eq!(first, fs::read(b.join("trials.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("metadata.json")).unwrap(),
        fs::read(b.join("metadata.json")).unwrap()
    );
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("# belllab schema_version=1 seed=7\ntrial_id,x,y,a,b,ready\n"));
    assert_eq!(csv_rows(&a.join("trials.csv")).len(), 100);
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("event_ready.json");
    let out = tmp.path().join("o");
    let o = belllab(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "99",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let meta: Value = serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 99);
    assert_eq!(meta["config"]["seed"], 99);
}

#[test]
fn dark_counts_recorded_per_station() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "dark.json",
        r#"{
  "schema_version": 1,
  "seed": 4,
  "model": { "family": "singlet" },
  "protocol": { "kind": "source", "pair_rate": 1000.0, "dark_rate": 5000.0, "duration": 2.0 }
}"#,
    );
    let out = tmp.path().join("o");
    let o = belllab(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let meta: Value = serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    let run = &meta["run"];
    assert_eq!(run["kind"], "source");
    assert_eq!(run["expected_dark_events"], 10_000.0);
    for k in 0..2 {
        let dark = run["dark_events"][k].as_f64().unwrap();
        // Poisson(10⁴): 5σ = 500
        assert!((dark - 10_000.0).abs() < 500.0, "{dark}");
        let pair = run["pair_events"][k].as_f64().unwrap();
        let lines = csv_rows(&out.join(if k == 0 { "alice.csv" } else { "bob.csv" })).len() as f64;
        assert_eq!(lines, dark + pair);
    }
}

#[test]
fn invalid_fidelity_names_field_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("event_ready.json"))
        .unwrap()
        .replacen("0.97", "1.2", 1);
    let cfg = write(tmp.path(), "bad.json", &text);
    let o = belllab(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let line = text.lines().position(|l| l.contains("fidelity_a")).unwrap() + 1;
    let msg = stderr(&o);
    assert!(msg.contains("fidelity_a"), "{msg}");
    assert!(msg.contains(&format!("bad.json:{line}:")), "{msg}");
}

#[test]
fn schema_violations_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let unknown = write(
        tmp.path(),
        "u.json",
        "{\n  \"schema_version\": 1,\n  \"seed\": 1,\n  \"colour\": 3\n}\n",
    );
    let o = belllab(&["simulate", "--config", unknown.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("u.json:4:"), "{}", stderr(&o));
    assert!(stderr(&o).contains("colour"));

    let no_seed = write(
        tmp.path(),
        "s.json",
        r#"{"schema_version": 1, "protocol": {"kind": "trials", "n_trials": 5}}"#,
    );
    let o = belllab(&["simulate", "--config", no_seed.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"));

    let version = write(tmp.path(), "v.json", r#"{"schema_version": 9, "seed": 1}"#);
    assert_eq!(
        belllab(&["simulate", "--config", version.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn local_model_trials_give_unit_p_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "lhv.json",
        r#"{
  "schema_version": 1,
  "seed": 2,
  "model": { "family": "deterministic", "weights": [0.5, 0.5], "alice": [[1, -1], [1, 1]], "bob": [[1, -1], [-1, 1]] },
  "protocol": { "kind": "trials", "n_trials": 20000 }
}"#,
    );
    let out = tmp.path().join("o");
    assert!(belllab(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap()
    ])
    .status
    .success());
    let o = belllab(&["analyze", "--trials", out.join("trials.csv").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["seed"], 2);
    assert!(report["S"].as_f64().unwrap().abs() <= 2.0 + 1e-9);
    assert_eq!(report["hypothesis"]["p_value"], 1.0);
}

#[test]
fn starved_context_is_a_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let trials = write(
        tmp.path(),
        "t.csv",
        "trial_id,x,y,a,b,ready\n0,0,0,1,1,true\n1,0,1,1,-1,true\n2,1,0,-1,-1,true\n",
    );
    let o = belllab(&["analyze", "--trials", trials.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("warning"));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["S"].is_null());
    assert!(report["summary"]["contexts"][3]["e_ab"].is_null());
}

#[test]
fn malformed_csv_row_reports_line() {
    let tmp = tempfile::tempdir().unwrap();
    let trials = write(
        tmp.path(),
        "t.csv",
        "# belllab schema_version=1 seed=1\ntrial_id,x,y,a,b,ready\n0,0,0,1,1,true\n1,0,1,7,-1,true\n",
    );
    let o = belllab(&["analyze", "--trials", trials.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("t.csv:4:"), "{}", stderr(&o));
}

#[test]
fn post_selection_fixture_raw_passes_final_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("pearle_anomaly.json");
    let out = tmp.path().join("o");
    assert!(belllab(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap()
    ])
    .status
    .success());
    let o = belllab(&[
        "analyze",
        "--alice",
        out.join("alice.csv").to_str().unwrap(),
        "--bob",
        out.join("bob.csv").to_str().unwrap(),
        "--emissions",
        out.join("emissions.csv").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let ns = &report["no_signalling"];
    assert!(ns["raw"]["combined_p"].as_f64().unwrap() > 0.01);
    assert!(ns["final"]["combined_p"].as_f64().unwrap() < 1e-6);
    assert!(report["S"].as_f64().unwrap().abs() > 2.0);
    let paired = fs::read_to_string(out.join("paired.csv")).unwrap();
    assert!(paired.starts_with("# belllab schema_version=1 seed=11\nslot,x,y,a,b\n"));
}

#[test]
fn window_sweep_matches_direct_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("window_sweep.json");
    let out = tmp.path().join("o");
    let o = belllab(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out.join("window_sweep.csv"));
    let s_at = |w: f64| -> f64 {
        rows.iter().find(|r| r[0].parse::<f64>().unwrap() == w).unwrap()[1]
            .parse()
            .unwrap()
    };

    // two-point oracle: simulate and match directly
    let loaded = LoadedConfig::load(&cfg, None).unwrap();
    let ProtocolSpec::Source(src) = loaded.protocol().unwrap() else {
        panic!("source protocol")
    };
    let run = run_source_experiment(src, &loaded.model().unwrap(), loaded.seed()).unwrap();
    let direct = |w: f64| {
        let paired = match_coincidences(
            &run.alice,
            &run.bob,
            CoincidencePolicy::new(w, MatchStrategy::FixedLattice).unwrap(),
        )
        .unwrap();
        chsh(&estimate(&table_of(&postselect(&paired.pairs).final_pairs))).unwrap()
    };
    for w in [50.0, 1000.0] {
        assert_eq!(s_at(w), direct(w));
    }
    assert!((s_at(50.0) - s_at(1000.0)).abs() > 0.1);
    let segment: Vec<f64> = [50.0, 100.0, 200.0, 500.0, 1000.0].map(|w| s_at(w).abs()).to_vec();
    assert!(segment.windows(2).all(|p| p[1] < p[0]), "{segment:?}");
}

#[test]
fn theta_sweep_follows_cosine() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("theta_sweep.json");
    let out = tmp.path().join("o");
    let o = belllab(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(text.lines().nth(1) == Some("theta_rad,E,stderr,n"));
    let rows = csv_rows(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 32);
    let dev = rows
        .iter()
        .map(|r| (r[1].parse::<f64>().unwrap() + r[0].parse::<f64>().unwrap().cos()).abs())
        .fold(0.0, f64::max);
    assert!(dev < 0.01, "{dev}");
}

#[test]
fn empty_grid_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "g.json",
        r#"{"schema_version": 1, "seed": 1, "model": {"family": "singlet"},
"sweep": {"kind": "theta", "grid": {"values": []}}}"#,
    );
    let o = belllab(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("g.json:2:"), "{}", stderr(&o));
}

#[test]
fn feasibility_command() {
    let o = belllab(&["feasibility", configs().join("singlet_table.json").to_str().unwrap()]);
    assert!(o.status.success());
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["result"]["feasible"], false);
    let slack = r["result"]["certificate"]["slack"].as_f64().unwrap();
    assert!(slack >= 2.0 * std::f64::consts::SQRT_2 - 2.0 - 1e-9);

    let tmp = tempfile::tempdir().unwrap();
    let uniform = write(
        tmp.path(),
        "u.json",
        &format!("{{\"tables\": [{0}, {0}, {0}, {0}]}}", "[0.25, 0.25, 0.25, 0.25]"),
    );
    let r: Value = serde_json::from_slice(&belllab(&["feasibility", uniform.to_str().unwrap()]).stdout).unwrap();
    assert_eq!(r["result"]["feasible"], true);
    assert_eq!(r["result"]["joint"].as_array().unwrap().len(), 16);

    let bad = write(tmp.path(), "b.json", "{\n\"tables\": [[0.5, 0.5, 0.5, 0.5], [0.25, 0.25, 0.25, 0.25], [0.25, 0.25, 0.25, 0.25], [0.25, 0.25, 0.25, 0.25]]}");
    let o = belllab(&["feasibility", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("b.json:2:"), "{}", stderr(&o));
}

#[test]
fn bad_thread_count_exits_2() {
    let o = Command::new(env!("CARGO_BIN_EXE_belllab"))
        .args(["feasibility", configs().join("singlet_table.json").to_str().unwrap()])
        .env("BELLLAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
