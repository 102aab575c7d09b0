use std::path::Path;
use std::process::{Command, Output};

use bisac_cli::{presets, run_scenario, run_sweep, CliError, Scenario};

fn bisac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bisac")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL_COMM: &str = r#"{
  "name": "small",
  "system": { "n_tx": 4, "n_rx": 4, "sig_len": 256 },
  "channels": { "model": "los", "tag_deg": 45, "tag_gain": 0.8, "ue_deg": 126, "ue_gain": 0.8, "h_tu": 0.5, "h_tu_max": 0.5 },
  "stage": { "kind": "comm", "gamma_tth_db": 10, "gamma_apth_db": 8 },
  "trials": 50,
  "seed": 7
}"#;

#[test]
fn run_writes_the_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.json", SMALL_COMM);
    let out = dir.path().join("out");
    let o = bisac(&["run", "--scenario", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["scenario.json", "beampattern.csv", "reference_beampattern.csv", "trace.json", "beamformer.json", "metrics.json", "trials.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let bp = std::fs::read_to_string(out.join("beampattern.csv")).unwrap();
    assert!(bp.starts_with("theta_deg,overall_db,comm_db,tag_db,probe_db,"));
    assert_eq!(bp.lines().count(), 362);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert!(m["metrics"]["sinr_tag_db"].as_f64().unwrap() >= 10.0 - 1e-5);
}

#[test]
fn malformed_config_exits_1_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SMALL_COMM.replace("\"sig_len\": 256", "\"sig_len\": 256, \"power_w\": -1");
    let cfg = write(dir.path(), "bad.json", &bad);
    let o = bisac(&["run", "--scenario", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("system.power_w"), "{}", stderr(&o));

    let cfg = write(dir.path(), "broken.json", "{ \"name\": ");
    let o = bisac(&["validate", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("parse"));
}

#[test]
fn infeasible_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "inf.json", &SMALL_COMM.replace("\"gamma_tth_db\": 10", "\"gamma_tth_db\": 90"));
    let o = bisac(&["run", "--scenario", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn validate_and_presets_commands() {
    let o = bisac(&["presets"]);
    assert!(o.status.success());
    let listed: Vec<String> = String::from_utf8(o.stdout).unwrap().lines().map(str::to_string).collect();
    assert_eq!(listed, presets::list_presets());
    let o = bisac(&["validate", "fig12"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = bisac(&["validate", "fig99"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("fig3"));
}

#[test]
fn same_seed_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let s = Scenario::from_json(SMALL_COMM).unwrap();
    let a = run_scenario(&s, &dir.path().join("a")).unwrap();
    let b = run_scenario(&s, &dir.path().join("b")).unwrap();
    assert_eq!(a.files.len(), b.files.len());
    for (fa, fb) in a.files.iter().zip(&b.files) {
        assert_eq!(std::fs::read(fa).unwrap(), std::fs::read(fb).unwrap(), "{}", fa.display());
    }
    let mut t = s.clone();
    t.seed = 8;
    let c = run_scenario(&t, &dir.path().join("c")).unwrap();
    assert_ne!(a.trials["sinr_ue"].estimate, c.trials["sinr_ue"].estimate);
}

#[test]
fn sweep_writes_long_format_csv() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL_COMM.replace(
        "\"trials\": 50,",
        "\"sweep\": { \"parameter\": \"power_dbm\", \"from\": -4, \"to\": 0, \"step\": 2 }, \"trials\": 0,",
    );
    let s = Scenario::from_json(&text).unwrap();
    let p = run_sweep(&s, dir.path()).unwrap();
    let mut r = csv::Reader::from_path(&p).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), ["sweep_param", "value", "metric", "analytic", "empirical", "ci95"]);
    let rates: Vec<f64> = r
        .records()
        .map(|x| x.unwrap())
        .filter(|x| &x[2] == "rate")
        .map(|x| x[3].parse().unwrap())
        .collect();
    assert_eq!(rates.len(), 3);
    assert!(rates.windows(2).all(|w| w[1] >= w[0]));

    let none = Scenario::from_json(SMALL_COMM).unwrap();
    match run_sweep(&none, dir.path()) {
        Err(CliError::Invalid { key, .. }) => assert_eq!(key, "sweep"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn infeasible_sweep_points_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL_COMM.replace(
        "\"trials\": 50,",
        "\"sweep\": { \"parameter\": \"gamma_tth_db\", \"from\": 10, \"to\": 90, \"step\": 80 }, \"trials\": 0,",
    );
    let p = run_sweep(&Scenario::from_json(&text).unwrap(), dir.path()).unwrap();
    let body = std::fs::read_to_string(p).unwrap();
    assert!(body.contains("gamma_tth_db,90,infeasible,,,"), "{body}");
}
