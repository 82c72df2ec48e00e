use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ntl-change"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = bin(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn scenario() -> Value {
    json!({
        "zone_id": "town",
        "start_date": "2020-01-01",
        "length": 420,
        "baseline": 30.0,
        "seasonal_amplitude": 3.0,
        "change": {"kind": "abrupt_drop", "depth": 12.0, "recovery_days": null},
        "change_start": "2020-11-01",
        "seed": 3
    })
}

/// Simulates into `dir` and rewrites its config for a fast run.
fn simulate(dir: &Path) {
    let spec = dir.join("scenario_in.json");
    fs::create_dir_all(dir).unwrap();
    fs::write(&spec, scenario().to_string()).unwrap();
    ok(&["simulate", "--scenario", s(&spec), "--out", s(dir)]);
    let path = dir.join("config.json");
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    cfg["smoothing_window"] = json!(7);
    cfg["train"]["input_window"] = json!(20);
    cfg["train"]["output_window"] = json!(10);
    cfg["train"]["epochs"] = json!({"FCNN": 4, "CNN": 2, "LSTM": 2});
    cfg["detect"]["segments"]["min_persistence"] = json!(20);
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
}

fn no_temp_files(dir: &Path) {
    for entry in walk(dir) {
        let name = entry.file_name().unwrap().to_string_lossy().into_owned();
        assert!(!name.contains(".tmp"), "leftover temporary {name}");
    }
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn simulate_train_detect_eval_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    simulate(&dir);
    for f in ["series.csv", "truth.csv", "scenario.json", "config.json"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let truth = fs::read_to_string(dir.join("truth.csv")).unwrap();
    assert_eq!(truth, "zone_id,start,end,change_type,unit\ntown,2020-11-01,,conflict,daily\n");

    let cfg = dir.join("config.json");
    ok(&["train", "--config", s(&cfg)]);
    for arch in ["fcnn", "cnn", "lstm"] {
        assert!(dir.join("models").join(format!("{arch}.json")).exists());
    }
    let history = fs::read_to_string(dir.join("logs/fcnn_history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("epoch,train_mae,val_mae"));
    assert_eq!(history.lines().count(), 1 + 4);

    ok(&["detect", "--config", s(&cfg)]);
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["format"], "ntl-change/report/v1");
    assert_eq!(report["zone_id"], "town");
    let forecast = fs::read_to_string(dir.join("forecast.csv")).unwrap();
    assert_eq!(forecast.lines().next(), Some("date,observed,fcnn,cnn,lstm,ensemble,coverage"));
    assert_eq!(forecast.lines().count(), 1 + 420);

    ok(&["eval", "--config", s(&cfg)]);
    let eval: Value = serde_json::from_str(&fs::read_to_string(dir.join("eval.json")).unwrap()).unwrap();
    assert_eq!(eval["format"], "ntl-change/eval/v1");
    assert_eq!(eval["change_type"], "conflict");
    assert!(eval["truth_units"].as_u64().unwrap() > 0);

    ok(&["plot", "--config", s(&cfg)]);
    let phases = fs::read_to_string(dir.join("plot/phases.csv")).unwrap();
    assert!(phases.starts_with("phase,start,end\nbaseline,"));
    let series = fs::read_to_string(dir.join("plot/series.csv")).unwrap();
    assert!(series.lines().any(|l| l.contains(",ensemble,")));
    assert!(dir.join("plot/residuals.csv").exists());
    assert!(dir.join("plot/rates.csv").exists());
    no_temp_files(&dir);

    // Same config and seed elsewhere: byte-identical report.
    let other = tmp.path().join("again");
    ok(&["train", "--config", s(&cfg), "--out", s(&other)]);
    ok(&["detect", "--config", s(&cfg), "--out", s(&other)]);
    assert_eq!(
        fs::read(dir.join("report.json")).unwrap(),
        fs::read(other.join("report.json")).unwrap()
    );
    assert_eq!(
        fs::read(dir.join("models/lstm.json")).unwrap(),
        fs::read(other.join("models/lstm.json")).unwrap()
    );

    // Checkpoints trained with other windows are refused.
    let mut cfg_json: Value = serde_json::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    cfg_json["train"]["input_window"] = json!(24);
    let wrong = dir.join("wrong_windows.json");
    fs::write(&wrong, cfg_json.to_string()).unwrap();
    let out = bin(&["detect", "--config", s(&wrong)]);
    assert_eq!(out.status.code(), Some(5), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("w_i = 20"));
}

#[test]
fn presets_and_seed_override() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["simulate", "--preset", "disaster", "--seed", "4", "--out", s(&a)]);
    ok(&["simulate", "--preset", "disaster", "--seed", "5", "--out", s(&b)]);
    let sa = fs::read_to_string(a.join("series.csv")).unwrap();
    let sb = fs::read_to_string(b.join("series.csv")).unwrap();
    assert_eq!(sa.lines().count(), 1 + 1826);
    assert_ne!(sa, sb);
    let cfg: Value = serde_json::from_str(&fs::read_to_string(a.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["training_end"], "2015-07-19");
    assert_eq!(cfg["train"]["seed"], 4);
    let out = bin(&["simulate", "--preset", "flood", "--out", s(&a)]);
    assert_eq!(out.status.code(), Some(8));
}

#[test]
fn ingest_smooths_zone_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("raw.csv");
    fs::write(&input, "date,radiance,gap\n2021-01-01,1,0\n2021-01-02,3,0\n2021-01-03,,1\n2021-01-04,8,0\n").unwrap();
    let out = tmp.path().join("o");
    ok(&["ingest", "--input", s(&input), "--window", "2", "--zone-id", "z", "--out", s(&out)]);
    let text = fs::read_to_string(out.join("zone.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "date,radiance,gap");
    assert_eq!(rows[2], "2021-01-02,2,0");
    assert!(rows[3].ends_with(",1"));
    assert_eq!(rows[4], "2021-01-04,8,0");
}

#[test]
fn failures_exit_nonzero_and_write_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("short");
    fs::create_dir_all(&dir).unwrap();
    let series = dir.join("series.csv");
    // 40 consecutive days starting 2021-01-01.
    let mut text = String::from("date,radiance,gap\n");
    let start = chrono::NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
    for d in 0..40 {
        text.push_str(&format!("{},{},0\n", start + chrono::Duration::days(d), 10 + d % 3));
    }
    fs::write(&series, text).unwrap();
    let out = dir.join("out");
    let r = bin(&["train", "--series", s(&series), "--training-end", "2021-02-05", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(9), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stderr).contains("need 90"));
    assert!(!out.join("models").exists());

    let r = bin(&["train"]);
    assert_eq!(r.status.code(), Some(8));

    let cfg = dir.join("typo.json");
    fs::write(&cfg, r#"{"version": 1, "zone_id": "z", "series": "series.csv", "training_end": "2021-02-01", "t_precent": 3}"#).unwrap();
    let r = bin(&["detect", "--config", s(&cfg)]);
    assert_eq!(r.status.code(), Some(8));

    let r = bin(&["detect", "--series", s(&series), "--training-end", "2021-02-01", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(5));
    assert!(!out.join("report.json").exists());
}
