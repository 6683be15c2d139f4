use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 5

[synth]
subjects = 6
fall_windows = 16
adl_windows = 16

[experiment]
rounds = 2
head_hidden = [6]

[experiment.autoencoder]
hidden = [6, 4]

[experiment.head]
epochs = 5

[loc.regressor]
kind = "knn"
k = 3
"#;

fn fallchain(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fallchain"))
        .current_dir(dir)
        .args(args)
        .env_remove("FALLCHAIN_SEED")
        .env_remove("FALLCHAIN_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = fallchain(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    std::fs::read(dir.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

#[test]
fn every_subcommand_has_help() {
    let dir = tempfile::tempdir().unwrap();
    for sub in [
        "ingest",
        "train-fed",
        "train-central",
        "eval-fall",
        "build-map",
        "train-loc",
        "eval-loc",
        "extract-features",
        "train-vision",
        "eval-vision",
        "simulate",
        "report",
        "synth",
        "config",
    ] {
        let out = fallchain(dir.path(), &[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"), "{sub}");
    }
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("t.csv"), "Timestamp,X_Pos,Y_Pos,02:00:00:00:00:01\n0,1,1,-50\n").unwrap();
    let out = fallchain(d, &["eval-loc", "--model", "missing.json", "--table", "t.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not fitted"));

    assert_eq!(fallchain(d, &["no-such-command"]).status.code(), Some(1));
    std::fs::write(d.join("bad.toml"), "sede = 1\n").unwrap();
    assert_eq!(fallchain(d, &["--config", "bad.toml", "config"]).status.code(), Some(1));

    // malformed detection file: exit 1 with the file and line in the message
    std::fs::create_dir_all(d.join("det")).unwrap();
    std::fs::write(d.join("classes.txt"), "0 person\n").unwrap();
    std::fs::write(d.join("det/f.txt"), "0 0.5 0.5 0.2 0.2 0.9\n0 0.5 x 0.2 0.2 0.9\n").unwrap();
    let out = fallchain(d, &["extract-features", "--detections", "det", "--class-map", "classes.txt", "--out", "f.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("f.txt:2"), "{err}");
}

#[test]
fn config_precedence_file_env_flag() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.toml"), "seed = 11\n").unwrap();
    let seed_of = |out: Output| {
        let text = String::from_utf8(out.stdout).unwrap();
        text.lines().find(|l| l.starts_with("seed = ")).unwrap().to_string()
    };
    let run = |env: Option<&str>, flag: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_fallchain"));
        c.current_dir(d).env_remove("FALLCHAIN_SEED").args(["--config", "c.toml", "config"]);
        if let Some(e) = env {
            c.env("FALLCHAIN_SEED", e);
        }
        if let Some(f) = flag {
            c.args(["--seed", f]);
        }
        c.output().unwrap()
    };
    assert_eq!(seed_of(run(None, None)), "seed = 11");
    assert_eq!(seed_of(run(Some("22"), None)), "seed = 22");
    assert_eq!(seed_of(run(Some("22"), Some("33"))), "seed = 33");
}

#[test]
fn full_toolchain_on_a_synthetic_workspace() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.toml"), SMALL).unwrap();
    let cfg = ["--config", "small.toml"];
    let with = |rest: &[&str]| -> Vec<String> { cfg.iter().chain(rest).map(|s| s.to_string()).collect() };
    let run = |rest: &[&str]| {
        let args = with(rest);
        ok(d, &args.iter().map(String::as_str).collect::<Vec<_>>())
    };

    run(&["synth", "--out", "ws", "--frames", "60", "--waypoints", "8"]);

    // fall stage
    run(&["ingest", "--out", "data.json", "--csv", "windows.csv"]);
    run(&["train-fed", "--data", "data.json", "--out", "fed_a", "--seed", "1"]);
    run(&["train-fed", "--data", "data.json", "--out", "fed_b", "--seed", "1"]);
    assert_eq!(read(d, "fed_a/model.json"), read(d, "fed_b/model.json"));
    run(&["train-central", "--data", "data.json", "--out", "central"]);
    run(&["eval-fall", "--model", "fed_a/model.json", "--data", "data.json", "--out", "fall_eval.json"]);
    let fall_eval: serde_json::Value = serde_json::from_slice(&read(d, "fall_eval.json")).unwrap();
    assert!(fall_eval["acc"].as_f64().unwrap() > 0.5);

    // localization
    run(&["build-map", "--logs", "ws/logs", "--map", "ws/map.pgm", "--out", "map"]);
    let filled = String::from_utf8(read(d, "map/table_filled.csv")).unwrap();
    assert!(filled.lines().skip(1).all(|l| l.split(',').all(|c| !c.is_empty())));
    assert!(d.join("map/heatmaps").read_dir().unwrap().count() >= 3);
    run(&["train-loc", "--table", "map/table.csv", "--out", "loc.json", "--features", "raw", "--floor-dbm", "-95"]);
    run(&["eval-loc", "--model", "loc.json", "--table", "map/table.csv", "--out", "loc_eval.json"]);
    let loc: serde_json::Value = serde_json::from_slice(&read(d, "loc_eval.json")).unwrap();
    assert_eq!(loc["model"], "knn");
    assert_eq!(loc["features"], "raw");

    // vision
    let v = |rest: &[&str]| {
        let mut a = rest.to_vec();
        a.extend(["--class-map", "ws/vision/classes.txt"]);
        run(&a)
    };
    v(&["extract-features", "--detections", "ws/vision/detections", "--labels", "ws/vision/labels.csv", "--out", "features.csv"]);
    run(&["train-vision", "--features", "features.csv", "--out", "vision.json"]);
    v(&[
        "eval-vision",
        "--detections",
        "ws/vision/detections",
        "--truths",
        "ws/vision/truths",
        "--times",
        "ws/vision/times.csv",
        "--model",
        "vision.json",
        "--labels",
        "ws/vision/labels.csv",
        "--out",
        "vision_eval.json",
    ]);
    let vis: serde_json::Value = serde_json::from_slice(&read(d, "vision_eval.json")).unwrap();
    assert!(vis["detection"]["map50"].as_f64().unwrap() > 0.5);
    assert!(vis["scene_accuracy"].as_f64().unwrap() > 0.8);
    assert_eq!(vis["detection"]["interpolation"], "all-points");

    // mission, twice
    for out in ["sim_a", "sim_b"] {
        run(&[
            "simulate",
            "--scenario",
            "ws/scenarios/fall.json",
            "--fall-model",
            "fed_a/model.json",
            "--loc-model",
            "loc.json",
            "--vision-model",
            "vision.json",
            "--out",
            out,
        ]);
    }
    for f in ["events.jsonl", "alerts.jsonl", "feedback.jsonl", "metrics.json"] {
        assert_eq!(read(d, &format!("sim_a/{f}")), read(d, &format!("sim_b/{f}")), "{f}");
    }
    let missing = fallchain(d, &["simulate", "--preset", "fall", "--out", "sim_c"]);
    assert_eq!(missing.status.code(), Some(1));

    run(&[
        "report", "--out", "report", "--sim", "sim_a", "--fall", "fed_a", "--loc", "loc_eval.json", "--vision",
        "vision_eval.json", "--table", "map/table.csv", "--map", "ws/map.pgm",
    ]);
    let report = String::from_utf8(read(d, "report/report.json")).unwrap();
    assert!(report.contains("99.99851%"), "{report}");
    assert!(report.contains("serial_alternative"));
    let csv = String::from_utf8(read(d, "report/report.csv")).unwrap();
    assert!(csv.contains("reliability,accuracy,99.99851%"));
    assert!(d.join("report/heatmaps").is_dir());
}

#[test]
fn ingest_walks_a_sisfall_tree() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // 10 s at 200 Hz; falls get one large spike in the middle
    let trial = |fall: bool, phase: i32| {
        (0..2000)
            .map(|i: i32| {
                let base = 250 + (i + phase) % 7;
                let ax = if fall && (990..1010).contains(&i) { 3500 } else { base };
                format!("{ax},{},{},10,-20,5,{},{},{};\n", -base, 30, ax / 4, -base / 4, 8)
            })
            .collect::<String>()
    };
    for s in ["SA01", "SA02", "SE01"] {
        let sub = d.join("sisfall").join(s);
        std::fs::create_dir_all(&sub).unwrap();
        std::fs::write(sub.join(format!("F01_{s}_R01.txt")), trial(true, 1)).unwrap();
        std::fs::write(sub.join(format!("D01_{s}_R01.txt")), trial(false, 2)).unwrap();
    }
    std::fs::write(d.join("sisfall/Readme.txt"), "not a trial\n").unwrap();
    ok(d, &["ingest", "--sisfall", "sisfall", "--out", "data.json"]);
    let data: serde_json::Value = serde_json::from_slice(&read(d, "data.json")).unwrap();
    let subjects = data["subjects"].as_array().unwrap();
    let ids: Vec<&str> = subjects.iter().map(|s| s["subject_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["SA01", "SA02", "SE01"]);
    for s in subjects {
        let labels: Vec<u64> = s["windows"].as_array().unwrap().iter().map(|w| w["label"].as_u64().unwrap()).collect();
        assert!(labels.contains(&0) && labels.contains(&1), "{labels:?}");
    }

    std::fs::write(d.join("sisfall/SA01/D02_SA01_R01.txt"), "1,2,3;\n").unwrap();
    let out = fallchain(d, &["ingest", "--sisfall", "sisfall", "--out", "data2.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("D02_SA01_R01.txt"));
}
