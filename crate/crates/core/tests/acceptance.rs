//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. Runs without the libtest harness so the lines always print.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::oracle::{dtw_brute_force, oracle_ap, overlap, ucs_cost};
use fallchain::fedsim::{run_centralized, run_experiment, run_federated, synth_subject, ClientState, ExperimentConfig, TrainingMode};
use fallchain::fingerprint::{dtw, fill_missing, render_heatmap, Cell, FingerprintRow, FingerprintTable, Mac, OccupancyRaster, SurveyLogs, DEFAULT_FLOOR_DBM};
use fallchain::locmodel::{FeatureMode, LocModel, RegressorSpec};
use fallchain::mission::{
    combined_reliability, default_anchors, plan_path, simulate_navigation, synth_loc_samples, synth_room,
    synth_survey, MissionError, NavOutcome, RadioModel, ReliabilityModel,
};
use fallchain::nn::{grad_check, Autoencoder, AutoencoderConfig, CellKind, Classifier, TrainConfig};
use fallchain::preproc::{LabeledWindow, PreprocConfig, Window};
use fallchain::seeds;
use fallchain::vision::{ap50, extract_features, iou, synth_scene_set, BBox, Detection, SceneClassifier, SceneClassifierSpec};
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn reliability() -> Outcome {
    let r = combined_reliability(&ReliabilityModel { detect_fail: 0.0081, nav_fail: 0.05, vision_fail: 0.0367 })
        .map_err(|e| e.to_string())?;
    let shown = format!("{:.5e}", r.failure);
    let pct = format!("{:.5}%", r.accuracy_pct);
    check(shown == "1.48635e-5", format!("failure {shown}"))?;
    check(pct == "99.99851%", format!("accuracy {pct}"))?;
    Ok(format!("failure {shown}, accuracy {pct}"))
}

fn random_window(seed: u64, len: usize) -> Window {
    let mut rng = seeds::stream_rng(seed, "acceptance.window", 0);
    Window {
        values: (0..len).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect(),
        source: "acceptance".into(),
        start_index: 0,
    }
}

fn fedavg_degeneracy() -> Outcome {
    let windows: Vec<Window> = (0..50).map(|i| random_window(i, 40)).collect();
    let config = AutoencoderConfig { hidden: vec![8, 6, 4], cell: CellKind::Gated };
    let train = TrainConfig { learning_rate: 0.05, epochs: 1, batch_size: 50, seed: 7 };
    let client = ClientState::new(0, windows.clone()).map_err(|e| e.to_string())?;
    let fl = run_federated(&[client], Autoencoder::new(config.clone(), 3).unwrap(), 5, &train).map_err(|e| e.to_string())?;
    let cl = run_centralized(&windows, Autoencoder::new(config, 3).unwrap(), 5, &train).map_err(|e| e.to_string())?;
    let same = fl.model.params.values.iter().zip(&cl.model.params.values).all(|(a, b)| a.to_bits() == b.to_bits());
    check(same && fl.model.params.layout == cl.model.params.layout, "parameters differ")?;
    Ok(format!("{} parameters bit-equal after 5 rounds", fl.model.params.len()))
}

fn gradients() -> Outcome {
    let config = AutoencoderConfig { hidden: vec![4, 3, 2], cell: CellKind::Gated };
    let ae = Autoencoder::new(config, 11).unwrap();
    let data: Vec<Window> = (0..3).map(|i| random_window(100 + i, 8)).collect();
    let ae_report = grad_check(&ae, &data, 1e-5, usize::MAX, 1).map_err(|e| e.to_string())?;
    check(ae_report.checked == ae.params.len(), "autoencoder check skipped coordinates")?;
    let clf = Classifier::from_encoder(&ae, vec![16], 2, 5).map_err(|e| e.to_string())?;
    let labeled: Vec<LabeledWindow> = (0..6)
        .map(|i| LabeledWindow { window: random_window(200 + i, 8), label: (i % 2) as u8 })
        .collect();
    let head_report = grad_check(&clf, &labeled, 1e-5, usize::MAX, 2).map_err(|e| e.to_string())?;
    check(ae_report.max_rel_error < 1e-4, format!("autoencoder rel error {:e}", ae_report.max_rel_error))?;
    check(head_report.max_rel_error < 1e-4, format!("head rel error {:e}", head_report.max_rel_error))?;
    Ok(format!(
        "autoencoder {:.2e} over {} coords, head {:.2e} over {} coords",
        ae_report.max_rel_error, ae_report.checked, head_report.max_rel_error, head_report.checked
    ))
}

fn semi_supervised() -> Outcome {
    let preproc = PreprocConfig::default();
    // 10 subjects split 3 labeled / 6 training clients / 1 held out
    let subjects: Vec<_> = (0..10)
        .map(|i| synth_subject(&format!("S{i:02}"), 41, 100, 100, &preproc).unwrap())
        .collect();
    let config = ExperimentConfig { rounds: 30, seed: 41, ..ExperimentConfig::default() };
    let result = run_experiment(&subjects, TrainingMode::Federated, &config).map_err(|e| e.to_string())?;
    check(result.split.train.len() == 6, format!("{} clients", result.split.train.len()))?;
    let m = &result.metrics;
    check(m.acc >= 0.95, format!("test accuracy {:.4}", m.acc))?;
    Ok(format!("6 clients, 30 rounds: acc {:.4}, precision {:.4}, recall {:.4}, f1 {:.4}", m.acc, m.pr, m.re, m.f1))
}

fn dtw_oracle() -> Outcome {
    for case in 0..200 {
        let mut rng = seeds::stream_rng(51, "acceptance.dtw", case);
        let series = |rng: &mut seeds::StageRng| {
            let mut t = 0.0;
            (0..rng.random_range(1..=7))
                .map(|_| {
                    t += rng.random_range(0.0..1.0);
                    t
                })
                .collect::<Vec<f64>>()
        };
        let a = series(&mut rng);
        let b = series(&mut rng);
        let got = dtw(&a, &b).map_err(|e| e.to_string())?.cost;
        check(got == dtw_brute_force(&a, &b), format!("case {case}: {a:?} {b:?}"))?;
    }
    Ok("200 cases equal exhaustive enumeration".into())
}

fn fingerprint_table() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let map = synth_room(10.0, 10.0, 0.25).map_err(|e| e.to_string())?;
    let anchors = default_anchors(5, 10.0, 10.0);
    let logs = synth_survey(&map, &anchors, &RadioModel::default(), 6, 61).map_err(|e| e.to_string())?;
    let csv_of = |t: &FingerprintTable| {
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        out
    };
    let mut texts = Vec::new();
    for run in 0..2 {
        let sub = dir.path().join(format!("run{run}"));
        logs.save(&sub).map_err(|e| e.to_string())?;
        let table = SurveyLogs::load(&sub).and_then(|l| l.to_table()).map_err(|e| e.to_string())?;
        let bytes = csv_of(&table);
        let back = FingerprintTable::read_csv(bytes.as_slice()).map_err(|e| e.to_string())?;
        check(back == table, "CSV round trip changed the table")?;
        let filled = String::from_utf8(csv_of(&fill_missing(&table, DEFAULT_FLOOR_DBM))).unwrap();
        check(filled.lines().skip(1).all(|l| l.split(',').all(|c| !c.is_empty())), "empty cell after fill")?;
        texts.push(String::from_utf8(bytes).unwrap());
    }
    let header = |s: &String| s.lines().next().unwrap_or_default().to_string();
    check(header(&texts[0]) == header(&texts[1]), "header differs between runs")?;
    check(header(&texts[0]).starts_with("Timestamp,X_Pos,Y_Pos,"), "header layout")?;

    let raster = OccupancyRaster::new(16, 8, 0.1, (0.0, 0.0), Cell::Free).unwrap();
    let mac = Mac([2; 6]);
    let block = FingerprintTable {
        anchors: vec![mac],
        rows: vec![
            FingerprintRow { timestamp: 0.0, x: 0.1, y: 0.1, rssi: vec![Some(-60.0)] },
            FingerprintRow { timestamp: 1.0, x: 0.2, y: 0.3, rssi: vec![Some(-70.0)] },
        ],
    };
    let heat = render_heatmap(&block, &raster, &mac).map_err(|e| e.to_string())?;
    let mut cells = Vec::new();
    heat.write_csv(&mut cells).unwrap();
    let cells = String::from_utf8(cells).unwrap();
    check(cells.split([',', '\n']).next() == Some("-65"), format!("heatmap block {cells:?}"))?;
    Ok(format!("{} anchors, {} rows, heatmap block -65", logs.to_table().unwrap().anchors.len(), texts[0].lines().count() - 1))
}

fn localization() -> Outcome {
    let anchors = default_anchors(5, 10.0, 10.0);
    let radio = RadioModel::default();
    check(radio.exponent == 2.0 && radio.sigma_db == 2.0, "radio defaults changed")?;
    let train = synth_loc_samples(&anchors, 10.0, 10.0, 1500, &radio, 71, "acceptance.loc.train");
    let test = synth_loc_samples(&anchors, 10.0, 10.0, 300, &radio, 71, "acceptance.loc.test");
    let macs: Vec<Mac> = anchors.iter().map(|a| a.mac).collect();
    let mde = |mode| -> Result<f64, String> {
        let model = LocModel::fit(macs.clone(), &train, mode, DEFAULT_FLOOR_DBM, RegressorSpec::random_forest(), 71)
            .map_err(|e| e.to_string())?;
        Ok(model.evaluate(&test).map_err(|e| e.to_string())?.mde)
    };
    let eng = mde(FeatureMode::Engineered)?;
    let raw = mde(FeatureMode::Raw)?;
    check(eng <= 1.5, format!("engineered MDE {eng:.4}"))?;
    check(eng <= raw, format!("engineered {eng:.4} worse than raw {raw:.4}"))?;
    Ok(format!("RF MDE engineered {eng:.4} m, raw {raw:.4} m"))
}

fn random_box(rng: &mut seeds::StageRng) -> BBox {
    let mut q = || rng.random_range(1..=9) as f64 / 10.0;
    BBox { cx: q(), cy: q(), w: q() * 0.6 + 0.05, h: q() * 0.6 + 0.05 }
}

fn detection_metrics() -> Outcome {
    for case in 0..500 {
        let mut rng = seeds::stream_rng(81, "acceptance.ap", case);
        let truths: Vec<BBox> = (0..rng.random_range(1..=4)).map(|_| random_box(&mut rng)).collect();
        let dets: Vec<(BBox, f64)> = (0..rng.random_range(0..=6))
            .map(|_| {
                let b = if rng.random_bool(0.6) {
                    let t = truths[rng.random_range(0..truths.len())];
                    BBox { cx: t.cx + rng.random_range(-0.05..0.05), cy: t.cy + rng.random_range(-0.05..0.05), ..t }
                } else {
                    random_box(&mut rng)
                };
                (b, [0.3, 0.5, 0.7, 0.9][rng.random_range(0..4)])
            })
            .collect();
        let (got, want) = (ap50(&dets, &truths).ap, oracle_ap(&dets, &truths));
        check((got - want).abs() < 1e-12, format!("case {case}: {got} vs {want}"))?;
    }
    let mut rng = seeds::stream_rng(82, "acceptance.iou", 0);
    for _ in 0..10_000 {
        let mut mk = || BBox {
            cx: rng.random_range(0.0..1.0),
            cy: rng.random_range(0.0..1.0),
            w: rng.random_range(0.01..0.8),
            h: rng.random_range(0.01..0.8),
        };
        let (a, b) = (mk(), mk());
        let o = iou(&a, &b);
        check((0.0..=1.0).contains(&o), "iou out of bounds")?;
        check(o == iou(&b, &a), "iou not symmetric")?;
        check((iou(&a, &a) - 1.0).abs() < 1e-12, "iou(a, a) != 1")?;
        check((o - overlap(&a, &b)).abs() < 1e-12, "iou disagrees with reference")?;
    }
    Ok("500 AP cases match the PR-curve oracle; 10000 box pairs pass".into())
}

fn scene_features() -> Outcome {
    let mut dets = vec![
        Detection::new("person", BBox::new(0.5, 0.8, 0.4, 0.2).unwrap(), 0.9),
        Detection::new("bed", BBox::new(0.5, 0.4, 0.5, 0.3).unwrap(), 0.8),
    ];
    // person below the bed top, touching it; widths 0.4 vs 0.5
    let want = [1.0, 0.0, 1.0, 0.0, 2.0, 0.45, 0.25, 0.8, 0.0, 0.8, 0.8, 2.0, 0.4];
    let got = extract_features(&dets);
    check(got.len() == 13, format!("length {}", got.len()))?;
    for k in 0..13 {
        check((got[k] - want[k]).abs() < 1e-12, format!("feature {k}: {} vs {}", got[k], want[k]))?;
    }
    let mut rng = seeds::stream_rng(91, "acceptance.scene", 0);
    for i in 0..200 {
        let mut scene = fallchain::vision::synth_scene(i % 2 == 0, 91, i);
        let before = extract_features(&scene);
        scene.shuffle(&mut rng);
        check(before == extract_features(&scene), "feature vector depends on detection order")?;
    }
    dets.reverse();
    check(extract_features(&dets) == got, "pinned example depends on order")?;
    let model = SceneClassifier::fit(&SceneClassifierSpec::logistic(), &synth_scene_set(200, 92)).map_err(|e| e.to_string())?;
    let acc = model.accuracy(&synth_scene_set(200, 93)).map_err(|e| e.to_string())?;
    check(acc >= 0.95, format!("logistic accuracy {acc:.4}"))?;
    Ok(format!("pinned example matches, logistic accuracy {acc:.4}"))
}

fn navigation() -> Outcome {
    let mut solved = 0;
    let mut case = 0;
    while solved < 200 {
        let mut rng = seeds::stream_rng(101, "acceptance.grid", case);
        case += 1;
        let (w, h) = (rng.random_range(2..=15), rng.random_range(2..=15));
        let mut map = OccupancyRaster::new(w, h, 0.1, (0.0, 0.0), Cell::Free).unwrap();
        let density = rng.random_range(0.0..0.4);
        for y in 0..h {
            for x in 0..w {
                if rng.random_bool(density) {
                    map.set(x, y, Cell::Occupied);
                }
            }
        }
        let start = (rng.random_range(0..w), rng.random_range(0..h));
        let goal = (rng.random_range(0..w), rng.random_range(0..h));
        map.set(start.0, start.1, Cell::Free);
        map.set(goal.0, goal.1, Cell::Free);
        match (plan_path(&map, start, goal), ucs_cost(&map, start, goal)) {
            (Ok(p), Some(c)) => {
                check((p.cost - c).abs() < 1e-9, format!("grid {case}: {} vs {c}", p.cost))?;
                solved += 1;
            }
            (Err(MissionError::NoPath(..)), None) => {}
            (a, b) => return Err(format!("grid {case}: planner {a:?} vs oracle {b:?}")),
        }
    }
    let map = OccupancyRaster::new(5, 5, 0.1, (0.0, 0.0), Cell::Free).unwrap();
    let plan = plan_path(&map, (0, 0), (4, 4)).map_err(|e| e.to_string())?;
    let mut rng = seeds::stream_rng(102, "acceptance.nav", 0);
    let reached = (0..10_000)
        .filter(|_| simulate_navigation(&plan, 0.95, &mut rng).map(|r| r.outcome == NavOutcome::Reached).unwrap_or(false))
        .count();
    let rate = reached as f64 / 10_000.0;
    check((0.93..=0.97).contains(&rate), format!("success rate {rate:.4}"))?;
    Ok(format!("200 solvable grids ({case} drawn) match UCS; success rate {rate:.4}"))
}

fn simulate_cli(dir: &Path, preset: &str, out: &str) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_fallchain"))
        .current_dir(dir)
        .env_remove("FALLCHAIN_SEED")
        .env_remove("FALLCHAIN_CONFIG")
        .args(["--seed", "11", "simulate", "--preset", preset, "--out", out])
        .args(["--fall-model", "fall.json", "--loc-model", "loc.json", "--vision-model", "vision.json"])
        .output()
        .map_err(|e| e.to_string())?;
    check(status.status.success(), format!("simulate {preset}: {}", String::from_utf8_lossy(&status.stderr)))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = common::artifacts(111);
    a.fall.as_ref().unwrap().save(&d.join("fall.json")).map_err(|e| e.to_string())?;
    a.loc.as_ref().unwrap().save(&d.join("loc.json")).map_err(|e| e.to_string())?;
    a.vision.as_ref().unwrap().save(&d.join("vision.json")).map_err(|e| e.to_string())?;
    for out in ["fall_a", "fall_b"] {
        simulate_cli(d, "fall", out)?;
    }
    for f in ["events.jsonl", "alerts.jsonl", "feedback.jsonl", "metrics.json"] {
        let (x, y) = (std::fs::read(d.join("fall_a").join(f)), std::fs::read(d.join("fall_b").join(f)));
        check(x.is_ok() && x.ok() == y.ok(), format!("{f} differs between runs"))?;
    }
    let count_to = |run: &str, state: &str| -> usize {
        let text = std::fs::read_to_string(d.join(run).join("events.jsonl")).unwrap_or_default();
        text.lines()
            .filter_map(|l| serde_json::from_str::<serde_json::Value>(l).ok())
            .filter(|v| v["to"] == state)
            .count()
    };
    let confirmed = count_to("fall_a", "Confirmed");
    check(confirmed == 1, format!("fault-free fall confirmed {confirmed} times"))?;
    simulate_cli(d, "false-trigger", "false")?;
    let alarms = count_to("false", "FalseAlarm");
    let feedback = std::fs::read_to_string(d.join("false/feedback.jsonl")).unwrap_or_default().lines().count();
    check(alarms == 1 && feedback == 1, format!("{alarms} false alarms, {feedback} feedback records"))?;
    Ok("logs byte-identical; 1 Confirmed; 1 FalseAlarm with 1 feedback record".into())
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("reliability reproduction", reliability),
        ("fedavg degeneracy", fedavg_degeneracy),
        ("gradient correctness", gradients),
        ("semi-supervised pipeline", semi_supervised),
        ("dtw oracle", dtw_oracle),
        ("fingerprint table", fingerprint_table),
        ("localization", localization),
        ("ap50 and iou", detection_metrics),
        ("scene features", scene_features),
        ("navigation", navigation),
        ("end-to-end determinism", determinism),
    ];
    // only the selected criteria when names are given, like libtest filters
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name} ({secs:.1}s): {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name} ({secs:.1}s): {detail}", k + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
