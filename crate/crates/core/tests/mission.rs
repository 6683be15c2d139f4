mod common;

use common::oracle::ucs_cost;
use fallchain::fingerprint::{Cell, OccupancyRaster};
use fallchain::mission::{
    combined_reliability, monte_carlo, plan_path, product_failure, run_scenario, simulate_navigation,
    validate_log, Artifacts, MissionError, NavOutcome, PipelineState, ReliabilityMode, ReliabilityModel,
    SimScenario,
};
use fallchain::seeds;
use proptest::prelude::*;
use rand::Rng;
use std::sync::OnceLock;

fn shared() -> &'static Artifacts {
    static CELL: OnceLock<Artifacts> = OnceLock::new();
    CELL.get_or_init(|| common::artifacts(3))
}

#[test]
fn astar_matches_uniform_cost_oracle() {
    let mut solved = 0;
    let mut case = 0;
    while solved < 200 {
        let mut rng = seeds::stream_rng(21, "test.grid", case);
        case += 1;
        let (w, h) = (rng.random_range(2..=15), rng.random_range(2..=15));
        let mut map = OccupancyRaster::new(w, h, 0.1, (0.0, 0.0), Cell::Free).unwrap();
        let density = rng.random_range(0.0..0.4);
        for y in 0..h {
            for x in 0..w {
                if rng.random_bool(density) {
                    map.set(x, y, if rng.random_bool(0.8) { Cell::Occupied } else { Cell::Unknown });
                }
            }
        }
        let start = (rng.random_range(0..w), rng.random_range(0..h));
        let goal = (rng.random_range(0..w), rng.random_range(0..h));
        map.set(start.0, start.1, Cell::Free);
        map.set(goal.0, goal.1, Cell::Free);
        match (plan_path(&map, start, goal), ucs_cost(&map, start, goal)) {
            (Ok(path), Some(cost)) => {
                assert!((path.cost - cost).abs() < 1e-9, "case {case}: {} vs {cost}", path.cost);
                assert_eq!(path.cells[0], start);
                assert_eq!(*path.cells.last().unwrap(), goal);
                let mut along = 0.0;
                for pair in path.cells.windows(2) {
                    let (dx, dy) = (pair[1].0.abs_diff(pair[0].0), pair[1].1.abs_diff(pair[0].1));
                    assert!(dx <= 1 && dy <= 1 && dx + dy > 0);
                    assert_eq!(map.cell(pair[1].0, pair[1].1), Cell::Free);
                    along += if dx + dy == 2 { 2f64.sqrt() } else { 1.0 };
                }
                assert!((along - path.cost).abs() < 1e-9);
                solved += 1;
            }
            (Err(MissionError::NoPath(..)), None) => {}
            (a, b) => panic!("case {case}: planner {a:?} vs oracle {b:?}"),
        }
    }
}

#[test]
fn wall_with_gap() {
    let mut map = OccupancyRaster::new(7, 7, 0.1, (0.0, 0.0), Cell::Free).unwrap();
    for y in 0..6 {
        map.set(3, y, Cell::Occupied);
    }
    let p = plan_path(&map, (0, 0), (6, 0)).unwrap();
    assert_eq!(Some(p.cost), ucs_cost(&map, (0, 0), (6, 0)));
    assert!(p.cells.contains(&(3, 6)));
}

#[test]
fn navigation_success_rate() {
    let map = OccupancyRaster::new(5, 5, 0.1, (0.0, 0.0), Cell::Free).unwrap();
    let plan = plan_path(&map, (0, 0), (4, 4)).unwrap();
    let mut rng = seeds::stream_rng(5, "test.nav", 0);
    let trials = 10_000;
    let reached = (0..trials)
        .filter(|_| simulate_navigation(&plan, 0.95, &mut rng).unwrap().outcome == NavOutcome::Reached)
        .count();
    let rate = reached as f64 / trials as f64;
    assert!((0.93..=0.97).contains(&rate), "{rate}");
    let always = simulate_navigation(&plan, 1.0, &mut rng).unwrap();
    assert_eq!(always.outcome, NavOutcome::Reached);
    assert_eq!(always.ticks, 4);
    assert!(matches!(simulate_navigation(&plan, 0.0, &mut rng).unwrap().outcome, NavOutcome::Failed(_)));
}

proptest! {
    #[test]
    fn reliability_commutative_and_monotone(
        rates in prop::collection::vec(0.0f64..=1.0, 1..6),
        bump in 0.0f64..=1.0,
        k in 0usize..6,
    ) {
        let base = product_failure(&rates).unwrap();
        let mut rev = rates.clone();
        rev.reverse();
        prop_assert!((product_failure(&rev).unwrap().failure - base.failure).abs() <= 1e-15);
        let k = k % rates.len();
        let mut up = rates.clone();
        up[k] = up[k].max(bump);
        prop_assert!(product_failure(&up).unwrap().failure >= base.failure);
    }
}

#[test]
fn paper_reliability_figure() {
    let r = combined_reliability(&ReliabilityModel::default()).unwrap();
    assert!((r.failure - 1.48635e-5).abs() < 5e-11);
    assert_eq!(format!("{:.5}%", r.accuracy_pct), "99.99851%");
}

#[test]
fn fault_free_fall_confirms_once() {
    let out = run_scenario(&SimScenario::fall(), shared()).unwrap();
    let confirmed = out.log.iter().filter(|r| r.to == PipelineState::Confirmed).count();
    assert_eq!(confirmed, 1);
    assert_eq!(out.alerts.len(), 1);
    assert!(!out.metrics.missed);
    validate_log(&out.log, &out.alerts, &out.feedback).unwrap();
}

#[test]
fn forced_trigger_gives_false_alarm() {
    let out = run_scenario(&SimScenario::false_trigger(), shared()).unwrap();
    let alarms: Vec<_> = out.log.iter().filter(|r| r.to == PipelineState::FalseAlarm).collect();
    assert_eq!(alarms.len(), 1);
    assert_eq!(out.feedback.len(), 1);
    assert!(out.alerts.is_empty());
    assert_eq!(out.feedback[0].event_id, alarms[0].event_id);
}

#[test]
fn scenario_logs_are_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    for (k, sc) in [SimScenario::fall(), SimScenario::false_trigger()].iter().enumerate() {
        let a = dir.path().join(format!("a{k}"));
        let b = dir.path().join(format!("b{k}"));
        run_scenario(sc, shared()).unwrap().write(&a).unwrap();
        run_scenario(sc, shared()).unwrap().write(&b).unwrap();
        for f in ["events.jsonl", "alerts.jsonl", "feedback.jsonl", "metrics.json"] {
            assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
        }
    }
}

#[test]
fn validator_rejects_tampered_logs() {
    let out = run_scenario(&SimScenario::fall(), shared()).unwrap();
    let mut skipped = out.log.clone();
    skipped.remove(1);
    assert!(validate_log(&skipped, &out.alerts, &out.feedback).is_err());
    let mut extra = out.log.clone();
    let mut after = extra.last().unwrap().clone();
    after.from = PipelineState::Confirmed;
    after.to = PipelineState::Aborted;
    extra.push(after);
    assert!(validate_log(&extra, &out.alerts, &out.feedback).is_err());
    assert!(validate_log(&out.log, &[], &out.feedback).is_err());
}

#[test]
fn missing_artifacts_are_reported() {
    let mut partial = shared().clone();
    partial.vision = None;
    assert!(matches!(
        run_scenario(&SimScenario::fall(), &partial),
        Err(MissionError::MissingArtifact(_))
    ));
}

#[test]
fn monte_carlo_at_paper_rates() {
    let template = SimScenario { errors: ReliabilityModel::default(), ..SimScenario::fall() };
    let summary = monte_carlo(&template, shared(), 1000, 17).unwrap();
    assert_eq!(summary.falls, 1000);
    assert!(summary.missed <= 2, "{summary:?}");
    assert!(summary.expected_missed < 0.02);

    // every failure counts: misses follow the serial model instead
    let serial = SimScenario { reliability_mode: ReliabilityMode::Serial, ..template };
    let s = monte_carlo(&serial, shared(), 300, 17).unwrap();
    assert!(s.missed > 0, "{s:?}");
}
