use std::collections::BTreeMap;
use std::sync::OnceLock;

use mixed_junction::geometry::{build_intersection, IntersectionModel, IntersectionSpec};
use mixed_junction::hv_driver::HvMode;
use mixed_junction::intersection_manager::Light;
use mixed_junction::kinematics::VehicleState;
use mixed_junction::scenario::ScheduledArrival;
use mixed_junction::separation::SeparationParams;
use mixed_junction::sim_engine::metrics::{write_slot_csv, SLOT_CSV_HEADER};
use mixed_junction::sim_engine::monitor::{check_safety, ViolationKind};
use mixed_junction::sim_engine::trace::TraceLevel;
use mixed_junction::sim_engine::{run, RunOptions, RunOutput};
use mixed_junction::verify::{is_deterministic, run_batch, BatchConfig};
use mixed_junction::world::Vehicle;
use mixed_junction::{Params, Scenario, VehicleKind};
use serde_json::Value;

fn model() -> &'static IntersectionModel {
    static MODEL: OnceLock<IntersectionModel> = OnceLock::new();
    MODEL.get_or_init(|| build_intersection(&IntersectionSpec::four_way(), &Params::default()).unwrap())
}

fn arrival(slot: u64, kind: VehicleKind, path: usize) -> ScheduledArrival {
    ScheduledArrival { slot, kind, path, speed: 14.0 }
}

fn events() -> RunOptions {
    RunOptions { trace: TraceLevel::Events, ..RunOptions::default() }
}

fn lines(out: &RunOutput) -> Vec<Value> {
    out.trace.to_jsonl().lines().map(|l| serde_json::from_str(l).expect("valid JSON line")).collect()
}

#[test]
fn empty_schedule_only_marks_slots() {
    let out = run(&Scenario::scheduled(vec![], 40), 0, events()).unwrap();
    assert!(out.report.is_safe());
    assert_eq!(out.report.slots_run, 40);
    let lines = lines(&out);
    assert_eq!(lines.len(), 40);
    assert!(lines.iter().all(|l| l["kind"] == "slot" && l["vehicles"] == 0));
}

#[test]
fn lone_av_crosses_without_delay() {
    let out = run(&Scenario::scheduled(vec![arrival(0, VehicleKind::Av, 1)], 40), 0, events()).unwrap();
    assert!(out.report.is_safe());
    let lines = lines(&out);
    // The request goes out with the first plan and is granted at the next slot.
    let grant = lines.iter().find(|l| l["kind"] == "grant").expect("the AV is granted");
    assert_eq!(grant["slot"], 1);
    let plans: Vec<_> = lines.iter().filter(|l| l["kind"] == "plan").collect();
    assert!(plans.iter().skip(1).all(|l| l["permitted"] == true));
    assert!(plans.iter().all(|l| l["speeds"].as_array().unwrap().iter().all(|v| v == 14.0)));
    let exit = lines.iter().find(|l| l["kind"] == "exit").expect("the AV exits");
    let delay = exit["delay"].as_f64().unwrap();
    assert!(delay.abs() <= Params::default().delta() + 1e-9, "delay {delay}");
}

#[test]
fn perpendicular_drivers_take_turns() {
    let scenario = Scenario::scheduled(vec![arrival(0, VehicleKind::Hv, 1), arrival(0, VehicleKind::Hv, 5)], 80);
    let out = run(&scenario, 0, events()).unwrap();
    assert!(out.report.is_safe(), "{:?}", out.report.violations);
    for rec in &out.signals {
        let (a, b) = (rec.colors[1], rec.colors[5]);
        assert!(a == Some(Light::Red) || b == Some(Light::Red), "slot {}: {a:?} / {b:?}", rec.slot);
    }
    let lines = lines(&out);
    let grants: Vec<u64> =
        lines.iter().filter(|l| l["kind"] == "grant").map(|l| l["vehicle"].as_u64().unwrap()).collect();
    let exits: Vec<u64> =
        lines.iter().filter(|l| l["kind"] == "exit").map(|l| l["vehicle"].as_u64().unwrap()).collect();
    assert_eq!(exits.len(), 2);
    let mut first_grants = grants.clone();
    first_grants.dedup();
    assert_eq!(first_grants, exits, "vehicles cross in the order they were planned");
}

fn at_distance(id: u64, kind: VehicleKind, path: usize, distance: f64, v: f64) -> Vehicle {
    let geom = &model().paths[path];
    Vehicle::new(id, kind, VehicleState::on_path(geom, geom.entry_point - distance, v), 0.0)
}

#[test]
fn close_following_driver_is_flagged() {
    let sep = SeparationParams::from(&Params::default());
    let lead = at_distance(1, VehicleKind::Hv, 1, 10.0, 10.0);
    let follower = at_distance(2, VehicleKind::Hv, 1, 28.0, 10.0);
    let findings = check_safety(model(), &[lead.clone(), follower], &sep);
    assert_eq!(findings.len(), 1, "{findings:?}");
    assert_eq!(findings[0].kind, ViolationKind::HvSeparation);
    assert!((findings[0].gap - 18.0).abs() < 1e-9);
    assert_eq!(findings[0].required, 19.0);

    let relaxed = at_distance(2, VehicleKind::Hv, 1, 29.5, 10.0);
    assert!(check_safety(model(), &[lead, relaxed], &sep).is_empty());
}

#[test]
fn shared_area_is_flagged() {
    let m = model();
    let area = m.conflicts(1, 5)[0];
    let on = |id, path: usize| {
        let occ = area.interval_for(path).unwrap();
        let geom = &m.paths[path];
        Vehicle::new(id, VehicleKind::Av, VehicleState::on_path(geom, (occ.s_in + occ.s_out) / 2.0, 5.0), 0.0)
    };
    let findings = check_safety(m, &[on(1, 1), on(2, 5)], &SeparationParams::from(&Params::default()));
    let shared: Vec<_> = findings.iter().filter(|f| f.kind == ViolationKind::AreaCoOccupancy).collect();
    assert_eq!(shared.len(), 1, "{findings:?}");
    assert_eq!(shared[0].vehicles, vec![1, 2]);
}

/// Field set of each record kind, beyond `slot`, `micro` and `kind`.
fn schema() -> BTreeMap<&'static str, Vec<&'static str>> {
    BTreeMap::from([
        ("slot", vec!["permitted", "planned", "uncertain", "vehicles"]),
        ("spawn", vec!["path", "s", "v", "vehicle", "vtype"]),
        ("grant", vec!["path", "set", "vehicle"]),
        ("color-change", vec!["from", "path", "to"]),
        ("plan", vec!["feasible_by", "lead", "permitted", "speeds", "vehicle", "virtual_hv"]),
        ("state-sample", vec!["s", "theta", "v", "vehicle", "x", "y"]),
        ("violation", vec!["gap", "required", "vehicles", "violation"]),
        ("exit", vec!["delay", "time", "vehicle"]),
    ])
}

const KIND_ORDER: [&str; 8] = ["slot", "spawn", "grant", "color-change", "plan", "state-sample", "violation", "exit"];

#[test]
fn trace_records_follow_the_schema() {
    let scenario = Scenario::poisson(0.05, 0.5, HvMode::Randomized, 60);
    // Granting without the conflict check makes sure violation records appear too.
    let opts = RunOptions {
        trace: TraceLevel::Full,
        mutation: Some(mixed_junction::sim_engine::Mutation::NoConflictCheck),
        ..RunOptions::default()
    };
    let out = run(&scenario, 1, opts).unwrap();
    let schema = schema();
    let mut seen = BTreeMap::new();
    let mut last: Option<(u64, u64, usize)> = None;
    for line in lines(&out) {
        let obj = line.as_object().expect("records are objects");
        let kind = obj["kind"].as_str().unwrap();
        let mut keys: Vec<&str> =
            obj.keys().map(String::as_str).filter(|k| !["slot", "micro", "kind"].contains(k)).collect();
        keys.sort_unstable();
        assert_eq!(keys, schema[kind], "fields of {kind}");
        let key = (
            obj["slot"].as_u64().unwrap(),
            obj["micro"].as_u64().unwrap(),
            KIND_ORDER.iter().position(|k| *k == kind).unwrap(),
        );
        if let Some(prev) = last {
            assert!(prev <= key, "{prev:?} then {key:?}");
        }
        last = Some(key);
        *seen.entry(kind.to_string()).or_insert(0usize) += 1;
    }
    for kind in KIND_ORDER {
        assert!(seen.contains_key(kind), "no {kind} record in {seen:?}");
    }
}

#[test]
fn runs_are_reproducible() {
    for (rate, frac) in [(0.02, 0.5), (0.04, 1.0), (0.01, 0.0)] {
        let scenario = Scenario::poisson(rate, frac, HvMode::Randomized, 120);
        assert!(is_deterministic(&scenario, 11).unwrap());
    }
    let a = run(&Scenario::poisson(0.03, 0.5, HvMode::Randomized, 120), 1, events()).unwrap();
    let b = run(&Scenario::poisson(0.03, 0.5, HvMode::Randomized, 120), 2, events()).unwrap();
    assert_ne!(a.trace.to_jsonl(), b.trace.to_jsonl(), "different seeds give different traffic");
}

fn small_batch(hv_fractions: Vec<f64>) -> BatchConfig {
    BatchConfig {
        rates: vec![0.01, 0.03, 0.05],
        hv_fractions,
        modes: vec![HvMode::Nominal, HvMode::Randomized, HvMode::Adversarial],
        seeds: (0..2).collect(),
        horizon: 300,
    }
}

#[test]
fn human_only_traffic_is_safe() {
    for outcome in run_batch(&small_batch(vec![1.0])) {
        assert!(outcome.is_safe(), "{}: {:?}", outcome.cell, outcome.report.violations);
        assert!(outcome.report.liveness.exited > 0, "{}", outcome.cell);
    }
}

#[test]
fn automated_only_traffic_never_uses_lights() {
    let config = small_batch(vec![0.0]);
    let model = mixed_junction::verify::batch_model(&config);
    for cell in config.cells() {
        let scenario = config.scenario(&cell);
        let out = mixed_junction::sim_engine::run_on(&scenario, model.clone(), cell.seed, events()).unwrap();
        assert!(out.report.is_safe(), "{cell}");
        for rec in &out.signals {
            assert!(rec.colors.iter().all(|c| matches!(c, None | Some(Light::Red))), "{cell} slot {}", rec.slot);
        }
        for line in lines(&out).iter().filter(|l| l["kind"] == "slot") {
            assert_eq!(line["uncertain"].as_array().unwrap().len(), 0, "{cell}");
            assert_eq!(line["planned"].as_array().unwrap().len(), 0, "{cell}");
        }
    }
}

#[test]
fn follower_ahead_variant_is_safe() {
    let config = small_batch(vec![0.25, 0.75]);
    let model = mixed_junction::verify::batch_model(&config);
    for cell in config.cells() {
        let mut scenario = config.scenario(&cell);
        scenario.manager.follower_ahead = true;
        let out = mixed_junction::sim_engine::run_on(&scenario, model.clone(), cell.seed, RunOptions::default());
        let report = &out.expect("no fatal error").report;
        assert!(report.is_safe(), "{cell}: {:?}", report.violations);
    }
}

#[test]
fn mixing_in_human_drivers_is_reported() {
    let mut config = small_batch(vec![0.0, 0.5]);
    config.rates = vec![0.03];
    config.modes = vec![HvMode::Nominal];
    let outcomes = run_batch(&config);
    for o in &outcomes {
        println!(
            "{}: throughput {:.3} veh/s, mean delay {:.2} s",
            o.cell, o.report.metrics.throughput, o.report.metrics.mean_delay
        );
        assert!(o.report.metrics.throughput > 0.0);
    }
}

#[test]
fn slot_csv_has_header_and_one_row_per_slot() {
    let out = run(&Scenario::poisson(0.02, 0.5, HvMode::Nominal, 30), 0, RunOptions::default()).unwrap();
    let mut buf = Vec::new();
    write_slot_csv(&out.slots, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut rows = text.lines();
    assert_eq!(rows.next(), Some(SLOT_CSV_HEADER));
    assert_eq!(rows.count(), 30);
}
