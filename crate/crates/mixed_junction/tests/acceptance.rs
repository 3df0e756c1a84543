//! End-to-end acceptance run: every criterion is evaluated, reported on its
//! own line, and only then asserted, so one failure does not hide the rest.
//!
//! Runs without the libtest harness so the report is always printed:
//! `cargo test --test acceptance`.

use std::time::{Duration, Instant};

use mixed_junction::av_planner::PlannerConfig;
use mixed_junction::hv_driver::HvMode;
use mixed_junction::separation::SeparationParams;
use mixed_junction::sim_engine::Mutation;
use mixed_junction::verify::{
    find_mutation_violation, is_deterministic, kinematics_fidelity, planner_feasibility, run_batch, separation_oracle,
    stopped_lead_identity, BatchConfig, CellOutcome, Formula, ORACLE_TOL,
};
use mixed_junction::Params;

const BATCH_BUDGET: Duration = Duration::from_secs(300);

/// Criteria that cannot hold as stated. Each is still evaluated and reported;
/// the test checks that it fails for exactly the documented reason.
const KNOWN_GAPS: [usize; 1] = [7];

struct Outcome {
    number: usize,
    passed: bool,
    detail: String,
}

fn record(outcomes: &mut Vec<Outcome>, number: usize, passed: bool, detail: String) {
    println!("{} criterion {number}: {detail}", if passed { "PASS" } else { "FAIL" });
    outcomes.push(Outcome { number, passed, detail });
}

fn unsafe_cells(batch: &[CellOutcome]) -> Vec<String> {
    batch.iter().filter(|o| !o.is_safe()).map(|o| o.cell.to_string()).take(5).collect()
}

fn main() {
    let params = Params::default();
    let sep = SeparationParams::from(&params);
    let config = BatchConfig::default();
    let mut outcomes = Vec::new();

    // 1: randomized mixed-traffic batch.
    let started = Instant::now();
    let batch = run_batch(&config);
    let elapsed = started.elapsed();
    let violations: usize = batch.iter().map(|o| o.report.violations.len()).sum();
    let fatal = batch.iter().filter(|o| o.fatal.is_some()).count();
    let adversarial = batch.iter().filter(|o| o.cell.mode == HvMode::Adversarial).count();
    record(
        &mut outcomes,
        1,
        batch.len() >= 500 && violations == 0 && fatal == 0 && adversarial > 0 && elapsed < BATCH_BUDGET,
        format!(
            "{} scenarios ({adversarial} adversarial), {violations} violations, {fatal} aborted runs, {:.1} s {:?}",
            batch.len(),
            elapsed.as_secs_f64(),
            unsafe_cells(&batch)
        ),
    );

    // 2: brute-force worst-case episodes for every follow distance.
    let mut all_hold = true;
    let mut parts = Vec::new();
    for (i, formula) in Formula::ALL.into_iter().enumerate() {
        let report = separation_oracle(formula, 10_000, &sep, 100 + i as u64);
        all_hold &= report.passed && report.episodes >= 10_000;
        parts.push(format!("{formula:?} min {:.4}", report.min_gap));
    }
    record(
        &mut outcomes,
        2,
        all_hold,
        format!("10000 episodes each, gap >= {} - {ORACLE_TOL}: {}", sep.s_min, parts.join(", ")),
    );

    // 3: permissions are pairwise conflict-free at every slot.
    let conflicts: usize = batch.iter().map(|o| o.report.permission_conflicts.len()).sum();
    record(&mut outcomes, 3, conflicts == 0, format!("{conflicts} conflicting permission pairs across the batch"));

    // 4: every signal trace obeys the signal policy.
    let signal: usize = batch.iter().map(|o| o.report.signal_violations.len()).sum();
    record(&mut outcomes, 4, signal == 0, format!("{signal} signal policy violations across the batch"));

    // 5: the planner never loses feasibility.
    let infeasible =
        batch.iter().filter(|o| o.fatal.as_deref().is_some_and(|f| f.contains("infeasible-state"))).count();
    let feasibility = planner_feasibility(10_000, &params, &PlannerConfig::default(), 5);
    record(
        &mut outcomes,
        5,
        infeasible == 0 && feasibility.states == 10_000 && feasibility.failures == 0,
        format!(
            "{infeasible} infeasible-state aborts in the batch; {} states, {} lost feasibility",
            feasibility.states, feasibility.failures
        ),
    );

    // 6: closed-form motion against numerical integration.
    let kin = kinematics_fidelity(1_000, &params, 6);
    record(
        &mut outcomes,
        6,
        kin.samples >= 1_000 && kin.max_rk4_error <= 1e-6 && kin.max_continuity_error <= 1e-6,
        format!(
            "{} inputs, max RK4 deviation {:.2e} m, max zero-yaw-rate deviation {:.2e} m",
            kin.samples, kin.max_rk4_error, kin.max_continuity_error
        ),
    );

    // 7: the AV/AV distance behind a stopped lead against the classical one.
    let identity = stopped_lead_identity(&params, 1_400);
    record(
        &mut outcomes,
        7,
        identity.max_error_moving <= 1e-12 && identity.error_at_rest <= 1e-12,
        format!(
            "max deviation {:.1e} m for v in (0, v_max]; {:.3} m at v = 0, where the closing term is switched off",
            identity.max_error_moving, identity.error_at_rest
        ),
    );

    // 8: deliberate defects are caught.
    let mut mutations = vec![Mutation::NoConflictCheck];
    mutations.extend((0..5).map(|index| Mutation::WeakenFormula { index, factor: 0.8 }));
    let mut caught = 0;
    let mut parts = Vec::new();
    for m in &mutations {
        match find_mutation_violation(&config, *m) {
            Some(o) => {
                caught += 1;
                let what = o.report.violations.first().map(|v| v.finding.kind.to_string()).or(o.fatal.clone());
                parts.push(format!("{m:?}: {}", what.unwrap_or_else(|| "permission conflict".into())));
            }
            None => parts.push(format!("{m:?}: not detected")),
        }
    }
    record(
        &mut outcomes,
        8,
        caught == mutations.len(),
        format!("{caught}/{} defects detected ({})", mutations.len(), parts.join("; ")),
    );

    // 9: byte-identical traces.
    let mut identical = 0;
    let probes: Vec<_> =
        config.cells().into_iter().filter(|c| c.rate == 0.05 && c.seed == 0 && c.mode != HvMode::Nominal).collect();
    for cell in &probes {
        if is_deterministic(&config.scenario(cell), cell.seed).unwrap_or(false) {
            identical += 1;
        }
    }
    record(
        &mut outcomes,
        9,
        identical == probes.len() && !probes.is_empty(),
        format!("{identical}/{} repeated full-trace runs byte-identical", probes.len()),
    );

    let mut ok = true;
    for o in &outcomes {
        if KNOWN_GAPS.contains(&o.number) {
            if o.passed {
                eprintln!("criterion {} now passes; drop it from KNOWN_GAPS", o.number);
                ok = false;
            }
        } else if !o.passed {
            eprintln!("criterion {} failed: {}", o.number, o.detail);
            ok = false;
        }
    }
    // The one known gap is confined to the lead-at-rest, follower-at-rest point.
    let at_rest_gap = -params.a_min_av * params.h * params.h / 2.0;
    if identity.max_error_moving > 1e-12 || (identity.error_at_rest - at_rest_gap).abs() > 1e-12 {
        eprintln!("criterion 7 fails beyond the documented point at rest");
        ok = false;
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    println!("{passed}/{} criteria passed; known gaps: {KNOWN_GAPS:?}", outcomes.len());
    if !ok {
        std::process::exit(1);
    }
}
