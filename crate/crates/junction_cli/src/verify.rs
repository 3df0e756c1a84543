use mixed_junction::av_planner::PlannerConfig;
use mixed_junction::sim_engine::trace::TraceLevel;
use mixed_junction::sim_engine::{mutated_separation, Mutation, RunOptions};
use mixed_junction::verify::{
    batch_model, kinematics_fidelity, planner_feasibility, run_cell, separation_oracle, BatchConfig, CellOutcome,
    Formula,
};
use mixed_junction::Params;
use rayon::prelude::*;

use crate::exit::Status;
use crate::{init_workers, VerifyArgs};

struct Row {
    suite: String,
    passed: bool,
    detail: String,
}

fn batch(args: &VerifyArgs, mutation: Option<Mutation>, verbose: u8) -> Vec<CellOutcome> {
    let config =
        BatchConfig { seeds: (0..args.batch_seeds).collect(), horizon: args.batch_horizon, ..Default::default() };
    let model = batch_model(&config);
    let opts = RunOptions { trace: TraceLevel::Off, stop_at_first_violation: false, mutation };
    let cells = config.cells();
    if verbose > 0 {
        eprintln!("verify: {} traffic scenarios of {} slots", cells.len(), config.horizon);
    }
    cells.par_iter().map(|cell| run_cell(&config, &model, cell, opts)).collect()
}

pub fn execute(args: &VerifyArgs, verbose: u8) -> anyhow::Result<Status> {
    init_workers(args.workers)?;
    let params = Params::default();
    let mutation: Option<Mutation> = args.mutate.map(Into::into);
    let sep = mutated_separation(&params, mutation);
    let mut rows = Vec::new();

    for (i, formula) in Formula::ALL.into_iter().enumerate() {
        let r = separation_oracle(formula, args.episodes, &sep, 100 + i as u64);
        rows.push(Row {
            suite: format!("separation {formula:?}"),
            passed: r.passed,
            detail: format!(
                "{} episodes, min gap {:.4} m at v={:.3}, u={:.3}",
                r.episodes, r.min_gap, r.worst.0, r.worst.1
            ),
        });
    }

    let f = planner_feasibility(args.states, &params, &PlannerConfig::default(), 5);
    rows.push(Row {
        suite: "planner feasibility".into(),
        passed: f.failures == 0,
        detail: format!("{} states, {} lost feasibility", f.states, f.failures),
    });

    let k = kinematics_fidelity(1_000, &params, 6);
    rows.push(Row {
        suite: "kinematics".into(),
        passed: k.max_rk4_error <= 1e-6 && k.max_continuity_error <= 1e-6,
        detail: format!("max RK4 deviation {:.2e} m, zero-yaw-rate {:.2e} m", k.max_rk4_error, k.max_continuity_error),
    });

    let outcomes = batch(args, mutation, verbose);
    let n = outcomes.len();
    let violations: usize = outcomes.iter().map(|o| o.report.violations.len()).sum();
    let fatal = outcomes.iter().filter(|o| o.fatal.is_some()).count();
    rows.push(Row {
        suite: "traffic safety".into(),
        passed: violations == 0 && fatal == 0,
        detail: format!("{n} scenarios, {violations} violations, {fatal} aborted"),
    });
    let conflicts: usize = outcomes.iter().map(|o| o.report.permission_conflicts.len()).sum();
    rows.push(Row {
        suite: "permission exclusivity".into(),
        passed: conflicts == 0,
        detail: format!("{conflicts} slots with crossing permissions"),
    });
    let signal: usize = outcomes.iter().map(|o| o.report.signal_violations.len()).sum();
    rows.push(Row {
        suite: "signal policy".into(),
        passed: signal == 0,
        detail: format!("{signal} signal policy violations"),
    });

    let width = rows.iter().map(|r| r.suite.len()).max().unwrap_or(0);
    for r in &rows {
        println!("{:<width$}  {}  {}", r.suite, if r.passed { "PASS" } else { "FAIL" }, r.detail);
    }
    Ok(if rows.iter().all(|r| r.passed) { Status::Ok } else { Status::Violation })
}
