use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::Context;
use mixed_junction::sim_engine::metrics::write_slot_csv;
use mixed_junction::sim_engine::{run, RunOptions, RunOutput, SimError};
use mixed_junction::Scenario;
use serde_json::json;

use crate::exit::Status;
use crate::{RunArgs, SimArgs};

/// Apply command-line overrides and re-check the result.
pub fn prepare(mut scenario: Scenario, sim: &SimArgs) -> anyhow::Result<Scenario> {
    if let Some(h) = sim.horizon {
        scenario.horizon = h;
    }
    if let Some(mode) = sim.hv_mode {
        scenario.hv_mode = mode.into();
    }
    scenario.validate()?;
    Ok(scenario)
}

pub fn options(sim: &SimArgs, trace: mixed_junction::sim_engine::trace::TraceLevel) -> RunOptions {
    RunOptions { trace, stop_at_first_violation: false, mutation: sim.mutate.map(Into::into) }
}

fn write_outputs(dir: &Path, seed: u64, out: &RunOutput, fatal: Option<&str>) -> anyhow::Result<()> {
    let trace_path = dir.join(format!("trace-{seed}.jsonl"));
    out.trace
        .write_jsonl(BufWriter::new(
            File::create(&trace_path).with_context(|| format!("creating {}", trace_path.display()))?,
        ))
        .with_context(|| format!("writing {}", trace_path.display()))?;

    let report_path = dir.join(format!("report-{seed}.json"));
    let report =
        json!({ "seed": seed, "safe": fatal.is_none() && out.report.is_safe(), "fatal": fatal, "report": out.report });
    serde_json::to_writer_pretty(
        BufWriter::new(File::create(&report_path).with_context(|| format!("creating {}", report_path.display()))?),
        &report,
    )
    .with_context(|| format!("writing {}", report_path.display()))?;

    let metrics_path = dir.join(format!("metrics-{seed}.csv"));
    write_slot_csv(
        &out.slots,
        BufWriter::new(File::create(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?),
    )
    .with_context(|| format!("writing {}", metrics_path.display()))?;
    Ok(())
}

pub fn execute(args: &RunArgs, verbose: u8) -> anyhow::Result<Status> {
    let scenario = prepare(Scenario::load(&args.scenario)?, &args.sim)?;
    if args.seeds.0.is_empty() {
        return Err(crate::exit::InvalidInput("no seeds given".into()).into());
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let opts = options(&args.sim, args.trace.into());

    let mut status = Status::Ok;
    for &seed in &args.seeds.0 {
        if verbose > 0 {
            eprintln!("seed {seed}: simulating {} slots", scenario.horizon);
        }
        match run(&scenario, seed, opts) {
            Ok(out) => {
                write_outputs(&args.out, seed, &out, None)?;
                let r = &out.report;
                println!(
                    "seed {seed}: {} slots, {} exits, throughput {:.4} veh/s, mean delay {:.3} s, {} violations, {} permission conflicts, {} signal violations",
                    r.slots_run,
                    r.metrics.exits,
                    r.metrics.throughput,
                    r.metrics.mean_delay,
                    r.violations.len(),
                    r.permission_conflicts.len(),
                    r.signal_violations.len()
                );
                if !r.is_safe() && status == Status::Ok {
                    status = Status::Violation;
                }
            }
            Err(e @ SimError::Fatal { .. }) => {
                let detail = e.to_string();
                if let Some(partial) = e.partial() {
                    write_outputs(&args.out, seed, partial, Some(&detail))?;
                }
                eprintln!("seed {seed}: aborted: {detail}");
                status = Status::Fatal;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(status)
}
