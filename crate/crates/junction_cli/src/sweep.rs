use std::fs::File;
use std::io::{BufWriter, Write};

use anyhow::Context;
use mixed_junction::scenario::Arrivals;
use mixed_junction::sim_engine::trace::TraceLevel;
use mixed_junction::sim_engine::{run_on, SafetyReport};
use mixed_junction::Scenario;
use rayon::prelude::*;

use crate::exit::{InvalidInput, Status};
use crate::run::{options, prepare};
use crate::{init_workers, SweepArgs};

pub const SWEEP_CSV_HEADER: &str = "hv_fraction,demand,seed,throughput,mean_delay,violations";

/// Horizon of sweep cells when no scenario file is given.
const DEFAULT_HORIZON: u64 = 1000;
const DEFAULT_RATE: f64 = 0.02;

struct Cell {
    hv_fraction: f64,
    rate: f64,
    seed: u64,
}

fn violations(r: &SafetyReport) -> usize {
    r.violations.len() + r.permission_conflicts.len() + r.signal_violations.len()
}

pub fn execute(args: &SweepArgs, verbose: u8) -> anyhow::Result<Status> {
    init_workers(args.workers)?;
    let base = match &args.scenario {
        Some(path) => Scenario::load(path)?,
        None => Scenario::poisson(DEFAULT_RATE, 0.0, Default::default(), DEFAULT_HORIZON),
    };
    let base = prepare(base, &args.sim)?;
    let Arrivals::Poisson { rate: base_rate, .. } = base.arrivals else {
        return Err(InvalidInput("a sweep needs a scenario with Poisson arrivals".into()).into());
    };
    let rates = args.rates.as_ref().map_or_else(|| vec![base_rate], |a| a.0.clone());

    let mut cells = Vec::new();
    for &hv_fraction in &args.hv_fractions.0 {
        for &rate in &rates {
            for &seed in &args.seeds.0 {
                cells.push(Cell { hv_fraction, rate, seed });
            }
        }
    }
    if cells.is_empty() {
        return Err(InvalidInput("empty sweep".into()).into());
    }

    let scenario_for = |cell: &Cell| {
        let mut s = base.clone();
        if let Arrivals::Poisson { rate, hv_fraction, .. } = &mut s.arrivals {
            *rate = cell.rate;
            *hv_fraction = cell.hv_fraction;
        }
        s
    };
    // Every cell shares the geometry, so each axis value is checked once here.
    for cell in &cells {
        scenario_for(cell).validate()?;
    }
    let model = base.validate()?;
    let opts = options(&args.sim, TraceLevel::Off);
    if verbose > 0 {
        eprintln!("sweep: {} cells of {} slots", cells.len(), base.horizon);
    }

    let results: Vec<_> =
        cells.par_iter().map(|cell| run_on(&scenario_for(cell), model.clone(), cell.seed, opts)).collect();

    let file = File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut csv = BufWriter::new(file);
    writeln!(csv, "{SWEEP_CSV_HEADER}")?;
    let mut status = Status::Ok;
    for (cell, result) in cells.iter().zip(results) {
        let report = match result {
            Ok(out) => out.report,
            Err(e) => {
                eprintln!("hv_fraction={} demand={} seed={}: aborted: {e}", cell.hv_fraction, cell.rate, cell.seed);
                status = Status::Fatal;
                match e.partial() {
                    Some(p) => p.report.clone(),
                    None => continue,
                }
            }
        };
        let count = violations(&report);
        if count > 0 && status == Status::Ok {
            status = Status::Violation;
        }
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            cell.hv_fraction, cell.rate, cell.seed, report.metrics.throughput, report.metrics.mean_delay, count
        )?;
    }
    csv.flush().with_context(|| format!("writing {}", args.out.display()))?;
    println!("sweep: {} cells written to {}", cells.len(), args.out.display());
    Ok(status)
}
