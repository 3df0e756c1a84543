//! Throughput, delay and stop statistics, plus the per-slot table.

use std::io::{self, Write};

use serde::Serialize;

use crate::params::VehicleKind;

/// One vehicle leaving the junction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExitRecord {
    pub vehicle: u64,
    pub kind: VehicleKind,
    /// Time the vehicle passed the end of the junction.
    pub time: f64,
    /// Travel time in excess of driving the same distance at the speed limit.
    pub delay: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub exits: usize,
    /// Vehicles per hour through the junction.
    pub throughput: f64,
    pub mean_delay: f64,
    pub mean_delay_av: f64,
    pub mean_delay_hv: f64,
    pub stops_av: u64,
    pub stops_hv: u64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl Metrics {
    /// Aggregate exits over a run of `duration` seconds.
    pub fn from_exits(exits: &[ExitRecord], duration: f64, stops_av: u64, stops_hv: u64) -> Self {
        let of_kind = |k: VehicleKind| exits.iter().filter(move |e| e.kind == k).map(|e| e.delay);
        Self {
            exits: exits.len(),
            throughput: if duration > 0.0 { exits.len() as f64 * 3600.0 / duration } else { 0.0 },
            mean_delay: mean(exits.iter().map(|e| e.delay)),
            mean_delay_av: mean(of_kind(VehicleKind::Av)),
            mean_delay_hv: mean(of_kind(VehicleKind::Hv)),
            stops_av,
            stops_hv,
        }
    }
}

/// Snapshot of one slot, taken after the manager has decided.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SlotMetrics {
    pub slot: u64,
    pub time: f64,
    pub vehicles: usize,
    pub avs: usize,
    pub hvs: usize,
    pub queued: usize,
    pub exited_total: usize,
    pub permitted: usize,
    pub planned: usize,
    pub uncertain: usize,
    pub green: usize,
    pub amber: usize,
    pub violations_total: usize,
}

pub const SLOT_CSV_HEADER: &str =
    "slot,time,vehicles,avs,hvs,queued,exited_total,permitted,planned,uncertain,green,amber,violations_total";

pub fn write_slot_csv<W: Write>(rows: &[SlotMetrics], mut out: W) -> io::Result<()> {
    writeln!(out, "{SLOT_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.slot,
            r.time,
            r.vehicles,
            r.avs,
            r.hvs,
            r.queued,
            r.exited_total,
            r.permitted,
            r.planned,
            r.uncertain,
            r.green,
            r.amber,
            r.violations_total
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_run_has_zero_throughput() {
        let m = Metrics::from_exits(&[], 500.0, 0, 0);
        assert_eq!(m.throughput, 0.0);
        assert_eq!(m.mean_delay, 0.0);
    }

    #[test]
    fn throughput_per_hour() {
        let e = ExitRecord { vehicle: 1, kind: VehicleKind::Av, time: 3.0, delay: 0.5 };
        let m =
            Metrics::from_exits(&[e, ExitRecord { vehicle: 2, kind: VehicleKind::Hv, delay: 1.5, ..e }], 36.0, 0, 2);
        assert_eq!(m.throughput, 200.0);
        assert_eq!(m.mean_delay, 1.0);
        assert_eq!((m.mean_delay_av, m.mean_delay_hv), (0.5, 1.5));
    }
}
