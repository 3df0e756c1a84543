//! Trace events: one JSON object per line.
//!
//! Every record carries `slot`, `micro` (0 at the slot boundary, `m` after
//! the `m`-th micro-step) and `kind`; the remaining fields depend on the
//! kind. Records are ordered by time, then kind (in the order of
//! [`EventKind`]), then vehicle id.

use std::io::{self, Write};

use serde::Serialize;

use crate::av_planner::FeasibleBy;
use crate::intersection_manager::Light;
use crate::params::VehicleKind;

use super::monitor::Finding;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceLevel {
    /// Record nothing.
    Off,
    /// Slot markers, spawns, grants, colour changes, plans, violations and exits.
    #[default]
    Events,
    /// Additionally every vehicle state after every micro-step.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Slot,
    Spawn,
    Grant,
    ColorChange,
    Plan,
    StateSample,
    Violation,
    Exit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GrantSet {
    /// Permission for an automated vehicle.
    Av,
    /// A human driver planned for entry on green.
    Hv,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventBody {
    Slot {
        vehicles: usize,
        permitted: Vec<u64>,
        planned: Vec<u64>,
        uncertain: Vec<u64>,
    },
    Spawn {
        vehicle: u64,
        vtype: VehicleKind,
        path: usize,
        s: f64,
        v: f64,
    },
    Grant {
        vehicle: u64,
        path: usize,
        set: GrantSet,
    },
    ColorChange {
        path: usize,
        from: Light,
        to: Light,
    },
    Plan {
        vehicle: u64,
        speeds: Vec<f64>,
        feasible_by: FeasibleBy,
        virtual_hv: bool,
        permitted: bool,
        lead: Option<u64>,
    },
    StateSample {
        vehicle: u64,
        s: f64,
        v: f64,
        x: f64,
        y: f64,
        theta: f64,
    },
    Violation(Finding),
    Exit {
        vehicle: u64,
        time: f64,
        delay: f64,
    },
}

impl EventBody {
    pub fn kind(&self) -> EventKind {
        match self {
            EventBody::Slot { .. } => EventKind::Slot,
            EventBody::Spawn { .. } => EventKind::Spawn,
            EventBody::Grant { .. } => EventKind::Grant,
            EventBody::ColorChange { .. } => EventKind::ColorChange,
            EventBody::Plan { .. } => EventKind::Plan,
            EventBody::StateSample { .. } => EventKind::StateSample,
            EventBody::Violation(_) => EventKind::Violation,
            EventBody::Exit { .. } => EventKind::Exit,
        }
    }

    fn vehicle(&self) -> u64 {
        match self {
            EventBody::Spawn { vehicle, .. }
            | EventBody::Grant { vehicle, .. }
            | EventBody::Plan { vehicle, .. }
            | EventBody::StateSample { vehicle, .. }
            | EventBody::Exit { vehicle, .. } => *vehicle,
            EventBody::ColorChange { path, .. } => *path as u64,
            EventBody::Violation(v) => v.vehicles.first().copied().unwrap_or(0),
            EventBody::Slot { .. } => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceEvent {
    pub slot: u64,
    pub micro: u32,
    #[serde(flatten)]
    pub body: EventBody,
}

/// Events of one run, in order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub level: TraceLevel,
    pub events: Vec<TraceEvent>,
    /// Events of the current instant, sorted when the instant is closed.
    pending: Vec<TraceEvent>,
}

impl Trace {
    pub fn new(level: TraceLevel) -> Self {
        Self { level, events: Vec::new(), pending: Vec::new() }
    }

    pub fn wants(&self, kind: EventKind) -> bool {
        match self.level {
            TraceLevel::Off => false,
            TraceLevel::Events => kind != EventKind::StateSample,
            TraceLevel::Full => true,
        }
    }

    pub fn push(&mut self, slot: u64, micro: u32, body: EventBody) {
        if self.wants(body.kind()) {
            self.pending.push(TraceEvent { slot, micro, body });
        }
    }

    /// Close the current instant: sort its events and append them.
    pub fn flush(&mut self) {
        self.pending.sort_by_key(|e| (e.slot, e.micro, e.body.kind(), e.body.vehicle()));
        self.events.append(&mut self.pending);
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}
