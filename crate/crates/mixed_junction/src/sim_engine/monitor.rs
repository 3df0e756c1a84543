//! Safety monitor.
//!
//! Checked at every micro-step: no two vehicles of crossing paths inside the
//! same collision area, merging vehicles at least the bumper margin apart,
//! human drivers at their follow distance, and same-path vehicles at least
//! the bumper margin apart. Checked at every slot boundary: automated
//! vehicles satisfy the separation relation they planned for. Entry
//! violations are detected by the engine when a vehicle crosses its stop
//! line. The monitor always uses the unmodified separation formulas.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::geometry::{AreaKind, IntersectionModel, Region};
use crate::separation::{s_hv, s_star, FollowContext, LeadKind, SeparationParams};
use crate::world::{Corridor, Vehicle};

/// Slack allowed before a gap counts as violated.
pub const MONITOR_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    AreaCoOccupancy,
    HvSeparation,
    AvSeparation,
    EntryWithoutRight,
    BumperGap,
}

impl std::fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ViolationKind::AreaCoOccupancy => "area-co-occupancy",
            ViolationKind::HvSeparation => "hv-separation",
            ViolationKind::AvSeparation => "av-separation",
            ViolationKind::EntryWithoutRight => "entry-without-right",
            ViolationKind::BumperGap => "bumper-gap",
        };
        f.write_str(name)
    }
}

/// A violated invariant, without its time stamp.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Finding {
    #[serde(rename = "violation")]
    pub kind: ViolationKind,
    pub vehicles: Vec<u64>,
    pub gap: f64,
    pub required: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub slot: u64,
    pub micro: u32,
    #[serde(flatten)]
    pub finding: Finding,
}

fn in_signal_range_or_junction(model: &IntersectionModel, v: &Vehicle) -> bool {
    matches!(model.region_at(v.path(), v.state.s), Region::SignalVisible | Region::Junction)
}

/// Micro-step checks on a world snapshot.
pub fn check_safety(model: &IntersectionModel, vehicles: &[Vehicle], sep: &SeparationParams) -> Vec<Finding> {
    check_snapshot(model, vehicles, &Corridor::build(model, vehicles), sep)
}

pub(crate) fn check_snapshot(
    model: &IntersectionModel,
    vehicles: &[Vehicle],
    corridor: &Corridor,
    sep: &SeparationParams,
) -> Vec<Finding> {
    let mut out = Vec::new();
    check_areas(model, vehicles, corridor, sep, &mut out);

    for (i, me) in vehicles.iter().enumerate() {
        if me.is_av() || !in_signal_range_or_junction(model, me) {
            continue;
        }
        if let Some(lead) = corridor.lead(model, vehicles, i) {
            let lv = &vehicles[lead.index];
            if in_signal_range_or_junction(model, lv) {
                let required = s_hv(me.state.v, lv.state.v, sep);
                if lead.gap < required - MONITOR_TOL {
                    out.push(Finding {
                        kind: ViolationKind::HvSeparation,
                        vehicles: vec![me.id, lv.id],
                        gap: lead.gap,
                        required,
                    });
                }
            }
        }
    }

    for path in 0..model.paths.len() {
        for pair in corridor.on_path(path).windows(2) {
            let (back, front) = (pair[0], pair[1]);
            let gap = front.0 - back.0;
            if gap < sep.s_min - MONITOR_TOL {
                out.push(Finding {
                    kind: ViolationKind::BumperGap,
                    vehicles: vec![vehicles[back.1].id, vehicles[front.1].id],
                    gap,
                    required: sep.s_min,
                });
            }
        }
    }
    out
}

fn check_areas(
    model: &IntersectionModel,
    vehicles: &[Vehicle],
    corridor: &Corridor,
    sep: &SeparationParams,
    out: &mut Vec<Finding>,
) {
    for area in &model.areas {
        let [ia, ib] = area.intervals;
        let inside = |occ: &crate::geometry::Occupancy| -> Vec<(f64, usize)> {
            corridor.on_path(occ.path).iter().copied().filter(|&(s, _)| occ.contains(s)).collect()
        };
        let (a_in, b_in) = (inside(&ia), inside(&ib));
        if a_in.is_empty() || b_in.is_empty() {
            continue;
        }
        for &(sa, i) in &a_in {
            for &(sb, j) in &b_in {
                let mut ids = vec![vehicles[i].id, vehicles[j].id];
                ids.sort_unstable();
                match area.kind {
                    AreaKind::Crossing => {
                        let gap = model.paths[ia.path].point_at(sa).distance(model.paths[ib.path].point_at(sb));
                        out.push(Finding {
                            kind: ViolationKind::AreaCoOccupancy,
                            vehicles: ids,
                            gap,
                            required: 2.0 * area.radius,
                        });
                    }
                    AreaKind::Merge => {
                        // Compare positions in the coordinates of whichever
                        // path carries the link to the other.
                        let gap = match (model.merge_link(ia.path), model.merge_link(ib.path)) {
                            (Some(link), _) if link.partner == ib.path => (sa - (sb + link.offset)).abs(),
                            (_, Some(link)) if link.partner == ia.path => (sb - (sa + link.offset)).abs(),
                            _ => model.paths[ia.path].point_at(sa).distance(model.paths[ib.path].point_at(sb)),
                        };
                        if gap < sep.s_min - MONITOR_TOL {
                            out.push(Finding {
                                kind: ViolationKind::AreaCoOccupancy,
                                vehicles: ids,
                                gap,
                                required: sep.s_min,
                            });
                        }
                    }
                }
            }
        }
    }
}

/// Slot-boundary check of every automated vehicle's separation relation,
/// using the status it planned with.
pub(crate) fn check_av_relations(
    model: &IntersectionModel,
    vehicles: &[Vehicle],
    corridor: &Corridor,
    sep: &SeparationParams,
) -> Vec<Finding> {
    let mut out = Vec::new();
    for (i, me) in vehicles.iter().enumerate() {
        let path = &model.paths[me.path()];
        if !me.is_av() || me.state.s > path.exit_point {
            continue;
        }
        if let Some(lead) = corridor.lead(model, vehicles, i) {
            let lv = &vehicles[lead.index];
            let ctx = FollowContext::new(lv.lead_kind(), me.own_limit());
            let required = s_star(ctx, me.state.v, lv.speed_sample(), sep);
            if lead.gap < required - MONITOR_TOL {
                out.push(Finding {
                    kind: ViolationKind::AvSeparation,
                    vehicles: vec![me.id, lv.id],
                    gap: lead.gap,
                    required,
                });
            }
        }
        if !me.permitted_at_plan && me.state.s <= path.entry_point {
            let ctx = FollowContext::new(LeadKind::Av, me.own_limit());
            let required = s_star(ctx, me.state.v, 0.0, sep);
            let gap = path.entry_point - me.state.s;
            if gap < required - MONITOR_TOL {
                out.push(Finding { kind: ViolationKind::AvSeparation, vehicles: vec![me.id], gap, required });
            }
        }
    }
    out
}

/// Reports each violation once, when it starts.
#[derive(Clone, Debug, Default)]
pub(crate) struct OnsetFilter {
    active: BTreeSet<(ViolationKind, Vec<u64>)>,
}

impl OnsetFilter {
    pub fn filter(&mut self, findings: Vec<Finding>) -> Vec<Finding> {
        let mut now = BTreeSet::new();
        let mut fresh = Vec::new();
        for f in findings {
            let key = (f.kind, f.vehicles.clone());
            if !self.active.contains(&key) && !now.contains(&key) {
                fresh.push(f);
            }
            now.insert(key);
        }
        self.active = now;
        fresh
    }
}
