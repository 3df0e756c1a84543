//! Vehicles on the road and the follow relations between them.
//!
//! Followers are found per path. Where two paths merge into one exit lane,
//! vehicles of the partner path are projected onto the shared stretch so that
//! car-following continues across the merge (see [`MergeLink`]).

use serde::Serialize;

use crate::geometry::{IntersectionModel, MergeLink, Turn};
use crate::kinematics::VehicleState;
use crate::params::{Params, VehicleKind};
use crate::separation::{self, FollowContext, LeadKind, OwnLimit, SeparationParams};

#[derive(Clone, Debug, Serialize)]
pub struct Vehicle {
    pub id: u64,
    pub kind: VehicleKind,
    pub state: VehicleState,
    pub spawn_time: f64,
    pub spawn_s: f64,
    /// Human drivers: speed recorded at the latest slot boundary. Until the
    /// recording step of a slot this still holds the previous boundary's
    /// value, which is the sample automated followers use.
    pub boundary_speed: f64,
    /// Human drivers: the stop branch of the signal rule has been taken and
    /// holds until the light turns green. Derived from observable state, so
    /// the manager may rely on it as well.
    pub stop_latched: bool,
    /// Automated vehicles: restricted to human braking at the last planning step.
    pub virtual_hv: bool,
    /// Automated vehicles: held permission to enter at the last planning step.
    pub permitted_at_plan: bool,
    pub stops: u32,
    pub halted: bool,
}

impl Vehicle {
    pub fn new(id: u64, kind: VehicleKind, state: VehicleState, spawn_time: f64) -> Self {
        Self {
            id,
            kind,
            spawn_time,
            spawn_s: state.s,
            boundary_speed: state.v,
            state,
            stop_latched: false,
            virtual_hv: false,
            permitted_at_plan: false,
            stops: 0,
            halted: false,
        }
    }

    pub fn path(&self) -> usize {
        self.state.path
    }

    pub fn is_av(&self) -> bool {
        self.kind == VehicleKind::Av
    }

    /// Speed sample other vehicles use for separation formulas at a slot
    /// boundary (the previous-slot value).
    pub fn speed_sample(&self) -> f64 {
        match self.kind {
            VehicleKind::Av => self.state.v,
            VehicleKind::Hv => self.boundary_speed,
        }
    }

    /// Whether the vehicle brakes like a human from its followers' point of view.
    pub fn hv_like(&self) -> bool {
        self.kind == VehicleKind::Hv || self.virtual_hv
    }

    pub fn own_limit(&self) -> OwnLimit {
        if self.hv_like() {
            OwnLimit::HvLimited
        } else {
            OwnLimit::AvLimited
        }
    }

    pub fn lead_kind(&self) -> LeadKind {
        if self.hv_like() {
            LeadKind::HvLike
        } else {
            LeadKind::Av
        }
    }
}

/// The nearest vehicle ahead, by index into the vehicle slice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lead {
    pub index: usize,
    pub gap: f64,
    /// Reached through a merge projection rather than on the own path.
    pub projected: bool,
}

/// Per-path ordering of vehicles, rebuilt whenever positions change.
#[derive(Clone, Debug, Default)]
pub struct Corridor {
    own: Vec<Vec<(f64, usize)>>,
    projected: Vec<Vec<(f64, usize)>>,
}

impl Corridor {
    pub fn build(model: &IntersectionModel, vehicles: &[Vehicle]) -> Self {
        let n = model.paths.len();
        let mut own: Vec<Vec<(f64, usize)>> = vec![Vec::new(); n];
        let mut projected: Vec<Vec<(f64, usize)>> = vec![Vec::new(); n];
        for (i, v) in vehicles.iter().enumerate() {
            own[v.path()].push((v.state.s, i));
        }
        for path in 0..n {
            if let Some(link) = model.merge_link(path) {
                let partner = &model.paths[link.partner];
                for &(s, i) in &own[link.partner] {
                    if s >= partner.entry_point {
                        projected[path].push((s + link.offset, i));
                    }
                }
            }
        }
        let by_position = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        for list in own.iter_mut().chain(projected.iter_mut()) {
            list.sort_by(by_position);
        }
        Self { own, projected }
    }

    /// Vehicles on `path`, upstream first.
    pub fn on_path(&self, path: usize) -> &[(f64, usize)] {
        &self.own[path]
    }

    /// Nearest vehicle ahead of `vehicles[index]`.
    pub fn lead(&self, model: &IntersectionModel, vehicles: &[Vehicle], index: usize) -> Option<Lead> {
        let me = &vehicles[index];
        let (path, s) = (me.path(), me.state.s);
        let list = &self.own[path];
        let pos = list.iter().position(|&(_, i)| i == index).expect("every vehicle is listed on its own path");
        let same = list.get(pos + 1).map(|&(sl, i)| Lead { index: i, gap: sl - s, projected: false });
        let proj = model.merge_link(path).filter(|link| partner_visible(model, link, path, s)).and_then(|_| {
            let plist = &self.projected[path];
            let k = plist.partition_point(|&(p, _)| p <= s);
            plist.get(k).map(|&(p, i)| Lead { index: i, gap: p - s, projected: true })
        });
        match (same, proj) {
            (Some(a), Some(b)) => {
                let a_first = a.gap < b.gap || (a.gap == b.gap && vehicles[a.index].id < vehicles[b.index].id);
                Some(if a_first { a } else { b })
            }
            (a, b) => a.or(b),
        }
    }

    pub fn leads(&self, model: &IntersectionModel, vehicles: &[Vehicle]) -> Vec<Option<Lead>> {
        (0..vehicles.len()).map(|i| self.lead(model, vehicles, i)).collect()
    }
}

/// Partner-path vehicles (already past their own stop line) are relevant to
/// a vehicle at `s` on `path` once it is inside the junction itself, or from
/// upstream when the partner's stop line projects ahead of this path's.
fn partner_visible(model: &IntersectionModel, link: &MergeLink, path: usize, s: f64) -> bool {
    link.visible_from_upstream || s >= model.paths[path].entry_point
}

/// Virtual-HV status of every vehicle: an automated vehicle is restricted to
/// human braking when some follower of it is a human driver or itself
/// restricted. A follower reached through a merge projection only counts once
/// it is past its own stop line.
pub fn virtual_hv_flags(model: &IntersectionModel, vehicles: &[Vehicle], leads: &[Option<Lead>]) -> Vec<bool> {
    let mut flags = vec![false; vehicles.len()];
    let counts = |follower: usize, lead: &Lead| {
        !lead.projected || {
            let f = &vehicles[follower];
            f.state.s >= model.paths[f.path()].entry_point
        }
    };
    loop {
        let mut changed = false;
        for (follower, lead) in leads.iter().enumerate() {
            let Some(lead) = lead else { continue };
            if !counts(follower, lead) || flags[lead.index] || !vehicles[lead.index].is_av() {
                continue;
            }
            if vehicles[follower].kind == VehicleKind::Hv || flags[follower] {
                flags[lead.index] = true;
                changed = true;
            }
        }
        if !changed {
            return flags;
        }
    }
}

/// Braking limit an automated vehicle may use given its virtual-HV status.
pub fn effective_brake_limit(params: &Params, virtual_hv: bool) -> f64 {
    if virtual_hv {
        params.a_min_hv
    } else {
        params.a_min_av
    }
}

/// Follow context of `follower` behind `lead`.
pub fn follow_context(follower: &Vehicle, lead: &Vehicle) -> FollowContext {
    FollowContext::new(lead.lead_kind(), follower.own_limit())
}

/// Gap a vehicle at speed `v` must leave to a merging human driver so that it
/// can both stop short of it as a human driver would and keep an automated
/// follow distance at the next slot boundary. Depends only on the observed
/// speed, not on the kind of the approaching vehicle.
pub fn merge_acceptance_gap(v: f64, sep: &SeparationParams) -> f64 {
    let human = separation::s_hv(v - sep.a_min_hv * sep.h, 0.0, sep);
    let automated =
        separation::s_star(FollowContext::new(LeadKind::HvLike, OwnLimit::HvLimited), v, 0.0, sep) + v * sep.h;
    human.max(automated)
}

/// Whether a human driver on a right-turn path may cross its stop line now:
/// the nearest vehicle approaching the conflict on the other path is far
/// enough back, and nothing of the other path is already between that point
/// and its exit.
pub fn right_turn_clear(
    model: &IntersectionModel,
    vehicles: &[Vehicle],
    corridor: &Corridor,
    index: usize,
    sep: &SeparationParams,
) -> bool {
    let me = &vehicles[index];
    let path = me.path();
    debug_assert_eq!(model.paths[path].turn, Turn::Right);
    model.conflicting_paths(path).into_iter().all(|other| {
        let p_s = match model.merge_link(other) {
            Some(link) if link.partner == path => link.partner_entry_here,
            _ => model
                .conflicts(path, other)
                .iter()
                .filter_map(|a| a.interval_for(other).map(|o| o.s_in))
                .fold(f64::INFINITY, f64::min),
        };
        let exit = model.paths[other].exit_point;
        let on_other = corridor.on_path(other);
        if on_other.iter().any(|&(s, _)| s >= p_s && s <= exit) {
            return false;
        }
        let k = on_other.partition_point(|&(s, _)| s < p_s);
        match k.checked_sub(1).map(|j| on_other[j]) {
            None => true,
            Some((s, i)) => p_s - s >= merge_acceptance_gap(vehicles[i].state.v, sep),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_intersection, IntersectionSpec};

    fn setup() -> (IntersectionModel, Params) {
        let p = Params::default();
        (build_intersection(&IntersectionSpec::four_way(), &p).unwrap(), p)
    }

    fn car(model: &IntersectionModel, id: u64, kind: VehicleKind, path: usize, s: f64, v: f64) -> Vehicle {
        Vehicle::new(id, kind, VehicleState::on_path(&model.paths[path], s, v), 0.0)
    }

    #[test]
    fn same_path_lead_and_vhv_chain() {
        let (m, _) = setup();
        let vs = vec![
            car(&m, 1, VehicleKind::Av, 1, 50.0, 10.0),
            car(&m, 2, VehicleKind::Av, 1, 30.0, 10.0),
            car(&m, 3, VehicleKind::Hv, 1, 10.0, 10.0),
            car(&m, 4, VehicleKind::Av, 2, 40.0, 10.0),
        ];
        let c = Corridor::build(&m, &vs);
        let leads = c.leads(&m, &vs);
        assert_eq!(leads[2].map(|l| l.index), Some(1));
        assert_eq!(leads[1].map(|l| l.index), Some(0));
        assert!(leads[0].is_none() && leads[3].is_none());
        assert_eq!(virtual_hv_flags(&m, &vs, &leads), vec![true, true, false, false]);
    }

    #[test]
    fn merge_projection_visibility() {
        let (m, _) = setup();
        // Path 0 (right turn) merges into path 13 (outer straight of the west arm).
        let link13 = *m.merge_link(13).unwrap();
        assert_eq!(link13.partner, 0);
        assert!(link13.visible_from_upstream);
        assert!(!m.merge_link(0).unwrap().visible_from_upstream);
        let entry0 = m.paths[0].entry_point;
        let vs = vec![car(&m, 1, VehicleKind::Hv, 0, entry0 + 2.0, 5.0), car(&m, 2, VehicleKind::Av, 13, 20.0, 10.0)];
        let c = Corridor::build(&m, &vs);
        let lead = c.lead(&m, &vs, 1).unwrap();
        assert!(lead.projected && lead.index == 0);
        assert!((lead.gap - (entry0 + 2.0 + link13.offset - 20.0)).abs() < 1e-9);
        // Projected followers upstream of their own stop line do not make the lead virtual.
        let vs2 = vec![car(&m, 1, VehicleKind::Av, 0, entry0 + 2.0, 5.0), car(&m, 2, VehicleKind::Hv, 13, 20.0, 10.0)];
        let c2 = Corridor::build(&m, &vs2);
        let leads = c2.leads(&m, &vs2);
        assert_eq!(leads[1].map(|l| l.index), Some(0));
        assert_eq!(virtual_hv_flags(&m, &vs2, &leads), vec![false, false]);
    }
}
