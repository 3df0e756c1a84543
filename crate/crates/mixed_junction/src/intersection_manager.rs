//! Infrastructure side: which vehicles have left, which human drivers may be
//! unable to stop, who gets to enter, and what the lights show.
//!
//! The manager runs once per slot on a snapshot of the road (perfect roadside
//! sensing plus requests received over V2I). Automated vehicles enter on
//! explicit permission; human drivers enter on green, so "planning" a human
//! driver's entry means turning its light green.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{IntersectionModel, Turn};
use crate::params::{Params, VehicleKind};
use crate::separation::{s_hv, SeparationParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Light {
    Green,
    Amber,
    Red,
}

impl fmt::Display for Light {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Light::Green => "g",
            Light::Amber => "a",
            Light::Red => "r",
        })
    }
}

/// Light colour per path; `None` for unsignalized (right-turn) paths.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SignalState {
    pub colors: Vec<Option<Light>>,
}

impl SignalState {
    pub fn all_red(model: &IntersectionModel) -> Self {
        Self { colors: model.paths.iter().map(|p| (p.turn != Turn::Right).then_some(Light::Red)).collect() }
    }

    pub fn color(&self, path: usize) -> Option<Light> {
        self.colors[path]
    }

    pub fn is_non_red(&self, path: usize) -> bool {
        matches!(self.colors[path], Some(Light::Green | Light::Amber))
    }
}

/// Entry request from an automated vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Request {
    pub vehicle: u64,
    pub path: usize,
    pub slot: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ManagerState {
    pub permitted_av: BTreeSet<u64>,
    pub planned_hv: BTreeSet<u64>,
    pub uncertain: BTreeSet<u64>,
    pub exited: BTreeSet<u64>,
    pub pending: Vec<Request>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManagerConfig {
    /// Plan a human driver's entry when a permitted or uncertain vehicle on
    /// the same path is *ahead* of it, instead of behind it.
    pub follower_ahead: bool,
    /// Test hook: grant automated vehicles without the conflict check.
    #[serde(skip)]
    pub skip_conflict_check: bool,
}

/// The manager's view of one vehicle at a slot boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Observed {
    pub id: u64,
    pub kind: VehicleKind,
    pub path: usize,
    pub s: f64,
    pub v: f64,
    /// Speed sampled at the previous slot boundary.
    pub v_prev: f64,
    pub stop_latched: bool,
}

impl Observed {
    /// Distance to the stop line (negative once past it).
    pub fn distance(&self, model: &IntersectionModel) -> f64 {
        model.paths[self.path].entry_point - self.s
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ManagerError {
    #[error("protocol conflict: conflicting paths {0} and {1} would both be non-red")]
    ProtocolConflict(usize, usize),
}

/// Vehicles past their stop line and outside the junction.
pub fn compute_exited(model: &IntersectionModel, vehicles: &[Observed]) -> BTreeSet<u64> {
    vehicles
        .iter()
        .filter(|c| {
            let p = &model.paths[c.path];
            c.s > p.entry_point && c.s > p.exit_point
        })
        .map(|c| c.id)
        .collect()
}

/// Human drivers who saw green in the previous slot and might be unable to
/// stop before the junction. Members of the previous set whose light has
/// since turned amber stay uncertain until they exit, unless they have been
/// seen committing to stop.
pub fn compute_uncertain(
    model: &IntersectionModel,
    vehicles: &[Observed],
    prev_signals: &SignalState,
    prev_uncertain: &BTreeSet<u64>,
    exited: &BTreeSet<u64>,
    params: &Params,
    sep: &SeparationParams,
) -> BTreeSet<u64> {
    vehicles
        .iter()
        .filter(|c| c.kind == VehicleKind::Hv && !exited.contains(&c.id))
        .filter(|c| match prev_signals.color(c.path) {
            Some(Light::Green) => {
                let v_bound = (c.v_prev + params.a_max * params.h).max(params.v_max);
                c.distance(model) < s_hv(v_bound, 0.0, sep)
            }
            Some(Light::Amber) => prev_uncertain.contains(&c.id) && !c.stop_latched,
            _ => false,
        })
        .map(|c| c.id)
        .collect()
}

fn path_set(ids: impl IntoIterator<Item = u64>, by_id: &BTreeMap<u64, &Observed>) -> BTreeSet<usize> {
    ids.into_iter().filter_map(|id| by_id.get(&id).map(|c| c.path)).collect()
}

fn conflict_free(model: &IntersectionModel, path: usize, occupied: &BTreeSet<usize>) -> bool {
    occupied.iter().all(|&other| !model.in_conflict(path, other))
}

/// Permission assignment for slot `t`.
///
/// 1. Permitted vehicles keep their permission until they exit.
/// 2. Pending requests are ranked by distance to the stop line, then request
///    slot, then vehicle id.
/// 3. A request is granted iff its path is conflict-free with every path
///    already holding a permitted, planned or uncertain vehicle.
/// 4. Human drivers inside the communication range on signalized paths are
///    planned for entry (their light will turn green) when their path is
///    conflict-free in the same sense, or when a permitted or uncertain
///    vehicle on the same path is behind them.
#[allow(clippy::too_many_arguments)]
pub fn assign_permissions(
    prev: &ManagerState,
    model: &IntersectionModel,
    vehicles: &[Observed],
    requests: &[Request],
    uncertain: BTreeSet<u64>,
    exited: BTreeSet<u64>,
    cfg: &ManagerConfig,
) -> ManagerState {
    let by_id: BTreeMap<u64, &Observed> = vehicles.iter().map(|c| (c.id, c)).collect();
    let live = |id: &u64| by_id.contains_key(id) && !exited.contains(id);

    let mut permitted: BTreeSet<u64> = prev.permitted_av.iter().copied().filter(live).collect();

    let mut pending: Vec<Request> = prev.pending.clone();
    for r in requests {
        if !pending.iter().any(|p| p.vehicle == r.vehicle) {
            pending.push(*r);
        }
    }
    pending.retain(|r| live(&r.vehicle) && !permitted.contains(&r.vehicle));
    pending.sort_by(|a, b| {
        let da = by_id[&a.vehicle].distance(model);
        let db = by_id[&b.vehicle].distance(model);
        da.total_cmp(&db).then(a.slot.cmp(&b.slot)).then(a.vehicle.cmp(&b.vehicle))
    });

    let mut occupied = path_set(permitted.iter().chain(&uncertain).copied(), &by_id);
    let mut still_pending = Vec::new();
    for r in pending {
        if cfg.skip_conflict_check || conflict_free(model, r.path, &occupied) {
            permitted.insert(r.vehicle);
            occupied.insert(r.path);
        } else {
            still_pending.push(r);
        }
    }

    let mut pool: Vec<&Observed> = vehicles
        .iter()
        .filter(|c| {
            c.kind == VehicleKind::Hv
                && model.paths[c.path].turn != Turn::Right
                && !exited.contains(&c.id)
                && c.distance(model) <= model.d_c
        })
        .collect();
    pool.sort_by(|a, b| a.distance(model).total_cmp(&b.distance(model)).then(a.id.cmp(&b.id)));
    let mut planned = BTreeSet::new();
    for c in pool {
        let escorted = permitted.iter().chain(&uncertain).any(|id| {
            by_id.get(id).is_some_and(|f| {
                f.id != c.id && f.path == c.path && if cfg.follower_ahead { f.s > c.s } else { f.s < c.s }
            })
        });
        if escorted || conflict_free(model, c.path, &occupied) {
            planned.insert(c.id);
            occupied.insert(c.path);
        }
    }

    ManagerState { permitted_av: permitted, planned_hv: planned, uncertain, exited, pending: still_pending }
}

/// Pairs of vehicles in the permitted, planned and uncertain sets whose paths
/// conflict. Empty whenever the assignment is sound.
pub fn conflicting_pairs(model: &IntersectionModel, state: &ManagerState, vehicles: &[Observed]) -> Vec<(u64, u64)> {
    let by_id: BTreeMap<u64, &Observed> = vehicles.iter().map(|c| (c.id, c)).collect();
    let members: BTreeSet<u64> =
        state.permitted_av.iter().chain(&state.planned_hv).chain(&state.uncertain).copied().collect();
    let members: Vec<&Observed> = members.iter().filter_map(|id| by_id.get(id).copied()).collect();
    let mut out = Vec::new();
    for (i, a) in members.iter().enumerate() {
        for b in &members[i + 1..] {
            if model.in_conflict(a.path, b.path) {
                out.push((a.id, b.id));
            }
        }
    }
    out
}

/// Whether some human driver on `path` is still in the junction or too close
/// to stop, and has not committed to stopping.
fn amber_must_hold(
    model: &IntersectionModel,
    path: usize,
    vehicles: &[Observed],
    exited: &BTreeSet<u64>,
    sep: &SeparationParams,
) -> bool {
    vehicles.iter().any(|c| {
        c.kind == VehicleKind::Hv
            && c.path == path
            && !exited.contains(&c.id)
            && !c.stop_latched
            && c.distance(model) < s_hv(c.v, 0.0, sep)
    })
}

/// Signal colours for slot `t`.
///
/// A path wants green while it carries a planned human driver and amber
/// while it carries an uncertain, unplanned one; otherwise red. Colours only
/// move along green → amber → red → green, amber is held while a human
/// driver could not stop, and a path turns green only when every conflicting
/// path is red.
pub fn update_signals(
    prev: &SignalState,
    state: &ManagerState,
    model: &IntersectionModel,
    vehicles: &[Observed],
    sep: &SeparationParams,
) -> Result<SignalState, ManagerError> {
    let on_path = |ids: &BTreeSet<u64>, path: usize| {
        vehicles.iter().any(|c| c.kind == VehicleKind::Hv && c.path == path && ids.contains(&c.id))
    };
    let mut next = prev.clone();
    let mut wants_green = Vec::new();
    for (path, color) in prev.colors.iter().enumerate() {
        let Some(color) = color else { continue };
        let want_green = on_path(&state.planned_hv, path);
        let want_amber = !want_green
            && vehicles.iter().any(|c| {
                c.kind == VehicleKind::Hv
                    && c.path == path
                    && state.uncertain.contains(&c.id)
                    && !state.planned_hv.contains(&c.id)
            });
        next.colors[path] = Some(match color {
            Light::Green if want_green => Light::Green,
            Light::Green => Light::Amber,
            Light::Amber if want_amber || amber_must_hold(model, path, vehicles, &state.exited, sep) => Light::Amber,
            Light::Amber => Light::Red,
            Light::Red => {
                if want_green {
                    wants_green.push(path);
                }
                Light::Red
            }
        });
    }
    for path in wants_green {
        if model.conflicting_paths(path).into_iter().all(|other| !next.is_non_red(other)) {
            next.colors[path] = Some(Light::Green);
        }
    }
    for a in 0..next.colors.len() {
        for b in (a + 1)..next.colors.len() {
            if next.is_non_red(a) && next.is_non_red(b) && model.in_conflict(a, b) {
                return Err(ManagerError::ProtocolConflict(a, b));
            }
        }
    }
    Ok(next)
}

/// A human driver as recorded for the signal verifier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HvRecord {
    pub path: usize,
    pub distance: f64,
    pub v: f64,
    pub stop_latched: bool,
    pub exited: bool,
}

/// Colours in force during one slot together with the human drivers observed
/// at its start.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignalRecord {
    pub slot: u64,
    pub colors: Vec<Option<Light>>,
    pub hvs: Vec<HvRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum PolicyViolation {
    ConflictingNonRed { slot: u64, paths: (usize, usize) },
    AmberReleasedEarly { slot: u64, path: usize },
    CycleOrder { slot: u64, path: usize, from: Light, to: Light },
}

/// Verify a signal trace: conflicting paths never both non-red, amber never
/// turns red while a human driver on the path could not stop, and colours
/// cycle green → amber → red → green. Returns every violation found.
pub fn check_policy1(
    records: &[SignalRecord],
    model: &IntersectionModel,
    sep: &SeparationParams,
) -> Vec<PolicyViolation> {
    let mut out = Vec::new();
    let non_red = |c: Option<Light>| matches!(c, Some(Light::Green | Light::Amber));
    let mut prev: Option<&SignalRecord> = None;
    for rec in records {
        for a in 0..rec.colors.len() {
            for b in (a + 1)..rec.colors.len() {
                if non_red(rec.colors[a]) && non_red(rec.colors[b]) && model.in_conflict(a, b) {
                    out.push(PolicyViolation::ConflictingNonRed { slot: rec.slot, paths: (a, b) });
                }
            }
        }
        if let Some(p) = prev {
            for (path, (from, to)) in p.colors.iter().zip(&rec.colors).enumerate() {
                let (Some(from), Some(to)) = (*from, *to) else { continue };
                let legal = from == to
                    || matches!(
                        (from, to),
                        (Light::Green, Light::Amber) | (Light::Amber, Light::Red) | (Light::Red, Light::Green)
                    );
                if !legal {
                    out.push(PolicyViolation::CycleOrder { slot: rec.slot, path, from, to });
                }
                if from == Light::Amber && to == Light::Red {
                    let stranded = rec
                        .hvs
                        .iter()
                        .any(|h| h.path == path && !h.exited && !h.stop_latched && h.distance < s_hv(h.v, 0.0, sep));
                    if stranded {
                        out.push(PolicyViolation::AmberReleasedEarly { slot: rec.slot, path });
                    }
                }
            }
        }
        prev = Some(rec);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_intersection, IntersectionSpec};

    fn model() -> IntersectionModel {
        build_intersection(&IntersectionSpec::four_way(), &Params::default()).unwrap()
    }

    fn hv(model: &IntersectionModel, id: u64, path: usize, d: f64, v: f64) -> Observed {
        Observed {
            id,
            kind: VehicleKind::Hv,
            path,
            s: model.paths[path].entry_point - d,
            v,
            v_prev: v,
            stop_latched: false,
        }
    }

    #[test]
    fn uncertain_examples() {
        let m = model();
        let p = Params::default();
        let sep = SeparationParams::from(&p);
        let mut green = SignalState::all_red(&m);
        green.colors[1] = Some(Light::Green);
        let none = BTreeSet::new();
        let cars = [hv(&m, 1, 1, 40.0, 10.0), hv(&m, 2, 1, 50.0, 10.0), hv(&m, 3, 2, 10.0, 10.0)];
        let un = compute_uncertain(&m, &cars, &green, &none, &none, &p, &sep);
        assert_eq!(un.into_iter().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn exited_examples() {
        let m = model();
        let p = &m.paths[1];
        let mut c = hv(&m, 1, 1, 0.0, 10.0);
        c.s = p.exit_point + 3.0;
        let inside = Observed { s: p.entry_point + 1.0, id: 2, ..c };
        let before = Observed { s: p.entry_point - 1.0, id: 3, ..c };
        let ex = compute_exited(&m, &[c, inside, before]);
        assert_eq!(ex.into_iter().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn closer_request_wins() {
        let m = model();
        // Paths 1 and 5 cross.
        assert!(m.in_conflict(1, 5));
        let a = Observed { kind: VehicleKind::Av, ..hv(&m, 1, 1, 20.0, 10.0) };
        let b = Observed { kind: VehicleKind::Av, ..hv(&m, 2, 5, 10.0, 10.0) };
        let reqs = [Request { vehicle: 1, path: 1, slot: 0 }, Request { vehicle: 2, path: 5, slot: 0 }];
        let st = assign_permissions(
            &ManagerState::default(),
            &m,
            &[a, b],
            &reqs,
            BTreeSet::new(),
            BTreeSet::new(),
            &ManagerConfig::default(),
        );
        assert_eq!(st.permitted_av.iter().copied().collect::<Vec<_>>(), vec![2]);
        assert_eq!(st.pending.len(), 1);
    }

    #[test]
    fn policy_checker_flags_constructed_violations() {
        let m = model();
        let sep = SeparationParams::from(&Params::default());
        let mut colors = SignalState::all_red(&m).colors;
        colors[1] = Some(Light::Green);
        colors[5] = Some(Light::Amber);
        let rec = SignalRecord { slot: 0, colors: colors.clone(), hvs: vec![] };
        assert_eq!(check_policy1(&[rec], &m, &sep).len(), 1);
        let mut c0 = SignalState::all_red(&m).colors;
        c0[2] = Some(Light::Green);
        let c1 = SignalState::all_red(&m).colors;
        let trace =
            [SignalRecord { slot: 0, colors: c0, hvs: vec![] }, SignalRecord { slot: 1, colors: c1, hvs: vec![] }];
        let v = check_policy1(&trace, &m, &sep);
        assert!(matches!(v.as_slice(), [PolicyViolation::CycleOrder { .. }]));
    }
}
