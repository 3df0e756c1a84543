//! Slot-synchronous controller for automated vehicles.
//!
//! Each slot an AV picks speeds for the next `N` slots that keep it at a safe
//! separation from every reference object — its nearest lead vehicle and,
//! while it has no permission to enter, the stop line — assuming every
//! reference behaves as badly as it physically can. Only the first speed is
//! executed. Braking as hard as allowed is always a candidate, so a plan
//! exists whenever the current state is safe.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PathGeometry;
use crate::kinematics::ControlInput;
use crate::params::Params;
use crate::separation::{s_star, FollowContext, LeadKind, OwnLimit, SeparationParams};
use crate::world::{effective_brake_limit, follow_context, Vehicle};

/// Tolerance on separation constraints inside the planner.
pub const PLAN_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub horizon: usize,
    /// Candidate speeds per slot, spread evenly over the reachable interval.
    pub grid_points: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self { horizon: 4, grid_points: 21 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceTarget {
    Vehicle(u64),
    StopLine,
}

/// Worst-case motion assumed for a reference object.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMotion {
    /// An automated lead holds one speed per slot and lowers it by at most
    /// `|brake|·h` per slot, starting from `u`, its speed over the last slot.
    Slots { u: f64, brake: f64 },
    /// A human lead can brake continuously from its current speed `w`.
    Continuous { w: f64, brake: f64 },
    /// The stop line does not move.
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReferenceObject {
    pub target: ReferenceTarget,
    /// Path distance from the AV to the reference now.
    pub gap: f64,
    pub ctx: FollowContext,
    pub motion: ReferenceMotion,
}

impl ReferenceObject {
    /// Sampled speed of the reference used by the separation formula.
    pub fn sampled_v_ro(&self) -> f64 {
        match self.motion {
            ReferenceMotion::Slots { u, .. } => u,
            ReferenceMotion::Continuous { w, .. } => w,
            ReferenceMotion::Fixed => 0.0,
        }
    }

    pub fn worst_case_decel(&self) -> f64 {
        match self.motion {
            ReferenceMotion::Slots { brake, .. } | ReferenceMotion::Continuous { brake, .. } => brake,
            ReferenceMotion::Fixed => 0.0,
        }
    }

    /// Worst-case speed sample at the start of slot `k` and distance covered
    /// during slot `k`.
    pub fn predicted(&self, k: usize, h: f64) -> (f64, f64) {
        match self.motion {
            ReferenceMotion::Slots { u, brake } => {
                let speed = (u + (k as f64 + 1.0) * brake * h).max(0.0);
                (speed, speed * h)
            }
            ReferenceMotion::Continuous { w, brake } => {
                let speed = (w + k as f64 * brake * h).max(0.0);
                let stop_time = speed / -brake;
                let dist =
                    if stop_time <= h { speed * speed / (-2.0 * brake) } else { speed * h + 0.5 * brake * h * h };
                (speed, dist)
            }
            ReferenceMotion::Fixed => (0.0, 0.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeasibleBy {
    Optimizer,
    FallbackBrake,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlanResult {
    pub speeds: Vec<f64>,
    pub inputs: Vec<ControlInput>,
    pub feasible_by: FeasibleBy,
    pub cost: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("infeasible-state: even maximal braking violates the separation to {target:?} at slot {slot} (gap {gap:.4} m, needs {needed:.4} m)")]
    InfeasibleState { target: ReferenceTarget, slot: usize, gap: f64, needed: f64 },
}

/// Reference objects for an AV: its nearest lead (if any), plus the stop
/// line while it is not permitted to enter.
pub fn select_reference_objects(
    me: &Vehicle,
    lead: Option<(&Vehicle, f64)>,
    permitted: bool,
    path: &PathGeometry,
    params: &Params,
) -> Vec<ReferenceObject> {
    let mut refs = Vec::with_capacity(2);
    if let Some((lv, gap)) = lead {
        let motion = if lv.is_av() {
            ReferenceMotion::Slots { u: lv.state.v, brake: effective_brake_limit(params, lv.virtual_hv) }
        } else {
            ReferenceMotion::Continuous { w: lv.state.v, brake: params.a_min_hv }
        };
        refs.push(ReferenceObject {
            target: ReferenceTarget::Vehicle(lv.id),
            gap,
            ctx: follow_context(me, lv),
            motion,
        });
    }
    if !permitted && me.state.s <= path.entry_point {
        refs.push(ReferenceObject {
            target: ReferenceTarget::StopLine,
            gap: path.entry_point - me.state.s,
            ctx: FollowContext::new(LeadKind::Av, me.own_limit()),
            motion: ReferenceMotion::Fixed,
        });
    }
    refs
}

/// Speed for the next slot under maximal allowed braking.
pub fn fallback_brake(v_now: f64, brake_limit: f64, h: f64) -> f64 {
    (v_now + brake_limit * h).max(0.0)
}

/// One reference's worst-case trajectory over the horizon: the position at
/// the end of each slot (relative to the AV's current position) and the
/// speed sample at its start.
struct Track {
    ends: Vec<f64>,
    samples: Vec<f64>,
    ctx: FollowContext,
    target: ReferenceTarget,
}

fn tracks(refs: &[ReferenceObject], n: usize, h: f64) -> Vec<Track> {
    refs.iter()
        .map(|r| {
            let mut pos = r.gap;
            let mut ends = Vec::with_capacity(n);
            let mut samples = Vec::with_capacity(n);
            for k in 0..n {
                let (u, d) = r.predicted(k, h);
                pos += d;
                ends.push(pos);
                samples.push(u);
            }
            Track { ends, samples, ctx: r.ctx, target: r.target }
        })
        .collect()
}

struct Search<'a> {
    tracks: &'a [Track],
    sep: &'a SeparationParams,
    h: f64,
    v_max: f64,
    a_max: f64,
    brake: f64,
    grid: usize,
    n: usize,
    best_cost: f64,
    best: Option<Vec<f64>>,
    current: Vec<f64>,
}

impl Search<'_> {
    fn slot_ok(&self, k: usize, v: f64, ego_end: f64) -> bool {
        self.tracks.iter().all(|t| t.ends[k] - ego_end >= s_star(t.ctx, v, t.samples[k], self.sep) - PLAN_TOL)
    }

    /// Whether braking from slot `k` on (speed `v` in slot `k`) stays feasible
    /// for the rest of the horizon.
    fn brake_tail_ok(&self, k: usize, mut v: f64, mut ego_end: f64) -> bool {
        for j in (k + 1)..self.n {
            v = fallback_brake(v, self.brake, self.h);
            ego_end += v * self.h;
            if !self.slot_ok(j, v, ego_end) {
                return false;
            }
        }
        true
    }

    fn optimistic_rest(&self, k: usize, v: f64) -> f64 {
        ((k + 1)..self.n)
            .map(|j| {
                let reach = (v + (j - k) as f64 * self.a_max * self.h).min(self.v_max);
                (self.v_max - reach).powi(2)
            })
            .sum()
    }

    fn dfs(&mut self, k: usize, v_prev: f64, ego: f64, cost: f64) {
        if k == self.n {
            if cost < self.best_cost {
                self.best_cost = cost;
                self.best = Some(self.current.clone());
            }
            return;
        }
        let lo = fallback_brake(v_prev, self.brake, self.h);
        let hi = (v_prev + self.a_max * self.h).min(self.v_max).max(lo);
        let steps = self.grid.max(2) - 1;
        for i in 0..=steps {
            let v = if i == steps { lo } else { hi - (hi - lo) * i as f64 / steps as f64 };
            let c = cost + (v - self.v_max).powi(2);
            if c + self.optimistic_rest(k, v) >= self.best_cost - 1e-12 {
                // Candidates are visited from fast to slow, so later ones
                // only cost more in this slot; their remainder bound is at
                // least as large too.
                break;
            }
            let ego_end = ego + v * self.h;
            if !self.slot_ok(k, v, ego_end) || !self.brake_tail_ok(k, v, ego_end) {
                continue;
            }
            self.current.push(v);
            self.dfs(k + 1, v, ego_end, c);
            self.current.pop();
        }
    }
}

fn inputs_for(speeds: &[f64], path: &PathGeometry, s: f64, h: f64) -> Vec<ControlInput> {
    let mut pos = s;
    speeds
        .iter()
        .map(|&v| {
            let input = ControlInput { v_cmd: v, omega: v * path.curvature_at(pos) };
            pos += v * h;
            input
        })
        .collect()
}

/// Plan speeds for the next `cfg.horizon` slots.
///
/// `v_now` is the speed held over the last slot and `brake_limit` the
/// AV's effective braking limit. The search enumerates a grid of speeds per
/// slot, fastest first, with branch-and-bound on the cost
/// `Σ (v_k − v_max)²`; a branch is only followed if maximal braking from it
/// stays feasible. The all-braking sequence is checked first and is the
/// answer whenever the search finds nothing better.
#[allow(clippy::too_many_arguments)]
pub fn plan(
    refs: &[ReferenceObject],
    v_now: f64,
    brake_limit: f64,
    path: &PathGeometry,
    s: f64,
    params: &Params,
    sep: &SeparationParams,
    cfg: &PlannerConfig,
) -> Result<PlanResult, PlanError> {
    let n = cfg.horizon.max(1);
    let h = params.h;
    let tracks = tracks(refs, n, h);

    let mut fallback = Vec::with_capacity(n);
    let mut v = v_now;
    let mut ego = 0.0;
    for k in 0..n {
        v = fallback_brake(v, brake_limit, h);
        ego += v * h;
        for t in &tracks {
            let needed = s_star(t.ctx, v, t.samples[k], sep);
            if t.ends[k] - ego < needed - PLAN_TOL {
                return Err(PlanError::InfeasibleState { target: t.target, slot: k, gap: t.ends[k] - ego, needed });
            }
        }
        fallback.push(v);
    }
    let fallback_cost: f64 = fallback.iter().map(|v| (v - params.v_max).powi(2)).sum();

    let mut search = Search {
        tracks: &tracks,
        sep,
        h,
        v_max: params.v_max,
        a_max: params.a_max,
        brake: brake_limit,
        grid: cfg.grid_points,
        n,
        best_cost: fallback_cost,
        best: None,
        current: Vec::with_capacity(n),
    };
    search.dfs(0, v_now, 0.0, 0.0);
    let (speeds, feasible_by, cost) = match search.best {
        Some(best) => (best, FeasibleBy::Optimizer, search.best_cost),
        None => (fallback, FeasibleBy::FallbackBrake, fallback_cost),
    };
    Ok(PlanResult { inputs: inputs_for(&speeds, path, s, h), speeds, feasible_by, cost })
}

/// Independent re-check of a speed plan: slot-to-slot speed changes, speed
/// bounds, and every separation constraint under the references'
/// worst-case motion. Returns a description of the first problem found.
pub fn validate_plan(
    refs: &[ReferenceObject],
    v_now: f64,
    speeds: &[f64],
    brake_limit: f64,
    params: &Params,
    sep: &SeparationParams,
) -> Result<(), String> {
    let h = params.h;
    let mut prev = v_now;
    let mut travelled = 0.0;
    for (k, &v) in speeds.iter().enumerate() {
        if v < -PLAN_TOL || v > params.v_max + PLAN_TOL {
            return Err(format!("slot {k}: speed {v} outside [0, v_max]"));
        }
        let lo = (prev + brake_limit * h).max(0.0);
        let hi = (prev + params.a_max * h).min(params.v_max);
        if v < lo - PLAN_TOL || v > hi.max(lo) + PLAN_TOL {
            return Err(format!("slot {k}: speed {v} outside reachable [{lo}, {hi}]"));
        }
        travelled += v * h;
        for r in refs {
            let mut ref_pos = r.gap;
            let mut sample = 0.0;
            for j in 0..=k {
                let (u, d) = r.predicted(j, h);
                ref_pos += d;
                sample = u;
            }
            let needed = s_star(r.ctx, v, sample, sep);
            if ref_pos - travelled < needed - PLAN_TOL {
                return Err(format!(
                    "slot {k}: gap to {:?} would be {:.6} m, needs {:.6} m",
                    r.target,
                    ref_pos - travelled,
                    needed
                ));
            }
        }
        prev = v;
    }
    Ok(())
}

/// Own-limit helper for callers building contexts by hand.
pub fn own_limit_for(virtual_hv: bool) -> OwnLimit {
    if virtual_hv {
        OwnLimit::HvLimited
    } else {
        OwnLimit::AvLimited
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_intersection, IntersectionSpec};

    fn setup() -> (Params, SeparationParams, PathGeometry) {
        let p = Params::default();
        let m = build_intersection(&IntersectionSpec::four_way(), &p).unwrap();
        (p.clone(), SeparationParams::from(&p), m.paths[1].clone())
    }

    #[test]
    fn free_road_accelerates() {
        let (p, sep, path) = setup();
        let r = plan(&[], 10.0, p.a_min_av, &path, 0.0, &p, &sep, &PlannerConfig::default()).unwrap();
        assert_eq!(r.speeds, vec![11.5, 13.0, 14.0, 14.0]);
        assert_eq!(r.feasible_by, FeasibleBy::Optimizer);
    }

    #[test]
    fn pinned_at_stop_line() {
        let (p, sep, path) = setup();
        let stop = ReferenceObject {
            target: ReferenceTarget::StopLine,
            gap: p.s_min + 1e-3,
            ctx: FollowContext::new(LeadKind::Av, OwnLimit::AvLimited),
            motion: ReferenceMotion::Fixed,
        };
        let r = plan(&[stop], 0.0, p.a_min_av, &path, 0.0, &p, &sep, &PlannerConfig::default()).unwrap();
        assert!(r.speeds.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fallback_examples() {
        assert_eq!(fallback_brake(10.0, -8.0, 0.5), 6.0);
        assert_eq!(fallback_brake(1.0, -8.0, 0.5), 0.0);
        assert_eq!(fallback_brake(10.0, -4.0, 0.5), 8.0);
    }

    #[test]
    fn tight_av_lead_forces_max_braking() {
        let (p, sep, path) = setup();
        let ctx = FollowContext::new(LeadKind::Av, OwnLimit::AvLimited);
        let (v, u) = (12.0, 4.0);
        let lead = ReferenceObject {
            target: ReferenceTarget::Vehicle(7),
            gap: s_star(ctx, v, u, &sep),
            ctx,
            motion: ReferenceMotion::Slots { u, brake: p.a_min_av },
        };
        let r = plan(&[lead], v, p.a_min_av, &path, 0.0, &p, &sep, &PlannerConfig::default()).unwrap();
        assert_eq!(r.speeds[0], fallback_brake(v, p.a_min_av, p.h));
        validate_plan(&[lead], v, &r.speeds, p.a_min_av, &p, &sep).unwrap();
    }
}
