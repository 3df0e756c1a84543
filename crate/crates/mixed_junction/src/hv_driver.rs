//! Human driver model.
//!
//! A human driver is only bound by the driving rules: keep the follow
//! distance to the nearest vehicle ahead, respond to the signal, and for
//! unsignalized right turns wait for a gap. Inside those rules the driver is
//! free, and the behaviour mode decides how that freedom is used — from
//! smooth speed tracking to deliberately choosing whichever extreme squeezes
//! the margins most.
//!
//! Decisions are made every micro-step. Each one picks a constant
//! acceleration for the next micro-step from the admissible interval
//! `[lo, hi]`, where `lo` is the hardest human braking (a driver reaching
//! standstill stays stopped for the rest of the micro-step) and `hi` the
//! largest acceleration after which every obligation can still be met
//! against the worst the lead vehicle may do.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intersection_manager::Light;
use crate::params::Params;
use crate::separation::{s_hv, SeparationParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HvMode {
    /// Track the speed limit smoothly.
    #[default]
    Nominal,
    /// Uniformly random acceleration within the admissible interval.
    Randomized,
    /// Bang-bang: whichever end of the admissible interval leaves the least
    /// slack one slot ahead.
    Adversarial,
}

impl HvMode {
    pub const ALL: [HvMode; 3] = [HvMode::Nominal, HvMode::Randomized, HvMode::Adversarial];
}

/// What governs the driver's crossing of the stop line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EntryControl {
    /// Upstream of the signal-visibility range: the light does not matter yet.
    Unseen,
    Signal(Light),
    /// Unsignalized right turn; `clear` tells whether the gap on the
    /// conflicting path is acceptable right now.
    RightTurn {
        clear: bool,
    },
    /// Already past the stop line.
    Entered,
}

/// Everything the driver perceives at one micro-step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HvObservation {
    pub s: f64,
    pub v: f64,
    pub entry_point: f64,
    /// Gap to and speed of the nearest vehicle ahead.
    pub lead: Option<(f64, f64)>,
    /// Gap to and speed of the nearest vehicle behind (used only to pick the
    /// most aggressive braking in adversarial mode).
    pub follower: Option<(f64, f64)>,
    pub control: EntryControl,
    pub latched: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HvDecision {
    pub accel: f64,
    pub latched: bool,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum HvError {
    #[error("rules-infeasible: cannot stop before the stop line (needs {needed:.3} m, has {available:.3} m)")]
    CannotStop { needed: f64, available: f64 },
}

const CROSS_MARGIN: f64 = 1e-6;
const STOP_MARGIN: f64 = 1e-6;

/// Whether a driver at speed `v` can keep its follow distance to a lead at
/// `gap` driving at `u` without braking harder than a human can.
pub fn can_follow(v: f64, gap: f64, u: f64, params: &Params, sep: &SeparationParams) -> bool {
    let obs = HvObservation {
        s: 0.0,
        v,
        entry_point: f64::INFINITY,
        lead: Some((gap, u)),
        follower: None,
        control: EntryControl::Unseen,
        latched: false,
    };
    follow_limit(&obs, params, sep).is_none_or(|hi| hi >= params.a_min_hv - 1e-9)
}

/// Largest acceleration that keeps the follow distance to the lead, if any.
fn follow_limit(obs: &HvObservation, params: &Params, sep: &SeparationParams) -> Option<f64> {
    let delta = params.delta();
    let decel = params.a_min_hv;
    let (gap, u) = obs.lead?;
    let (lead_dist, u_end) = worst_lead_motion(u, decel, delta);
    // Keep the follow distance even if the lead's speed had dropped by a
    // further slot's worth of human braking; this absorbs sudden speed
    // changes of automated leads at slot boundaries.
    let floor = (u_end + decel * params.h).max(0.0);
    let buffer = sep.v_max * sep.t_r_hv + sep.s_min;
    let room = gap + lead_dist - buffer * sep.scale[4];
    let y = max_end_speed(room, obs.v, delta, floor, decel / sep.scale[4]);
    Some(accel_for_end_speed(y, obs.v, room, delta))
}

/// Nearest vehicle strictly ahead on the same path: `others` yields
/// `(id, path, s)`; returns `(id, gap)`.
pub fn nearest_lead(path: usize, s: f64, others: impl IntoIterator<Item = (u64, usize, f64)>) -> Option<(u64, f64)> {
    others
        .into_iter()
        .filter(|&(_, p, so)| p == path && so > s)
        .map(|(id, _, so)| (id, so - s))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
}

/// Distance covered by a lead braking as hard as a human can for `dt`
/// seconds from speed `u`, and its final speed.
fn worst_lead_motion(u: f64, a_brake: f64, dt: f64) -> (f64, f64) {
    let stop_time = u / -a_brake;
    if stop_time <= dt {
        (u * u / (-2.0 * a_brake), 0.0)
    } else {
        (u * dt + 0.5 * a_brake * dt * dt, u + a_brake * dt)
    }
}

/// Largest end speed `y` after a micro-step of length `delta` (starting at
/// `v`, constant acceleration) such that
/// `room − (v + y)·delta/2 ≥ 1(y > floor)·(y² − floor²)/(−2·a_brake)`.
fn max_end_speed(room: f64, v: f64, delta: f64, floor: f64, a_brake: f64) -> f64 {
    let decel = -a_brake;
    let linear = 2.0 * room / delta - v;
    if linear <= floor {
        return linear;
    }
    let k = room - v * delta / 2.0 + floor * floor / (2.0 * decel);
    let disc = delta * delta / 4.0 + 2.0 * k / decel;
    if disc < 0.0 {
        return f64::NEG_INFINITY;
    }
    decel * (-delta / 2.0 + disc.sqrt())
}

/// Acceleration that realises end speed `y` from `v` over one micro-step.
/// A negative `y` means the vehicle has to stop inside the micro-step
/// within `room` metres, which takes braking of at least `v²/(2·room)`.
fn accel_for_end_speed(y: f64, v: f64, room: f64, delta: f64) -> f64 {
    if y >= 0.0 {
        (y - v) / delta
    } else if room > 0.0 {
        -v * v / (2.0 * room)
    } else if v == 0.0 {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

/// Whether the driver is currently obliged to be able to stop before the line.
fn stop_obligation(obs: &HvObservation, sep: &SeparationParams) -> (bool, bool) {
    let d = obs.entry_point - obs.s;
    match obs.control {
        EntryControl::Unseen | EntryControl::Entered => (false, false),
        EntryControl::Signal(Light::Green) => (false, false),
        EntryControl::Signal(Light::Red) => (true, true),
        EntryControl::Signal(Light::Amber) => {
            let stop = obs.latched || d >= s_hv(obs.v, 0.0, sep);
            (stop, stop)
        }
        // Right turns keep the ability to stop until the micro-step in which
        // they cross, and cross only while the gap is acceptable.
        EntryControl::RightTurn { .. } => (true, obs.latched),
    }
}

/// Admissible acceleration interval and the updated latch.
pub fn admissible(obs: &HvObservation, params: &Params, sep: &SeparationParams) -> Result<(f64, f64, bool), HvError> {
    let delta = params.delta();
    let decel = params.a_min_hv;
    // Braking harder than needed to stop within the micro-step just stops
    // earlier, so the full human braking is always available.
    let lo = decel;
    let mut hi = params.a_max.min((params.v_max - obs.v) / delta);

    if let Some(limit) = follow_limit(obs, params, sep) {
        hi = hi.min(limit);
    }

    let (must_stop, latched) = stop_obligation(obs, sep);
    if must_stop {
        // Stop a hair short of the line so rounding cannot carry the
        // vehicle across it.
        let room = obs.entry_point - obs.s - STOP_MARGIN;
        let y = max_end_speed(room, obs.v, delta, 0.0, decel);
        let stop_hi = accel_for_end_speed(y, obs.v, room, delta);
        let cross_now = match obs.control {
            EntryControl::RightTurn { clear: true } => {
                // Aim a hair beyond the line so that crossing is unambiguous.
                let to_line = obs.entry_point - obs.s;
                let a_cross = 2.0 * (to_line - obs.v * delta) / (delta * delta) + CROSS_MARGIN;
                (a_cross <= hi).then_some(a_cross.max(lo))
            }
            _ => None,
        };
        match cross_now {
            Some(a_cross) if a_cross > stop_hi => return Ok((a_cross, hi, latched)),
            _ => {
                if stop_hi < lo {
                    let end = (obs.v + lo * delta).max(0.0);
                    let travelled =
                        if end == 0.0 { obs.v * obs.v / (-2.0 * decel) } else { 0.5 * (obs.v + end) * delta };
                    let needed = travelled + end * end / (-2.0 * decel);
                    if needed > room + STOP_MARGIN {
                        return Err(HvError::CannotStop { needed, available: room });
                    }
                    hi = lo;
                } else {
                    hi = hi.min(stop_hi);
                }
            }
        }
    }
    Ok((lo, hi.max(lo), latched))
}

/// Remaining margin one slot ahead if acceleration `a` were held for the slot.
fn slack_after(obs: &HvObservation, a: f64, must_stop: bool, params: &Params, sep: &SeparationParams) -> f64 {
    let h = params.h;
    let (dist, v_end) = if a < 0.0 && obs.v + a * h < 0.0 {
        (obs.v * obs.v / (-2.0 * a), 0.0)
    } else if a > 0.0 && obs.v + a * h > params.v_max {
        let t1 = (params.v_max - obs.v) / a;
        (obs.v * t1 + 0.5 * a * t1 * t1 + params.v_max * (h - t1), params.v_max)
    } else {
        (obs.v * h + 0.5 * a * h * h, obs.v + a * h)
    };
    let mut slack = f64::INFINITY;
    if let Some((gap, u)) = obs.lead {
        let (lead_dist, u_end) = worst_lead_motion(u, params.a_min_hv, h);
        slack = slack.min(gap + lead_dist - dist - s_hv(v_end, u_end, sep));
    }
    if must_stop {
        slack = slack.min(obs.entry_point - obs.s - dist - v_end * v_end / (-2.0 * params.a_min_hv));
    }
    if let Some((gap, vf)) = obs.follower {
        slack = slack.min(gap + dist - vf * h - s_hv(vf, v_end, sep));
    }
    slack
}

/// Pick the acceleration for the next micro-step.
pub fn hv_decide<R: Rng + ?Sized>(
    obs: &HvObservation,
    params: &Params,
    sep: &SeparationParams,
    mode: HvMode,
    rng: &mut R,
) -> Result<HvDecision, HvError> {
    let (lo, hi, latched) = admissible(obs, params, sep)?;
    let accel = match mode {
        HvMode::Nominal => (params.v_max - obs.v).clamp(params.a_min_hv, params.a_max).min(hi).max(lo),
        HvMode::Randomized => {
            if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            }
        }
        HvMode::Adversarial => {
            let must_stop = stop_obligation(obs, sep).0;
            if slack_after(obs, lo, must_stop, params, sep) < slack_after(obs, hi, must_stop, params, sep) {
                lo
            } else {
                hi
            }
        }
    };
    Ok(HvDecision { accel, latched, lo, hi })
}
