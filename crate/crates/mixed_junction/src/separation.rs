//! Safe-separation distances.
//!
//! [`s_hv`] is the follow/stop distance human drivers keep (evaluated on
//! current speeds). [`s_star`] is the type-dependent distance an automated
//! vehicle keeps from its reference object, evaluated on previous-slot speed
//! samples. All distances are measured along the path, center to center.

use serde::{Deserialize, Serialize};

use crate::kinematics::stopping_distance;
use crate::params::Params;

/// What the follower is following.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeadKind {
    /// A human driver, or an automated vehicle restricted to human braking.
    HvLike,
    Av,
}

/// Which braking limit the follower itself may use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OwnLimit {
    /// Human driver, or an AV that is followed by one (directly or through
    /// other AVs) and so must not out-brake it.
    HvLimited,
    AvLimited,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FollowContext {
    pub lead: LeadKind,
    pub own: OwnLimit,
}

impl FollowContext {
    pub fn new(lead: LeadKind, own: OwnLimit) -> Self {
        Self { lead, own }
    }

    /// Index of the formula used for this context, in the order
    /// AV/AV, HV/AV, HV/HV, AV/HV (lead/own).
    pub fn formula_index(self) -> usize {
        match (self.lead, self.own) {
            (LeadKind::Av, OwnLimit::AvLimited) => 0,
            (LeadKind::HvLike, OwnLimit::AvLimited) => 1,
            (LeadKind::HvLike, OwnLimit::HvLimited) => 2,
            (LeadKind::Av, OwnLimit::HvLimited) => 3,
        }
    }
}

/// Parameter bundle for the separation formulas.
///
/// `scale` and `hv_hv_h2_coefficient` exist so tests can weaken the formulas
/// and confirm that the safety monitor notices; the monitor itself always
/// uses the unmodified defaults.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationParams {
    pub a_min_hv: f64,
    pub a_min_av: f64,
    pub a_max: f64,
    pub h: f64,
    pub t_r_hv: f64,
    pub s_min: f64,
    pub v_max: f64,
    /// Coefficient of the `a_min_hv·h²` term in the HV-lead/HV-limited distance.
    pub hv_hv_h2_coefficient: f64,
    /// Multipliers applied to [`s_star`] per formula (see
    /// [`FollowContext::formula_index`]) and, last, to [`s_hv`].
    pub scale: [f64; 5],
}

impl From<&Params> for SeparationParams {
    fn from(p: &Params) -> Self {
        Self {
            a_min_hv: p.a_min_hv,
            a_min_av: p.a_min_av,
            a_max: p.a_max,
            h: p.h,
            t_r_hv: p.t_r_hv,
            s_min: p.s_min,
            v_max: p.v_max,
            hv_hv_h2_coefficient: 1.0,
            scale: [1.0; 5],
        }
    }
}

impl SeparationParams {
    /// Distance reserved for human reaction: `v_max · T_r + s_min`.
    fn reaction_buffer(&self) -> f64 {
        self.v_max * self.t_r_hv + self.s_min
    }

    pub fn is_pristine(&self) -> bool {
        self.hv_hv_h2_coefficient == 1.0 && self.scale == [1.0; 5]
    }
}

fn indicator(cond: bool) -> f64 {
    if cond {
        1.0
    } else {
        0.0
    }
}

/// Follow distance a human driver keeps behind a lead moving at `v_lead`;
/// with `v_lead = 0` it is the distance needed to stop before a fixed point.
pub fn s_hv(v: f64, v_lead: f64, p: &SeparationParams) -> f64 {
    let closing = indicator(v > v_lead) * (v * v - v_lead * v_lead) / (-2.0 * p.a_min_hv);
    p.scale[4] * (closing + p.reaction_buffer())
}

/// The lead HV's sampled speed shifted to its estimated average over the last
/// slot, floored at zero.
pub fn hv_lead_speed_adjust(v_ro_sampled: f64, p: &SeparationParams) -> f64 {
    (v_ro_sampled + p.a_min_hv * p.h / 2.0).max(0.0)
}

/// Distance an AV keeps from its reference object, from previous-slot speed
/// samples of itself (`v_prev`) and of the reference (`v_ro_prev`).
pub fn s_star(ctx: FollowContext, v_prev: f64, v_ro_prev: f64, p: &SeparationParams) -> f64 {
    let (v, u, h) = (v_prev, v_ro_prev, p.h);
    let (a_hv, a_av) = (p.a_min_hv, p.a_min_av);
    let raw = match (ctx.lead, ctx.own) {
        (LeadKind::Av, OwnLimit::AvLimited) => {
            indicator(v > u) * ((v * v - u * u) / (-2.0 * a_av) + (v - u) * h - 0.5 * a_av * h * h) + p.s_min
        }
        (LeadKind::HvLike, OwnLimit::AvLimited) => {
            let ua = hv_lead_speed_adjust(u, p);
            indicator(v > ua)
                * ((v - ua).powi(2) / (-2.0 * (a_av - a_hv)) + (v - u) * h - 0.5 * a_av * h * h - 0.5 * a_hv * h * h)
                + p.s_min
        }
        (LeadKind::HvLike, OwnLimit::HvLimited) => {
            let ua = hv_lead_speed_adjust(u, p);
            indicator(v > ua)
                * ((v * v - ua * ua) / (-2.0 * a_hv) + (v - u) * h - p.hv_hv_h2_coefficient * a_hv * h * h)
                + p.reaction_buffer()
        }
        (LeadKind::Av, OwnLimit::HvLimited) => {
            indicator(v > (a_hv / a_av).sqrt() * u)
                * (stopping_distance(v, a_hv) - stopping_distance(u, a_av) + (v - u) * h - 0.5 * a_hv * h * h)
                + p.reaction_buffer()
        }
    };
    p.scale[ctx.formula_index()] * raw
}

/// Stopping requirement of the classical MPC following distance (lead at rest).
pub fn static_following_distance(v: f64, p: &SeparationParams) -> f64 {
    stopping_distance(v, p.a_min_av) + v * p.h - p.a_min_av * p.h * p.h / 2.0
}
