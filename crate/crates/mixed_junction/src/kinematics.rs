//! Unicycle motion model.
//!
//! Automated vehicles hold a commanded speed and yaw rate for a whole slot and
//! advance by the closed-form solution. Human drivers change speed at any
//! time; they are integrated micro-step by micro-step with a constant
//! acceleration inside each micro-step. Both move on rails: the yaw rate is
//! slaved to the path curvature, so position is a function of arc length.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{PathGeometry, Pose};

/// Tolerance for envelope checks on speeds and accelerations.
pub const ENVELOPE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    /// Arc length along the assigned path.
    pub s: f64,
    /// Speed at the previous slot boundary.
    pub v_prev: f64,
    pub path: usize,
}

impl VehicleState {
    /// A vehicle placed on `path` at arc length `s` with speed `v` (and the
    /// same previous-slot speed).
    pub fn on_path(path: &PathGeometry, s: f64, v: f64) -> Self {
        let pose = path.pose_at(s);
        Self { x: pose.x, y: pose.y, theta: pose.theta, v, s, v_prev: v, path: path.id }
    }

    pub fn pose(&self) -> Pose {
        Pose { x: self.x, y: self.y, theta: self.theta }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub v_cmd: f64,
    pub omega: f64,
}

/// Limits a single step is checked against.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Envelope {
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub rho_min: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error("speed {v} outside [0, {v_max}]")]
    SpeedOutOfRange { v: f64, v_max: f64 },
    #[error("speed change {dv} outside [{lo}, {hi}]")]
    SpeedChangeOutOfRange { dv: f64, lo: f64, hi: f64 },
    #[error("yaw rate {omega} exceeds {limit}")]
    YawRateOutOfRange { omega: f64, limit: f64 },
    #[error("micro-step count must be positive")]
    EmptyProfile,
}

/// Distance covered while braking from `v` to rest at constant `a_brake` (< 0).
pub fn stopping_distance(v: f64, a_brake: f64) -> f64 {
    v * v / (-2.0 * a_brake)
}

/// `sin(z)/z`, with a series expansion near zero.
fn sinc(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        1.0 - z * z / 6.0
    } else {
        z.sin() / z
    }
}

/// Closed-form unicycle update for constant speed `v` and yaw rate `omega`
/// over `h` seconds. The straight-line and turning forms are the same
/// expression once written with `sinc`, which keeps ω → 0 continuous.
pub fn unicycle_step(pose: Pose, v: f64, omega: f64, h: f64) -> Pose {
    let half_turn = 0.5 * omega * h;
    let chord = v * h * sinc(half_turn);
    let mid = pose.theta + half_turn;
    Pose { x: pose.x + chord * mid.cos(), y: pose.y + chord * mid.sin(), theta: pose.theta + omega * h }
}

/// Classical RK4 integration of the unicycle ODE, used as an independent check
/// of [`unicycle_step`].
pub fn unicycle_rk4(pose: Pose, v: f64, omega: f64, h: f64, steps: usize) -> Pose {
    let f = |theta: f64| (v * theta.cos(), v * theta.sin());
    let dt = h / steps as f64;
    let (mut x, mut y, mut th) = (pose.x, pose.y, pose.theta);
    for _ in 0..steps {
        let k1 = f(th);
        let k2 = f(th + 0.5 * dt * omega);
        let k3 = k2;
        let k4 = f(th + dt * omega);
        x += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        y += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        th += dt * omega;
    }
    Pose { x, y, theta: th }
}

fn check_speed(v: f64, env: &Envelope) -> Result<(), KinematicsError> {
    if v.is_finite() && (-ENVELOPE_TOL..=env.v_max + ENVELOPE_TOL).contains(&v) {
        Ok(())
    } else {
        Err(KinematicsError::SpeedOutOfRange { v, v_max: env.v_max })
    }
}

/// One slot of automated-vehicle motion from a free pose (not tied to a path).
pub fn step_av(
    state: &VehicleState,
    input: ControlInput,
    h: f64,
    env: &Envelope,
) -> Result<VehicleState, KinematicsError> {
    check_speed(input.v_cmd, env)?;
    let dv = input.v_cmd - state.v;
    let (lo, hi) = (env.a_min * h, env.a_max * h);
    if dv < lo - ENVELOPE_TOL || dv > hi + ENVELOPE_TOL {
        return Err(KinematicsError::SpeedChangeOutOfRange { dv, lo, hi });
    }
    let limit = env.v_max / env.rho_min;
    if input.omega.abs() > limit + ENVELOPE_TOL {
        return Err(KinematicsError::YawRateOutOfRange { omega: input.omega, limit });
    }
    let pose = unicycle_step(state.pose(), input.v_cmd, input.omega, h);
    Ok(VehicleState {
        x: pose.x,
        y: pose.y,
        theta: pose.theta,
        v: input.v_cmd,
        s: state.s + input.v_cmd * h,
        v_prev: state.v,
        path: state.path,
    })
}

/// Drive along `path` at constant speed `v` for `dt` seconds, chaining the
/// closed-form update across curvature changes (yaw rate = v · curvature).
pub fn advance_on_path(path: &PathGeometry, state: &VehicleState, v: f64, dt: f64) -> VehicleState {
    let target = state.s + v * dt;
    let mut pose = path.pose_at(state.s);
    let mut s = state.s;
    while s < target {
        let next = path.breakpoints_between(s, target).next().unwrap_or(target);
        let ds = next - s;
        let kappa = path.curvature_at(s + 0.5 * ds);
        // Time-parametrized closed form over the piece.
        pose = if v > 0.0 { unicycle_step(pose, v, v * kappa, ds / v) } else { pose };
        s = next;
    }
    VehicleState { x: pose.x, y: pose.y, theta: pose.theta, s: target, ..*state }
}

/// Integrate a human driver over consecutive micro-steps of length `delta`
/// with constant acceleration `accels[i]` in micro-step `i`; a vehicle that
/// reaches standstill stays there for the rest of the micro-step. Returns the final
/// state and the state at the end of every micro-step.
pub fn step_hv(
    path: &PathGeometry,
    state: &VehicleState,
    accels: &[f64],
    delta: f64,
    env: &Envelope,
) -> Result<(VehicleState, Vec<VehicleState>), KinematicsError> {
    if accels.is_empty() {
        return Err(KinematicsError::EmptyProfile);
    }
    let mut cur = *state;
    let mut samples = Vec::with_capacity(accels.len());
    for &a in accels {
        let dv = a * delta;
        if dv < env.a_min * delta - ENVELOPE_TOL || dv > env.a_max * delta + ENVELOPE_TOL {
            return Err(KinematicsError::SpeedChangeOutOfRange { dv, lo: env.a_min * delta, hi: env.a_max * delta });
        }
        let (v_next, ds) = if cur.v + dv < 0.0 {
            // Braking to a standstill part-way through the micro-step.
            (0.0, stopping_distance(cur.v, a))
        } else {
            let v_next = cur.v + dv;
            check_speed(v_next, env)?;
            let v_next = v_next.min(env.v_max);
            (v_next, 0.5 * (cur.v + v_next) * delta)
        };
        let s = cur.s + ds;
        let pose = path.pose_at(s);
        cur = VehicleState { x: pose.x, y: pose.y, theta: pose.theta, v: v_next, s, ..cur };
        samples.push(cur);
    }
    Ok((cur, samples))
}
