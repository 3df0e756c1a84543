//! Physical and timing parameters shared by every module.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Whether a vehicle is driven by a person or by the on-board controller.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleKind {
    Hv,
    Av,
}

impl VehicleKind {
    pub fn label(self) -> &'static str {
        match self {
            VehicleKind::Hv => "hv",
            VehicleKind::Av => "av",
        }
    }
}

/// Global simulation parameters. All values are SI (m, s, m/s, m/s², rad).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// Slot length: the AV control and manager decision period.
    pub h: f64,
    /// Number of HV integration / monitoring micro-steps per slot.
    pub micro_steps: u32,
    pub v_max: f64,
    /// Hardest braking a human driver can be relied upon to apply (negative).
    pub a_min_hv: f64,
    /// Hardest braking an automated vehicle applies (negative, below `a_min_hv`).
    pub a_min_av: f64,
    pub a_max: f64,
    /// Human response time absorbed by the follow distance.
    pub t_r_hv: f64,
    /// Bumper-to-bumper margin covering vehicle size.
    pub s_min: f64,
    /// Smallest admissible turning radius.
    pub rho_min: f64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            h: 0.5,
            micro_steps: 10,
            v_max: 14.0,
            a_min_hv: -4.0,
            a_min_av: -8.0,
            a_max: 3.0,
            t_r_hv: 1.0,
            s_min: 5.0,
            rho_min: 5.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ParamsError {
    #[error("parameter `{name}` must be {requirement} (got {value})")]
    OutOfRange { name: &'static str, requirement: &'static str, value: f64 },
    #[error("human braking limit ({hv}) must be weaker than the automated one ({av})")]
    BrakeOrdering { hv: f64, av: f64 },
}

impl Params {
    /// Micro-step length δ = h / micro_steps.
    pub fn delta(&self) -> f64 {
        self.h / f64::from(self.micro_steps)
    }

    // Comparisons are written negated so that NaN fails them too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ParamsError> {
        fn positive(name: &'static str, value: f64) -> Result<(), ParamsError> {
            if value.is_finite() && value > 0.0 {
                Ok(())
            } else {
                Err(ParamsError::OutOfRange { name, requirement: "positive", value })
            }
        }
        fn negative(name: &'static str, value: f64) -> Result<(), ParamsError> {
            if value.is_finite() && value < 0.0 {
                Ok(())
            } else {
                Err(ParamsError::OutOfRange { name, requirement: "negative", value })
            }
        }
        positive("h", self.h)?;
        positive("v_max", self.v_max)?;
        positive("a_max", self.a_max)?;
        positive("rho_min", self.rho_min)?;
        negative("a_min_hv", self.a_min_hv)?;
        negative("a_min_av", self.a_min_av)?;
        if self.micro_steps == 0 {
            return Err(ParamsError::OutOfRange { name: "micro_steps", requirement: "at least 1", value: 0.0 });
        }
        if !(self.t_r_hv >= 0.0) {
            return Err(ParamsError::OutOfRange { name: "t_r_hv", requirement: "non-negative", value: self.t_r_hv });
        }
        if !(self.s_min >= 0.0) {
            return Err(ParamsError::OutOfRange { name: "s_min", requirement: "non-negative", value: self.s_min });
        }
        if !(self.a_min_hv > self.a_min_av) {
            return Err(ParamsError::BrakeOrdering { hv: self.a_min_hv, av: self.a_min_av });
        }
        Ok(())
    }

    /// Braking limit for a vehicle kind (the AV value ignores virtual-HV status).
    pub fn brake_limit(&self, kind: VehicleKind) -> f64 {
        match kind {
            VehicleKind::Hv => self.a_min_hv,
            VehicleKind::Av => self.a_min_av,
        }
    }
}

/// Per-kind capability record.
///
/// The overall braking limit is the magnitude of the combined lateral and
/// longitudinal (centripetal) deceleration limits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleProfile {
    pub kind: VehicleKind,
    pub a_lateral_min: f64,
    pub a_longitudinal_min: f64,
    pub a_max: f64,
}

impl VehicleProfile {
    pub fn a_min(&self) -> f64 {
        -self.a_lateral_min.hypot(self.a_longitudinal_min)
    }
}
