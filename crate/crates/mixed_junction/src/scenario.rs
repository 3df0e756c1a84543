//! Scenario files: geometry, parameters, controller settings, arrivals and
//! driver behaviour, stored as TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::av_planner::PlannerConfig;
use crate::geometry::{build_intersection, GeometryError, IntersectionModel, IntersectionSpec};
use crate::hv_driver::HvMode;
use crate::intersection_manager::ManagerConfig;
use crate::params::{Params, ParamsError, VehicleKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Number of slots to simulate.
    pub horizon: u64,
    #[serde(default)]
    pub hv_mode: HvMode,
    #[serde(default)]
    pub geometry: IntersectionSpec,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub manager: ManagerConfig,
    pub arrivals: Arrivals,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "process", rename_all = "lowercase", deny_unknown_fields)]
pub enum Arrivals {
    /// Independent Poisson arrivals on every listed path (all paths when the
    /// list is empty), entering at the speed limit.
    Poisson {
        /// Mean arrivals per second on each path.
        rate: f64,
        /// Probability that an arrival is human-driven.
        hv_fraction: f64,
        #[serde(default)]
        paths: Vec<usize>,
    },
    /// A fixed list of arrivals.
    Schedule { vehicles: Vec<ScheduledArrival> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledArrival {
    pub slot: u64,
    pub kind: VehicleKind,
    pub path: usize,
    pub speed: f64,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize scenario")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid parameters")]
    Params(#[from] ParamsError),
    #[error("invalid geometry")]
    Geometry(#[from] GeometryError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

impl ScenarioError {
    /// Whether the file itself could not be read or parsed, as opposed to
    /// describing an inconsistent scenario.
    pub fn is_parse_error(&self) -> bool {
        matches!(self, ScenarioError::Parse(_))
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String, ScenarioError> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Read, parse and validate a scenario file.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let scenario = Self::from_toml(&std::fs::read_to_string(path)?)?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Poisson arrivals on all paths of the default junction.
    pub fn poisson(rate: f64, hv_fraction: f64, hv_mode: HvMode, horizon: u64) -> Self {
        Self {
            horizon,
            hv_mode,
            geometry: IntersectionSpec::four_way(),
            params: Params::default(),
            planner: PlannerConfig::default(),
            manager: ManagerConfig::default(),
            arrivals: Arrivals::Poisson { rate, hv_fraction, paths: Vec::new() },
        }
    }

    pub fn scheduled(vehicles: Vec<ScheduledArrival>, horizon: u64) -> Self {
        Self { arrivals: Arrivals::Schedule { vehicles }, ..Self::poisson(0.0, 0.0, HvMode::Nominal, horizon) }
    }

    /// Check every load-time invariant and return the built junction.
    pub fn validate(&self) -> Result<IntersectionModel, ScenarioError> {
        self.params.validate()?;
        let model = build_intersection(&self.geometry, &self.params)?;
        if self.horizon == 0 {
            return Err(ScenarioError::Invalid("horizon must be at least one slot".into()));
        }
        if self.planner.horizon == 0 || self.planner.grid_points < 2 {
            return Err(ScenarioError::Invalid("planner needs a horizon ≥ 1 and at least 2 grid points".into()));
        }
        let n = model.paths.len();
        match &self.arrivals {
            Arrivals::Poisson { rate, hv_fraction, paths } => {
                if !(rate.is_finite() && *rate >= 0.0) {
                    return Err(ScenarioError::Invalid(format!("arrival rate {rate} must be finite and non-negative")));
                }
                if !(0.0..=1.0).contains(hv_fraction) {
                    return Err(ScenarioError::Invalid(format!("hv_fraction {hv_fraction} outside [0, 1]")));
                }
                if let Some(p) = paths.iter().find(|&&p| p >= n) {
                    return Err(ScenarioError::Invalid(format!("path {p} does not exist (junction has {n})")));
                }
            }
            Arrivals::Schedule { vehicles } => {
                for a in vehicles {
                    if a.path >= n {
                        return Err(ScenarioError::Invalid(format!(
                            "path {} does not exist (junction has {n})",
                            a.path
                        )));
                    }
                    if !(0.0..=self.params.v_max).contains(&a.speed) {
                        return Err(ScenarioError::Invalid(format!(
                            "initial speed {} outside [0, {}]",
                            a.speed, self.params.v_max
                        )));
                    }
                }
            }
        }
        Ok(model)
    }
}
