//! Simulation of a signalized junction shared by human drivers and automated
//! vehicles under a safety-preserving coordination protocol.

pub mod av_planner;
pub mod geometry;
pub mod hv_driver;
pub mod intersection_manager;
pub mod kinematics;
pub mod params;
pub mod scenario;
pub mod separation;
pub mod sim_engine;
pub mod verify;
pub mod world;

pub use params::{Params, VehicleKind};
pub use scenario::Scenario;
