//! Simulation and analysis of round-trip compensated RF frequency transfer
//! over optical fibre.

pub mod compensator;
pub mod error;
pub mod laser_spectrum;
pub mod link_topology;
pub mod noise;
pub mod scenario;
pub mod series;
pub mod stability;

pub use compensator::{
    ActuatorParams, CompensatorKind, CompensatorState, LoopMode, LoopParams, RunConfig, ScenarioResult,
};
pub use error::{Error, Result};
pub use laser_spectrum::{LaserParams, ModulationParams};
pub use link_topology::{LinkSection, LinkTopology};
pub use noise::NoiseBundle;
pub use scenario::{Scenario, ScenarioOutput};
pub use series::{PhaseSeries, PhaseUnit, TimeGrid};
pub use stability::AllanTable;
