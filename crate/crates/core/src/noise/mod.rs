//! Seeded stochastic disturbances: fibre delay, PMD, laser frequency noise
//! and the compensation-system floors.

pub mod colored;
pub mod fiber;
pub mod floor;
pub mod laser;
pub mod pmd;

pub use colored::{derive_seed, synthesize_colored_noise, PowerLawSpec};
pub use fiber::{fiber_delay_process, FiberNoiseParams};
pub use floor::{floor_noise, FloorParams};
pub use laser::{laser_frequency_noise, LaserNoiseParams};
pub use pmd::{Direction, PmdModel, PmdParams, Stokes};

/// Every disturbance feeding one simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseBundle {
    pub fiber: FiberNoiseParams,
    pub pmd: PmdParams,
    pub laser: LaserNoiseParams,
    pub floor: FloorParams,
}

impl NoiseBundle {
    /// All sources switched off.
    pub fn quiet() -> Self {
        Self {
            fiber: FiberNoiseParams::quiet(),
            pmd: PmdParams { mean_dgd_ps: 0.0, ..PmdParams::default() },
            laser: LaserNoiseParams::quiet(),
            floor: FloorParams::quiet(),
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        self.fiber.validate()?;
        self.pmd.validate()?;
        self.laser.validate()?;
        self.floor.validate()
    }
}
