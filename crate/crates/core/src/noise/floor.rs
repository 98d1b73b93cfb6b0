//! Compensation-system and amplifier noise floors.

use std::f64::consts::PI;

use super::colored::{derive_seed, synthesize_colored_noise, PowerLawSpec};
use crate::error::{invalid, Result};
use crate::series::{PhaseSeries, TimeGrid};

/// Carrier at which the floor level is quoted.
pub const FLOOR_REFERENCE_HZ: f64 = 1e9;

/// Noise bandwidth of the 3-Hz single-pole measurement filter (pi/2 * 3 Hz).
pub const MEASUREMENT_NOISE_BANDWIDTH_HZ: f64 = PI / 2.0 * 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorParams {
    /// `S_phi(1 Hz)` of the closed-loop system at 1 GHz, dB rad^2/Hz.
    pub system_floor_db_at_1hz: f64,
    /// Exponent of the floor spectrum (-1: flicker phase).
    pub slope_exponent: i32,
    /// Allan deviation at 1 s added by each EDFA (white phase).
    pub edfa_excess_stability: f64,
    /// Thermal phase wander of the RF electronics, random-walk delay
    /// coefficient `h / f^2` (s^2/Hz at 1 Hz).
    pub electronics_wander_level: f64,
}

impl Default for FloorParams {
    fn default() -> Self {
        Self {
            system_floor_db_at_1hz: -120.0,
            slope_exponent: -1,
            edfa_excess_stability: 3e-15,
            electronics_wander_level: 1.75e-32,
        }
    }
}

impl FloorParams {
    pub fn quiet() -> Self {
        Self {
            system_floor_db_at_1hz: f64::NEG_INFINITY,
            edfa_excess_stability: 0.0,
            electronics_wander_level: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.system_floor_db_at_1hz.is_nan() || self.system_floor_db_at_1hz == f64::INFINITY {
            return Err(invalid("system_floor_db_at_1hz", "must be finite or -inf"));
        }
        if !matches!(self.slope_exponent, -2..=0) {
            return Err(invalid("slope_exponent", "floor slope must be 0, -1 or -2"));
        }
        for (name, v) in [
            ("edfa_excess_stability", self.edfa_excess_stability),
            ("electronics_wander_level", self.electronics_wander_level),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Delay-domain spectrum of the system floor and electronics wander.
    pub fn system_spectrum(&self) -> PowerLawSpec {
        let s_phi = 10f64.powf(self.system_floor_db_at_1hz / 10.0);
        let s_x = s_phi / (2.0 * PI * FLOOR_REFERENCE_HZ).powi(2);
        PowerLawSpec::new()
            .with(self.slope_exponent, s_x)
            .with(-2, self.electronics_wander_level)
    }

    /// White delay level giving `edfa_excess_stability` at 1 s per amplifier
    /// through the 3-Hz measurement filter: `sigma^2 = 3 f_h S_x`.
    pub fn edfa_spectrum(&self, n_edfa: usize) -> PowerLawSpec {
        let per_amp = self.edfa_excess_stability.powi(2) / (3.0 * MEASUREMENT_NOISE_BANDWIDTH_HZ);
        PowerLawSpec::white(per_amp * n_edfa as f64)
    }
}

/// Combined floor delay noise at the remote output (seconds).
pub fn floor_noise(params: &FloorParams, n_edfa: usize, grid: &TimeGrid, seed: u64) -> Result<PhaseSeries> {
    params.validate()?;
    let mut x = synthesize_colored_noise(&params.system_spectrum(), grid, derive_seed(seed, 0xF100))?;
    let amp = synthesize_colored_noise(&params.edfa_spectrum(n_edfa), grid, derive_seed(seed, 0xEDFA))?;
    for (a, b) in x.iter_mut().zip(amp) {
        *a += b;
    }
    PhaseSeries::delay(*grid, x)
}
