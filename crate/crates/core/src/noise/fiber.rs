//! Reciprocal fibre delay noise: power-law terms plus a diurnal sinusoid.

use std::f64::consts::PI;

use super::colored::{derive_seed, synthesize_colored_noise, PowerLawSpec};
use crate::error::{invalid, Result};
use crate::series::{PhaseSeries, TimeGrid};

pub const DAY_S: f64 = 86_400.0;

/// PSD coefficients of the one-way delay `x(t)` in s^2/Hz (at 1 Hz for the
/// coloured terms) and the diurnal term.
///
/// Defaults reproduce the free 86-km link: `sigma_y(1 s) ~ 3e-14`, a floor
/// near 1e-15 from 100 s on and a diurnal bump of ~2e-15.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiberNoiseParams {
    pub white_pm_level: f64,
    pub flicker_pm_level: f64,
    /// Random walk of the delay (white FM), `h / f^2`.
    pub random_walk_level: f64,
    /// Flicker FM, `h / f^3`: the flat Allan floor of the free link.
    pub flicker_fm_level: f64,
    pub diurnal_amplitude_ps: f64,
    pub diurnal_period_s: f64,
    pub diurnal_phase_rad: f64,
}

impl Default for FiberNoiseParams {
    fn default() -> Self {
        Self {
            white_pm_level: 6.5e-29,
            flicker_pm_level: 2e-30,
            random_walk_level: 2e-30,
            flicker_fm_level: 1.2e-32,
            diurnal_amplitude_ps: 50.0,
            diurnal_period_s: DAY_S,
            diurnal_phase_rad: 0.0,
        }
    }
}

impl FiberNoiseParams {
    pub fn quiet() -> Self {
        Self {
            white_pm_level: 0.0,
            flicker_pm_level: 0.0,
            random_walk_level: 0.0,
            flicker_fm_level: 0.0,
            diurnal_amplitude_ps: 0.0,
            ..Self::default()
        }
    }

    /// Scales every stochastic and diurnal term for a link `ratio` times as
    /// long (power terms linearly in length, the diurnal amplitude too).
    pub fn scaled_by_length(&self, ratio: f64) -> Self {
        Self {
            white_pm_level: self.white_pm_level * ratio,
            flicker_pm_level: self.flicker_pm_level * ratio,
            random_walk_level: self.random_walk_level * ratio,
            flicker_fm_level: self.flicker_fm_level * ratio,
            diurnal_amplitude_ps: self.diurnal_amplitude_ps * ratio,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("white_pm_level", self.white_pm_level),
            ("flicker_pm_level", self.flicker_pm_level),
            ("random_walk_level", self.random_walk_level),
            ("flicker_fm_level", self.flicker_fm_level),
            ("diurnal_amplitude_ps", self.diurnal_amplitude_ps),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !(self.diurnal_period_s.is_finite() && self.diurnal_period_s > 0.0) {
            return Err(invalid("diurnal_period_s", "must be positive"));
        }
        Ok(())
    }

    pub fn spectrum(&self) -> PowerLawSpec {
        PowerLawSpec::new()
            .with(0, self.white_pm_level)
            .with(-1, self.flicker_pm_level)
            .with(-2, self.random_walk_level)
            .with(-3, self.flicker_fm_level)
    }
}

/// One-way fibre delay fluctuation (seconds) on `grid`.
pub fn fiber_delay_process(params: &FiberNoiseParams, grid: &TimeGrid, seed: u64) -> Result<PhaseSeries> {
    params.validate()?;
    let mut x = synthesize_colored_noise(&params.spectrum(), grid, derive_seed(seed, 0xF1BE))?;
    if params.diurnal_amplitude_ps > 0.0 {
        let a = params.diurnal_amplitude_ps * 1e-12;
        let w = 2.0 * PI / params.diurnal_period_s;
        for (v, t) in x.iter_mut().zip(grid.times()) {
            *v += a * (w * t + params.diurnal_phase_rad).sin();
        }
    }
    PhaseSeries::delay(*grid, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quiet_fibre_is_constant_zero() {
        let g = TimeGrid::new(1.0, 100).unwrap();
        let x = fiber_delay_process(&FiberNoiseParams::quiet(), &g, 3).unwrap();
        assert!(x.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn negative_levels_rejected() {
        let p = FiberNoiseParams { random_walk_level: -1.0, ..FiberNoiseParams::default() };
        assert!(p.validate().is_err());
    }
}
