//! Free-running laser diode frequency noise.

use super::colored::{derive_seed, synthesize_colored_noise, PowerLawSpec};
use crate::error::{invalid, Result};
use crate::laser_spectrum::FrequencySeries;
use crate::series::TimeGrid;

/// Optical frequency noise of one diode, one-sided PSD of `delta nu` in Hz^2/Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaserNoiseParams {
    /// White frequency noise per diode.
    pub white_fm_level: f64,
    /// Random-walk frequency drift per diode, `h / f^2` at 1 Hz.
    pub slow_drift_level: f64,
    /// Frequency pull of the local diode per second of thermal-spool
    /// correction (Hz/s); the spool heater shares the diode's enclosure.
    pub thermal_coupling_coefficient: f64,
}

impl Default for LaserNoiseParams {
    fn default() -> Self {
        // Beat of two diodes: sigma(1 s)^2 = 2 h0 / 2 = (250 kHz)^2.
        Self { white_fm_level: 6.25e10, slow_drift_level: 8e6, thermal_coupling_coefficient: 0.0 }
    }
}

impl LaserNoiseParams {
    pub fn quiet() -> Self {
        Self { white_fm_level: 0.0, slow_drift_level: 0.0, thermal_coupling_coefficient: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("white_fm_level", self.white_fm_level),
            ("slow_drift_level", self.slow_drift_level),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !self.thermal_coupling_coefficient.is_finite() {
            return Err(invalid("thermal_coupling_coefficient", "must be finite"));
        }
        Ok(())
    }

    /// Spectrum of the frequency fluctuation itself (Hz^2/Hz).
    pub fn spectrum(&self) -> PowerLawSpec {
        PowerLawSpec::new().with(0, self.white_fm_level).with(-2, self.slow_drift_level)
    }
}

/// Frequency fluctuation of diode `diode_id`; distinct ids give independent
/// streams from the same seed.
pub fn laser_frequency_noise(
    params: &LaserNoiseParams,
    grid: &TimeGrid,
    seed: u64,
    diode_id: u32,
) -> Result<FrequencySeries> {
    params.validate()?;
    let values = synthesize_colored_noise(&params.spectrum(), grid, derive_seed(seed, 0x1A5E_0000 + diode_id as u64))?;
    FrequencySeries::new(*grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quiet_diode_is_silent() {
        let g = TimeGrid::new(0.01, 64).unwrap();
        let f = laser_frequency_noise(&LaserNoiseParams::quiet(), &g, 5, 1).unwrap();
        assert!(f.values_hz.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn diodes_are_reproducible_and_distinct() {
        let g = TimeGrid::new(0.01, 256).unwrap();
        let p = LaserNoiseParams::default();
        let a = laser_frequency_noise(&p, &g, 5, 1).unwrap();
        let b = laser_frequency_noise(&p, &g, 5, 1).unwrap();
        let c = laser_frequency_noise(&p, &g, 5, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values_hz, c.values_hz);
    }
}
