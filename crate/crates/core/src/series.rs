//! Uniformly sampled time axis and the phase/delay series built on it.

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{invalid, Error, Result};

/// A uniform sampling grid: `t_k = start_epoch + k * dt` for `k < n_samples`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    dt: f64,
    n_samples: usize,
    start_epoch: f64,
}

impl TimeGrid {
    pub fn new(dt: f64, n_samples: usize) -> Result<Self> {
        Self::with_epoch(dt, n_samples, 0.0)
    }

    pub fn with_epoch(dt: f64, n_samples: usize, start_epoch: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(invalid("dt", format!("must be positive, got {dt}")));
        }
        if n_samples < 2 {
            return Err(invalid("n_samples", "need at least 2 samples"));
        }
        if !start_epoch.is_finite() {
            return Err(invalid("start_epoch", "must be finite"));
        }
        Ok(Self { dt, n_samples, start_epoch })
    }

    /// Grid covering `duration` seconds, rounded to the nearest whole sample.
    pub fn spanning(duration: f64, dt: f64) -> Result<Self> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(invalid("duration", format!("must be positive, got {duration}")));
        }
        Self::new(dt, (duration / dt).round() as usize)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.n_samples
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn start_epoch(&self) -> f64 {
        self.start_epoch
    }

    pub fn span(&self) -> f64 {
        self.dt * self.n_samples as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start_epoch + k as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_samples).map(move |k| self.time(k))
    }

    /// Grids match when they have the same length and their steps and epochs
    /// agree to within floating-point rounding.
    pub fn matches(&self, other: &TimeGrid) -> bool {
        self.n_samples == other.n_samples
            && (self.dt - other.dt).abs() <= 1e-12 * self.dt
            && (self.start_epoch - other.start_epoch).abs() <= 1e-9 * self.dt.max(1.0)
    }

    /// Every `factor`-th sample of this grid.
    pub fn decimated(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(invalid("factor", "must be at least 1"));
        }
        Self::with_epoch(self.dt * factor as f64, self.n_samples.div_ceil(factor), self.start_epoch)
    }
}

/// What the samples of a [`PhaseSeries`] mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhaseUnit {
    /// Phase in radians of a tone at `carrier_hz`.
    Radians { carrier_hz: f64 },
    /// Delay (time deviation) in seconds.
    Seconds,
}

impl PhaseUnit {
    pub fn tag(&self) -> &'static str {
        match self {
            PhaseUnit::Radians { .. } => "rad",
            PhaseUnit::Seconds => "s",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSeries {
    grid: TimeGrid,
    values: Vec<f64>,
    unit: PhaseUnit,
}

impl PhaseSeries {
    pub fn new(grid: TimeGrid, values: Vec<f64>, unit: PhaseUnit) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid(
                "values",
                format!("length {} does not match grid length {}", values.len(), grid.len()),
            ));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid("values", format!("non-finite sample at index {k}")));
        }
        if let PhaseUnit::Radians { carrier_hz } = unit {
            if !(carrier_hz.is_finite() && carrier_hz > 0.0) {
                return Err(invalid("carrier_hz", "must be positive"));
            }
        }
        Ok(Self { grid, values, unit })
    }

    pub fn delay(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, values, PhaseUnit::Seconds)
    }

    pub fn radians(grid: TimeGrid, values: Vec<f64>, carrier_hz: f64) -> Result<Self> {
        Self::new(grid, values, PhaseUnit::Radians { carrier_hz })
    }

    pub fn zeros(grid: TimeGrid, unit: PhaseUnit) -> Self {
        Self { grid, values: vec![0.0; grid.len()], unit }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn unit(&self) -> PhaseUnit {
        self.unit
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Time deviation in seconds; radians are converted with `tau = phi / (2 pi nu)`.
    pub fn to_seconds(&self) -> PhaseSeries {
        match self.unit {
            PhaseUnit::Seconds => self.clone(),
            PhaseUnit::Radians { carrier_hz } => {
                let k = 1.0 / (2.0 * PI * carrier_hz);
                PhaseSeries {
                    grid: self.grid,
                    values: self.values.iter().map(|v| v * k).collect(),
                    unit: PhaseUnit::Seconds,
                }
            }
        }
    }

    /// Phase in radians of a tone at `carrier_hz`.
    pub fn to_radians(&self, carrier_hz: f64) -> Result<PhaseSeries> {
        if !(carrier_hz.is_finite() && carrier_hz > 0.0) {
            return Err(invalid("carrier_hz", "must be positive"));
        }
        let seconds = self.to_seconds();
        let k = 2.0 * PI * carrier_hz;
        Ok(PhaseSeries {
            grid: self.grid,
            values: seconds.values.iter().map(|v| v * k).collect(),
            unit: PhaseUnit::Radians { carrier_hz },
        })
    }

    /// Sample-wise difference `self - other`, in the unit of `self`.
    pub fn difference(&self, other: &PhaseSeries) -> Result<PhaseSeries> {
        if !self.grid.matches(&other.grid) {
            return Err(Error::GridMismatch);
        }
        let converted;
        let other = if other.unit == self.unit {
            other
        } else {
            converted = match self.unit {
                PhaseUnit::Seconds => other.to_seconds(),
                PhaseUnit::Radians { carrier_hz } => other.to_radians(carrier_hz)?,
            };
            &converted
        };
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(PhaseSeries { grid: self.grid, values, unit: self.unit })
    }

    pub fn scaled(&self, k: f64) -> PhaseSeries {
        PhaseSeries {
            grid: self.grid,
            values: self.values.iter().map(|v| v * k).collect(),
            unit: self.unit,
        }
    }

    /// Writes `time_s,value,unit` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "time_s,value,unit")?;
        let tag = self.unit.tag();
        for (t, v) in self.grid.times().zip(&self.values) {
            writeln!(out, "{t},{v:e},{tag}")?;
        }
        Ok(())
    }
}
