//! Frequency-stability estimators on phase series: overlapping Allan
//! deviation, averaged-periodogram phase PSD and mean fractional offset.

use std::f64::consts::PI;
use std::io::Write;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{invalid, Error, Result};
use crate::series::{PhaseSeries, PhaseUnit, TimeGrid};

/// Fewer contributing second differences than this and a tau is dropped.
const MIN_TERMS: usize = 4;

/// PSD level reported for bins with exactly zero power.
pub const PSD_FLOOR_DB: f64 = -999.0;

/// Error-bar convention written into every exported table.
pub const CI_CONVENTION: &str = "1-sigma, sigma_y / sqrt(2 edf), edf from local slope noise identification";

#[derive(Debug, Clone, PartialEq)]
pub struct AllanTable {
    pub taus: Vec<f64>,
    pub sigma_y: Vec<f64>,
    pub ci_half_width: Vec<f64>,
    /// Number of second differences behind each entry.
    pub n_terms: Vec<usize>,
}

impl AllanTable {
    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    /// Deviation at the tau closest to `tau` (within 1% relative).
    pub fn at(&self, tau: f64) -> Option<f64> {
        self.taus
            .iter()
            .position(|t| (t - tau).abs() <= 0.01 * tau)
            .map(|i| self.sigma_y[i])
    }

    pub fn entries(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.taus.iter().copied().zip(self.sigma_y.iter().copied())
    }

    /// Least-squares slope of `log sigma` against `log tau` over `[lo, hi]`.
    pub fn loglog_slope(&self, lo: f64, hi: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .entries()
            .filter(|(t, s)| *t >= lo && *t <= hi && *s > 0.0)
            .map(|(t, s)| (t.ln(), s.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    }

    /// Writes `tau_s,adev,ci,n`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "tau_s,adev,ci,n")?;
        for i in 0..self.len() {
            writeln!(out, "{},{:.6e},{:.6e},{}", self.taus[i], self.sigma_y[i], self.ci_half_width[i], self.n_terms[i])?;
        }
        Ok(())
    }
}

/// Octave-spaced taus `dt, 2dt, 4dt, ...` that leave at least the minimum
/// number of second differences for `n_samples` points.
pub fn octave_taus(grid: &TimeGrid) -> Vec<f64> {
    let n = grid.len();
    let mut taus = Vec::new();
    let mut m = 1usize;
    while n > 2 * m && n - 2 * m >= MIN_TERMS {
        taus.push(m as f64 * grid.dt());
        m *= 2;
    }
    taus
}

fn tau_multiple(tau: f64, dt: f64) -> Result<usize> {
    let ratio = tau / dt;
    let m = ratio.round();
    if !(tau.is_finite() && m >= 1.0 && (ratio - m).abs() <= 1e-6 * ratio.max(1.0)) {
        return Err(invalid("tau", format!("{tau} s is not a positive multiple of dt = {dt} s")));
    }
    Ok(m as usize)
}

fn seconds_of(phase: &PhaseSeries) -> Vec<f64> {
    phase.to_seconds().into_values()
}

/// Overlapping Allan deviation of the time deviation `x = phi / (2 pi nu)`.
///
/// Taus that leave fewer than four second differences are omitted.
pub fn overlapping_adev(phase: &PhaseSeries, taus: &[f64]) -> Result<AllanTable> {
    let x = seconds_of(phase);
    overlapping_adev_raw(&x, phase.grid().dt(), taus)
}

/// Overlapping Allan deviation of a frequency series (any unit): the output
/// is in the unit of the input, as a counter with gate time tau would report.
pub fn frequency_adev(grid: &TimeGrid, frequency: &[f64], taus: &[f64]) -> Result<AllanTable> {
    if frequency.len() != grid.len() {
        return Err(invalid("frequency", "length does not match grid"));
    }
    let dt = grid.dt();
    let mut x = Vec::with_capacity(frequency.len() + 1);
    let mut acc = 0.0;
    x.push(0.0);
    for f in frequency {
        acc += f * dt;
        x.push(acc);
    }
    overlapping_adev_raw(&x, dt, taus)
}

fn overlapping_adev_raw(x: &[f64], dt: f64, taus: &[f64]) -> Result<AllanTable> {
    let mut multiples = Vec::with_capacity(taus.len());
    for &tau in taus {
        multiples.push(tau_multiple(tau, dt)?);
    }
    multiples.sort_unstable();
    multiples.dedup();

    let n = x.len();
    let mut table = AllanTable { taus: vec![], sigma_y: vec![], ci_half_width: vec![], n_terms: vec![] };
    for m in multiples {
        if n <= 2 * m || n - 2 * m < MIN_TERMS {
            continue;
        }
        let terms = n - 2 * m;
        let sum: f64 = (0..terms)
            .map(|i| {
                let d = x[i + 2 * m] - 2.0 * x[i + m] + x[i];
                d * d
            })
            .sum();
        let tau = m as f64 * dt;
        let var = sum / (2.0 * tau * tau * terms as f64);
        table.taus.push(tau);
        table.sigma_y.push(var.sqrt());
        table.n_terms.push(terms);
    }
    table.ci_half_width = confidence_half_widths(&table, n, dt);
    Ok(table)
}

/// Overlapping Allan deviation at a single tau without the minimum-terms
/// rule; `None` when the series is shorter than `2 tau`.
pub fn overlapping_adev_at(phase: &PhaseSeries, tau: f64) -> Result<Option<f64>> {
    let x = seconds_of(phase);
    let m = tau_multiple(tau, phase.grid().dt())?;
    if x.len() <= 2 * m {
        return Ok(None);
    }
    let terms = x.len() - 2 * m;
    let sum: f64 = (0..terms).map(|i| (x[i + 2 * m] - 2.0 * x[i + m] + x[i]).powi(2)).sum();
    Ok(Some((sum / (2.0 * tau * tau * terms as f64)).sqrt()))
}

/// Plain (non-overlapping) Allan deviation, used to cross-check the
/// overlapping estimator.
pub fn non_overlapping_adev(phase: &PhaseSeries, tau: f64) -> Result<Option<f64>> {
    let x = seconds_of(phase);
    let m = tau_multiple(tau, phase.grid().dt())?;
    let samples: Vec<f64> = x.iter().step_by(m).copied().collect();
    if samples.len() < 3 {
        return Ok(None);
    }
    let terms = samples.len() - 2;
    let sum: f64 = samples.windows(3).map(|w| (w[2] - 2.0 * w[1] + w[0]).powi(2)).sum();
    Ok(Some((sum / (2.0 * tau * tau * terms as f64)).sqrt()))
}

/// Power-law noise class inferred from the local Allan slope.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseType {
    WhitePm,
    FlickerPm,
    WhiteFm,
    FlickerFm,
    RandomWalkFm,
}

impl NoiseType {
    pub fn from_slope(mu: f64) -> Self {
        if mu < -0.85 {
            NoiseType::WhitePm
        } else if mu < -0.7 {
            NoiseType::FlickerPm
        } else if mu < -0.25 {
            NoiseType::WhiteFm
        } else if mu < 0.25 {
            NoiseType::FlickerFm
        } else {
            NoiseType::RandomWalkFm
        }
    }

    /// Equivalent degrees of freedom of the overlapping estimator for `n`
    /// phase points at averaging factor `m`.
    pub fn edf(&self, n: usize, m: usize) -> f64 {
        let nf = n as f64;
        let mf = m as f64;
        let edf = match self {
            NoiseType::WhitePm => (nf + 1.0) * (nf - 2.0 * mf) / (2.0 * (nf - mf)),
            NoiseType::FlickerPm => {
                let a = ((nf - 1.0) / (2.0 * mf)).ln();
                let b = ((2.0 * mf + 1.0) * (nf - 1.0) / 4.0).ln();
                (a.max(0.0) * b.max(0.0)).sqrt().exp()
            }
            NoiseType::WhiteFm => {
                (3.0 * (nf - 1.0) / (2.0 * mf) - 2.0 * (nf - 2.0) / nf) * 4.0 * mf * mf / (4.0 * mf * mf + 5.0)
            }
            NoiseType::FlickerFm => {
                if m == 1 {
                    2.0 * (nf - 2.0).powi(2) / (2.3 * nf - 4.9)
                } else {
                    5.0 * nf * nf / (4.0 * mf * (nf + 3.0 * mf))
                }
            }
            NoiseType::RandomWalkFm => {
                (nf - 2.0) / mf * ((nf - 1.0).powi(2) - 3.0 * mf * (nf - 1.0) + 4.0 * mf * mf) / (nf - 3.0).powi(2)
            }
        };
        if edf.is_finite() {
            edf.max(1.0)
        } else {
            1.0
        }
    }
}

fn confidence_half_widths(table: &AllanTable, n: usize, dt: f64) -> Vec<f64> {
    let len = table.len();
    (0..len)
        .map(|i| {
            let s = table.sigma_y[i];
            if s == 0.0 {
                return 0.0;
            }
            let (a, b) = if len < 2 {
                (i, i)
            } else if i + 1 < len {
                (i, i + 1)
            } else {
                (i - 1, i)
            };
            let mu = if a != b && table.sigma_y[a] > 0.0 && table.sigma_y[b] > 0.0 {
                (table.sigma_y[b] / table.sigma_y[a]).ln() / (table.taus[b] / table.taus[a]).ln()
            } else {
                -1.0
            };
            let m = (table.taus[i] / dt).round() as usize;
            s / (2.0 * NoiseType::from_slope(mu).edf(n, m)).sqrt()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    pub fn name(&self) -> &'static str {
        match self {
            Window::Hann => "hann",
            Window::Rectangular => "rectangular",
        }
    }

    fn coefficients(&self, len: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; len],
            Window::Hann => (0..len).map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / len as f64).cos()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsdEstimate {
    pub freqs: Vec<f64>,
    /// One-sided `S_phi` in rad^2/Hz.
    pub psd: Vec<f64>,
    pub carrier_hz: f64,
    pub segments: usize,
    pub window: Window,
}

impl PsdEstimate {
    pub fn resolution(&self) -> f64 {
        self.freqs.first().copied().unwrap_or(0.0)
    }

    pub fn psd_db(&self) -> Vec<f64> {
        self.psd.iter().map(|p| if *p > 0.0 { 10.0 * p.log10() } else { PSD_FLOOR_DB }).collect()
    }

    /// Integral of the estimate over all positive bins (rad^2).
    pub fn integrated(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.resolution()
    }

    /// Level interpolated (in log-log) at `f`.
    pub fn level_at(&self, f: f64) -> Option<f64> {
        let i = self.freqs.iter().position(|x| *x >= f)?;
        if i == 0 {
            return Some(self.psd[0]);
        }
        let (f0, f1) = (self.freqs[i - 1], self.freqs[i]);
        let (p0, p1) = (self.psd[i - 1], self.psd[i]);
        if p0 <= 0.0 || p1 <= 0.0 {
            return Some(p0.max(p1));
        }
        let w = (f / f0).ln() / (f1 / f0).ln();
        Some((p0.ln() * (1.0 - w) + p1.ln() * w).exp())
    }

    /// Writes `freq_hz,psd_dbrad2hz`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "freq_hz,psd_dbrad2hz")?;
        for (f, p) in self.freqs.iter().zip(self.psd_db()) {
            writeln!(out, "{f},{p:.4}")?;
        }
        Ok(())
    }
}

/// Welch estimate of the one-sided phase PSD with 50%-overlapped segments.
/// The series must be in radians; DC is excluded from the bins.
pub fn psd_phase(phase: &PhaseSeries, segment_length: usize, window: Window) -> Result<PsdEstimate> {
    let carrier_hz = match phase.unit() {
        PhaseUnit::Radians { carrier_hz } => carrier_hz,
        PhaseUnit::Seconds => return Err(Error::UnitMismatch { expected: "rad", found: "s" }),
    };
    let n = phase.len();
    if segment_length < 4 || segment_length > n {
        return Err(invalid("segment_length", format!("must lie in [4, {n}], got {segment_length}")));
    }
    let dt = phase.grid().dt();
    let values = phase.values();
    let w = window.coefficients(segment_length);
    let w_power: f64 = w.iter().map(|v| v * v).sum();
    let step = (segment_length / 2).max(1);
    let fft = FftPlanner::new().plan_fft_forward(segment_length);

    let bins = segment_length / 2;
    let mut acc = vec![0.0; bins];
    let mut segments = 0;
    let mut start = 0;
    let mut buf = vec![Complex64::new(0.0, 0.0); segment_length];
    while start + segment_length <= n {
        let seg = &values[start..start + segment_length];
        let mean = seg.iter().sum::<f64>() / segment_length as f64;
        for (b, (v, wk)) in buf.iter_mut().zip(seg.iter().zip(&w)) {
            *b = Complex64::new((v - mean) * wk, 0.0);
        }
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            let idx = k + 1;
            let scale = if 2 * idx == segment_length { 1.0 } else { 2.0 };
            *a += scale * buf[idx].norm_sqr() * dt / w_power;
        }
        segments += 1;
        start += step;
    }
    let df = 1.0 / (segment_length as f64 * dt);
    Ok(PsdEstimate {
        freqs: (1..=bins).map(|k| k as f64 * df).collect(),
        psd: acc.into_iter().map(|a| a / segments as f64).collect(),
        carrier_hz,
        segments,
        window,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyOffset {
    /// Mean fractional frequency offset (slope of x(t)).
    pub value: f64,
    pub uncertainty: f64,
}

/// Least-squares slope of the time deviation, with a white-noise scaled
/// one-sigma uncertainty. Needs at least 1000 s of data.
pub fn fractional_offset(phase: &PhaseSeries) -> Result<FrequencyOffset> {
    let grid = phase.grid();
    if grid.span() < 1000.0 {
        return Err(invalid("phase", format!("span {} s is shorter than 1000 s", grid.span())));
    }
    let x = seconds_of(phase);
    let n = x.len() as f64;
    let t: Vec<f64> = (0..x.len()).map(|k| k as f64 * grid.dt()).collect();
    let tm = t.iter().sum::<f64>() / n;
    let xm = x.iter().sum::<f64>() / n;
    let stt: f64 = t.iter().map(|v| (v - tm).powi(2)).sum();
    let stx: f64 = t.iter().zip(&x).map(|(a, b)| (a - tm) * (b - xm)).sum();
    let slope = stx / stt;
    let resid: f64 = t.iter().zip(&x).map(|(a, b)| (b - xm - slope * (a - tm)).powi(2)).sum();
    let sigma = (resid / (n - 2.0)).sqrt();
    Ok(FrequencyOffset { value: slope, uncertainty: sigma / stt.sqrt() })
}
