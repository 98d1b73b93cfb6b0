//! First-order polarization mode dispersion of a link built from
//! concatenated linearly birefringent segments.
//!
//! Each segment has a slowly wandering birefringence axis and a retardation
//! that follows the daily temperature cycle. The input-referred PMD vector
//! `Omega` (length = DGD, pointing at the slow principal state) is assembled
//! segment by segment; an input Stokes state `s` sees the extra delay
//! `Omega . s / 2`.

use std::f64::consts::PI;

use rand::Rng;

use super::colored::{derive_seed, rng};
use super::fiber::DAY_S;
use crate::error::{invalid, Result};

pub type Stokes = [f64; 3];

/// Drift harmonics per segment angle.
const DRIFT_TERMS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmdParams {
    pub mean_dgd_ps: f64,
    pub n_waveplate_segments: usize,
    /// Typical period of the random axis wander (s).
    pub drift_time_constant_s: f64,
    /// Amplitude of the daily retardation swing of each segment (rad).
    pub diurnal_modulation_depth: f64,
    pub scrambler_enabled_fwd: bool,
    pub scrambler_enabled_bwd: bool,
    /// Resonance drive frequencies of the three scrambler axes. Carried for
    /// reference: they sit far above the loop bandwidth, so scrambling is
    /// modelled as an exact average over input states.
    pub scrambler_rates_hz: [f64; 3],
}

impl Default for PmdParams {
    fn default() -> Self {
        Self {
            mean_dgd_ps: 2.2,
            n_waveplate_segments: 20,
            drift_time_constant_s: 21_600.0,
            diurnal_modulation_depth: 1.5,
            scrambler_enabled_fwd: true,
            scrambler_enabled_bwd: true,
            scrambler_rates_hz: [60e3, 100e3, 130e3],
        }
    }
}

impl PmdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_dgd_ps.is_finite() && self.mean_dgd_ps >= 0.0) {
            return Err(invalid("mean_dgd_ps", "must be finite and >= 0"));
        }
        if self.n_waveplate_segments == 0 {
            return Err(invalid("n_waveplate_segments", "need at least one segment"));
        }
        if !(self.drift_time_constant_s.is_finite() && self.drift_time_constant_s > 0.0) {
            return Err(invalid("drift_time_constant_s", "must be positive"));
        }
        if !(self.diurnal_modulation_depth.is_finite() && self.diurnal_modulation_depth >= 0.0) {
            return Err(invalid("diurnal_modulation_depth", "must be finite and >= 0"));
        }
        if self.scrambler_rates_hz.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(invalid("scrambler_rates_hz", "rates must be positive"));
        }
        Ok(())
    }

    pub fn scrambled(&self, direction: Direction) -> bool {
        match direction {
            Direction::Forward => self.scrambler_enabled_fwd,
            Direction::Backward => self.scrambler_enabled_bwd,
        }
    }
}

#[derive(Debug, Clone)]
struct Harmonic {
    amplitude: f64,
    angular: f64,
    phase: f64,
}

impl Harmonic {
    fn at(&self, t: f64) -> f64 {
        self.amplitude * (self.angular * t + self.phase).sin()
    }
}

#[derive(Debug, Clone)]
struct Segment {
    dgd_s: f64,
    axis_angle: f64,
    retardation: f64,
    axis_drift: [Harmonic; DRIFT_TERMS],
    retardation_drift: [Harmonic; DRIFT_TERMS],
    diurnal_phase: f64,
}

/// A seeded realisation of the birefringent link.
#[derive(Debug, Clone)]
pub struct PmdModel {
    params: PmdParams,
    segments: Vec<Segment>,
}

fn harmonics<R: Rng>(r: &mut R, amplitude: f64, period: f64) -> [Harmonic; DRIFT_TERMS] {
    std::array::from_fn(|_| Harmonic {
        amplitude: amplitude * r.gen_range(0.5..1.0),
        angular: 2.0 * PI / (period * r.gen_range(0.5..2.0)),
        phase: r.gen_range(0.0..2.0 * PI),
    })
}

impl PmdModel {
    pub fn new(params: PmdParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let mut r = rng(derive_seed(seed, 0x0F4D));
        let n = params.n_waveplate_segments;
        // Random concatenation: rms DGD = seg * sqrt(n); Maxwellian mean = sqrt(8 / 3pi) rms.
        let seg_dgd = params.mean_dgd_ps * 1e-12 * (3.0 * PI / 8.0).sqrt() / (n as f64).sqrt();
        let segments = (0..n)
            .map(|_| Segment {
                dgd_s: seg_dgd,
                axis_angle: r.gen_range(0.0..PI),
                retardation: r.gen_range(0.0..2.0 * PI),
                axis_drift: harmonics(&mut r, 0.6, params.drift_time_constant_s),
                retardation_drift: harmonics(&mut r, 1.0, params.drift_time_constant_s),
                diurnal_phase: r.gen_range(0.0..2.0 * PI),
            })
            .collect();
        Ok(Self { params, segments })
    }

    /// A single fixed segment: axis along s1, retardation zero.
    pub fn single_segment(dgd_ps: f64) -> Self {
        let still = || std::array::from_fn(|_| Harmonic { amplitude: 0.0, angular: 0.0, phase: 0.0 });
        Self {
            params: PmdParams { mean_dgd_ps: dgd_ps, n_waveplate_segments: 1, ..PmdParams::default() },
            segments: vec![Segment {
                dgd_s: dgd_ps * 1e-12,
                axis_angle: 0.0,
                retardation: 0.0,
                axis_drift: still(),
                retardation_drift: still(),
                diurnal_phase: 0.0,
            }],
        }
    }

    pub fn params(&self) -> &PmdParams {
        &self.params
    }

    /// Input-referred PMD vector (seconds) for light launched in `direction`.
    pub fn pmd_vector(&self, direction: Direction, t: f64) -> Stokes {
        let day = 2.0 * PI * t / DAY_S;
        let depth = self.params.diurnal_modulation_depth;
        let mut omega = [0.0; 3];
        let mut cumulative = IDENTITY;
        let mut step = |seg: &Segment| {
            let theta = seg.axis_angle + seg.axis_drift.iter().map(|h| h.at(t)).sum::<f64>();
            let phi = seg.retardation
                + depth * (day + seg.diurnal_phase).sin()
                + seg.retardation_drift.iter().map(|h| h.at(t)).sum::<f64>();
            let axis = [(2.0 * theta).cos(), (2.0 * theta).sin(), 0.0];
            let back = mat_t_vec(&cumulative, &axis);
            for k in 0..3 {
                omega[k] += seg.dgd_s * back[k];
            }
            cumulative = mat_mul(&rotation_matrix(&axis, phi), &cumulative);
        };
        match direction {
            Direction::Forward => self.segments.iter().for_each(&mut step),
            Direction::Backward => self.segments.iter().rev().for_each(&mut step),
        }
        omega
    }

    pub fn dgd(&self, direction: Direction, t: f64) -> f64 {
        norm(&self.pmd_vector(direction, t))
    }

    /// Extra delay (s) seen by input Stokes state `state` at time `t`.
    pub fn delay(&self, direction: Direction, state: &Stokes, t: f64) -> Result<f64> {
        check_unit(state)?;
        Ok(0.5 * dot(&self.pmd_vector(direction, t), state))
    }

    /// Delay with the scrambler for `direction` honoured: scrambled light
    /// averages over the whole Poincare sphere, where `Omega . s` has zero mean.
    pub fn path_delay(&self, direction: Direction, state: &Stokes, t: f64) -> Result<f64> {
        if self.params.scrambled(direction) {
            check_unit(state)?;
            Ok(scrambled_delay())
        } else {
            self.delay(direction, state, t)
        }
    }
}

/// Sphere average of the first-order PMD delay.
pub fn scrambled_delay() -> f64 {
    0.0
}

fn check_unit(state: &Stokes) -> Result<()> {
    let n = norm(state);
    if !(n.is_finite() && (n - 1.0).abs() < 1e-6) {
        return Err(invalid("polarization_state", format!("Stokes vector norm {n} is not 1")));
    }
    Ok(())
}

/// Uniformly distributed unit Stokes vector.
pub fn random_state<R: Rng>(r: &mut R) -> Stokes {
    let z: f64 = r.gen_range(-1.0..1.0);
    let a: f64 = r.gen_range(0.0..2.0 * PI);
    let s = (1.0 - z * z).sqrt();
    [s * a.cos(), s * a.sin(), z]
}

type Mat3 = [[f64; 3]; 3];

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: &[f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Rodrigues rotation of `v` about unit `axis` by `angle`.
pub fn rotate(v: &Stokes, axis: &Stokes, angle: f64) -> Stokes {
    mat_vec(&rotation_matrix(axis, angle), v)
}

fn rotation_matrix(axis: &[f64; 3], angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    let [x, y, z] = *axis;
    let k = 1.0 - c;
    [
        [c + x * x * k, x * y * k - z * s, x * z * k + y * s],
        [y * x * k + z * s, c + y * y * k, y * z * k - x * s],
        [z * x * k - y * s, z * y * k + x * s, c + z * z * k],
    ]
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

fn mat_vec(a: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| dot(&a[i], v))
}

fn mat_t_vec(a: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| (0..3).map(|k| a[k][i] * v[k]).sum())
}
