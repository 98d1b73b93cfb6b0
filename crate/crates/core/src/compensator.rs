//! Round-trip compensation loop: optical (fast PZT stretcher + thermal spool)
//! and electronic (phase offset on the RF source) actuation, the free link,
//! and the remote measurement chain.
//!
//! Two time-stepping modes share one engine:
//!
//! * [`LoopMode::Servo`] resolves the transport delay and the discrete PI
//!   filter sample by sample (dt of tens of microseconds). Used for loop
//!   dynamics.
//! * [`LoopMode::IdealInBand`] assumes the fast loop has converged at every
//!   step (dt of 0.1 s), so the correction is `-(tau_fwd + tau_bwd)/2`
//!   limited by the actuator ranges. Used for multi-day runs, where the
//!   servo band is far above every Allan time of interest.
//!
//! Every delay is in seconds; phases become radians only at the outputs.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::error::{invalid, require_finite, Error, Result};
use crate::laser_spectrum::wrap_phase;
use crate::link_topology::{delay_limited_bandwidth, total_differential_delay, LinkTopology};
use crate::noise::colored::{derive_seed, rng};
use crate::noise::pmd::{dot, random_state, rotate};
use crate::noise::{
    fiber_delay_process, floor_noise, laser_frequency_noise, Direction, NoiseBundle, PmdModel, Stokes,
};
use crate::series::{PhaseSeries, PhaseUnit, TimeGrid};

/// Step of servo-resolved runs.
pub const DEFAULT_SERVO_DT: f64 = 50e-6;
/// Step of long runs.
pub const DEFAULT_LONG_DT: f64 = 0.1;
/// Error excursion, relative to the largest input seen, treated as divergence.
pub const INSTABILITY_RATIO: f64 = 1e3;
/// Link length the fibre noise levels are quoted for; runs scale them linearly.
pub const FIBER_NOISE_REFERENCE_KM: f64 = 86.0;
/// Spacing of PMD vector evaluations; linear interpolation in between.
const PMD_UPDATE_S: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuatorParams {
    /// Total fast (PZT) range, centred on zero (s).
    pub fast_range_s: f64,
    pub fast_bandwidth_hz: f64,
    /// Disabling the fast stage leaves only the thermal loop.
    pub fast_enabled: bool,
    pub slow_sensitivity_ps_per_k: f64,
    /// Total slow (thermal) range, centred on zero (s).
    pub slow_range_s: f64,
    pub slow_thermal_time_constant_s: f64,
    /// Time constant of the integrator that offloads the fast stage onto the heater.
    pub slow_offload_time_s: f64,
    /// Rotation of the forward launch polarization per ps of PZT stretch (rad/ps).
    pub polarization_perturbation_gain: f64,
    /// Same for the heated spool (rad/ps).
    pub slow_polarization_gain: f64,
}

impl Default for ActuatorParams {
    fn default() -> Self {
        Self {
            fast_range_s: 15e-12,
            fast_bandwidth_hz: 5e3,
            fast_enabled: true,
            slow_sensitivity_ps_per_k: 150.0,
            slow_range_s: 6e-9,
            slow_thermal_time_constant_s: 900.0,
            slow_offload_time_s: 200.0,
            polarization_perturbation_gain: 3.0,
            slow_polarization_gain: 0.1,
        }
    }
}

impl ActuatorParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("fast_range", self.fast_range_s),
            ("fast_bandwidth", self.fast_bandwidth_hz),
            ("slow_sensitivity", self.slow_sensitivity_ps_per_k),
            ("slow_range", self.slow_range_s),
            ("slow_thermal_time_constant", self.slow_thermal_time_constant_s),
            ("slow_offload_time", self.slow_offload_time_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, format!("must be positive, got {v}")));
            }
        }
        if self.fast_range_s * 10.0 > self.slow_range_s {
            return Err(invalid("fast_range", "fast range must be far below the slow range"));
        }
        for (name, v) in [
            ("polarization_perturbation_gain", self.polarization_perturbation_gain),
            ("slow_polarization_gain", self.slow_polarization_gain),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, "must be finite and >= 0"));
            }
        }
        Ok(())
    }

    pub fn fast_limit(&self) -> f64 {
        0.5 * self.fast_range_s
    }

    pub fn slow_limit(&self) -> f64 {
        0.5 * self.slow_range_s
    }
}

/// Discrete PI loop with a round-trip transport delay.
///
/// With `z` the one-step shift, the controller is
/// `K(z) = z^-1 (g_p + g_i / (1 - z^-1))`, `g_i = integrator_gain * dt`, and
/// the round-trip error sees the correction through `P(z) = 1 + z^-2n`,
/// `n = round(T_rt / 2dt)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopParams {
    pub roundtrip_delay_s: f64,
    pub proportional_gain: f64,
    /// Integrator gain (1/s).
    pub integrator_gain: f64,
    pub target_unity_gain_bandwidth_hz: f64,
}

impl Default for LoopParams {
    fn default() -> Self {
        let t_rt = 0.88e-3;
        Self::design(t_rt, delay_limited_bandwidth(t_rt), DEFAULT_SERVO_DT).expect("default loop design")
    }
}

impl LoopParams {
    pub const DEFAULT_PROPORTIONAL_GAIN: f64 = 0.2;

    /// Fixes `g_p` and solves the integrator gain for unity open-loop gain at
    /// `target_hz` (at step `dt`).
    pub fn design(roundtrip_s: f64, target_hz: f64, dt: f64) -> Result<Self> {
        let mut p = Self {
            roundtrip_delay_s: roundtrip_s,
            proportional_gain: Self::DEFAULT_PROPORTIONAL_GAIN,
            integrator_gain: 0.0,
            target_unity_gain_bandwidth_hz: target_hz,
        };
        p.validate()?;
        require_positive("dt", dt)?;
        if target_hz >= 0.5 / dt {
            return Err(invalid("target_unity_gain_bandwidth", "above the Nyquist rate of the servo step"));
        }
        let mag = |ki: f64| Self { integrator_gain: ki, ..p }.open_loop_gain(target_hz, dt).norm();
        if mag(0.0) >= 1.0 {
            return Err(invalid("proportional_gain", "proportional path alone exceeds unity at the target"));
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        while mag(hi) < 1.0 {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(invalid("target_unity_gain_bandwidth", "unreachable with a PI filter"));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mag(mid) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        p.integrator_gain = 0.5 * (lo + hi);
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("roundtrip_delay", self.roundtrip_delay_s)?;
        require_positive("target_unity_gain_bandwidth", self.target_unity_gain_bandwidth_hz)?;
        for (name, v) in [("proportional_gain", self.proportional_gain), ("integrator_gain", self.integrator_gain)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        let limit = 0.25 / self.roundtrip_delay_s;
        if self.target_unity_gain_bandwidth_hz >= limit {
            return Err(invalid(
                "target_unity_gain_bandwidth",
                format!("{} Hz violates the delay margin (< {limit:.1} Hz)", self.target_unity_gain_bandwidth_hz),
            ));
        }
        Ok(())
    }

    /// One-way transport delay in steps (at least one).
    pub fn half_delay_samples(&self, dt: f64) -> usize {
        ((self.roundtrip_delay_s / (2.0 * dt)).round() as usize).max(1)
    }

    /// `K(z) P(z)` on the unit circle at `f` Hz.
    pub fn open_loop_gain(&self, f: f64, dt: f64) -> Complex64 {
        let n = self.half_delay_samples(dt) as f64;
        let zinv = Complex64::from_polar(1.0, -2.0 * PI * f * dt);
        let k = zinv * (self.proportional_gain + self.integrator_gain * dt / (Complex64::new(1.0, 0.0) - zinv));
        let p = Complex64::new(1.0, 0.0) + zinv.powf(2.0 * n);
        k * p
    }

    /// Lowest frequency where the open-loop magnitude falls through one.
    pub fn unity_gain_frequency(&self, dt: f64) -> Option<f64> {
        let nyq = 0.5 / dt;
        let mag = |f: f64| self.open_loop_gain(f, dt).norm();
        let mut f0 = 1e-3;
        if mag(f0) < 1.0 {
            return None;
        }
        let ratio = 1.01;
        let mut f1 = f0 * ratio;
        while f1 < nyq {
            if mag(f1) < 1.0 {
                let (mut lo, mut hi) = (f0, f1);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if mag(mid) < 1.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return Some(0.5 * (lo + hi));
            }
            f0 = f1;
            f1 *= ratio;
        }
        None
    }
}

fn require_positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must be positive, got {v}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SaturationFlags {
    pub fast: bool,
    pub slow: bool,
}

impl SaturationFlags {
    pub fn any(&self) -> bool {
        self.fast || self.slow
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CompensatorState {
    pub fast_correction: f64,
    pub slow_correction: f64,
    /// PI integrator (servo mode) or heater command (s of delay).
    pub integrator_accumulator: f64,
    pub heater_command: f64,
    /// Bounds active at this instant.
    pub saturation_flags: SaturationFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompensatorKind {
    Optical,
    Electronic,
    None,
}

impl CompensatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Optical => "optical",
            Self::Electronic => "electronic",
            Self::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopMode {
    Servo,
    IdealInBand,
}

impl LoopMode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Servo => "servo",
            Self::IdealInBand => "ideal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjectionPath {
    /// Same delay on both directions.
    Reciprocal,
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Waveform {
    Step { start_s: f64, amplitude_s: f64 },
    Sine { frequency_hz: f64, amplitude_s: f64 },
    /// Linear drift starting at `start_s`, `rate` seconds of delay per second.
    Ramp { start_s: f64, rate: f64 },
}

impl Waveform {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            Self::Step { start_s, amplitude_s } => {
                if t >= start_s {
                    amplitude_s
                } else {
                    0.0
                }
            }
            Self::Sine { frequency_hz, amplitude_s } => amplitude_s * (2.0 * PI * frequency_hz * t).sin(),
            Self::Ramp { start_s, rate } => rate * (t - start_s).max(0.0),
        }
    }
}

/// A deterministic disturbance added on top of the noise bundle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Injection {
    pub path: InjectionPath,
    pub waveform: Waveform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub duration_s: f64,
    pub dt_s: f64,
    pub mode: LoopMode,
    pub seed: u64,
    pub injections: Vec<Injection>,
}

impl RunConfig {
    pub fn servo(duration_s: f64, seed: u64) -> Self {
        Self { duration_s, dt_s: DEFAULT_SERVO_DT, mode: LoopMode::Servo, seed, injections: Vec::new() }
    }

    pub fn long(duration_s: f64, seed: u64) -> Self {
        Self { duration_s, dt_s: DEFAULT_LONG_DT, mode: LoopMode::IdealInBand, seed, injections: Vec::new() }
    }

    pub fn with_injection(mut self, path: InjectionPath, waveform: Waveform) -> Self {
        self.injections.push(Injection { path, waveform });
        self
    }

    fn grid(&self) -> Result<TimeGrid> {
        require_positive("duration", self.duration_s)?;
        require_positive("dt", self.dt_s)?;
        TimeGrid::spanning(self.duration_s, self.dt_s)
    }
}

/// Terms whose sum is the remote delay deviation (s), one value per step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Contributions {
    pub fiber: Vec<f64>,
    pub pmd: Vec<f64>,
    pub dispersion: Vec<f64>,
    pub injected: Vec<f64>,
    /// Correction as it acts on the light reaching the remote end.
    pub correction: Vec<f64>,
    pub floor: Vec<f64>,
}

impl Contributions {
    pub fn terms(&self) -> [(&'static str, &[f64]); 6] {
        [
            ("fiber", &self.fiber),
            ("pmd", &self.pmd),
            ("dispersion", &self.dispersion),
            ("injected", &self.injected),
            ("correction", &self.correction),
            ("floor", &self.floor),
        ]
    }

    pub fn total(&self, k: usize) -> f64 {
        self.terms().iter().map(|(_, v)| v[k]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SaturationSummary {
    pub fast_samples: usize,
    pub slow_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetadata {
    pub kind: CompensatorKind,
    pub mode: LoopMode,
    pub seed: u64,
    pub dt_s: f64,
    pub duration_s: f64,
    pub half_delay_samples: usize,
    /// Set by the scenario layer.
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    /// Rad at the forward RF.
    pub remote_phase: PhaseSeries,
    /// Rad at the forward RF.
    pub local_reference_phase: PhaseSeries,
    /// Round-trip comparison, rad at the backward RF.
    pub error_signal: PhaseSeries,
    pub fast_correction: PhaseSeries,
    pub slow_correction: PhaseSeries,
    pub contributions: Contributions,
    /// `wrap(-Omega_f t0)`.
    pub static_phase_rad: f64,
    pub final_state: CompensatorState,
    pub saturation: SaturationSummary,
    pub metadata: RunMetadata,
}

impl ScenarioResult {
    pub fn grid(&self) -> &TimeGrid {
        self.remote_phase.grid()
    }

    /// False when any actuator bound was hit during the run.
    pub fn compliant(&self) -> bool {
        self.saturation.fast_samples == 0 && self.saturation.slow_samples == 0
    }

    /// Remote minus reference through the default measurement chain.
    pub fn measured(&self) -> Result<PhaseSeries> {
        measurement_chain(&self.remote_phase, &self.local_reference_phase)
    }

    /// Largest mismatch (rad) between the output phase and the sum of the
    /// recorded contributions.
    pub fn bookkeeping_error(&self) -> f64 {
        let omega = 2.0 * PI * carrier(&self.remote_phase);
        let remote = self.remote_phase.values();
        let reference = self.local_reference_phase.values();
        (0..remote.len())
            .map(|k| (remote[k] - reference[k] - self.static_phase_rad - omega * self.contributions.total(k)).abs())
            .fold(0.0, f64::max)
    }
}

fn carrier(s: &PhaseSeries) -> f64 {
    match s.unit() {
        PhaseUnit::Radians { carrier_hz } => carrier_hz,
        PhaseUnit::Seconds => 1.0 / (2.0 * PI),
    }
}

/// Compensated link with the optical actuators.
pub fn run_closed_loop(
    topology: &LinkTopology,
    noise: &NoiseBundle,
    actuators: &ActuatorParams,
    loop_params: &LoopParams,
    run: &RunConfig,
) -> Result<ScenarioResult> {
    simulate(CompensatorKind::Optical, topology, noise, actuators, loop_params, run)
}

/// Uncompensated link: corrections frozen at zero.
pub fn run_free_link(topology: &LinkTopology, noise: &NoiseBundle, run: &RunConfig) -> Result<ScenarioResult> {
    simulate(CompensatorKind::None, topology, noise, &ActuatorParams::default(), &LoopParams::default(), run)
}

/// Correction applied as an unbounded phase offset on the RF source.
pub fn run_electronic_compensator(
    topology: &LinkTopology,
    noise: &NoiseBundle,
    loop_params: &LoopParams,
    run: &RunConfig,
) -> Result<ScenarioResult> {
    simulate(CompensatorKind::Electronic, topology, noise, &ActuatorParams::default(), loop_params, run)
}

/// Dispatch on `kind`.
pub fn simulate(
    kind: CompensatorKind,
    topology: &LinkTopology,
    noise: &NoiseBundle,
    actuators: &ActuatorParams,
    loop_params: &LoopParams,
    run: &RunConfig,
) -> Result<ScenarioResult> {
    topology.validate()?;
    noise.validate()?;
    actuators.validate()?;
    let grid = run.grid()?;
    if kind != CompensatorKind::None {
        loop_params.validate()?;
        if run.duration_s < 100.0 * loop_params.roundtrip_delay_s {
            return Err(invalid("duration", "must cover at least 100 round trips"));
        }
    }
    if run.mode == LoopMode::Servo && run.dt_s * 4.0 > loop_params.roundtrip_delay_s {
        return Err(invalid("dt", "servo mode needs several steps per round trip"));
    }
    for inj in &run.injections {
        match inj.waveform {
            Waveform::Step { start_s, amplitude_s } => {
                require_finite("step start", start_s)?;
                require_finite("step amplitude", amplitude_s)?;
            }
            Waveform::Sine { frequency_hz, amplitude_s } => {
                require_finite("sine frequency", frequency_hz)?;
                require_finite("sine amplitude", amplitude_s)?;
            }
            Waveform::Ramp { start_s, rate } => {
                require_finite("ramp start", start_s)?;
                require_finite("ramp rate", rate)?;
            }
        }
    }
    Engine::new(kind, topology, noise, actuators, loop_params, run, grid)?.run()
}

/// Linearly interpolated PMD vectors on a coarse grid.
struct PmdTrack {
    step: usize,
    fwd: Vec<Stokes>,
    bwd: Vec<Stokes>,
}

impl PmdTrack {
    fn new(model: &PmdModel, grid: &TimeGrid) -> Self {
        let step = ((PMD_UPDATE_S / grid.dt()).round() as usize).max(1);
        let points = grid.len() / step + 2;
        let at = |dir, j: usize| model.pmd_vector(dir, grid.start_epoch() + (j * step) as f64 * grid.dt());
        Self {
            step,
            fwd: (0..points).map(|j| at(Direction::Forward, j)).collect(),
            bwd: (0..points).map(|j| at(Direction::Backward, j)).collect(),
        }
    }

    fn vector(&self, dir: Direction, k: usize) -> Stokes {
        let table = match dir {
            Direction::Forward => &self.fwd,
            Direction::Backward => &self.bwd,
        };
        let j = k / self.step;
        let w = (k % self.step) as f64 / self.step as f64;
        let (a, b) = (table[j], table[j + 1]);
        [a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1]), a[2] + w * (b[2] - a[2])]
    }
}

struct Engine {
    kind: CompensatorKind,
    mode: LoopMode,
    grid: TimeGrid,
    run: RunConfig,
    act: ActuatorParams,
    gp: f64,
    gi: f64,
    nh: usize,
    omega_f: f64,
    omega_b: f64,
    static_phase: f64,
    kappa: f64,
    thermal_coupling: f64,
    fiber: Vec<f64>,
    nu_fwd: Vec<f64>,
    nu_bwd: Vec<f64>,
    floor: Vec<f64>,
    pmd: Option<PmdTrack>,
    launch_fwd: Stokes,
    launch_bwd: Stokes,
    axis_fast: Stokes,
    axis_slow: Stokes,
    scrambled_fwd: bool,
    scrambled_bwd: bool,
}

impl Engine {
    fn new(
        kind: CompensatorKind,
        topology: &LinkTopology,
        noise: &NoiseBundle,
        act: &ActuatorParams,
        lp: &LoopParams,
        run: &RunConfig,
        grid: TimeGrid,
    ) -> Result<Self> {
        let seed = run.seed;
        let f_fwd = topology.modulation.forward_rf_hz;
        let omega_f = topology.modulation.forward_angular();
        let dtd = total_differential_delay(topology, &topology.laser_fwd, omega_f)?;
        let fiber_params = noise.fiber.scaled_by_length(topology.link_length_km() / FIBER_NOISE_REFERENCE_KM);
        let fiber = fiber_delay_process(&fiber_params, &grid, derive_seed(seed, 0xF1BE))?.into_values();
        let nu_fwd = laser_frequency_noise(&noise.laser, &grid, seed, 1)?.values_hz;
        let nu_bwd = laser_frequency_noise(&noise.laser, &grid, seed, 2)?.values_hz;
        let floor = floor_noise(&noise.floor, topology.n_edfa(), &grid, seed)?.into_values();
        let pmd_params = noise.pmd;
        let pmd = if pmd_params.mean_dgd_ps > 0.0 && !(pmd_params.scrambler_enabled_fwd && pmd_params.scrambler_enabled_bwd) {
            Some(PmdTrack::new(&PmdModel::new(pmd_params, seed)?, &grid))
        } else {
            None
        };
        let mut r = rng(derive_seed(seed, 0x5707));
        let (launch_fwd, launch_bwd) = (random_state(&mut r), random_state(&mut r));
        let (axis_fast, axis_slow) = (random_state(&mut r), random_state(&mut r));
        let electronic = kind == CompensatorKind::Electronic;
        Ok(Self {
            kind,
            mode: run.mode,
            run: run.clone(),
            act: *act,
            gp: lp.proportional_gain,
            gi: lp.integrator_gain * run.dt_s,
            nh: lp.half_delay_samples(run.dt_s),
            omega_f,
            omega_b: topology.modulation.backward_angular(),
            static_phase: wrap_phase(-omega_f * topology.one_way_delay()),
            kappa: dtd / f_fwd,
            thermal_coupling: if electronic { 0.0 } else { noise.laser.thermal_coupling_coefficient },
            fiber,
            nu_fwd,
            nu_bwd,
            floor,
            pmd,
            launch_fwd,
            launch_bwd,
            axis_fast,
            axis_slow,
            scrambled_fwd: pmd_params.scrambler_enabled_fwd,
            scrambled_bwd: pmd_params.scrambler_enabled_bwd,
            grid,
        })
    }

    fn injected(&self, t: f64) -> (f64, f64) {
        let (mut f, mut b) = (0.0, 0.0);
        for inj in &self.run.injections {
            let v = inj.waveform.at(t);
            match inj.path {
                InjectionPath::Reciprocal => {
                    f += v;
                    b += v;
                }
                InjectionPath::Forward => f += v,
                InjectionPath::Backward => b += v,
            }
        }
        (f, b)
    }

    /// Forward PMD delay with the launch state turned by the actuators.
    fn pmd_forward(&self, k: usize, fast: f64, slow: f64) -> f64 {
        match &self.pmd {
            Some(track) if !self.scrambled_fwd => {
                let mut s = self.launch_fwd;
                if self.kind == CompensatorKind::Optical {
                    s = rotate(&s, &self.axis_fast, self.act.polarization_perturbation_gain * fast * 1e12);
                    s = rotate(&s, &self.axis_slow, self.act.slow_polarization_gain * slow * 1e12);
                }
                0.5 * dot(&track.vector(Direction::Forward, k), &s)
            }
            _ => 0.0,
        }
    }

    fn pmd_backward(&self, k: usize) -> f64 {
        match &self.pmd {
            Some(track) if !self.scrambled_bwd => 0.5 * dot(&track.vector(Direction::Backward, k), &self.launch_bwd),
            _ => 0.0,
        }
    }

    fn run(mut self) -> Result<ScenarioResult> {
        let n = self.grid.len();
        let dt = self.grid.dt();
        let nh = self.nh;
        let optical = self.kind == CompensatorKind::Optical;
        let active = self.kind != CompensatorKind::None;
        let fast_limit = if optical { self.act.fast_limit() } else { f64::INFINITY };
        let fast_on = !optical || self.act.fast_enabled;
        let slow_limit = self.act.slow_limit();
        let sens = self.act.slow_sensitivity_ps_per_k * 1e-12;
        let decay = (-dt / self.act.slow_thermal_time_constant_s).exp();
        let offload = dt / self.act.slow_offload_time_s;

        let mut tau_f = vec![0.0; n];
        let mut tau_b = vec![0.0; n];
        let mut fast_tr = vec![0.0; n];
        let mut slow_tr = vec![0.0; n];
        let mut corr = vec![0.0; n];
        let mut error = vec![0.0; n];
        let mut remote = vec![0.0; n];
        let mut c_pmd = vec![0.0; n];
        let mut c_disp = vec![0.0; n];
        let mut c_inj = vec![0.0; n];
        let mut c_corr = vec![0.0; n];

        let mut state = CompensatorState::default();
        let mut summary = SaturationSummary::default();
        // Fast demand (unclamped) handed to the heater integrator.
        let mut demand = 0.0;
        let mut fast_next = 0.0;
        let mut max_input: f64 = 1e-15;
        let hist = |v: &[f64], k: usize, lag: usize| v[k.saturating_sub(lag)];

        // Runs start locked with the heater settled on the initial round-trip delay.
        if optical && n > 0 {
            let (inj_f, inj_b) = self.injected(self.grid.time(0));
            let f0 = self.fiber[0] + self.pmd_forward(0, 0.0, 0.0) + self.kappa * self.nu_fwd[0] + inj_f;
            let b0 = self.fiber[0] + self.pmd_backward(0) + self.kappa * self.nu_bwd[0] + inj_b;
            let start = (-0.5 * (f0 + b0)).clamp(-slow_limit, slow_limit);
            state.heater_command = start;
            state.slow_correction = start;
        }

        for k in 0..n {
            let t = self.grid.time(k);

            // Thermal stage, driven by the previous fast demand.
            let mut slow_sat = false;
            if optical {
                let mut u = state.heater_command + offload * demand;
                if u.abs() > slow_limit {
                    u = u.clamp(-slow_limit, slow_limit);
                    slow_sat = true;
                }
                state.heater_command = u;
                state.slow_correction = u + (state.slow_correction - u) * decay;
            }
            let slow = state.slow_correction;

            let coupling = self.thermal_coupling * slow / sens;
            let disp_f = self.kappa * (self.nu_fwd[k] + coupling);
            let disp_b = self.kappa * self.nu_bwd[k];
            let (inj_f, inj_b) = self.injected(t);
            let base_b = self.fiber[k] + self.pmd_backward(k) + disp_b + inj_b;
            tau_b[k] = base_b;

            let mut fast_sat = false;
            let (fast, pmd_f, c_remote, e) = match (self.mode, active) {
                (_, false) => {
                    let pmd_f = self.pmd_forward(k, 0.0, 0.0);
                    tau_f[k] = self.fiber[k] + pmd_f + disp_f + inj_f;
                    let e = match self.mode {
                        LoopMode::Servo => hist(&tau_f, k, nh) + tau_b[k],
                        LoopMode::IdealInBand => tau_f[k] + tau_b[k],
                    };
                    (0.0, pmd_f, 0.0, e)
                }
                (LoopMode::Servo, true) => {
                    let fast = fast_next;
                    fast_tr[k] = fast;
                    slow_tr[k] = slow;
                    corr[k] = fast + slow;
                    let pmd_f = self.pmd_forward(k, hist(&fast_tr, k, nh), hist(&slow_tr, k, nh));
                    tau_f[k] = self.fiber[k] + pmd_f + disp_f + inj_f;
                    let e = hist(&corr, k, 2 * nh) + hist(&tau_f, k, nh) + tau_b[k] + corr[k];
                    // PI update for the next step, integrator frozen while clamped.
                    let integ = state.integrator_accumulator + self.gi * e;
                    let cmd = -(self.gp * e + integ);
                    // Thermal-only: the heater integrates the error directly.
                    demand = if fast_on { cmd } else { -0.5 * e };
                    let mut next = if fast_on { cmd } else { 0.0 };
                    if next.abs() > fast_limit {
                        next = next.clamp(-fast_limit, fast_limit);
                        fast_sat = true;
                    } else {
                        state.integrator_accumulator = integ;
                    }
                    fast_next = next;
                    (fast, pmd_f, hist(&corr, k, nh), e)
                }
                (LoopMode::IdealInBand, true) => {
                    let prev_fast = if k > 0 { fast_tr[k - 1] } else { 0.0 };
                    let pmd_seen = self.pmd_forward(k, prev_fast, slow);
                    let seen_f = self.fiber[k] + pmd_seen + disp_f + inj_f;
                    let desired = -0.5 * (seen_f + base_b) - slow;
                    demand = desired;
                    let mut fast = if fast_on { desired } else { 0.0 };
                    if fast.abs() > fast_limit {
                        fast = fast.clamp(-fast_limit, fast_limit);
                        fast_sat = true;
                    }
                    let pmd_f = self.pmd_forward(k, fast, slow);
                    tau_f[k] = self.fiber[k] + pmd_f + disp_f + inj_f;
                    fast_tr[k] = fast;
                    slow_tr[k] = slow;
                    corr[k] = fast + slow;
                    let e = 2.0 * corr[k] + tau_f[k] + tau_b[k];
                    (fast, pmd_f, corr[k], e)
                }
            };

            max_input = max_input.max(tau_f[k].abs()).max(tau_b[k].abs());
            if active && e.abs() > INSTABILITY_RATIO * max_input {
                return Err(Error::LoopInstability { time_s: t, error_s: e, limit_s: INSTABILITY_RATIO * max_input });
            }

            state.fast_correction = fast;
            state.saturation_flags = SaturationFlags { fast: fast_sat, slow: slow_sat };
            summary.fast_samples += usize::from(fast_sat);
            summary.slow_samples += usize::from(slow_sat);

            error[k] = self.omega_b * e;
            c_pmd[k] = pmd_f;
            c_disp[k] = disp_f;
            c_inj[k] = inj_f;
            c_corr[k] = c_remote;
            let deviation = self.fiber[k] + pmd_f + disp_f + inj_f + c_remote + self.floor[k];
            remote[k] = self.static_phase + self.omega_f * deviation;
        }

        let f_f = self.omega_f / (2.0 * PI);
        let f_b = self.omega_b / (2.0 * PI);
        let grid = self.grid;
        Ok(ScenarioResult {
            remote_phase: PhaseSeries::radians(grid, remote, f_f)?,
            local_reference_phase: PhaseSeries::zeros(grid, PhaseUnit::Radians { carrier_hz: f_f }),
            error_signal: PhaseSeries::radians(grid, error, f_b)?,
            fast_correction: PhaseSeries::delay(grid, fast_tr)?,
            slow_correction: PhaseSeries::delay(grid, slow_tr)?,
            contributions: Contributions {
                fiber: std::mem::take(&mut self.fiber),
                pmd: c_pmd,
                dispersion: c_disp,
                injected: c_inj,
                correction: c_corr,
                floor: std::mem::take(&mut self.floor),
            },
            static_phase_rad: self.static_phase,
            final_state: state,
            saturation: summary,
            metadata: RunMetadata {
                kind: self.kind,
                mode: self.mode,
                seed: self.run.seed,
                dt_s: dt,
                duration_s: self.run.duration_s,
                half_delay_samples: nh,
                config_hash: None,
            },
        })
    }
}

/// Remote read-out: phase difference, single-pole low-pass, decimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementChain {
    pub cutoff_hz: f64,
    pub output_rate_hz: f64,
}

impl Default for MeasurementChain {
    fn default() -> Self {
        Self { cutoff_hz: 3.0, output_rate_hz: 1.0 }
    }
}

impl MeasurementChain {
    /// Pole of the discrete filter `y = a y + (1 - a) x` at step `dt`.
    pub fn pole(&self, dt: f64) -> f64 {
        (-2.0 * PI * self.cutoff_hz * dt).exp()
    }

    /// Input samples per output sample.
    pub fn decimation(&self, grid: &TimeGrid) -> Result<usize> {
        let rate = 1.0 / grid.dt();
        if rate <= 2.0 * self.cutoff_hz {
            return Err(invalid(
                "sample rate",
                format!("{rate} Hz is too low for a {} Hz measurement filter", self.cutoff_hz),
            ));
        }
        let ratio = rate / self.output_rate_hz;
        let factor = ratio.round();
        if factor < 1.0 || (ratio - factor).abs() > 1e-6 * ratio {
            return Err(invalid("sample rate", "must be an integer multiple of the output rate"));
        }
        Ok(factor as usize)
    }

    pub fn apply(&self, remote: &PhaseSeries, reference: &PhaseSeries) -> Result<PhaseSeries> {
        require_positive("cutoff", self.cutoff_hz)?;
        require_positive("output_rate", self.output_rate_hz)?;
        let diff = remote.difference(reference)?;
        let grid = *diff.grid();
        let factor = self.decimation(&grid)?;
        let a = self.pole(grid.dt());
        let x = diff.values();
        let mut y = x.first().copied().unwrap_or(0.0);
        let mut out = Vec::with_capacity(x.len() / factor + 1);
        for (k, v) in x.iter().enumerate() {
            y = a * y + (1.0 - a) * v;
            if k % factor == 0 {
                out.push(y);
            }
        }
        let out_grid = TimeGrid::with_epoch(grid.dt() * factor as f64, out.len(), grid.start_epoch())?;
        PhaseSeries::new(out_grid, out, diff.unit())
    }
}

/// [`MeasurementChain::apply`] with the 3-Hz, 1-S/s defaults.
pub fn measurement_chain(remote: &PhaseSeries, reference: &PhaseSeries) -> Result<PhaseSeries> {
    MeasurementChain::default().apply(remote, reference)
}
