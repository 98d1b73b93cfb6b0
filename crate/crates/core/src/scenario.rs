//! Scenario files, the run pipeline and the output bundle.
//!
//! # Config grammar
//!
//! UTF-8, one statement per line:
//!
//! ```text
//! file      := line*
//! line      := blank | comment | header | pair
//! comment   := '#' any*                      (also allowed after a value)
//! header    := '[' name ('.' name)* ']'
//! pair      := key '=' value
//! value     := scalar | list | ''            (empty only for lists)
//! list      := scalar (',' scalar)*
//! scalar    := number | 'true' | 'false' | 'auto' | word
//! ```
//!
//! A pair before the first header may only be `include = <path>`, which
//! loads another scenario file (relative to the including file) whose
//! values the current file then overrides. Every key listed in
//! [`KEYS`] must be set once the includes are merged; unknown keys,
//! repeated keys within one file and missing keys are errors.
//!
//! `[injections]` is free-form: each pair is `label = <path> <waveform> <a> <b>`
//! with path `reciprocal|forward|backward` and waveform `step <start_s>
//! <amplitude_ps>`, `sine <frequency_hz> <amplitude_ps>` or `ramp <start_s>
//! <rate_ps_per_s>`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::compensator::{
    simulate, ActuatorParams, CompensatorKind, InjectionPath, LoopMode, LoopParams, MeasurementChain, RunConfig,
    ScenarioResult, Waveform, DEFAULT_SERVO_DT,
};
use crate::error::{Error, Result};
use crate::laser_spectrum::{LaserParams, ModulationParams};
use crate::link_topology::{delay_limited_bandwidth, power_budget, BudgetReport, Edfa, LinkSection, LinkTopology};
use crate::noise::{FiberNoiseParams, FloorParams, LaserNoiseParams, NoiseBundle, PmdParams};
use crate::series::{PhaseSeries, PhaseUnit, TimeGrid};
use crate::stability::{octave_taus, overlapping_adev, psd_phase, AllanTable, PsdEstimate, Window, CI_CONVENTION};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Every required key, as `section.key`.
pub const KEYS: &[&str] = &[
    "scenario.name",
    "scenario.compensator",
    "scenario.mode",
    "scenario.duration_s",
    "scenario.dt_s",
    "scenario.seed",
    "scenario.enforce_budget",
    "topology.sections_km",
    "topology.dispersion_ps_nm_km",
    "topology.attenuation_db_per_km",
    "topology.group_index",
    "topology.correction_spool_km",
    "topology.edfa_gain_db",
    "topology.edfa_positions_km",
    "topology.sbs_ceiling_mw",
    "topology.detector_sensitivity_dbm",
    "topology.detection_snr_at_0dbm_db",
    "laser.forward.wavelength_nm",
    "laser.forward.amplitude_mod_index",
    "laser.forward.frequency_mod_index",
    "laser.forward.chirp_hz_per_ma",
    "laser.forward.optical_power_mw",
    "laser.backward.wavelength_nm",
    "laser.backward.amplitude_mod_index",
    "laser.backward.frequency_mod_index",
    "laser.backward.chirp_hz_per_ma",
    "laser.backward.optical_power_mw",
    "modulation.forward_rf_hz",
    "modulation.backward_rf_hz",
    "noise.fiber.white_pm_level",
    "noise.fiber.flicker_pm_level",
    "noise.fiber.random_walk_level",
    "noise.fiber.flicker_fm_level",
    "noise.fiber.diurnal_amplitude_ps",
    "noise.fiber.diurnal_period_s",
    "noise.fiber.diurnal_phase_rad",
    "noise.pmd.mean_dgd_ps",
    "noise.pmd.n_waveplate_segments",
    "noise.pmd.drift_time_constant_s",
    "noise.pmd.diurnal_modulation_depth",
    "noise.pmd.scrambler_fwd",
    "noise.pmd.scrambler_bwd",
    "noise.pmd.scrambler_rates_hz",
    "noise.laser.white_fm_level",
    "noise.laser.slow_drift_level",
    "noise.laser.thermal_coupling_coefficient",
    "noise.floor.system_floor_db_at_1hz",
    "noise.floor.slope_exponent",
    "noise.floor.edfa_excess_stability",
    "noise.floor.electronics_wander_level",
    "actuators.fast_range_ps",
    "actuators.fast_bandwidth_hz",
    "actuators.fast_enabled",
    "actuators.slow_sensitivity_ps_per_k",
    "actuators.slow_range_ns",
    "actuators.slow_thermal_time_constant_s",
    "actuators.slow_offload_time_s",
    "actuators.polarization_perturbation_gain",
    "actuators.slow_polarization_gain",
    "loop.roundtrip_delay_s",
    "loop.proportional_gain",
    "loop.integrator_gain",
    "loop.target_unity_gain_bandwidth_hz",
    "measurement.cutoff_hz",
    "measurement.output_rate_hz",
    "analysis.extra_taus_s",
    "analysis.psd_segment_length",
];

const INJECTIONS: &str = "injections";

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    line: usize,
    file: String,
}

/// Parsed `section.key -> value` pairs after include merging.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, Entry>,
}

fn cfg_err(line: usize, message: impl Into<String>) -> Error {
    Error::Config { line, message: message.into() }
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl RawConfig {
    /// Parses `text`; includes resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        Self::parse_inner(text, base_dir, "<input>", 0)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::load(path, 0)
    }

    fn load(path: &Path, depth: usize) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::parse_inner(&text, dir, &path.display().to_string(), depth)
    }

    fn parse_inner(text: &str, base_dir: &Path, file: &str, depth: usize) -> Result<Self> {
        if depth > 8 {
            return Err(cfg_err(0, "include nesting deeper than 8 levels"));
        }
        let mut merged = RawConfig::default();
        let mut own: BTreeMap<String, Entry> = BTreeMap::new();
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| cfg_err(line, "section header must end with ']'"))?
                    .trim();
                if !name.split('.').all(valid_name) {
                    return Err(cfg_err(line, format!("bad section name `{name}`")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) =
                content.split_once('=').ok_or_else(|| cfg_err(line, format!("expected `key = value`, got `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !valid_name(key) {
                return Err(cfg_err(line, format!("bad key `{key}`")));
            }
            let Some(sec) = &section else {
                if key != "include" {
                    return Err(cfg_err(line, format!("`{key}` outside any section (only `include` is allowed here)")));
                }
                if !own.is_empty() {
                    return Err(cfg_err(line, "include must precede every section"));
                }
                let included = Self::load(&base_dir.join(value), depth + 1).map_err(|e| match e {
                    Error::Io(io) => cfg_err(line, format!("include `{value}`: {io}")),
                    other => other,
                })?;
                merged.entries.extend(included.entries);
                continue;
            };
            let full = format!("{sec}.{key}");
            if sec != INJECTIONS && !KEYS.contains(&full.as_str()) {
                return Err(cfg_err(line, format!("unknown key `{full}`")));
            }
            if own.contains_key(&full) {
                return Err(cfg_err(line, format!("`{full}` set twice")));
            }
            own.insert(full, Entry { value: value.to_string(), line, file: file.to_string() });
        }
        merged.entries.extend(own);
        Ok(merged)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    /// Overrides (or adds) a known key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) && !key.starts_with("injections.") {
            return Err(cfg_err(0, format!("unknown key `{key}`")));
        }
        self.entries.insert(key.to_string(), Entry { value: value.to_string(), line: 0, file: "<override>".into() });
        Ok(())
    }

    /// Whether `key` currently holds a single number (sweep target check).
    pub fn is_numeric(&self, key: &str) -> bool {
        self.get(key).is_some_and(|v| v.parse::<f64>().is_ok())
    }

    /// Sorted `section.key = value` lines; the basis of the config hash.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        for (k, e) in &self.entries {
            let _ = writeln!(s, "{k} = {}", e.value);
        }
        s
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    fn entry(&self, key: &str) -> Result<&Entry> {
        self.entries.get(key).ok_or_else(|| cfg_err(0, format!("missing key `{key}`")))
    }

    fn str(&self, key: &str) -> Result<&str> {
        let e = self.entry(key)?;
        if e.value.is_empty() {
            return Err(cfg_err(e.line, format!("`{key}` is empty ({})", e.file)));
        }
        Ok(&e.value)
    }

    fn num(&self, key: &str) -> Result<f64> {
        let e = self.entry(key)?;
        let v = self.str(key)?;
        v.parse::<f64>().map_err(|_| cfg_err(e.line, format!("`{key}`: `{v}` is not a number ({})", e.file)))
    }

    fn auto_num(&self, key: &str) -> Result<Option<f64>> {
        if self.str(key)? == "auto" {
            Ok(None)
        } else {
            self.num(key).map(Some)
        }
    }

    fn uint(&self, key: &str) -> Result<u64> {
        let e = self.entry(key)?;
        let v = self.str(key)?;
        v.parse::<u64>().map_err(|_| cfg_err(e.line, format!("`{key}`: `{v}` is not a non-negative integer")))
    }

    fn boolean(&self, key: &str) -> Result<bool> {
        let e = self.entry(key)?;
        match self.str(key)? {
            "true" => Ok(true),
            "false" => Ok(false),
            v => Err(cfg_err(e.line, format!("`{key}`: `{v}` is not true/false"))),
        }
    }

    fn list(&self, key: &str) -> Result<Vec<f64>> {
        let e = self.entry(key)?;
        if e.value.is_empty() {
            return Ok(Vec::new());
        }
        e.value
            .split(',')
            .map(|p| {
                let p = p.trim();
                p.parse::<f64>().map_err(|_| cfg_err(e.line, format!("`{key}`: `{p}` is not a number")))
            })
            .collect()
    }

    fn injections(&self) -> Result<Vec<crate::compensator::Injection>> {
        let mut out = Vec::new();
        for (k, e) in self.entries.range("injections.".to_string()..) {
            if !k.starts_with("injections.") {
                break;
            }
            let parts: Vec<&str> = e.value.split_whitespace().collect();
            let bad = || cfg_err(e.line, format!("`{k}`: expected `<path> <step|sine|ramp> <a> <b>`, got `{}`", e.value));
            if parts.len() != 4 {
                return Err(bad());
            }
            let path = match parts[0] {
                "reciprocal" => InjectionPath::Reciprocal,
                "forward" => InjectionPath::Forward,
                "backward" => InjectionPath::Backward,
                _ => return Err(bad()),
            };
            let a: f64 = parts[2].parse().map_err(|_| bad())?;
            let b: f64 = parts[3].parse().map_err(|_| bad())?;
            let waveform = match parts[1] {
                "step" => Waveform::Step { start_s: a, amplitude_s: b * 1e-12 },
                "sine" => Waveform::Sine { frequency_hz: a, amplitude_s: b * 1e-12 },
                "ramp" => Waveform::Ramp { start_s: a, rate: b * 1e-12 },
                _ => return Err(bad()),
            };
            out.push(crate::compensator::Injection { path, waveform });
        }
        Ok(out)
    }
}

/// Loop settings as written; `None` fields are derived at build time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopSpec {
    pub roundtrip_delay_s: Option<f64>,
    pub proportional_gain: f64,
    pub integrator_gain: Option<f64>,
    pub target_unity_gain_bandwidth_hz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub topology: LinkTopology,
    pub noise: NoiseBundle,
    pub compensator: CompensatorKind,
    pub actuators: ActuatorParams,
    pub loop_spec: LoopSpec,
    pub run: RunConfig,
    pub enforce_budget: bool,
    pub measurement: MeasurementChain,
    pub extra_taus_s: Vec<f64>,
    pub psd_segment_length: usize,
    raw: RawConfig,
}

fn laser(raw: &RawConfig, prefix: &str) -> Result<LaserParams> {
    let k = |name: &str| format!("laser.{prefix}.{name}");
    let mut l = LaserParams::at_wavelength(raw.num(&k("wavelength_nm"))?);
    l.amplitude_mod_index = raw.num(&k("amplitude_mod_index"))?;
    l.frequency_mod_index = raw.num(&k("frequency_mod_index"))?;
    l.chirp_hz_per_ma = raw.num(&k("chirp_hz_per_ma"))?;
    l.optical_power_mw = raw.num(&k("optical_power_mw"))?;
    Ok(l)
}

impl Scenario {
    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_raw(RawConfig::from_file(path)?)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        Self::from_raw(RawConfig::parse(text, base_dir)?)
    }

    pub fn from_raw(raw: RawConfig) -> Result<Self> {
        for key in KEYS {
            raw.entry(key)?;
        }
        let r = &raw;
        let compensator = match r.str("scenario.compensator")? {
            "optical" => CompensatorKind::Optical,
            "electronic" => CompensatorKind::Electronic,
            "none" => CompensatorKind::None,
            v => return Err(cfg_err(r.entry("scenario.compensator")?.line, format!("unknown compensator `{v}`"))),
        };
        let mode = match r.str("scenario.mode")? {
            "servo" => LoopMode::Servo,
            "ideal" => LoopMode::IdealInBand,
            v => return Err(cfg_err(r.entry("scenario.mode")?.line, format!("unknown mode `{v}`"))),
        };

        let section = |length_km| LinkSection {
            length_km,
            dispersion_ps_nm_km: 0.0,
            attenuation_db_per_km: 0.0,
            group_index: 0.0,
        };
        let fill = |mut s: LinkSection| -> Result<LinkSection> {
            s.dispersion_ps_nm_km = r.num("topology.dispersion_ps_nm_km")?;
            s.attenuation_db_per_km = r.num("topology.attenuation_db_per_km")?;
            s.group_index = r.num("topology.group_index")?;
            Ok(s)
        };
        let sections = r.list("topology.sections_km")?.into_iter().map(|l| fill(section(l))).collect::<Result<Vec<_>>>()?;
        let spool_km = r.num("topology.correction_spool_km")?;
        let gains = r.list("topology.edfa_gain_db")?;
        let positions = r.list("topology.edfa_positions_km")?;
        if gains.len() != positions.len() {
            return Err(cfg_err(
                r.entry("topology.edfa_positions_km")?.line,
                "edfa_gain_db and edfa_positions_km must have the same length",
            ));
        }
        let topology = LinkTopology {
            sections,
            edfas: gains.iter().zip(&positions).map(|(g, p)| Edfa::new(*g, *p)).collect(),
            correction_spool: if spool_km > 0.0 { Some(fill(section(spool_km))?) } else { None },
            laser_fwd: laser(r, "forward")?,
            laser_bwd: laser(r, "backward")?,
            sbs_ceiling_mw: r.num("topology.sbs_ceiling_mw")?,
            detector_sensitivity_dbm: r.num("topology.detector_sensitivity_dbm")?,
            detection_snr_at_0dbm_db: r.num("topology.detection_snr_at_0dbm_db")?,
            modulation: ModulationParams {
                forward_rf_hz: r.num("modulation.forward_rf_hz")?,
                backward_rf_hz: r.num("modulation.backward_rf_hz")?,
            },
        };

        let rates = r.list("noise.pmd.scrambler_rates_hz")?;
        let rates: [f64; 3] = rates
            .try_into()
            .map_err(|_| cfg_err(r.entry("noise.pmd.scrambler_rates_hz").map_or(0, |e| e.line), "need three rates"))?;
        let slope = r.num("noise.floor.slope_exponent")?;
        if slope.fract() != 0.0 {
            return Err(cfg_err(r.entry("noise.floor.slope_exponent")?.line, "slope_exponent must be an integer"));
        }
        let noise = NoiseBundle {
            fiber: FiberNoiseParams {
                white_pm_level: r.num("noise.fiber.white_pm_level")?,
                flicker_pm_level: r.num("noise.fiber.flicker_pm_level")?,
                random_walk_level: r.num("noise.fiber.random_walk_level")?,
                flicker_fm_level: r.num("noise.fiber.flicker_fm_level")?,
                diurnal_amplitude_ps: r.num("noise.fiber.diurnal_amplitude_ps")?,
                diurnal_period_s: r.num("noise.fiber.diurnal_period_s")?,
                diurnal_phase_rad: r.num("noise.fiber.diurnal_phase_rad")?,
            },
            pmd: PmdParams {
                mean_dgd_ps: r.num("noise.pmd.mean_dgd_ps")?,
                n_waveplate_segments: r.uint("noise.pmd.n_waveplate_segments")? as usize,
                drift_time_constant_s: r.num("noise.pmd.drift_time_constant_s")?,
                diurnal_modulation_depth: r.num("noise.pmd.diurnal_modulation_depth")?,
                scrambler_enabled_fwd: r.boolean("noise.pmd.scrambler_fwd")?,
                scrambler_enabled_bwd: r.boolean("noise.pmd.scrambler_bwd")?,
                scrambler_rates_hz: rates,
            },
            laser: LaserNoiseParams {
                white_fm_level: r.num("noise.laser.white_fm_level")?,
                slow_drift_level: r.num("noise.laser.slow_drift_level")?,
                thermal_coupling_coefficient: r.num("noise.laser.thermal_coupling_coefficient")?,
            },
            floor: FloorParams {
                system_floor_db_at_1hz: r.num("noise.floor.system_floor_db_at_1hz")?,
                slope_exponent: slope as i32,
                edfa_excess_stability: r.num("noise.floor.edfa_excess_stability")?,
                electronics_wander_level: r.num("noise.floor.electronics_wander_level")?,
            },
        };

        let actuators = ActuatorParams {
            fast_range_s: r.num("actuators.fast_range_ps")? * 1e-12,
            fast_bandwidth_hz: r.num("actuators.fast_bandwidth_hz")?,
            fast_enabled: r.boolean("actuators.fast_enabled")?,
            slow_sensitivity_ps_per_k: r.num("actuators.slow_sensitivity_ps_per_k")?,
            slow_range_s: r.num("actuators.slow_range_ns")? * 1e-9,
            slow_thermal_time_constant_s: r.num("actuators.slow_thermal_time_constant_s")?,
            slow_offload_time_s: r.num("actuators.slow_offload_time_s")?,
            polarization_perturbation_gain: r.num("actuators.polarization_perturbation_gain")?,
            slow_polarization_gain: r.num("actuators.slow_polarization_gain")?,
        };
        let loop_spec = LoopSpec {
            roundtrip_delay_s: r.auto_num("loop.roundtrip_delay_s")?,
            proportional_gain: r.num("loop.proportional_gain")?,
            integrator_gain: r.auto_num("loop.integrator_gain")?,
            target_unity_gain_bandwidth_hz: r.auto_num("loop.target_unity_gain_bandwidth_hz")?,
        };
        let run = RunConfig {
            duration_s: r.num("scenario.duration_s")?,
            dt_s: r.num("scenario.dt_s")?,
            mode,
            seed: r.uint("scenario.seed")?,
            injections: r.injections()?,
        };
        let psd_segment_length = r.uint("analysis.psd_segment_length")? as usize;
        let scenario = Scenario {
            name: r.str("scenario.name")?.to_string(),
            topology,
            noise,
            compensator,
            actuators,
            loop_spec,
            run,
            enforce_budget: r.boolean("scenario.enforce_budget")?,
            measurement: MeasurementChain {
                cutoff_hz: r.num("measurement.cutoff_hz")?,
                output_rate_hz: r.num("measurement.output_rate_hz")?,
            },
            extra_taus_s: r.list("analysis.extra_taus_s")?,
            psd_segment_length,
            raw,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Checks every module invariant without running anything.
    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        self.noise.validate()?;
        self.actuators.validate()?;
        self.loop_params()?;
        let grid = TimeGrid::spanning(self.run.duration_s, self.run.dt_s)?;
        self.measurement.decimation(&grid)?;
        if self.psd_segment_length < 4 {
            return Err(crate::error::invalid("psd_segment_length", "must be at least 4"));
        }
        Ok(())
    }

    /// Loop parameters with `auto` fields resolved: round trip from the
    /// topology, bandwidth from the delay rule, integrator from the design.
    pub fn loop_params(&self) -> Result<LoopParams> {
        let s = self.loop_spec;
        let t_rt = s.roundtrip_delay_s.unwrap_or_else(|| self.topology.roundtrip_delay());
        let target = s.target_unity_gain_bandwidth_hz.unwrap_or_else(|| delay_limited_bandwidth(t_rt));
        let design_dt = if self.run.mode == LoopMode::Servo { self.run.dt_s } else { DEFAULT_SERVO_DT };
        let mut lp = match s.integrator_gain {
            Some(ki) => LoopParams {
                roundtrip_delay_s: t_rt,
                proportional_gain: s.proportional_gain,
                integrator_gain: ki,
                target_unity_gain_bandwidth_hz: target,
            },
            None => LoopParams::design(t_rt, target, design_dt)?,
        };
        lp.proportional_gain = s.proportional_gain;
        lp.validate()?;
        Ok(lp)
    }

    pub fn raw(&self) -> &RawConfig {
        &self.raw
    }

    pub fn config_hash(&self) -> String {
        self.raw.hash()
    }

    /// Copy with one key replaced, re-validated.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        let mut raw = self.raw.clone();
        raw.set(key, value)?;
        Self::from_raw(raw)
    }

    pub fn with_seed(&self, seed: u64) -> Result<Self> {
        self.with_override("scenario.seed", &seed.to_string())
    }
}

/// Everything a run produces, before it is written out.
#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub result: ScenarioResult,
    /// Remote minus reference after the measurement chain (rad at the forward RF).
    pub measured: PhaseSeries,
    pub allan: AllanTable,
    pub psd: PsdEstimate,
    pub budget: BudgetReport,
    pub loop_params: LoopParams,
    pub unity_gain_hz: Option<f64>,
}

impl ScenarioOutput {
    pub fn sigma_at(&self, tau: f64) -> Option<f64> {
        self.allan.at(tau)
    }
}

/// Allan table (octaves plus the requested extras) and Welch PSD of a
/// measured phase series.
pub fn analyze(measured: &PhaseSeries, extra_taus_s: &[f64], psd_segment_length: usize) -> Result<(AllanTable, PsdEstimate)> {
    let grid = measured.grid();
    let mut taus = octave_taus(grid);
    let max_tau = taus.last().copied().unwrap_or(0.0) * 2.0;
    taus.extend(extra_taus_s.iter().filter(|t| **t <= max_tau));
    let allan = overlapping_adev(measured, &taus)?;
    let n = measured.len();
    let mut seg = psd_segment_length.min(n);
    if seg < n {
        seg = seg.max(4);
    } else {
        // Largest power of two that fits.
        seg = 1usize << (usize::BITS - 1 - n.leading_zeros());
    }
    let psd = psd_phase(measured, seg, Window::Hann)?;
    Ok((allan, psd))
}

/// Budget, simulation, measurement chain and analysis. Pure: no files.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioOutput> {
    let budget = power_budget(&scenario.topology)?;
    if scenario.enforce_budget && !budget.pass {
        let worst = budget.detectors.iter().map(|d| d.margin_db).fold(f64::INFINITY, f64::min);
        return Err(Error::BudgetFailure { reason: format!("detector margin {worst:.1} dB below sensitivity") });
    }
    let lp = scenario.loop_params()?;
    let mut result = simulate(scenario.compensator, &scenario.topology, &scenario.noise, &scenario.actuators, &lp, &scenario.run)?;
    let config_hash = scenario.config_hash();
    result.metadata.config_hash = Some(config_hash.clone());
    let measured = scenario.measurement.apply(&result.remote_phase, &result.local_reference_phase)?;
    let (allan, psd) = analyze(&measured, &scenario.extra_taus_s, scenario.psd_segment_length)?;
    let design_dt = if scenario.run.mode == LoopMode::Servo { scenario.run.dt_s } else { DEFAULT_SERVO_DT };
    Ok(ScenarioOutput {
        name: scenario.name.clone(),
        config_hash,
        seed: scenario.run.seed,
        unity_gain_hz: lp.unity_gain_frequency(design_dt),
        loop_params: lp,
        result,
        measured,
        allan,
        psd,
        budget,
    })
}

fn provenance_line(hash: &str, seed: u64) -> String {
    format!("# config_hash={hash} seed={seed} version={TOOLKIT_VERSION}")
}

/// Writes `samples.csv`: the measured phase at the output rate with the
/// error signal and actuator states sampled at the same instants.
pub fn write_samples<W: Write>(out: &ScenarioOutput, chain: &MeasurementChain, mut w: W) -> Result<()> {
    let carrier = match out.measured.unit() {
        PhaseUnit::Radians { carrier_hz } => carrier_hz,
        PhaseUnit::Seconds => return Err(Error::UnitMismatch { expected: "rad", found: "s" }),
    };
    writeln!(w, "{} carrier_hz={carrier}", provenance_line(&out.config_hash, out.seed))?;
    writeln!(w, "time_s,phase_rad,error_rad,fast_ps,slow_ps")?;
    let factor = chain.decimation(out.result.grid())?;
    let (e, f, s) = (
        out.result.error_signal.values(),
        out.result.fast_correction.values(),
        out.result.slow_correction.values(),
    );
    for (j, (t, p)) in out.measured.grid().times().zip(out.measured.values()).enumerate() {
        let k = j * factor;
        writeln!(w, "{t},{p:e},{:e},{:.6},{:.6}", e[k], f[k] * 1e12, s[k] * 1e12)?;
    }
    Ok(())
}

/// Reads back the time and phase columns of a `samples.csv`.
pub fn read_samples(text: &str) -> Result<PhaseSeries> {
    let mut carrier = None;
    let mut times = Vec::new();
    let mut phase = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if let Some(c) = line.strip_prefix('#') {
            if let Some(v) = c.split_whitespace().find_map(|t| t.strip_prefix("carrier_hz=")) {
                carrier = Some(v.parse::<f64>().map_err(|_| cfg_err(line_no, "bad carrier_hz"))?);
            }
            continue;
        }
        if line.starts_with("time_s") || line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let mut next = |name: &str| -> Result<f64> {
            cols.next()
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| cfg_err(line_no, format!("missing or bad {name}")))
        };
        times.push(next("time_s")?);
        phase.push(next("phase_rad")?);
    }
    let carrier = carrier.ok_or_else(|| cfg_err(1, "samples header lacks carrier_hz"))?;
    if times.len() < 2 {
        return Err(cfg_err(0, "need at least two samples"));
    }
    let dt = times[1] - times[0];
    for (k, t) in times.iter().enumerate() {
        if (t - (times[0] + k as f64 * dt)).abs() > 1e-6 * dt.max(1.0) {
            return Err(cfg_err(k + 3, "samples are not uniformly spaced"));
        }
    }
    let grid = TimeGrid::with_epoch(dt, times.len(), times[0])?;
    PhaseSeries::radians(grid, phase, carrier)
}

pub fn write_allan<W: Write>(allan: &AllanTable, hash: &str, seed: u64, mut w: W) -> Result<()> {
    writeln!(w, "{}", provenance_line(hash, seed))?;
    allan.write_csv(w)
}

pub fn write_psd<W: Write>(psd: &PsdEstimate, hash: &str, seed: u64, mut w: W) -> Result<()> {
    writeln!(w, "{}", provenance_line(hash, seed))?;
    psd.write_csv(w)
}

pub fn write_meta<W: Write>(out: &ScenarioOutput, scenario: &Scenario, mut w: W) -> Result<()> {
    let m = &out.result.metadata;
    let lp = &out.loop_params;
    writeln!(w, "name = {}", out.name)?;
    writeln!(w, "config_hash = {}", out.config_hash)?;
    writeln!(w, "seed = {}", out.seed)?;
    writeln!(w, "toolkit_version = {TOOLKIT_VERSION}")?;
    writeln!(w, "compensator = {}", m.kind.name())?;
    writeln!(w, "mode = {}", m.mode.name())?;
    writeln!(w, "dt_s = {}", m.dt_s)?;
    writeln!(w, "duration_s = {}", m.duration_s)?;
    writeln!(w, "roundtrip_delay_s = {:e}", lp.roundtrip_delay_s)?;
    writeln!(w, "proportional_gain = {}", lp.proportional_gain)?;
    writeln!(w, "integrator_gain_per_s = {}", lp.integrator_gain)?;
    match out.unity_gain_hz {
        Some(f) => writeln!(w, "unity_gain_hz = {f:.3}")?,
        None => writeln!(w, "unity_gain_hz = none")?,
    }
    writeln!(w, "measurement_cutoff_hz = {}", scenario.measurement.cutoff_hz)?;
    writeln!(w, "measurement_rate_hz = {}", scenario.measurement.output_rate_hz)?;
    writeln!(w, "budget_pass = {}", out.budget.pass)?;
    writeln!(w, "fast_saturated_samples = {}", out.result.saturation.fast_samples)?;
    writeln!(w, "slow_saturated_samples = {}", out.result.saturation.slow_samples)?;
    writeln!(w, "compliant = {}", out.result.compliant())?;
    writeln!(w, "ci_convention = {CI_CONVENTION}")?;
    writeln!(w, "[config]")?;
    w.write_all(scenario.raw().canonical().as_bytes())?;
    Ok(())
}

/// Output file names of one bundle.
pub const BUNDLE_FILES: [&str; 5] = ["samples.csv", "allan.csv", "psd.csv", "budget.txt", "meta.txt"];

/// Writes the five bundle files into `dir` (created if needed).
pub fn write_bundle(out: &ScenarioOutput, scenario: &Scenario, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let path = |name: &str| dir.join(name);
    let mut buf = Vec::new();
    write_samples(out, &scenario.measurement, &mut buf)?;
    fs::write(path("samples.csv"), &buf)?;
    buf.clear();
    write_allan(&out.allan, &out.config_hash, out.seed, &mut buf)?;
    fs::write(path("allan.csv"), &buf)?;
    buf.clear();
    write_psd(&out.psd, &out.config_hash, out.seed, &mut buf)?;
    fs::write(path("psd.csv"), &buf)?;
    buf.clear();
    writeln!(buf, "{}", provenance_line(&out.config_hash, out.seed))?;
    out.budget.write_text(&mut buf)?;
    fs::write(path("budget.txt"), &buf)?;
    buf.clear();
    write_meta(out, scenario, &mut buf)?;
    fs::write(path("meta.txt"), &buf)?;
    Ok(BUNDLE_FILES.iter().map(|f| path(f)).collect())
}

/// Fibre phase excursion at the forward RF relative to the detection noise
/// in the measurement bandwidth. Both are rms values in rad.
pub fn fiber_to_detection_ratio(out: &ScenarioOutput, scenario: &Scenario) -> f64 {
    let fiber = &out.result.contributions.fiber;
    let n = fiber.len().max(1) as f64;
    let mean = fiber.iter().sum::<f64>() / n;
    let rms_delay = (fiber.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let omega = scenario.topology.modulation.forward_angular();
    let snr_db = out.budget.detectors.iter().map(|d| d.snr_db).fold(f64::INFINITY, f64::min);
    let enbw = std::f64::consts::PI / 2.0 * scenario.measurement.cutoff_hz;
    let detection = (10f64.powf(-snr_db / 10.0) * enbw).sqrt();
    omega * rms_delay / detection
}
