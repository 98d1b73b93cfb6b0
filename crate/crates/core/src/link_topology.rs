//! Cascaded link layouts, optical/RF power budgets and length-scaling
//! forecasts.

use std::io::Write;

use crate::error::{invalid, require_finite, Error, Result};
use crate::laser_spectrum::{differential_delay, sideband_amplitudes, LaserParams, ModulationParams, SPEED_OF_LIGHT};
use crate::noise::floor::MEASUREMENT_NOISE_BANDWIDTH_HZ;

/// Highest gain accepted for one amplifier.
pub const MAX_EDFA_GAIN_DB: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSection {
    pub length_km: f64,
    /// ps/(km nm); negative for dispersion-compensating fibre.
    pub dispersion_ps_nm_km: f64,
    pub attenuation_db_per_km: f64,
    pub group_index: f64,
}

impl Default for LinkSection {
    fn default() -> Self {
        Self { length_km: 1.0, dispersion_ps_nm_km: 17.0, attenuation_db_per_km: 0.2, group_index: 1.468 }
    }
}

impl LinkSection {
    pub fn standard(length_km: f64) -> Self {
        Self { length_km, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_km.is_finite() && self.length_km > 0.0) {
            return Err(invalid("length_km", format!("section length must be > 0, got {}", self.length_km)));
        }
        require_finite("dispersion_ps_nm_km", self.dispersion_ps_nm_km)?;
        if !(self.attenuation_db_per_km.is_finite() && self.attenuation_db_per_km >= 0.0) {
            return Err(invalid("attenuation_db_per_km", "must be finite and >= 0"));
        }
        if !(self.group_index.is_finite() && self.group_index >= 1.0) {
            return Err(invalid("group_index", "must be >= 1"));
        }
        Ok(())
    }

    pub fn loss_db(&self) -> f64 {
        self.length_km * self.attenuation_db_per_km
    }

    /// One-way group delay (s).
    pub fn group_delay(&self) -> f64 {
        self.length_km * 1e3 * self.group_index / SPEED_OF_LIGHT
    }

    /// Splits the section at `at_km` from its start.
    pub fn split(&self, at_km: f64) -> (LinkSection, LinkSection) {
        (LinkSection { length_km: at_km, ..*self }, LinkSection { length_km: self.length_km - at_km, ..*self })
    }
}

/// Bidirectional amplifier placed `position_km` from the local end of the
/// link (spool excluded).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edfa {
    pub gain_db: f64,
    pub position_km: f64,
    /// Allan deviation at 1 s added by the amplifier's excess phase noise.
    pub excess_stability: f64,
}

impl Edfa {
    pub fn new(gain_db: f64, position_km: f64) -> Self {
        Self { gain_db, position_km, excess_stability: 3e-15 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain_db.is_finite() && self.gain_db >= 0.0 && self.gain_db <= MAX_EDFA_GAIN_DB) {
            return Err(invalid("gain_db", format!("EDFA gain must lie in [0, {MAX_EDFA_GAIN_DB}] dB, got {}", self.gain_db)));
        }
        if !(self.position_km.is_finite() && self.position_km >= 0.0) {
            return Err(invalid("position_km", "must be finite and >= 0"));
        }
        if !(self.excess_stability.is_finite() && self.excess_stability >= 0.0) {
            return Err(invalid("excess_stability", "must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkTopology {
    /// Sections from the local end to the remote end.
    pub sections: Vec<LinkSection>,
    pub edfas: Vec<Edfa>,
    /// Thermal correction spool at the local input, if fitted.
    pub correction_spool: Option<LinkSection>,
    /// Local (forward) diode; its `optical_power_mw` is the forward launch power.
    pub laser_fwd: LaserParams,
    /// Remote (backward) diode.
    pub laser_bwd: LaserParams,
    /// SBS ceiling on the strongest optical line (mW).
    pub sbs_ceiling_mw: f64,
    /// Lowest optical power the photodiodes accept (dBm).
    pub detector_sensitivity_dbm: f64,
    /// RF signal-to-noise ratio in 1 Hz for 0 dBm on the photodiode (dB).
    pub detection_snr_at_0dbm_db: f64,
    pub modulation: ModulationParams,
}

/// Defaults not fixed by the measurements: chosen so the 86-km link passes,
/// +100 km without amplification fails and a mid-span 20-dB EDFA restores it.
pub const DEFAULT_SBS_CEILING_MW: f64 = 4.0;
pub const DEFAULT_DETECTOR_SENSITIVITY_DBM: f64 = -15.0;
pub const DEFAULT_DETECTION_SNR_AT_0DBM_DB: f64 = 150.0;
pub const CORRECTION_SPOOL_KM: f64 = 4.0;

impl LinkTopology {
    /// Single-span link of `length_km` standard fibre plus the 4-km spool.
    pub fn single_span(length_km: f64) -> Self {
        Self {
            sections: vec![LinkSection::standard(length_km)],
            edfas: vec![],
            correction_spool: Some(LinkSection::standard(CORRECTION_SPOOL_KM)),
            laser_fwd: LaserParams::default(),
            laser_bwd: LaserParams::default(),
            sbs_ceiling_mw: DEFAULT_SBS_CEILING_MW,
            detector_sensitivity_dbm: DEFAULT_DETECTOR_SENSITIVITY_DBM,
            detection_snr_at_0dbm_db: DEFAULT_DETECTION_SNR_AT_0DBM_DB,
            modulation: ModulationParams::default(),
        }
    }

    /// The 86-km urban link (two cascaded 43-km fibres).
    pub fn paris_86km() -> Self {
        let mut t = Self::single_span(43.0);
        t.sections.push(LinkSection::standard(43.0));
        t
    }

    /// The 86-km link extended by a 100-km spool, with one 20-dB
    /// bidirectional EDFA at half distance.
    pub fn extended_186km() -> Self {
        let mut t = Self::paris_86km();
        t.sections.push(LinkSection::standard(100.0));
        t.edfas.push(Edfa::new(20.0, 93.0));
        t
    }

    pub fn validate(&self) -> Result<()> {
        if self.sections.is_empty() {
            return Err(invalid("sections", "a link needs at least one section"));
        }
        for s in self.sections.iter().chain(self.correction_spool.iter()) {
            s.validate()?;
        }
        let total = self.link_length_km();
        for e in &self.edfas {
            e.validate()?;
            if e.position_km > total {
                return Err(invalid("position_km", format!("EDFA at {} km beyond the {total} km link", e.position_km)));
            }
        }
        self.laser_fwd.validate(f64::INFINITY)?;
        self.laser_bwd.validate(f64::INFINITY)?;
        if !(self.sbs_ceiling_mw.is_finite() && self.sbs_ceiling_mw > 0.0) {
            return Err(invalid("sbs_ceiling_mw", "must be positive"));
        }
        require_finite("detector_sensitivity_dbm", self.detector_sensitivity_dbm)?;
        require_finite("detection_snr_at_0dbm_db", self.detection_snr_at_0dbm_db)?;
        self.modulation.validate()
    }

    /// Length of the link sections, spool excluded.
    pub fn link_length_km(&self) -> f64 {
        self.sections.iter().map(|s| s.length_km).sum()
    }

    /// Fibre length including the correction spool.
    pub fn total_length_km(&self) -> f64 {
        self.link_length_km() + self.correction_spool.map_or(0.0, |s| s.length_km)
    }

    /// One-way group delay including the spool (s).
    pub fn one_way_delay(&self) -> f64 {
        self.all_sections().map(|s| s.group_delay()).sum()
    }

    pub fn roundtrip_delay(&self) -> f64 {
        2.0 * self.one_way_delay()
    }

    pub fn n_edfa(&self) -> usize {
        self.edfas.len()
    }

    fn all_sections(&self) -> impl Iterator<Item = &LinkSection> {
        self.correction_spool.iter().chain(self.sections.iter())
    }

    /// Sections cut at every EDFA position, interleaved with the
    /// amplifiers, local to remote.
    fn elements(&self) -> Vec<Element> {
        let mut edfas = self.edfas.clone();
        edfas.sort_by(|a, b| a.position_km.total_cmp(&b.position_km));
        let mut pending = edfas.iter().peekable();
        let mut out = Vec::new();
        let mut start = 0.0;
        for s in &self.sections {
            let end = start + s.length_km;
            let mut cursor = start;
            while let Some(a) = pending.next_if(|a| a.position_km <= end) {
                if a.position_km > cursor {
                    out.push(Element::Fibre(LinkSection { length_km: a.position_km - cursor, ..*s }, cursor));
                    cursor = a.position_km;
                }
                out.push(Element::Amplifier(*a));
            }
            if end > cursor {
                out.push(Element::Fibre(LinkSection { length_km: end - cursor, ..*s }, cursor));
            }
            start = end;
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
enum Element {
    Fibre(LinkSection, f64),
    Amplifier(Edfa),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetDirection {
    Forward,
    Backward,
}

impl BudgetDirection {
    pub fn name(&self) -> &'static str {
        match self {
            BudgetDirection::Forward => "forward",
            BudgetDirection::Backward => "backward",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetNode {
    pub label: String,
    pub direction: BudgetDirection,
    /// Distance from the local end of the link (the spool sits before 0).
    pub position_km: f64,
    pub optical_dbm: f64,
    /// RF level relative to back-to-back detection: twice the optical change.
    pub rf_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorReport {
    pub direction: BudgetDirection,
    pub optical_dbm: f64,
    pub rf_db: f64,
    /// RF SNR in 1 Hz.
    pub snr_db: f64,
    /// White phase-noise floor of the error signal, dB rad^2/Hz.
    pub projected_floor_db: f64,
    /// Optical margin above the sensitivity (dB, negative when failing).
    pub margin_db: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetReport {
    pub nodes: Vec<BudgetNode>,
    pub detectors: [DetectorReport; 2],
    /// Strongest optical line anywhere on the link (mW).
    pub peak_line_power_mw: f64,
    pub sbs_ceiling_mw: f64,
    pub pass: bool,
}

impl BudgetReport {
    pub fn detector(&self, direction: BudgetDirection) -> &DetectorReport {
        &self.detectors[direction as usize]
    }

    /// Writes `direction,label,position_km,optical_dbm,rf_db`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "direction,label,position_km,optical_dbm,rf_db")?;
        for n in &self.nodes {
            writeln!(out, "{},{},{:.3},{:.3},{:.3}", n.direction.name(), n.label, n.position_km, n.optical_dbm, n.rf_db)?;
        }
        Ok(())
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "power budget: {}", if self.pass { "PASS" } else { "FAIL" })?;
        writeln!(
            out,
            "strongest line {:.3} mW (SBS ceiling {:.3} mW)",
            self.peak_line_power_mw, self.sbs_ceiling_mw
        )?;
        for d in &self.detectors {
            writeln!(
                out,
                "{:<8} detector {:>8.2} dBm  RF {:>7.2} dB  SNR {:>6.1} dB/Hz  floor {:>7.1} dB rad2/Hz  margin {:>6.2} dB  {}",
                d.direction.name(),
                d.optical_dbm,
                d.rf_db,
                d.snr_db,
                d.projected_floor_db,
                d.margin_db,
                if d.pass { "pass" } else { "fail" }
            )?;
        }
        for n in &self.nodes {
            writeln!(
                out,
                "  {:<8} {:<16} {:>8.2} km {:>8.2} dBm {:>8.2} dB RF",
                n.direction.name(),
                n.label,
                n.position_km,
                n.optical_dbm,
                n.rf_db
            )?;
        }
        Ok(())
    }
}

fn dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

fn mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Fraction of the optical power in the strongest line of `laser`'s spectrum.
fn strongest_line_fraction(laser: &LaserParams) -> Result<f64> {
    let c = sideband_amplitudes(laser.frequency_mod_index, laser.amplitude_mod_index, 1)?;
    let order = c.truncation_order as i64;
    Ok((-order..=order).map(|k| c.line(k).powi(2)).fold(0.0, f64::max))
}

/// Cumulative dB accounting in both directions.
///
/// Fails with [`Error::SbsCeiling`] if the strongest line exceeds the
/// ceiling at launch or at any amplifier output.
pub fn power_budget(topology: &LinkTopology) -> Result<BudgetReport> {
    topology.validate()?;
    let elements = topology.elements();
    let spool = topology.correction_spool;
    let link_len = topology.link_length_km();
    let mut nodes = Vec::new();
    let mut peak = 0.0f64;

    let mut run = |direction: BudgetDirection, laser: &LaserParams| -> Result<(f64, f64)> {
        let fraction = strongest_line_fraction(laser)?;
        let launch = dbm(laser.optical_power_mw);
        let mut p = launch;
        let check = |label: &str, p: f64, peak: &mut f64| -> Result<()> {
            let line = mw(p) * fraction;
            *peak = peak.max(line);
            if line > topology.sbs_ceiling_mw * (1.0 + 1e-12) {
                return Err(Error::SbsCeiling {
                    node: format!("{} {label}", direction.name()),
                    power_mw: line,
                    ceiling_mw: topology.sbs_ceiling_mw,
                });
            }
            Ok(())
        };
        let mut push = |label: String, pos: f64, p: f64| {
            nodes.push(BudgetNode { label, direction, position_km: pos, optical_dbm: p, rf_db: 2.0 * (p - launch) });
        };
        check("launch", p, &mut peak)?;
        match direction {
            BudgetDirection::Forward => {
                let spool_len = spool.map_or(0.0, |s| s.length_km);
                push("launch".into(), -spool_len, p);
                if let Some(s) = spool {
                    p -= s.loss_db();
                    push("spool out".into(), 0.0, p);
                }
                for e in &elements {
                    match e {
                        Element::Fibre(s, start) => {
                            p -= s.loss_db();
                            push("fibre".into(), start + s.length_km, p);
                        }
                        Element::Amplifier(a) => {
                            p += a.gain_db;
                            check("edfa out", p, &mut peak)?;
                            push("edfa out".into(), a.position_km, p);
                        }
                    }
                }
                push("detector".into(), link_len, p);
            }
            BudgetDirection::Backward => {
                push("launch".into(), link_len, p);
                for e in elements.iter().rev() {
                    match e {
                        Element::Fibre(s, start) => {
                            p -= s.loss_db();
                            push("fibre".into(), *start, p);
                        }
                        Element::Amplifier(a) => {
                            p += a.gain_db;
                            check("edfa out", p, &mut peak)?;
                            push("edfa out".into(), a.position_km, p);
                        }
                    }
                }
                let mut pos = 0.0;
                if let Some(s) = spool {
                    p -= s.loss_db();
                    pos = -s.length_km;
                    push("spool out".into(), pos, p);
                }
                push("detector".into(), pos, p);
            }
        }
        Ok((launch, p))
    };

    let (fwd_launch, fwd_det) = run(BudgetDirection::Forward, &topology.laser_fwd)?;
    let (bwd_launch, bwd_det) = run(BudgetDirection::Backward, &topology.laser_bwd)?;
    let detector = |direction, launch: f64, p: f64| {
        let snr = topology.detection_snr_at_0dbm_db + 2.0 * p;
        let margin = p - topology.detector_sensitivity_dbm;
        DetectorReport {
            direction,
            optical_dbm: p,
            rf_db: 2.0 * (p - launch),
            snr_db: snr,
            projected_floor_db: -snr,
            margin_db: margin,
            pass: margin >= 0.0,
        }
    };
    let detectors = [
        detector(BudgetDirection::Forward, fwd_launch, fwd_det),
        detector(BudgetDirection::Backward, bwd_launch, bwd_det),
    ];
    let pass = detectors.iter().all(|d| d.pass);
    Ok(BudgetReport { nodes, detectors, peak_line_power_mw: peak, sbs_ceiling_mw: topology.sbs_ceiling_mw, pass })
}

/// Differential delay of lines `omega` apart summed over every section and
/// the spool (s); negative-dispersion fibre subtracts.
pub fn total_differential_delay(topology: &LinkTopology, laser: &LaserParams, omega: f64) -> Result<f64> {
    let mut total = 0.0;
    for s in topology.all_sections() {
        s.validate()?;
        total += differential_delay(s.dispersion_ps_nm_km, s.length_km, laser.wavelength_nm, laser.carrier_frequency_hz, omega)?;
    }
    Ok(total)
}

/// Reference point for [`scaling_forecast`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastReference {
    pub edfa_spacing_km: f64,
    pub spool_km: f64,
    /// Compensated `sigma_y(1 day)` of the reference link.
    pub reference_one_day: f64,
    pub reference_length_km: f64,
}

impl Default for ForecastReference {
    fn default() -> Self {
        Self { edfa_spacing_km: 100.0, spool_km: CORRECTION_SPOOL_KM, reference_one_day: 2e-18, reference_length_km: 86.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingForecast {
    pub length_km: f64,
    pub roundtrip_delay_s: f64,
    pub loop_bandwidth_hz: f64,
    pub n_edfa: usize,
    /// Best achievable reduction of the fibre-noise `sigma_y(1 s)`.
    pub max_noise_suppression_at_1s: f64,
    pub projected_one_day: f64,
}

impl ScalingForecast {
    pub const LABEL: &'static str = "heuristic";

    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "scaling forecast ({})", Self::LABEL)?;
        writeln!(out, "  length              {:.1} km", self.length_km)?;
        writeln!(out, "  round trip          {:.3} ms", self.roundtrip_delay_s * 1e3)?;
        writeln!(out, "  loop bandwidth      {:.1} Hz", self.loop_bandwidth_hz)?;
        writeln!(out, "  EDFAs               {}", self.n_edfa)?;
        writeln!(out, "  suppression at 1 s  x{:.1}", self.max_noise_suppression_at_1s)?;
        writeln!(out, "  sigma_y(1 day)      {:.2e}", self.projected_one_day)?;
        Ok(())
    }
}

/// Loop bandwidth allowed by a round trip of `roundtrip_s`: an eighth of the
/// inverse delay, which leaves 45 degrees of phase to the transport lag.
pub fn delay_limited_bandwidth(roundtrip_s: f64) -> f64 {
    1.0 / (8.0 * roundtrip_s)
}

/// Length-scaling forecast for a link of `total_length_km` built from
/// `section` fibre.
///
/// The bandwidth follows the round trip, amplifiers are spaced evenly, and
/// the suppression at 1 s is the ratio of residual to free white-phase
/// fibre noise after the 3-Hz measurement filter for an integrating loop
/// with that bandwidth.
pub fn scaling_forecast(
    total_length_km: f64,
    section: &LinkSection,
    reference: &ForecastReference,
) -> Result<ScalingForecast> {
    if !(total_length_km.is_finite() && total_length_km > 0.0) {
        return Err(invalid("total_length_km", format!("must be > 0, got {total_length_km}")));
    }
    section.validate()?;
    let roundtrip = 2.0 * (total_length_km + reference.spool_km) * 1e3 * section.group_index / SPEED_OF_LIGHT;
    let bandwidth = delay_limited_bandwidth(roundtrip);
    let n_edfa = (total_length_km / reference.edfa_spacing_km).ceil() as usize;
    let suppression = white_pm_suppression_at_1s(bandwidth);
    let projected = reference.reference_one_day * total_length_km / reference.reference_length_km;
    Ok(ScalingForecast {
        length_km: total_length_km,
        roundtrip_delay_s: roundtrip,
        loop_bandwidth_hz: bandwidth,
        n_edfa,
        max_noise_suppression_at_1s: suppression,
        projected_one_day: projected,
    })
}

/// Ratio of free to residual `sigma_y(1 s)` for white phase noise seen
/// through the single-pole measurement filter, with residual shaping
/// `f^2 / (f^2 + f_bw^2)`.
fn white_pm_suppression_at_1s(bandwidth_hz: f64) -> f64 {
    let fc = MEASUREMENT_NOISE_BANDWIDTH_HZ * 2.0 / std::f64::consts::PI;
    let tau = 1.0;
    let (mut free, mut residual) = (0.0, 0.0);
    let df = 1e-3;
    let mut f = df / 2.0;
    while f < 200.0 {
        let x = std::f64::consts::PI * f * tau;
        // Allan kernel on S_x: 4 sin^4(pi f tau) / tau^2, filter |H|^2.
        let kernel = 4.0 * x.sin().powi(4) / (tau * tau) / (1.0 + (f / fc).powi(2));
        free += kernel * df;
        residual += kernel * f * f / (f * f + bandwidth_hz * bandwidth_hz) * df;
        f += df;
    }
    (free / residual).sqrt()
}
