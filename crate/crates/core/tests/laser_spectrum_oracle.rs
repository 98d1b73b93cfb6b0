//! Independent checks of the sideband algebra against direct sampling of the
//! modulated field.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rftransfer_core::laser_spectrum::{
    amplitude_coefficients, detected_rf, differential_delay, sideband_amplitudes, wrap_phase, LaserParams,
    PropagationPhases,
};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

const NODES: usize = 4096;

/// Line amplitudes of `sqrt(1 + m_i cos t) exp(j m sin t)` by FFT over one period.
fn field_lines(m: f64, m_i: f64) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = (0..NODES)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / NODES as f64;
            Complex64::from_polar((1.0 + m_i * t.cos()).sqrt(), m * t.sin())
        })
        .collect();
    FftPlanner::new().plan_fft_forward(NODES).process(&mut buf);
    buf.iter().map(|c| c / NODES as f64).collect()
}

fn line(lines: &[Complex64], k: i64) -> Complex64 {
    lines[k.rem_euclid(NODES as i64) as usize]
}

#[test]
fn sideband_amplitudes_match_sampled_field() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..20 {
        let m: f64 = rng.gen_range(0.0..20.0);
        let m_i: f64 = rng.gen_range(0.0..0.95);
        let c = sideband_amplitudes(m, m_i, 1).unwrap();
        let lines = field_lines(m, m_i);
        for k in -(c.truncation_order as i64)..=(c.truncation_order as i64) {
            let oracle = line(&lines, k);
            assert!(oracle.im.abs() < 1e-12, "lines are real for this field");
            if oracle.re.abs() < 1e-8 {
                continue;
            }
            let rel = ((c.line(k) - oracle.re) / oracle.re).abs();
            assert!(rel < 1e-6, "m={m} m_i={m_i} k={k}: {} vs {}", c.line(k), oracle.re);
        }
    }
}

#[test]
fn amplitude_coefficients_match_golden_table() {
    let golden = include_str!("data/amplitude_coeffs_mi0.7.csv");
    let m = amplitude_coefficients(0.7, 12).unwrap();
    for row in golden.lines().skip(1) {
        let mut parts = row.split(',');
        let n: usize = parts.next().unwrap().parse().unwrap();
        let expected: f64 = parts.next().unwrap().parse().unwrap();
        assert!((m[n] - expected).abs() <= 1e-10 * expected.abs() + 1e-14, "M_{n}: {} vs {expected}", m[n]);
    }
}

#[test]
fn parseval_holds_across_depths() {
    for k in 0..=19 {
        let m_i = 0.05 * k as f64;
        let m = amplitude_coefficients(m_i, 200).unwrap();
        let p = m[0] * m[0] + 0.5 * m[1..].iter().map(|v| v * v).sum::<f64>();
        assert!((p - 1.0).abs() < 1e-8, "m_i={m_i}: {p}");
    }
}

/// Detected tone at `omega` after giving each line the first-order phase,
/// computed through the time-domain intensity.
fn propagate_and_detect(m: f64, m_i: f64, dtd: f64, omega: f64, t0: f64, omega0: f64) -> (f64, f64) {
    let lines = field_lines(m, m_i);
    let half = (NODES / 2) as i64;
    let phases = PropagationPhases::first_order(half as usize, dtd, omega, t0, omega0);
    let phase_of = |k: i64| match k {
        0 => phases.carrier_phase,
        k if k > 0 => phases.sideband_plus[k as usize - 1],
        k => phases.sideband_minus[(-k) as usize - 1],
    };
    let mut spectrum: Vec<Complex64> = (0..NODES)
        .map(|idx| {
            let k = if (idx as i64) < half { idx as i64 } else { idx as i64 - NODES as i64 };
            lines[idx] * Complex64::from_polar(1.0, -phase_of(k))
        })
        .collect();
    FftPlanner::new().plan_fft_inverse(NODES).process(&mut spectrum);
    let (mut a, mut b) = (0.0, 0.0);
    for (k, e) in spectrum.iter().enumerate() {
        let t = 2.0 * PI * k as f64 / NODES as f64;
        let intensity = e.norm_sqr();
        a += intensity * t.cos();
        b += intensity * t.sin();
    }
    a *= 2.0 / NODES as f64;
    b *= 2.0 / NODES as f64;
    (a.hypot(b), wrap_phase(-b.atan2(a)))
}

#[test]
fn detected_rf_matches_propagation_oracle_over_length_sweep() {
    let laser = LaserParams::default();
    let omega = 2.0 * PI * 1e9;
    let omega0 = laser.angular_frequency();
    let c = sideband_amplitudes(laser.frequency_mod_index, laser.amplitude_mod_index, 1).unwrap();
    for step in 0..=20 {
        let length_km = 10.0 * step as f64;
        let dtd = differential_delay(17.0, length_km, laser.wavelength_nm, laser.carrier_frequency_hz, omega).unwrap();
        let t0 = length_km * 1e3 * 1.468 / 299_792_458.0;
        let d = detected_rf(&c, dtd, omega, t0, omega0).unwrap();
        let (amp, phase) = propagate_and_detect(laser.frequency_mod_index, laser.amplitude_mod_index, dtd, omega, t0, omega0);
        assert!((d.total_amplitude - amp).abs() < 1e-4 * amp.max(1e-3), "L={length_km}: {} vs {amp}", d.total_amplitude);
        assert!(wrap_phase(d.effective_phase - phase).abs() < 1e-4, "L={length_km}: {} vs {phase}", d.effective_phase);
    }
}

#[test]
fn quadrature_term_present_for_chirped_laser() {
    let laser = LaserParams::default();
    let omega = 2.0 * PI * 1e9;
    let c = sideband_amplitudes(15.0, 0.7, 1).unwrap();
    let dtd = differential_delay(17.0, 90.0, 1550.0, laser.carrier_frequency_hz, omega).unwrap();
    let d = detected_rf(&c, dtd, omega, 0.0, laser.angular_frequency()).unwrap();
    assert!(d.quadrature_amplitude.abs() > 1e-3);
    let full = d.total_amplitude;
    assert!((full - d.inphase_amplitude.hypot(d.quadrature_amplitude)).abs() < 1e-15);
}
