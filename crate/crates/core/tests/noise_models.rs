//! Generator fidelity and default-calibration checks.

use proptest::prelude::*;
use rftransfer_core::noise::colored::{rng, synthesize_colored_noise, PowerLawSpec};
use rftransfer_core::noise::fiber::DAY_S;
use rftransfer_core::noise::pmd::random_state;
use rftransfer_core::noise::{
    fiber_delay_process, laser_frequency_noise, Direction, FiberNoiseParams, LaserNoiseParams, PmdModel, PmdParams,
};
use rftransfer_core::stability::{frequency_adev, overlapping_adev, psd_phase, Window};
use rftransfer_core::{PhaseSeries, TimeGrid};

fn loglog_fit(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0.ln()).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0.ln() - mx) * (p.1.ln() - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0.ln() - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn white_variance_matches_band_limited_level() {
    let grid = TimeGrid::new(1e-3, 1 << 20).unwrap();
    let h = 2.5e-6;
    let x = synthesize_colored_noise(&PowerLawSpec::white(h), &grid, 11).unwrap();
    let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let expected = h / (2.0 * grid.dt());
    assert!((var / expected - 1.0).abs() < 0.05, "{var} vs {expected}");
}

#[test]
fn white_fm_phase_has_half_power_allan_slope() {
    let grid = TimeGrid::new(1.0, 1 << 18).unwrap();
    let x = synthesize_colored_noise(&PowerLawSpec::new().with(-2, 1e-24), &grid, 5).unwrap();
    let series = PhaseSeries::delay(grid, x).unwrap();
    let taus: Vec<f64> = (0..12).map(|k| f64::from(1u32 << k)).collect();
    let table = overlapping_adev(&series, &taus).unwrap();
    let slope = table.loglog_slope(1.0, 2048.0).unwrap();
    assert!((slope + 0.5).abs() < 0.1, "slope {slope}");
}

#[test]
fn periodogram_slope_tracks_every_supported_exponent() {
    let grid = TimeGrid::new(1.0, 1 << 20).unwrap();
    for (i, exponent) in [0, -1, -2, -3, -4].into_iter().enumerate() {
        let x = synthesize_colored_noise(&PowerLawSpec::new().with(exponent, 1.0), &grid, 100 + i as u64).unwrap();
        let series = PhaseSeries::radians(grid, x, 1.0).unwrap();
        let psd = psd_phase(&series, 1 << 14, Window::Hann).unwrap();
        // Two decades, clear of the lowest bins and of Nyquist.
        let points: Vec<(f64, f64)> = psd
            .freqs
            .iter()
            .zip(&psd.psd)
            .filter(|(f, _)| **f >= 2e-3 && **f <= 0.2)
            .map(|(f, s)| (*f, *s))
            .collect();
        let slope = loglog_fit(&points);
        assert!((slope - exponent as f64).abs() < 0.15, "exponent {exponent}: fitted {slope}");
    }
}

#[test]
fn free_fibre_default_calibration() {
    let grid = TimeGrid::spanning(3.0 * DAY_S, 0.1).unwrap();
    let x = fiber_delay_process(&FiberNoiseParams::default(), &grid, 2024).unwrap();
    let mut taus: Vec<f64> = (0..17).map(|k| f64::from(1u32 << k)).collect();
    taus.extend([100.0, 1000.0]);
    let table = overlapping_adev(&x, &taus).unwrap();
    let s1 = table.at(1.0).unwrap();
    assert!((1.5e-14..=4.5e-14).contains(&s1), "sigma(1 s) = {s1:e}");
    for tau in [100.0, 1000.0] {
        let s = table.at(tau).unwrap();
        assert!((5e-16..=2e-15).contains(&s), "sigma({tau} s) = {s:e}");
    }
    // Diurnal bump rises above the floor.
    let bump = table.at(32768.0).unwrap();
    assert!(bump > 1.5 * table.at(1000.0).unwrap(), "bump {bump:e}");
    // The free excursion stays inside what the thermal actuator can absorb.
    let (lo, hi) = x.values().iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
    assert!(hi - lo < 6e-9 && hi - lo > 10e-12, "peak-to-peak {:e}", hi - lo);
}

#[test]
fn diurnal_only_fibre_shows_bump_near_half_period() {
    let p = FiberNoiseParams { diurnal_amplitude_ps: 25.0, ..FiberNoiseParams::quiet() };
    let grid = TimeGrid::spanning(4.0 * DAY_S, 1.0).unwrap();
    let x = fiber_delay_process(&p, &grid, 1).unwrap();
    let taus: Vec<f64> = (0..17).map(|k| f64::from(1u32 << k)).collect();
    let table = overlapping_adev(&x, &taus).unwrap();
    let (peak_tau, peak) = table.entries().fold((0.0, 0.0), |acc, e| if e.1 > acc.1 { e } else { acc });
    assert!((16384.0..=65536.0).contains(&peak_tau), "peak at {peak_tau}");
    // 2 A sin^2(w tau / 2) / tau at the octave point nearest the maximum.
    let w = 2.0 * std::f64::consts::PI / DAY_S;
    let analytic = 2.0 * 25e-12 * (w * peak_tau / 2.0).sin().powi(2) / peak_tau;
    assert!((peak / analytic - 1.0).abs() < 0.1, "{peak:e} vs {analytic:e}");
}

#[test]
fn laser_beat_matches_counter_reading() {
    let grid = TimeGrid::new(0.01, 1 << 18).unwrap();
    let p = LaserNoiseParams::default();
    let a = laser_frequency_noise(&p, &grid, 77, 1).unwrap();
    let b = laser_frequency_noise(&p, &grid, 77, 2).unwrap();
    let beat: Vec<f64> = a.values_hz.iter().zip(&b.values_hz).map(|(x, y)| x - y).collect();
    let table = frequency_adev(&grid, &beat, &[1.0]).unwrap();
    let s = table.at(1.0).unwrap();
    assert!((s / 250e3 - 1.0).abs() < 0.2, "beat sigma(1 s) = {s}");
}

#[test]
fn laser_zero_levels_give_zero_series() {
    let grid = TimeGrid::new(0.01, 512).unwrap();
    let f = laser_frequency_noise(&LaserNoiseParams::quiet(), &grid, 3, 1).unwrap();
    assert!(f.values_hz.iter().all(|v| *v == 0.0));
}

fn pmd_peak_to_peak(seed: u64) -> f64 {
    let p = PmdParams { scrambler_enabled_fwd: false, scrambler_enabled_bwd: false, ..PmdParams::default() };
    let model = PmdModel::new(p, seed).unwrap();
    let state = random_state(&mut rng(seed ^ 0xABCD));
    let samples: Vec<f64> = (0..=4320)
        .map(|k| model.path_delay(Direction::Forward, &state, k as f64 * 60.0).unwrap())
        .collect();
    let lo = samples.iter().cloned().fold(f64::MAX, f64::min);
    let hi = samples.iter().cloned().fold(f64::MIN, f64::max);
    hi - lo
}

#[test]
fn pmd_one_way_excursion_is_a_few_ps() {
    let mut p2p: Vec<f64> = (0..9).map(pmd_peak_to_peak).collect();
    p2p.sort_by(f64::total_cmp);
    let median = p2p[p2p.len() / 2];
    assert!((median / 4e-12 - 1.0).abs() < 0.3, "median peak-to-peak {median:e} from {p2p:?}");
}

#[test]
fn scrambled_path_is_the_ensemble_average() {
    let p = PmdParams { scrambler_enabled_fwd: false, ..PmdParams::default() };
    let open = PmdModel::new(p, 8).unwrap();
    let scrambled = PmdModel::new(PmdParams { scrambler_enabled_fwd: true, ..p }, 8).unwrap();
    let mut r = rng(99);
    for k in 0..5 {
        let t = k as f64 * 20_000.0;
        let n = 4000;
        let delays: Vec<f64> = (0..n)
            .map(|_| open.path_delay(Direction::Forward, &random_state(&mut r), t).unwrap())
            .collect();
        let mean = delays.iter().sum::<f64>() / n as f64;
        let sd = (delays.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let target = scrambled.path_delay(Direction::Forward, &[0.0, 0.0, 1.0], t).unwrap();
        assert!((mean - target).abs() < 4.0 * sd / (n as f64).sqrt(), "t={t}: {mean:e} vs {target:e}");
        // Uniform states: Omega.s/2 has variance DGD^2 / 12.
        let dgd = open.dgd(Direction::Forward, t);
        assert!((sd / (dgd / 12f64.sqrt()) - 1.0).abs() < 0.1);
    }
}

#[test]
fn scrambler_removes_pmd_excursion() {
    let p = PmdParams { scrambler_enabled_fwd: true, ..PmdParams::default() };
    let model = PmdModel::new(p, 3).unwrap();
    let state = [1.0, 0.0, 0.0];
    let residual = (0..=432)
        .map(|k| model.path_delay(Direction::Forward, &state, k as f64 * 600.0).unwrap().abs())
        .fold(0.0, f64::max);
    assert!(residual < 0.1 * pmd_peak_to_peak(3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generators_are_pure_functions_of_their_inputs(seed in any::<u64>(), n in 16usize..400, h in 1e-30f64..1e-20) {
        let grid = TimeGrid::new(0.1, n).unwrap();
        let spec = PowerLawSpec::new().with(0, h).with(-1, h).with(-3, h * 1e-3);
        prop_assert_eq!(
            synthesize_colored_noise(&spec, &grid, seed).unwrap(),
            synthesize_colored_noise(&spec, &grid, seed).unwrap()
        );
        let fibre = FiberNoiseParams::default();
        prop_assert_eq!(
            fiber_delay_process(&fibre, &grid, seed).unwrap(),
            fiber_delay_process(&fibre, &grid, seed).unwrap()
        );
        let laser = LaserNoiseParams::default();
        prop_assert_eq!(
            laser_frequency_noise(&laser, &grid, seed, 2).unwrap(),
            laser_frequency_noise(&laser, &grid, seed, 2).unwrap()
        );
    }

    #[test]
    fn pmd_delay_bounded_by_half_dgd(seed in 0u64..1000, t in 0.0f64..3.0e5, z in -1.0f64..1.0, a in 0.0f64..std::f64::consts::TAU) {
        let p = PmdParams { scrambler_enabled_fwd: false, scrambler_enabled_bwd: false, ..PmdParams::default() };
        let model = PmdModel::new(p, seed).unwrap();
        let s = (1.0 - z * z).sqrt();
        let state = [s * a.cos(), s * a.sin(), z];
        for dir in [Direction::Forward, Direction::Backward] {
            let d = model.path_delay(dir, &state, t).unwrap();
            prop_assert!(d.abs() <= 0.5 * model.dgd(dir, t) * (1.0 + 1e-12));
        }
    }
}
