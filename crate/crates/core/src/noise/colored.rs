//! Power-law Gaussian noise by spectral shaping of seeded white noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{invalid, Result};
use crate::series::TimeGrid;

/// Exponents of `f` accepted in a one-sided PSD `S(f) = sum h_a f^a`.
pub const SUPPORTED_EXPONENTS: [i32; 5] = [0, -1, -2, -3, -4];

/// One-sided power-law PSD, `S(f) = sum h_a f^a` (units of value^2/Hz).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PowerLawSpec {
    terms: Vec<(i32, f64)>,
}

impl PowerLawSpec {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `coefficient * f^exponent`.
    pub fn with(mut self, exponent: i32, coefficient: f64) -> Self {
        self.terms.push((exponent, coefficient));
        self
    }

    pub fn white(level: f64) -> Self {
        Self::new().with(0, level)
    }

    pub fn terms(&self) -> &[(i32, f64)] {
        &self.terms
    }

    pub fn validate(&self) -> Result<()> {
        for &(a, h) in &self.terms {
            if !SUPPORTED_EXPONENTS.contains(&a) {
                return Err(invalid("exponent", format!("{a} is not one of 0, -1, -2, -3, -4")));
            }
            if !(h.is_finite() && h >= 0.0) {
                return Err(invalid("coefficient", format!("must be finite and >= 0, got {h}")));
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|&(_, h)| h == 0.0)
    }

    pub fn is_white(&self) -> bool {
        self.terms.iter().all(|&(a, h)| a == 0 || h == 0.0)
    }

    pub fn density(&self, f: f64) -> f64 {
        self.terms.iter().map(|&(a, h)| h * f.powi(a)).sum()
    }
}

/// Mixes a base seed with a stream label so that every generator draws from
/// its own reproducible sequence (splitmix64 finaliser).
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` standard normal draws from `seed`.
pub fn white_gaussian(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
}

/// Gaussian series with one-sided PSD `spec` on `grid`.
///
/// White-only specs are scaled directly; anything coloured is shaped in the
/// frequency domain over twice the grid length (the first half is kept, which
/// breaks the circular wrap-around of the red terms). The DC bin is zeroed.
pub fn synthesize_colored_noise(spec: &PowerLawSpec, grid: &TimeGrid, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    let n = grid.len();
    if spec.is_zero() {
        return Ok(vec![0.0; n]);
    }
    let dt = grid.dt();
    if spec.is_white() {
        // One-sided level h over [0, 1/(2 dt)] means variance h / (2 dt).
        let sigma = (spec.density(1.0) / (2.0 * dt)).sqrt();
        return Ok(white_gaussian(n, seed).into_iter().map(|w| w * sigma).collect());
    }

    let len = (2 * n).next_power_of_two();
    let mut r = rng(seed);
    let mut buf: Vec<Complex64> = (0..len)
        .map(|_| Complex64::new(StandardNormal.sample(&mut r), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    let df = 1.0 / (len as f64 * dt);
    buf[0] = Complex64::new(0.0, 0.0);
    for k in 1..len {
        let f = k.min(len - k) as f64 * df;
        let gain = (spec.density(f) / (2.0 * dt)).sqrt();
        buf[k] *= gain;
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let scale = 1.0 / len as f64;
    Ok(buf[..n].iter().map(|c| c.re * scale).collect())
}
