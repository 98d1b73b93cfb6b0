//! Shared inputs for the benchmarks.

use rftransfer_core::noise::colored::white_gaussian;
use rftransfer_core::{PhaseSeries, TimeGrid};

/// Random-walk delay series of `n` points at 1 S/s.
pub fn random_walk_phase(n: usize, seed: u64) -> PhaseSeries {
    let grid = TimeGrid::new(1.0, n).expect("n >= 2");
    let x = white_gaussian(n, seed)
        .into_iter()
        .scan(0.0, |acc, w| {
            *acc += w * 1e-13;
            Some(*acc)
        })
        .collect();
    PhaseSeries::delay(grid, x).expect("grid and values agree")
}
