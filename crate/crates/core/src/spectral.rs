//! Discrete Fourier transforms on the periodic grid.
//!
//! Symmetric stencils are circulant on the torus, so they are diagonal in the
//! basis of lattice modes. These helpers back the frequency-space paths used
//! as independent cross-checks of the direct stencil sums.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::grid::{Grid, GridFunction};

/// In-place N-dimensional DFT (unnormalized in both directions).
pub fn fft_nd(data: &mut [Complex64], grid: &Grid, inverse: bool) {
    let m = grid.cells();
    let dim = grid.dim();
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(m) } else { planner.plan_fft_forward(m) };
    let mut line = vec![Complex64::new(0.0, 0.0); m];
    for axis in 0..dim {
        let stride = m.pow((dim - 1 - axis) as u32);
        let block = stride * m;
        for start in 0..data.len() {
            // visit each line once: index with zero coordinate along `axis`
            if !(start / stride).is_multiple_of(m) {
                continue;
            }
            let base = (start / block) * block + start % stride;
            for (i, slot) in line.iter_mut().enumerate() {
                *slot = data[base + i * stride];
            }
            fft.process(&mut line);
            for (i, v) in line.iter().enumerate() {
                data[base + i * stride] = *v;
            }
        }
    }
}

/// Applies the Fourier multiplier `multiplier[mode]` to `u`.
pub fn apply_multiplier(u: &GridFunction, multiplier: &[f64]) -> GridFunction {
    let grid = *u.grid();
    assert_eq!(multiplier.len(), grid.len());
    let mut data: Vec<Complex64> = u.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_nd(&mut data, &grid, false);
    for (z, &s) in data.iter_mut().zip(multiplier) {
        *z *= s;
    }
    fft_nd(&mut data, &grid, true);
    let scale = 1.0 / grid.len() as f64;
    GridFunction::from_raw(grid, data.into_iter().map(|z| z.re * scale).collect())
}
