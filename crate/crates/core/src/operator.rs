//! Discrete Levy operators on the periodic grid.
//!
//! For a finite symmetric measure `nu` the operator is
//!
//! ```text
//! (L^nu psi)(x_beta) = sum_gamma omega_gamma (psi(x_{beta+gamma}) - psi(x_beta))
//!                    = S[psi](x_beta) - Lambda psi(x_beta)
//! ```
//!
//! with periodic wrap. The first-order compensator of a general Levy
//! generator integrates to zero against a symmetric finite measure, so it is
//! not represented.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::levy::DiscreteMeasure;
use crate::spectral;

const PAR_THRESHOLD: usize = 8192;

/// A discrete measure bound to a grid, with offsets reduced modulo `M`.
#[derive(Debug, Clone)]
pub struct StencilOperator {
    grid: Grid,
    measure: DiscreteMeasure,
    /// (per-axis residues in `0..M`, weight), lexicographic, nonzero residues only.
    table: Vec<(Vec<usize>, f64)>,
    lambda: f64,
}

impl StencilOperator {
    pub fn new(measure: DiscreteMeasure, grid: Grid) -> Result<Self> {
        if measure.dim() != grid.dim() {
            return Err(Error::GridMismatch(format!(
                "measure dimension {} vs grid dimension {}",
                measure.dim(),
                grid.dim()
            )));
        }
        if !measure.is_empty() && (measure.spacing() - grid.spacing()).abs() > 1e-12 * grid.spacing() {
            return Err(Error::GridMismatch(format!(
                "measure spacing {} vs grid spacing {}",
                measure.spacing(),
                grid.spacing()
            )));
        }
        let m = grid.cells() as i64;
        let mut merged: std::collections::BTreeMap<Vec<usize>, f64> = std::collections::BTreeMap::new();
        for (beta, w) in measure.iter() {
            let res: Vec<usize> = beta.iter().map(|&b| b.rem_euclid(m) as usize).collect();
            if res.iter().all(|&r| r == 0) {
                // wraps onto the cell itself: contributes psi - psi = 0
                continue;
            }
            *merged.entry(res).or_insert(0.0) += w;
        }
        let table: Vec<(Vec<usize>, f64)> = merged.into_iter().collect();
        let lambda = table.iter().map(|(_, w)| w).sum();
        Ok(Self { grid, measure, table, lambda })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn measure(&self) -> &DiscreteMeasure {
        &self.measure
    }

    /// Total weight acting on the torus (offsets that wrap to zero excluded).
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    fn check(&self, u: &GridFunction) -> Result<()> {
        if *u.grid() != self.grid {
            return Err(Error::GridMismatch(format!("operator grid {:?} vs function grid {:?}", self.grid, u.grid())));
        }
        Ok(())
    }

    /// Flat index of the cell `multi + res` with periodic wrap.
    fn neighbour(&self, multi: &[usize], res: &[usize]) -> usize {
        let m = self.grid.cells();
        multi.iter().zip(res).fold(0, |acc, (&c, &r)| {
            let mut j = c + r;
            if j >= m {
                j -= m;
            }
            acc * m + j
        })
    }

    fn cellwise<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(usize, &[usize]) -> f64 + Sync,
    {
        let n = self.grid.len();
        let eval = |i: usize| {
            let multi = self.grid.multi_index(i);
            f(i, &multi)
        };
        if n >= PAR_THRESHOLD {
            (0..n).into_par_iter().map(eval).collect()
        } else {
            (0..n).map(eval).collect()
        }
    }

    /// `L^nu psi` by direct stencil summation.
    pub fn apply(&self, psi: &GridFunction) -> Result<GridFunction> {
        self.check(psi)?;
        let v = psi.values();
        let out = self.cellwise(|i, multi| {
            let center = v[i];
            self.table.iter().map(|(res, w)| w * (v[self.neighbour(multi, res)] - center)).sum()
        });
        Ok(GridFunction::from_raw(self.grid, out))
    }

    /// Weighted shift sum `S[psi] = sum_gamma omega_gamma psi(x_{beta+gamma})`.
    pub fn shift_sum(&self, psi: &GridFunction) -> Result<GridFunction> {
        self.check(psi)?;
        let v = psi.values();
        let out = self.cellwise(|_, multi| self.table.iter().map(|(res, w)| w * v[self.neighbour(multi, res)]).sum());
        Ok(GridFunction::from_raw(self.grid, out))
    }

    /// Lattice symbol at mode `m`, using exact integer phase reduction.
    pub fn lattice_symbol(&self, mode: &[usize]) -> f64 {
        let m = self.grid.cells();
        self.table
            .iter()
            .map(|(res, w)| {
                let k = mode.iter().zip(res).map(|(&a, &b)| a * b).sum::<usize>() % m;
                let s = (std::f64::consts::PI * k as f64 / m as f64).sin();
                w * 2.0 * s * s
            })
            .sum()
    }

    /// Symbol at every mode, in flat grid order.
    pub fn symbol_table(&self) -> Vec<f64> {
        let grid = self.grid;
        (0..grid.len()).map(|i| self.lattice_symbol(&grid.multi_index(i))).collect()
    }

    /// `L^nu psi` through the frequency domain.
    pub fn apply_spectral(&self, psi: &GridFunction) -> Result<GridFunction> {
        self.check(psi)?;
        let mult: Vec<f64> = self.symbol_table().into_iter().map(|s| -s).collect();
        Ok(spectral::apply_multiplier(psi, &mult))
    }

    /// Discrete energy form
    /// `1/2 h^N sum_beta sum_gamma omega_gamma (phi(beta+gamma) - phi(beta)) (psi(beta+gamma) - psi(beta))`.
    pub fn energy_form(&self, phi: &GridFunction, psi: &GridFunction) -> Result<f64> {
        self.check(phi)?;
        self.check(psi)?;
        let a = phi.values();
        let b = psi.values();
        let per_cell = self.cellwise(|i, multi| {
            self.table
                .iter()
                .map(|(res, w)| {
                    let j = self.neighbour(multi, res);
                    w * (a[j] - a[i]) * (b[j] - b[i])
                })
                .sum()
        });
        Ok(0.5 * self.grid.cell_volume() * per_cell.iter().sum::<f64>())
    }

    /// Lattice modes where the symbol vanishes; the kernel of the operator is
    /// spanned by exactly these modes.
    pub fn kernel_analysis(&self) -> KernelAnalysis {
        let table = self.symbol_table();
        let scale = self.lambda.max(f64::MIN_POSITIVE);
        let zero_modes: Vec<Vec<usize>> = table
            .iter()
            .enumerate()
            .filter(|(_, &s)| s <= 1e-13 * scale)
            .map(|(i, _)| self.grid.multi_index(i))
            .collect();
        let connected = zero_modes.len() == 1;
        let min_nonzero_symbol = table.iter().copied().filter(|&s| s > 1e-13 * scale).fold(f64::INFINITY, f64::min);
        KernelAnalysis { connected, zero_modes, min_nonzero_symbol }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelAnalysis {
    /// True iff the constants are the only kernel elements.
    pub connected: bool,
    pub zero_modes: Vec<Vec<usize>>,
    /// Spectral gap (infinite when every mode is in the kernel).
    pub min_nonzero_symbol: f64,
}

/// `-(phi, L psi)_h = h^N sum phi * (-L psi)`, the summation-by-parts side.
pub fn pairing(phi: &GridFunction, psi: &GridFunction) -> Result<f64> {
    phi.check_same_grid(psi)?;
    Ok(phi.grid().cell_volume() * phi.values().iter().zip(psi.values()).map(|(a, b)| a * b).sum::<f64>())
}
