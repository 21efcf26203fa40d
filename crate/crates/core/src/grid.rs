//! Periodic uniform grids and the functions that live on them.
//!
//! The domain is the torus `[0, L)^N` with `L = M h`. Cell `beta` is the box
//! `h beta + [0, h)^N`; its node is `x_beta = h beta`. Values are stored
//! densely with the first index most significant.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quadrature::{GAUSS3_NODES, GAUSS3_WEIGHTS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    cells: usize,
    spacing: f64,
}

impl Grid {
    pub fn new(dim: usize, cells: usize, spacing: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidInput(format!("grid dimension {dim} not in 1..=3")));
        }
        if cells < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 cells per axis, got {cells}")));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::InvalidInput(format!("spacing must be positive, got {spacing}")));
        }
        if cells.checked_pow(dim as u32).is_none_or(|n| n > 1 << 28) {
            return Err(Error::InvalidInput(format!("{cells}^{dim} cells is too large")));
        }
        Ok(Self { dim, cells, spacing })
    }

    /// Grid with `cells` cells per axis covering a torus of side `period`.
    pub fn with_period(dim: usize, cells: usize, period: f64) -> Result<Self> {
        Self::new(dim, cells, period / cells as f64)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells per axis (`M`).
    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn period(&self) -> f64 {
        self.cells as f64 * self.spacing
    }

    /// Total number of cells `M^N`.
    pub fn len(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `h^N`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    pub fn volume(&self) -> f64 {
        self.period().powi(self.dim as i32)
    }

    pub fn index_of(&self, multi: &[usize]) -> usize {
        multi.iter().fold(0, |acc, &i| acc * self.cells + i)
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim];
        for d in (0..self.dim).rev() {
            out[d] = flat % self.cells;
            flat /= self.cells;
        }
        out
    }

    /// Node `x_beta = h beta`.
    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat).into_iter().map(|i| i as f64 * self.spacing).collect()
    }

    /// Lattice frequency `2 pi m / L` for mode index `m`, with components
    /// folded into `(-M/2, M/2]`.
    pub fn frequency(&self, mode: &[usize]) -> Vec<f64> {
        let m = self.cells as i64;
        mode.iter()
            .map(|&k| {
                let k = k as i64;
                let folded = if k > m / 2 { k - m } else { k };
                2.0 * std::f64::consts::PI * folded as f64 / self.period()
            })
            .collect()
    }
}

/// Real values on every cell of a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!("expected {} values, got {}", grid.len(), values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite value {} at cell {i}", values[i])));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f` at the nodes `x_beta`.
    pub fn from_nodes<F: Fn(&[f64]) -> f64>(grid: Grid, f: F) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(&grid.node(i))).collect();
        Self::new(grid, values)
    }

    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> GridFunction {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map<F: Fn(f64, f64) -> f64>(&self, other: &GridFunction, f: F) -> Result<GridFunction> {
        self.check_same_grid(other)?;
        Ok(Self { grid: self.grid, values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect() })
    }

    pub fn check_same_grid(&self, other: &GridFunction) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!("{:?} vs {:?}", self.grid, other.grid)));
        }
        Ok(())
    }

    /// `h^N sum_beta u(x_beta)`.
    pub fn mass(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().sum::<f64>()
    }

    /// Cell mean `L^{-N} mass(u)`.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Discrete `L^p` norm; `p = f64::INFINITY` gives the max norm.
    pub fn lp_norm(&self, p: f64) -> f64 {
        lp_norm(self, p)
    }

    /// Writes `# N,M,h` followed by `index_0,...,index_{N-1},value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(32 * self.values.len());
        let _ = writeln!(out, "# {},{},{}", self.grid.dim, self.grid.cells, fmt_f64(self.grid.spacing));
        for (i, v) in self.values.iter().enumerate() {
            for idx in self.grid.multi_index(i) {
                let _ = write!(out, "{idx},");
            }
            let _ = writeln!(out, "{}", fmt_f64(*v));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty grid function file".into()))?;
        let header = header
            .strip_prefix('#')
            .ok_or_else(|| Error::Parse(format!("header must start with '#', got {header:?}")))?;
        let fields: Vec<&str> = header.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Parse(format!("header must be '# N,M,h', got {header:?}")));
        }
        let parse_usize =
            |s: &str, what: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("bad {what} {s:?}: {e}")));
        let dim = parse_usize(fields[0], "N")?;
        let cells = parse_usize(fields[1], "M")?;
        let h: f64 = fields[2].parse().map_err(|e| Error::Parse(format!("bad h {:?}: {e}", fields[2])))?;
        let grid = Grid::new(dim, cells, h)?;
        let mut values = vec![f64::NAN; grid.len()];
        let mut seen = 0usize;
        for (lineno, line) in lines.enumerate() {
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            if parts.len() != dim + 1 {
                return Err(Error::Parse(format!(
                    "row {}: expected {} fields, got {}",
                    lineno + 2,
                    dim + 1,
                    parts.len()
                )));
            }
            let mut multi = Vec::with_capacity(dim);
            for p in &parts[..dim] {
                let i = parse_usize(p, "index")?;
                if i >= cells {
                    return Err(Error::Parse(format!("row {}: index {i} out of range", lineno + 2)));
                }
                multi.push(i);
            }
            let v: f64 = parts[dim]
                .parse()
                .map_err(|e| Error::Parse(format!("row {}: bad value {:?}: {e}", lineno + 2, parts[dim])))?;
            let flat = grid.index_of(&multi);
            if !values[flat].is_nan() {
                return Err(Error::Parse(format!("row {}: duplicate cell {multi:?}", lineno + 2)));
            }
            values[flat] = v;
            seen += 1;
        }
        if seen != grid.len() {
            return Err(Error::Parse(format!("expected {} rows, got {seen}", grid.len())));
        }
        Self::new(grid, values)
    }
}

/// Formats with 17 significant digits (lossless for finite doubles).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Discrete `L^p` norm `(h^N sum |u|^p)^{1/p}`, max norm for `p = inf`.
pub fn lp_norm(u: &GridFunction, p: f64) -> f64 {
    assert!(p >= 1.0, "p must be >= 1");
    let vol = u.grid.cell_volume();
    if p.is_infinite() {
        u.max_abs()
    } else if p == 1.0 {
        vol * u.values.iter().map(|v| v.abs()).sum::<f64>()
    } else if p == 2.0 {
        (vol * u.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    } else {
        (vol * u.values.iter().map(|v| v.abs().powf(p)).sum::<f64>()).powf(1.0 / p)
    }
}

/// Cell averages `h^-N integral_{cell beta} u0` by 3^N-point Gauss rules.
pub fn cell_average<F: Fn(&[f64]) -> f64>(u0: F, grid: &Grid) -> Result<GridFunction> {
    let dim = grid.dim();
    let h = grid.spacing();
    let npts = 3usize.pow(dim as u32);
    let mut x = vec![0.0; dim];
    let values = (0..grid.len())
        .map(|flat| {
            let base = grid.multi_index(flat);
            let mut acc = 0.0;
            for q in 0..npts {
                let mut w = 1.0;
                let mut rest = q;
                for d in 0..dim {
                    let k = rest % 3;
                    rest /= 3;
                    x[d] = h * (base[d] as f64 + GAUSS3_NODES[k]);
                    w *= GAUSS3_WEIGHTS[k];
                }
                acc += w * u0(&x);
            }
            acc
        })
        .collect();
    GridFunction::new(*grid, values)
}

/// Space-time source `g(x, t)`.
pub type SourceFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum SourceTerm {
    Zero,
    Function(SourceFn),
    /// Time-stamped slices, linearly interpolated in time and held constant
    /// outside the tabulated range.
    Table(Vec<(f64, GridFunction)>),
}

impl std::fmt::Debug for SourceTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SourceTerm::Zero => write!(f, "Zero"),
            SourceTerm::Function(_) => write!(f, "Function(..)"),
            SourceTerm::Table(t) => write!(f, "Table({} slices)", t.len()),
        }
    }
}

impl SourceTerm {
    pub fn function<F: Fn(&[f64], f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        SourceTerm::Function(Arc::new(f))
    }

    pub fn constant(c: f64) -> Self {
        if c == 0.0 {
            SourceTerm::Zero
        } else {
            Self::function(move |_, _| c)
        }
    }

    pub fn table(mut slices: Vec<(f64, GridFunction)>) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::InvalidInput("tabulated source needs at least one slice".into()));
        }
        slices.sort_by(|a, b| a.0.total_cmp(&b.0));
        let grid = *slices[0].1.grid();
        for w in slices.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidInput(format!("duplicate source time {}", w[0].0)));
            }
        }
        for (t, s) in &slices {
            if !t.is_finite() {
                return Err(Error::InvalidInput(format!("source time {t} is not finite")));
            }
            if *s.grid() != grid {
                return Err(Error::GridMismatch("source slices live on different grids".into()));
            }
        }
        Ok(SourceTerm::Table(slices))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, SourceTerm::Zero)
    }
}

/// `G^j = k^-1 integral_{(j-1)k}^{jk} g(x_beta, t) dt`.
pub fn time_average(g: &SourceTerm, j: usize, k: f64, grid: &Grid) -> Result<GridFunction> {
    if !(k > 0.0) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {k}")));
    }
    if j == 0 {
        return Err(Error::InvalidInput("time level j starts at 1".into()));
    }
    interval_average(g, (j - 1) as f64 * k, j as f64 * k, grid)
}

/// Average of `g` over `[t0, t1]` at every node.
pub fn interval_average(g: &SourceTerm, t0: f64, t1: f64, grid: &Grid) -> Result<GridFunction> {
    if !(t1 > t0) {
        return Err(Error::InvalidInput(format!("empty time interval [{t0}, {t1}]")));
    }
    match g {
        SourceTerm::Zero => Ok(GridFunction::zeros(*grid)),
        SourceTerm::Function(f) => {
            let dt = t1 - t0;
            let times: Vec<f64> = GAUSS3_NODES.iter().map(|s| t0 + dt * s).collect();
            GridFunction::from_nodes(*grid, |x| {
                times.iter().zip(GAUSS3_WEIGHTS.iter()).map(|(&t, &w)| w * f(x, t)).sum()
            })
        }
        SourceTerm::Table(slices) => {
            if slices[0].1.grid() != grid {
                return Err(Error::GridMismatch("tabulated source grid differs from run grid".into()));
            }
            let mut acc = vec![0.0; grid.len()];
            // integrate the piecewise-linear interpolant (constant extension) exactly
            let mut knots = vec![t0];
            knots.extend(slices.iter().map(|s| s.0).filter(|&t| t > t0 && t < t1));
            knots.push(t1);
            for w in knots.windows(2) {
                let (a, b) = (w[0], w[1]);
                let mid = 0.5 * (a + b);
                let slice = interpolate_slice(slices, mid);
                for (acc, v) in acc.iter_mut().zip(slice) {
                    *acc += (b - a) * v;
                }
            }
            let dt = t1 - t0;
            GridFunction::new(*grid, acc.into_iter().map(|v| v / dt).collect())
        }
    }
}

/// Linear interpolation between tabulated slices (exact for the midpoint of
/// a knot interval, where the interpolant is affine).
fn interpolate_slice(slices: &[(f64, GridFunction)], t: f64) -> Vec<f64> {
    let first = &slices[0];
    let last = &slices[slices.len() - 1];
    if t <= first.0 {
        return first.1.values().to_vec();
    }
    if t >= last.0 {
        return last.1.values().to_vec();
    }
    let i = slices.partition_point(|s| s.0 <= t);
    let (ta, a) = (&slices[i - 1].0, &slices[i - 1].1);
    let (tb, b) = (&slices[i].0, &slices[i].1);
    let theta = (t - ta) / (tb - ta);
    a.values().iter().zip(b.values()).map(|(&x, &y)| (1.0 - theta) * x + theta * y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_average_constant_and_linear() {
        let grid = Grid::new(2, 4, 0.25).unwrap();
        let u = cell_average(|_| 3.5, &grid).unwrap();
        assert!(u.values().iter().all(|&v| (v - 3.5).abs() < 1e-15));

        let h = 0.1;
        let grid = Grid::new(1, 10, h).unwrap();
        let u = cell_average(|x| x[0], &grid).unwrap();
        assert!((u.values()[0] - h / 2.0).abs() < 1e-15);
        assert!((u.values()[3] - 3.5 * h).abs() < 1e-15);
    }

    #[test]
    fn cell_average_indicator() {
        let grid = Grid::with_period(1, 8, 2.0).unwrap();
        let l = grid.period();
        let u = cell_average(|x| if x[0] < l / 2.0 { 1.0 } else { 0.0 }, &grid).unwrap();
        assert_eq!(u.values(), &[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn time_average_examples() {
        let grid = Grid::new(1, 4, 1.0).unwrap();
        let g0 = time_average(&SourceTerm::Zero, 1, 0.5, &grid).unwrap();
        assert!(g0.values().iter().all(|&v| v == 0.0));

        let g = SourceTerm::function(|_, t| t);
        let a = time_average(&g, 1, 1.0, &grid).unwrap();
        assert!(a.values().iter().all(|&v| (v - 0.5).abs() < 1e-15));

        let g = SourceTerm::function(|_, t: f64| t.sin());
        let k = 0.1;
        for j in 1..5 {
            let a = time_average(&g, j, k, &grid).unwrap();
            let exact = (((j - 1) as f64 * k).cos() - (j as f64 * k).cos()) / k;
            assert!((a.values()[0] - exact).abs() < 1e-10);
        }
    }

    #[test]
    fn tabulated_source_trapezoid() {
        let grid = Grid::new(1, 2, 1.0).unwrap();
        let s0 = GridFunction::new(grid, vec![0.0, 1.0]).unwrap();
        let s1 = GridFunction::new(grid, vec![2.0, 1.0]).unwrap();
        let g = SourceTerm::table(vec![(0.0, s0), (1.0, s1)]).unwrap();
        let a = interval_average(&g, 0.0, 1.0, &grid).unwrap();
        assert!((a.values()[0] - 1.0).abs() < 1e-15);
        assert!((a.values()[1] - 1.0).abs() < 1e-15);
        // constant extension past the last slice
        let a = interval_average(&g, 0.5, 1.5, &grid).unwrap();
        assert!((a.values()[0] - (0.5 * 1.5 + 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn norms() {
        let grid = Grid::with_period(2, 4, 3.0).unwrap();
        let one = GridFunction::constant(grid, 1.0);
        assert!((lp_norm(&one, 1.0) - 9.0).abs() < 1e-12);
        let mut v = vec![0.0; grid.len()];
        v[5] = 1.0;
        assert_eq!(lp_norm(&GridFunction::new(grid, v).unwrap(), f64::INFINITY), 1.0);

        let grid = Grid::new(1, 2, 1.0).unwrap();
        let u = GridFunction::new(grid, vec![1.0, -1.0]).unwrap();
        assert!((lp_norm(&u, 2.0) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(u.mass(), 0.0);
    }

    #[test]
    fn rejects_non_finite() {
        let grid = Grid::new(1, 2, 1.0).unwrap();
        assert!(GridFunction::new(grid, vec![1.0, f64::NAN]).is_err());
        assert!(GridFunction::new(grid, vec![1.0]).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let grid = Grid::new(2, 3, 0.1).unwrap();
        let u = GridFunction::from_nodes(grid, |x| (x[0] * 7.3).sin() + x[1] / 3.0).unwrap();
        let text = u.to_csv();
        assert!(text.starts_with("# 2,3,"));
        let back = GridFunction::from_csv(&text).unwrap();
        assert_eq!(back, u);
        assert_eq!(back.to_csv(), text);
    }

    #[test]
    fn csv_rejects_missing_rows() {
        let text = "# 1,3,0.5\n0,1.0\n1,2.0\n";
        assert!(GridFunction::from_csv(text).is_err());
    }
}
