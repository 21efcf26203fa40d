//! Implicit-explicit time marching
//!
//! ```text
//! U^j = U^{j-1} + k ( L^{nu_1}[phi(U^j)] + L^{nu_2}[phi_2(U^{j-1})] + G^j )
//! ```
//!
//! Each step is the nonlinear elliptic problem `w - k L^{nu_1}[phi(w)] = f`
//! with `f = U^{j-1} + k (L^{nu_2}[phi_2(U^{j-1})] + G^j)`.

use crate::elliptic::{
    solve_nonlinear_elliptic_with, SolveReport, SolverMethod, SolverOptions, DEFAULT_MAX_ITERATIONS,
};
use crate::error::{Error, Result};
use crate::grid::{interval_average, Grid, GridFunction, SourceTerm};
use crate::levy::DiscreteMeasure;
use crate::nonlinearity::{primitive_mass, Nonlinearity};
use crate::operator::{pairing, StencilOperator};

/// Which part of `nu_h` is treated implicitly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Split {
    FullyImplicit,
    FullyExplicit,
    /// Jumps with `|h beta| <= r` implicit, longer jumps explicit.
    Radius(f64),
}

impl Split {
    pub fn name(&self) -> String {
        match self {
            Split::FullyImplicit => "fully_implicit".into(),
            Split::FullyExplicit => "fully_explicit".into(),
            Split::Radius(r) => format!("radius({r})"),
        }
    }
}

/// `(nu_1, nu_2)` with `nu_1 + nu_2 = nu` entrywise.
pub fn split_measure(nu: &DiscreteMeasure, split: Split) -> (DiscreteMeasure, DiscreteMeasure) {
    match split {
        Split::FullyImplicit => (nu.clone(), DiscreteMeasure::empty(nu.dim(), nu.spacing())),
        Split::FullyExplicit => (DiscreteMeasure::empty(nu.dim(), nu.spacing()), nu.clone()),
        Split::Radius(r) => nu.partition(|beta| nu.jump_length(beta) <= r),
    }
}

#[derive(Debug, Clone)]
pub struct SchemeConfig {
    pub grid: Grid,
    /// Time step `k`.
    pub k: f64,
    /// Horizon `T`.
    pub horizon: f64,
    pub split: Split,
    pub nu: DiscreteMeasure,
    pub nl: Nonlinearity,
    /// `phi_2`, applied to the explicit part.
    pub nl_explicit: Nonlinearity,
    /// Sup-residual bound for the scheme equation at every step.
    pub tol: f64,
    pub max_iterations: usize,
    /// Snapshot times in `[0, T]`.
    pub output_times: Vec<f64>,
    /// Keep every `U^j` and `G^j` (needed for two-run property checks).
    pub record_steps: bool,
}

impl SchemeConfig {
    pub fn new(grid: Grid, nu: DiscreteMeasure, nl: Nonlinearity, k: f64, horizon: f64) -> Self {
        Self {
            grid,
            k,
            horizon,
            split: Split::FullyImplicit,
            nu,
            nl_explicit: nl.clone(),
            nl,
            tol: crate::elliptic::DEFAULT_TOL,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            output_times: vec![horizon],
            record_steps: false,
        }
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_output_times(mut self, times: Vec<f64>) -> Self {
        self.output_times = times;
        self
    }

    pub fn recording_steps(mut self) -> Self {
        self.record_steps = true;
        self
    }

    pub fn with_explicit_nonlinearity(mut self, nl: Nonlinearity) -> Self {
        self.nl_explicit = nl;
        self
    }

    /// Number of steps `J = ceil(T / k)`.
    pub fn steps(&self) -> usize {
        if self.horizon <= 0.0 {
            return 0;
        }
        let ratio = self.horizon / self.k;
        let j = ratio.round();
        if (ratio - j).abs() <= 1e-9 * ratio.max(1.0) {
            j as usize
        } else {
            ratio.ceil() as usize
        }
    }

    /// Step sizes; the last one is shortened to land on `T`.
    pub fn step_sizes(&self) -> Vec<f64> {
        let j = self.steps();
        (1..=j).map(|i| if i < j { self.k } else { self.horizon - (j - 1) as f64 * self.k }).collect()
    }

    /// Checks that do not depend on the data.
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) || !self.k.is_finite() {
            return Err(Error::InvalidInput(format!("scheme.k must be positive, got {}", self.k)));
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidInput(format!("scheme.T must be nonnegative, got {}", self.horizon)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput(format!("scheme.tol must be positive, got {}", self.tol)));
        }
        if let Split::Radius(r) = self.split {
            if !(r >= 0.0) {
                return Err(Error::InvalidInput(format!("split radius must be nonnegative, got {r}")));
            }
        }
        if self.nu.dim() != self.grid.dim() {
            return Err(Error::GridMismatch("measure and grid dimensions differ".into()));
        }
        for &t in &self.output_times {
            if !(t >= 0.0 && t <= self.horizon * (1.0 + 1e-12)) {
                return Err(Error::InvalidInput(format!("output time {t} outside [0, {}]", self.horizon)));
            }
        }
        let (_, nu2) = split_measure(&self.nu, self.split);
        if !nu2.is_empty() {
            let lip = self.nl_explicit.local_lipschitz(1.0);
            if !lip.is_finite() {
                return Err(Error::Stability(format!(
                    "unbounded Lipschitz constant: {} nonlinearity has infinite slope, explicit split {} is not allowed",
                    self.nl_explicit.kind(),
                    self.split.name()
                )));
            }
        }
        Ok(())
    }

    /// `k Lambda_2 Lip(phi_2 on [-bound, bound]) <= 1`.
    pub fn check_cfl(&self, bound: f64) -> Result<()> {
        let (_, nu2) = split_measure(&self.nu, self.split);
        if nu2.is_empty() {
            return Ok(());
        }
        let lambda2 = nu2.total_mass();
        let lip = self.nl_explicit.local_lipschitz(bound);
        if !lip.is_finite() {
            return Err(Error::Stability(format!(
                "unbounded Lipschitz constant for {} on [-{bound}, {bound}]",
                self.nl_explicit.kind()
            )));
        }
        let number = self.k * lambda2 * lip;
        if number > 1.0 + 1e-12 {
            return Err(Error::Stability(format!(
                "k * Lambda_2 * Lip(phi_2) = {} * {} * {} = {number} > 1",
                self.k, lambda2, lip
            )));
        }
        Ok(())
    }
}

/// Per-step diagnostics. The first six columns after `time` are the ones
/// written to `diagnostics.csv`; the rest feed the property checks.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRow {
    pub step: usize,
    pub time: f64,
    pub mass: f64,
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    /// `h^N sum Phi(U^j)`.
    pub phi_mass: f64,
    /// `sum_i k_i E_i`, with the implicit part of the form evaluated at
    /// `phi(U^i)` and the explicit part pairing `phi(U^i)` with `phi_2(U^{i-1})`.
    pub energy_cum: f64,
    /// `sum_i k_i h^N sum G^i`.
    pub source_mass_cum: f64,
    pub source_l1_cum: f64,
    pub source_l2_cum: f64,
    pub source_linf_cum: f64,
    /// `sum_i k_i h^N sum G^i phi(U^i)`.
    pub source_work_cum: f64,
    /// `||U^j - U^0||_1`, reported against `t^{1/3}` as a time-regularity diagnostic.
    pub drift_l1: f64,
    pub max_abs_phi: f64,
}

pub const DIAGNOSTICS_HEADER: &str = "step,time,mass,l1,l2,linf,phi_mass,energy_cum";

impl DiagnosticsRow {
    pub fn csv_line(&self) -> String {
        use crate::grid::fmt_f64;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            fmt_f64(self.time),
            fmt_f64(self.mass),
            fmt_f64(self.l1),
            fmt_f64(self.l2),
            fmt_f64(self.linf),
            fmt_f64(self.phi_mass),
            fmt_f64(self.energy_cum)
        )
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Grid,
    pub snapshots: Vec<(f64, GridFunction)>,
    pub diagnostics: Vec<DiagnosticsRow>,
    pub reports: Vec<SolveReport>,
    pub step_sizes: Vec<f64>,
    /// `U^0, ..., U^J` when steps are recorded.
    pub states: Vec<GridFunction>,
    /// `G^1, ..., G^J` when steps are recorded.
    pub sources: Vec<GridFunction>,
    pub initial: GridFunction,
    pub final_state: GridFunction,
    /// `phi` of the implicit part, kept for the property checks.
    pub nl: Nonlinearity,
    /// Step at which a solve failed to converge; the trajectory stops there.
    pub aborted_at: Option<usize>,
    pub tol: f64,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.diagnostics.len() - 1
    }

    pub fn completed(&self) -> bool {
        self.aborted_at.is_none()
    }

    pub fn diagnostics_csv(&self) -> String {
        let mut out = String::from(DIAGNOSTICS_HEADER);
        out.push('\n');
        for row in &self.diagnostics {
            out.push_str(&row.csv_line());
            out.push('\n');
        }
        out
    }

    /// `(t_j, ||U^j - U^0||_1, t_j^{1/3})`, diagnostic only.
    pub fn time_regularity(&self) -> Vec<(f64, f64, f64)> {
        self.diagnostics.iter().map(|r| (r.time, r.drift_l1, r.time.cbrt())).collect()
    }
}

/// Prepared operators for one scheme configuration.
#[derive(Debug, Clone)]
pub struct Stepper {
    cfg: SchemeConfig,
    implicit: StencilOperator,
    explicit: StencilOperator,
}

impl Stepper {
    pub fn new(cfg: SchemeConfig) -> Result<Self> {
        cfg.validate()?;
        let (nu1, nu2) = split_measure(&cfg.nu, cfg.split);
        let implicit = StencilOperator::new(nu1, cfg.grid)?;
        let explicit = StencilOperator::new(nu2, cfg.grid)?;
        Ok(Self { cfg, implicit, explicit })
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.cfg
    }

    pub fn implicit_operator(&self) -> &StencilOperator {
        &self.implicit
    }

    pub fn explicit_operator(&self) -> &StencilOperator {
        &self.explicit
    }

    /// One step of length `dt` from `u_prev` with averaged source `g`.
    pub fn step(&self, u_prev: &GridFunction, g: &GridFunction, dt: f64) -> Result<(GridFunction, SolveReport)> {
        u_prev.check_same_grid(g)?;
        if *u_prev.grid() != self.cfg.grid {
            return Err(Error::GridMismatch("state grid differs from scheme grid".into()));
        }
        let mut f: Vec<f64> = u_prev.values().to_vec();
        if !self.explicit.is_empty() {
            let lip = self.cfg.nl_explicit.local_lipschitz(u_prev.max_abs());
            let number = dt * self.explicit.measure().total_mass() * lip;
            if !(number <= 1.0 + 1e-12) {
                return Err(Error::Stability(format!(
                    "k * Lambda_2 * Lip(phi_2) = {number} > 1 on the current state range"
                )));
            }
            let l2 = self.explicit.apply(&u_prev.map(|v| self.cfg.nl_explicit.eval(v)))?;
            for (fi, li) in f.iter_mut().zip(l2.values()) {
                *fi += dt * li;
            }
        }
        for (fi, gi) in f.iter_mut().zip(g.values()) {
            *fi += dt * gi;
        }
        let f = GridFunction::new(self.cfg.grid, f)?;
        // half the budget per solve: two residual-certified solves then
        // differ from exact ones by at most `tol` per step in sup norm
        let opts = SolverOptions {
            tol: 0.5 * self.cfg.tol,
            max_iterations: self.cfg.max_iterations,
            method: SolverMethod::Jacobi,
        };
        solve_nonlinear_elliptic_with(&self.implicit, dt, &self.cfg.nl, &f, &opts)
    }

    /// Marches from `u0` to `T`.
    pub fn run(&self, u0: &GridFunction, g: &SourceTerm) -> Result<Trajectory> {
        let cfg = &self.cfg;
        if *u0.grid() != cfg.grid {
            return Err(Error::GridMismatch("initial data grid differs from scheme grid".into()));
        }
        let dts = cfg.step_sizes();
        let mut times = vec![0.0];
        for (j, _) in dts.iter().enumerate() {
            times.push(if j + 1 == dts.len() { cfg.horizon } else { (j + 1) as f64 * cfg.k });
        }
        let mut sources = Vec::with_capacity(dts.len());
        for j in 0..dts.len() {
            sources.push(interval_average(g, times[j], times[j + 1], &cfg.grid)?);
        }
        if !self.explicit.is_empty() {
            let bound = u0.max_abs() + dts.iter().zip(&sources).map(|(dt, s)| dt * s.max_abs()).sum::<f64>();
            cfg.check_cfl(bound)?;
        }

        let mut schedule: Vec<f64> = cfg.output_times.clone();
        schedule.sort_by(f64::total_cmp);
        let mut next_out = 0;
        let mut snapshots = Vec::new();
        let eps_t = 1e-12 * cfg.horizon.max(1.0);
        while next_out < schedule.len() && schedule[next_out] <= eps_t {
            snapshots.push((0.0, u0.clone()));
            next_out += 1;
        }

        let phi0 = u0.map(|v| cfg.nl.eval(v));
        let mut diagnostics = vec![DiagnosticsRow {
            step: 0,
            time: 0.0,
            mass: u0.mass(),
            l1: u0.lp_norm(1.0),
            l2: u0.lp_norm(2.0),
            linf: u0.lp_norm(f64::INFINITY),
            phi_mass: primitive_mass(u0, &cfg.nl),
            energy_cum: 0.0,
            source_mass_cum: 0.0,
            source_l1_cum: 0.0,
            source_l2_cum: 0.0,
            source_linf_cum: 0.0,
            source_work_cum: 0.0,
            drift_l1: 0.0,
            max_abs_phi: phi0.max_abs(),
        }];
        let mut states = if cfg.record_steps { vec![u0.clone()] } else { Vec::new() };
        let mut reports = Vec::with_capacity(dts.len());
        let mut u = u0.clone();
        let mut aborted_at = None;

        for (j, (&dt, g_j)) in dts.iter().zip(&sources).enumerate() {
            let (next, report) = self.step(&u, g_j, dt)?;
            let converged = report.converged;
            reports.push(report);
            if !converged {
                aborted_at = Some(j + 1);
                break;
            }
            let phi_next = next.map(|v| cfg.nl.eval(v));
            let mut energy = self.implicit.energy_form(&phi_next, &phi_next)?;
            if !self.explicit.is_empty() {
                let phi2_prev = u.map(|v| cfg.nl_explicit.eval(v));
                energy += self.explicit.energy_form(&phi_next, &phi2_prev)?;
            }
            let prev = diagnostics.last().expect("initial row");
            let row = DiagnosticsRow {
                step: j + 1,
                time: times[j + 1],
                mass: next.mass(),
                l1: next.lp_norm(1.0),
                l2: next.lp_norm(2.0),
                linf: next.lp_norm(f64::INFINITY),
                phi_mass: primitive_mass(&next, &cfg.nl),
                energy_cum: prev.energy_cum + dt * energy,
                source_mass_cum: prev.source_mass_cum + dt * g_j.mass(),
                source_l1_cum: prev.source_l1_cum + dt * g_j.lp_norm(1.0),
                source_l2_cum: prev.source_l2_cum + dt * g_j.lp_norm(2.0),
                source_linf_cum: prev.source_linf_cum + dt * g_j.lp_norm(f64::INFINITY),
                source_work_cum: prev.source_work_cum + dt * pairing(g_j, &phi_next)?,
                drift_l1: next.zip_map(u0, |a, b| a - b)?.lp_norm(1.0),
                max_abs_phi: prev.max_abs_phi.max(phi_next.max_abs()),
            };
            diagnostics.push(row);
            while next_out < schedule.len() && schedule[next_out] <= times[j + 1] + eps_t {
                snapshots.push((times[j + 1], next.clone()));
                next_out += 1;
            }
            if cfg.record_steps {
                states.push(next.clone());
            }
            u = next;
        }

        let recorded_sources =
            if cfg.record_steps { sources.into_iter().take(diagnostics.len() - 1).collect() } else { Vec::new() };
        Ok(Trajectory {
            grid: cfg.grid,
            snapshots,
            diagnostics,
            reports,
            step_sizes: dts,
            states,
            sources: recorded_sources,
            initial: u0.clone(),
            final_state: u,
            nl: cfg.nl.clone(),
            aborted_at,
            tol: cfg.tol,
        })
    }
}

/// Convenience wrapper: build the stepper and march.
pub fn run(cfg: SchemeConfig, u0: &GridFunction, g: &SourceTerm) -> Result<Trajectory> {
    Stepper::new(cfg)?.run(u0, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::discretize_local;

    fn ring4() -> (Grid, DiscreteMeasure) {
        let grid = Grid::new(1, 4, 1.0).unwrap();
        let nu = DiscreteMeasure::from_entries(1, 1.0, [(vec![1], 1.0), (vec![-1], 1.0)]).unwrap();
        (grid, nu)
    }

    #[test]
    fn implicit_heat_step_matches_circulant_solve() {
        let (grid, nu) = ring4();
        let cfg = SchemeConfig::new(grid, nu, Nonlinearity::Identity, 1.0, 1.0).with_tol(1e-13);
        let stepper = Stepper::new(cfg).unwrap();
        let u0 = GridFunction::new(grid, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let (u1, rep) = stepper.step(&u0, &GridFunction::zeros(grid), 1.0).unwrap();
        assert!(rep.converged);
        let exact = [7.0 / 15.0, 1.0 / 5.0, 2.0 / 15.0, 1.0 / 5.0];
        for (a, b) in u1.values().iter().zip(exact) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((u1.values().iter().sum::<f64>() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn empty_operator_is_identity() {
        let grid = Grid::new(2, 3, 0.5).unwrap();
        let cfg = SchemeConfig::new(grid, DiscreteMeasure::empty(2, 0.5), Nonlinearity::power(2.0).unwrap(), 0.1, 1.0);
        let stepper = Stepper::new(cfg).unwrap();
        let u = GridFunction::from_nodes(grid, |x| x[0] - x[1]).unwrap();
        let (next, _) = stepper.step(&u, &GridFunction::zeros(grid), 0.1).unwrap();
        assert_eq!(next, u);
    }

    #[test]
    fn explicit_cfl_threshold() {
        let h = 0.1;
        let grid = Grid::new(1, 10, h).unwrap();
        let nu = discretize_local(1, &[vec![1]], h).unwrap();
        let ok = SchemeConfig::new(grid, nu.clone(), Nonlinearity::Identity, h * h / 2.0, 1.0)
            .with_split(Split::FullyExplicit);
        assert!(ok.check_cfl(1.0).is_ok());
        let bad = SchemeConfig::new(grid, nu, Nonlinearity::Identity, h * h / 2.0 * 1.01, 1.0)
            .with_split(Split::FullyExplicit);
        assert!(matches!(bad.check_cfl(1.0), Err(Error::Stability(_))));
    }

    #[test]
    fn fast_diffusion_refuses_explicit() {
        let (grid, nu) = ring4();
        let cfg =
            SchemeConfig::new(grid, nu, Nonlinearity::power(0.5).unwrap(), 0.01, 1.0).with_split(Split::FullyExplicit);
        let e = Stepper::new(cfg).unwrap_err();
        assert!(e.to_string().contains("unbounded Lipschitz constant"), "{e}");
    }

    #[test]
    fn split_partitions() {
        let nu =
            DiscreteMeasure::from_entries(1, 1.0, [(vec![1], 2.0), (vec![-1], 2.0), (vec![3], 0.5), (vec![-3], 0.5)])
                .unwrap();
        let (a, b) = split_measure(&nu, Split::Radius(1.5));
        assert_eq!(a.weight(&[1]), 2.0);
        assert_eq!(a.len(), 2);
        assert_eq!(b.weight(&[-3]), 0.5);
        assert_eq!(b.len(), 2);
        let (a, b) = split_measure(&nu, Split::FullyImplicit);
        assert_eq!(a, nu);
        assert!(b.is_empty());
        let (a, b) = split_measure(&nu, Split::FullyExplicit);
        assert!(a.is_empty());
        assert_eq!(b, nu);
    }

    #[test]
    fn zero_horizon_returns_initial_data() {
        let (grid, nu) = ring4();
        let cfg = SchemeConfig::new(grid, nu, Nonlinearity::Identity, 0.1, 0.0).with_output_times(vec![0.0]);
        let u0 = GridFunction::new(grid, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let traj = run(cfg, &u0, &SourceTerm::Zero).unwrap();
        assert_eq!(traj.snapshots.len(), 1);
        assert_eq!(traj.snapshots[0].1, u0);
        assert_eq!(traj.final_state, u0);
        assert_eq!(traj.steps(), 0);
    }

    #[test]
    fn last_step_is_shortened() {
        let (grid, nu) = ring4();
        let cfg = SchemeConfig::new(grid, nu, Nonlinearity::Identity, 0.3, 1.0);
        assert_eq!(cfg.steps(), 4);
        let dts = cfg.step_sizes();
        assert!((dts[3] - 0.1).abs() < 1e-15);
        let cfg = SchemeConfig::new(grid, cfg.nu, Nonlinearity::Identity, 0.1, 1.0);
        assert_eq!(cfg.steps(), 10);
    }

    #[test]
    fn constant_source_pure_ode() {
        let grid = Grid::new(1, 5, 0.2).unwrap();
        let cfg = SchemeConfig::new(grid, DiscreteMeasure::empty(1, 0.2), Nonlinearity::power(2.0).unwrap(), 0.1, 0.7);
        let u0 = GridFunction::from_nodes(grid, |x| x[0]).unwrap();
        let traj = run(cfg, &u0, &SourceTerm::constant(1.5)).unwrap();
        for (a, b) in traj.final_state.values().iter().zip(u0.values()) {
            assert!((a - (b + 1.5 * 0.7)).abs() < 1e-14);
        }
    }
}
