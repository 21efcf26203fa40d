//! Property checks on trajectories and the convergence-study engine.
//!
//! Every check compares a left-hand side against the bound the scheme
//! satisfies for exact per-step solves. Solves are only certified to a
//! residual, so each comparison carries a slack budget that grows linearly
//! with the step count.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::elliptic::least_squares_slope;
use crate::error::{Error, Result};
use crate::grid::{cell_average, fmt_f64, Grid, GridFunction, SourceTerm};
use crate::levy::{discretize_local, discretize_nonlocal, DiscreteMeasure, LevyOperatorSpec, NonlocalMeasure};
use crate::nonlinearity::Nonlinearity;
use crate::operator::StencilOperator;
use crate::stepper::{SchemeConfig, Split, Stepper, Trajectory};

/// Relative roundoff allowance per accumulated step.
const ROUNDOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Property {
    L1Contraction,
    Comparison,
    L1Bound,
    L2Bound,
    LinfBound,
    Energy,
    Mass,
    SolverConvergence,
}

impl Property {
    pub const ALL: [Property; 8] = [
        Property::L1Contraction,
        Property::Comparison,
        Property::L1Bound,
        Property::L2Bound,
        Property::LinfBound,
        Property::Energy,
        Property::Mass,
        Property::SolverConvergence,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Property::L1Contraction => "l1_contraction",
            Property::Comparison => "comparison",
            Property::L1Bound => "lp_bound_1",
            Property::L2Bound => "lp_bound_2",
            Property::LinfBound => "lp_bound_inf",
            Property::Energy => "energy",
            Property::Mass => "mass",
            Property::SolverConvergence => "solver_convergence",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Property::ALL
            .iter()
            .copied()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown property {name:?}")))
    }

    fn needs_pair(&self) -> bool {
        matches!(self, Property::L1Contraction | Property::Comparison)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub name: String,
    pub instances: usize,
    /// Violation of the worst instance (largest excess over its own slack).
    pub max_violation: f64,
    /// Slack budget of that instance.
    pub slack: f64,
    pub pass: bool,
}

pub const PROPERTY_HEADER: &str = "property,instances,max_violation,slack,pass";

impl PropertyReport {
    fn empty(name: &str) -> Self {
        Self { name: name.to_string(), instances: 0, max_violation: 0.0, slack: 0.0, pass: true }
    }

    fn record(&mut self, violation: f64, slack: f64) {
        let violation = violation.max(0.0);
        if self.instances == 0 || violation - slack > self.max_violation - self.slack {
            self.max_violation = violation;
            self.slack = slack;
        }
        self.pass = self.max_violation <= self.slack;
    }

    /// Combines reports for the same property over disjoint instance sets.
    pub fn merge(&mut self, other: &PropertyReport) {
        if other.instances > 0 {
            let n = self.instances;
            self.record(other.max_violation, other.slack);
            self.instances = n + other.instances;
        }
        self.pass = self.pass && other.pass;
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.name,
            self.instances,
            fmt_f64(self.max_violation),
            fmt_f64(self.slack),
            self.pass
        )
    }
}

impl fmt::Display for PropertyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<20} {:>6} instances  max violation {:.3e}  slack {:.3e}  {}",
            self.name,
            self.instances,
            self.max_violation,
            self.slack,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

pub fn reports_csv(reports: &[PropertyReport]) -> String {
    let mut out = String::from(PROPERTY_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// Per-instance tally that counts an instance once however many time
/// levels it checks.
struct Tally {
    violation: f64,
    slack: f64,
    excess: f64,
    used: bool,
}

impl Tally {
    fn new() -> Self {
        Self { violation: 0.0, slack: 0.0, excess: f64::NEG_INFINITY, used: false }
    }

    fn check(&mut self, violation: f64, slack: f64) {
        let violation = violation.max(0.0);
        if violation - slack > self.excess {
            self.excess = violation - slack;
            self.violation = violation;
            self.slack = slack;
        }
        self.used = true;
    }

    fn into_report(self, report: &mut PropertyReport) {
        if self.used {
            let n = report.instances;
            report.record(self.violation, self.slack);
            report.instances = n + 1;
        }
    }
}

/// `M^N max(1, h^N)`: bounds `||r||_1`, `||r||_2` and `||r||_inf` by `tol` times it
/// whenever `||r||_inf <= tol`.
fn volume_factor(grid: &Grid) -> f64 {
    grid.len() as f64 * grid.cell_volume().max(1.0)
}

fn positive_part_mass(a: &GridFunction, b: &GridFunction) -> f64 {
    a.grid().cell_volume() * a.values().iter().zip(b.values()).map(|(x, y)| (x - y).max(0.0)).sum::<f64>()
}

fn max_difference(a: &GridFunction, b: &GridFunction) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| x - y).fold(f64::NEG_INFINITY, f64::max)
}

fn check_single(t: &Trajectory, which: &[Property], reports: &mut [PropertyReport]) {
    let factor = volume_factor(&t.grid);
    let d = &t.diagnostics;
    for (prop, report) in which.iter().zip(reports.iter_mut()) {
        let mut tally = Tally::new();
        match prop {
            Property::L1Bound | Property::L2Bound | Property::LinfBound => {
                for (j, row) in d.iter().enumerate() {
                    let (norm, norm0, src) = match prop {
                        Property::L1Bound => (row.l1, d[0].l1, row.source_l1_cum),
                        Property::L2Bound => (row.l2, d[0].l2, row.source_l2_cum),
                        _ => (row.linf, d[0].linf, row.source_linf_cum),
                    };
                    let bound = norm0 + src;
                    let slack = j as f64 * t.tol * factor + ROUNDOFF * (j + 1) as f64 * bound.max(1.0);
                    tally.check(norm - bound, slack);
                }
            }
            Property::Energy => {
                for (j, row) in d.iter().enumerate() {
                    let lhs = row.phi_mass + row.energy_cum;
                    let rhs = d[0].phi_mass + row.source_work_cum;
                    let magnitude = lhs.abs() + rhs.abs() + row.energy_cum.abs();
                    let slack = j as f64 * t.tol * factor * row.max_abs_phi.max(1.0)
                        + ROUNDOFF * (j + 1) as f64 * magnitude.max(1.0);
                    tally.check(lhs - rhs, slack);
                }
            }
            Property::Mass => {
                if t.nl.is_linearly_bounded_at_zero() {
                    for (j, row) in d.iter().enumerate() {
                        let expected = d[0].mass + row.source_mass_cum;
                        let magnitude = d[0].l1 + row.source_l1_cum + row.l1;
                        let slack = j as f64 * t.tol * factor + ROUNDOFF * (j + 1) as f64 * magnitude.max(1.0);
                        tally.check((row.mass - expected).abs(), slack);
                    }
                }
            }
            Property::SolverConvergence => {
                tally.check(if t.completed() { 0.0 } else { 1.0 }, 0.0);
            }
            Property::L1Contraction | Property::Comparison => {}
        }
        tally.into_report(report);
    }
}

fn check_pair(a: &Trajectory, b: &Trajectory, which: &[Property], reports: &mut [PropertyReport]) -> Result<()> {
    let factor = volume_factor(&a.grid);
    for (prop, report) in which.iter().zip(reports.iter_mut()) {
        match prop {
            Property::L1Contraction => {
                for (x, y) in [(a, b), (b, a)] {
                    let mut tally = Tally::new();
                    let mut data = positive_part_mass(&x.initial, &y.initial);
                    for j in 1..x.states.len().min(y.states.len()) {
                        let dt = x.step_sizes[j - 1];
                        data += dt * positive_part_mass(&x.sources[j - 1], &y.sources[j - 1]);
                        let lhs = positive_part_mass(&x.states[j], &y.states[j]);
                        let magnitude = x.diagnostics[j].l1 + y.diagnostics[j].l1 + data;
                        let slack = j as f64 * x.tol * factor + ROUNDOFF * (j + 1) as f64 * magnitude.max(1.0);
                        tally.check(lhs - data, slack);
                    }
                    tally.into_report(report);
                }
            }
            Property::Comparison => {
                for (lo, hi) in [(a, b), (b, a)] {
                    let ordered = max_difference(&lo.initial, &hi.initial) <= 0.0
                        && lo.sources.iter().zip(&hi.sources).all(|(g, gt)| max_difference(g, gt) <= 0.0);
                    if !ordered {
                        continue;
                    }
                    let mut tally = Tally::new();
                    for j in 0..lo.states.len().min(hi.states.len()) {
                        let scale = lo.diagnostics[j].linf.max(hi.diagnostics[j].linf).max(1.0);
                        let slack = j as f64 * lo.tol + ROUNDOFF * (j + 1) as f64 * scale;
                        tally.check(max_difference(&lo.states[j], &hi.states[j]), slack);
                    }
                    tally.into_report(report);
                }
            }
            _ => {}
        }
    }
    Ok(())
}

fn check_compatible(a: &Trajectory, b: &Trajectory) -> Result<()> {
    if a.grid != b.grid {
        return Err(Error::ScheduleMismatch("trajectories live on different grids".into()));
    }
    if a.step_sizes.len() != b.step_sizes.len()
        || a.step_sizes.iter().zip(&b.step_sizes).any(|(x, y)| (x - y).abs() > 1e-14 * x.abs().max(1.0))
    {
        return Err(Error::ScheduleMismatch(format!(
            "step schedules differ ({} vs {} steps)",
            a.step_sizes.len(),
            b.step_sizes.len()
        )));
    }
    for t in [a, b] {
        if t.states.len() != t.diagnostics.len() || t.sources.len() + 1 != t.states.len() {
            return Err(Error::InvalidInput("pair properties need trajectories recorded with every step".into()));
        }
    }
    Ok(())
}

/// Evaluates the requested properties on one trajectory, or on a pair run
/// with the same scheme. Single-run properties are evaluated on both members
/// of a pair; pair properties are skipped (zero instances) for a single run.
pub fn check_suite(a: &Trajectory, b: Option<&Trajectory>, which: &[Property]) -> Result<Vec<PropertyReport>> {
    let mut reports: Vec<PropertyReport> = which.iter().map(|p| PropertyReport::empty(p.name())).collect();
    if let Some(b) = b {
        if which.iter().any(|p| p.needs_pair()) {
            check_compatible(a, b)?;
            check_pair(a, b, which, &mut reports)?;
        } else if a.grid != b.grid {
            return Err(Error::ScheduleMismatch("trajectories live on different grids".into()));
        }
    }
    check_single(a, which, &mut reports);
    if let Some(b) = b {
        check_single(b, which, &mut reports);
    }
    Ok(reports)
}

// ---------------------------------------------------------------------------
// randomized battery

#[derive(Debug, Clone)]
pub struct BatteryConfig {
    pub seed: u64,
    pub cases: usize,
    pub steps: usize,
    pub tol: f64,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self { seed: 0, cases: 200, steps: 20, tol: 1e-10 }
    }
}

/// One drawn instance, summarized for the report.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSummary {
    pub index: usize,
    pub dim: usize,
    pub cells: usize,
    pub stencil_size: usize,
    pub split: String,
    pub nonlinearity: String,
    pub k: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct BatteryOutcome {
    pub reports: Vec<PropertyReport>,
    pub instances: Vec<InstanceSummary>,
}

impl BatteryOutcome {
    pub fn all_pass(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }
}

/// A fully specified battery instance.
#[derive(Debug, Clone)]
pub struct BatteryInstance {
    pub cfg: SchemeConfig,
    pub u0: GridFunction,
    pub v0: GridFunction,
    pub g: SourceTerm,
    pub g_tilde: SourceTerm,
}

fn random_grid_values(rng: &mut ChaCha8Rng, grid: Grid, lo: f64, hi: f64) -> GridFunction {
    let values = (0..grid.len()).map(|_| rng.gen_range(lo..hi)).collect();
    GridFunction::new(grid, values).expect("finite values")
}

fn random_offset(rng: &mut ChaCha8Rng, dim: usize, reach: i64) -> Vec<i64> {
    loop {
        let b: Vec<i64> = (0..dim).map(|_| rng.gen_range(-reach..=reach)).collect();
        if b.iter().any(|&v| v != 0) {
            return b;
        }
    }
}

fn random_nonlinearity(rng: &mut ChaCha8Rng) -> Nonlinearity {
    match rng.gen_range(0..5) {
        0 => Nonlinearity::Identity,
        1 => Nonlinearity::power([1.5, 2.0, 3.0][rng.gen_range(0..3)]).expect("valid exponent"),
        2 => Nonlinearity::stefan(rng.gen_range(0.0..0.5)).expect("valid latent heat"),
        _ => {
            let knots = rng.gen_range(3..6);
            let mut x = -2.0;
            let mut y = if rng.gen_bool(0.3) { rng.gen_range(-0.5..0.5) } else { 0.0 };
            let mut points = Vec::with_capacity(knots);
            for i in 0..knots {
                points.push((x, y));
                if i + 1 < knots {
                    let dx = rng.gen_range(0.3..1.5);
                    let slope = if rng.gen_bool(0.25) { 0.0 } else { rng.gen_range(0.1..2.0) };
                    x += dx;
                    y += slope * dx;
                }
            }
            // shift so that the breakpoints straddle zero
            let shift = points[knots / 2].0;
            let points: Vec<(f64, f64)> = points.into_iter().map(|(a, b)| (a - shift, b)).collect();
            Nonlinearity::piecewise_linear(&points).expect("monotone knots")
        }
    }
}

/// Draws instance `index` of the battery with seed `seed`.
pub fn battery_instance(seed: u64, index: usize, steps: usize, tol: f64) -> Result<BatteryInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let dim = if rng.gen_bool(0.6) { 1 } else { 2 };
    let cells = if dim == 1 { rng.gen_range(8..=40) } else { rng.gen_range(4..=10) };
    let grid = Grid::with_period(dim, cells, 1.0)?;
    let h = grid.spacing();

    let p = rng.gen_range(0..=2);
    let sigma: Vec<Vec<i64>> = (0..p).map(|_| random_offset(&mut rng, dim, 2)).collect();
    let mut nu = discretize_local(dim, &sigma, h)?;
    let jumps = rng.gen_range(1..=4);
    let reach = if dim == 1 { 6 } else { 3 };
    for _ in 0..jumps {
        let beta = random_offset(&mut rng, dim, reach);
        nu.add_symmetric(&beta, rng.gen_range(0.1..2.0) / (h * h))?;
    }
    if rng.gen_bool(0.3) {
        let alpha = rng.gen_range(0.3..1.7);
        let r_tail = (rng.gen_range(2.0..4.0) * h).min(0.5);
        let frac = discretize_nonlocal(&NonlocalMeasure::fractional_laplacian(dim, alpha), h, r_tail)?;
        nu = nu.sum(&frac.measure)?;
    }

    let mut nl = random_nonlinearity(&mut rng);
    let split = match rng.gen_range(0..10) {
        0..=4 => Split::FullyImplicit,
        5 | 6 => Split::FullyExplicit,
        _ => Split::Radius(h * rng.gen_range(1.0..3.0)),
    };
    if split != Split::FullyImplicit && matches!(nl, Nonlinearity::Power { m } if m > 2.0) {
        nl = Nonlinearity::power(2.0)?;
    }

    let u0 = random_grid_values(&mut rng, grid, -1.0, 1.0);
    let ordered = rng.gen_bool(0.5);
    let v0 = if ordered {
        let bump = random_grid_values(&mut rng, grid, 0.0, 0.5);
        u0.zip_map(&bump, |a, b| a + b)?
    } else {
        random_grid_values(&mut rng, grid, -1.0, 1.0)
    };

    let lambda = nu.total_mass();
    let mut k = rng.gen_range(0.2..3.0) / lambda;
    let horizon_of = |k: f64| k * steps as f64;
    let g0 = random_grid_values(&mut rng, grid, -0.5, 0.5);
    let g1 = random_grid_values(&mut rng, grid, -0.5, 0.5);
    let (gt0, gt1) = if ordered {
        let b0 = random_grid_values(&mut rng, grid, 0.0, 0.3);
        let b1 = random_grid_values(&mut rng, grid, 0.0, 0.3);
        (g0.zip_map(&b0, |a, b| a + b)?, g1.zip_map(&b1, |a, b| a + b)?)
    } else {
        (random_grid_values(&mut rng, grid, -0.5, 0.5), random_grid_values(&mut rng, grid, -0.5, 0.5))
    };

    let (_, nu2) = crate::stepper::split_measure(&nu, split);
    if !nu2.is_empty() {
        let lambda2 = nu2.total_mass();
        for _ in 0..4 {
            let bound = u0.max_abs().max(v0.max_abs()) + horizon_of(k) * 0.8;
            let lip = nl.local_lipschitz(bound).max(1e-12);
            k = k.min(0.9 / (lambda2 * lip));
        }
    }
    let horizon = horizon_of(k);
    let g = SourceTerm::table(vec![(0.0, g0), (horizon, g1)])?;
    let g_tilde = SourceTerm::table(vec![(0.0, gt0), (horizon, gt1)])?;
    let cfg = SchemeConfig::new(grid, nu, nl, k, horizon).with_split(split).with_tol(tol).recording_steps();
    Ok(BatteryInstance { cfg, u0, v0, g, g_tilde })
}

fn run_instance(index: usize, inst: &BatteryInstance) -> Result<(Vec<PropertyReport>, InstanceSummary)> {
    let stepper = Stepper::new(inst.cfg.clone())?;
    let a = stepper.run(&inst.u0, &inst.g)?;
    let b = stepper.run(&inst.v0, &inst.g_tilde)?;
    let reports = check_suite(&a, Some(&b), &Property::ALL)?;
    let summary = InstanceSummary {
        index,
        dim: inst.cfg.grid.dim(),
        cells: inst.cfg.grid.cells(),
        stencil_size: inst.cfg.nu.len(),
        split: inst.cfg.split.name(),
        nonlinearity: inst.cfg.nl.kind().to_string(),
        k: inst.cfg.k,
        pass: reports.iter().all(|r| r.pass),
    };
    Ok((reports, summary))
}

/// Runs the seeded battery; instances run concurrently, each sequentially.
pub fn run_battery(cfg: &BatteryConfig) -> Result<BatteryOutcome> {
    let results: Vec<Result<(Vec<PropertyReport>, InstanceSummary)>> = (0..cfg.cases)
        .into_par_iter()
        .map(|i| {
            let inst = battery_instance(cfg.seed, i, cfg.steps, cfg.tol)?;
            run_instance(i, &inst)
        })
        .collect();
    let mut reports: Vec<PropertyReport> = Property::ALL.iter().map(|p| PropertyReport::empty(p.name())).collect();
    let mut instances = Vec::with_capacity(cfg.cases);
    for r in results {
        let (rep, summary) = r?;
        for (acc, x) in reports.iter_mut().zip(&rep) {
            acc.merge(x);
        }
        instances.push(summary);
    }
    Ok(BatteryOutcome { reports, instances })
}

// ---------------------------------------------------------------------------
// convergence studies

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Preset {
    /// `phi = id`, `sigma = [1]`, `u0 = sin(2 pi x)` on the unit torus.
    Heat,
    /// `phi(r) = |r| r`, `sigma = [1]`, Barenblatt data from `t = 1` to `t = 2`.
    Barenblatt,
    /// `phi = id`, fractional Laplacian of order `alpha`, `u0 = cos(2 pi x)`.
    Fractional { alpha: f64 },
}

/// Time-step rule `k = factor * h^power`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRule {
    pub factor: f64,
    pub power: f64,
}

impl StepRule {
    pub fn parabolic(factor: f64) -> Self {
        Self { factor, power: 2.0 }
    }

    pub fn step(&self, h: f64) -> f64 {
        self.factor * h.powf(self.power)
    }
}

/// Barenblatt profile for `m = 2`, `N = 1`: `t^{-1/3} (C - x^2 / (12 t^{2/3}))_+`.
pub fn barenblatt(x: f64, t: f64, c: f64) -> f64 {
    let t13 = t.cbrt();
    ((c - x * x / (12.0 * t13 * t13)).max(0.0)) / t13
}

const BARENBLATT_C: f64 = 0.5;
const BARENBLATT_PERIOD: f64 = 16.0;
const BARENBLATT_T0: f64 = 1.0;
const BARENBLATT_T1: f64 = 2.0;

impl Preset {
    pub fn name(&self) -> String {
        match self {
            Preset::Heat => "heat".into(),
            Preset::Barenblatt => "barenblatt".into(),
            Preset::Fractional { alpha } => format!("fractional(alpha={alpha})"),
        }
    }

    pub fn period(&self) -> f64 {
        match self {
            Preset::Barenblatt => BARENBLATT_PERIOD,
            _ => 1.0,
        }
    }

    /// Elapsed time of the run.
    pub fn horizon(&self) -> f64 {
        match self {
            Preset::Heat => 0.1,
            Preset::Barenblatt => BARENBLATT_T1 - BARENBLATT_T0,
            Preset::Fractional { .. } => 0.1,
        }
    }

    pub fn tol(&self) -> f64 {
        match self {
            Preset::Heat | Preset::Fractional { .. } => 1e-13,
            Preset::Barenblatt => 1e-12,
        }
    }

    pub fn default_h_list(&self) -> Vec<f64> {
        match self {
            Preset::Heat => (4..=8).map(|i| 2f64.powi(-i)).collect(),
            Preset::Barenblatt => (2..=6).map(|i| 2f64.powi(-i)).collect(),
            Preset::Fractional { .. } => (3..=7).map(|i| 2f64.powi(-i)).collect(),
        }
    }

    pub fn default_step_rule(&self) -> StepRule {
        match self {
            Preset::Heat => StepRule::parabolic(0.5),
            Preset::Barenblatt => StepRule::parabolic(0.5),
            Preset::Fractional { .. } => StepRule { factor: 0.25, power: 1.0 },
        }
    }

    pub fn reference_note(&self) -> &'static str {
        match self {
            Preset::Heat => "exact solution exp(-4 pi^2 t) sin(2 pi x), cell-averaged",
            Preset::Barenblatt => "exact Barenblatt profile at t = 2, cell-averaged",
            Preset::Fractional { .. } => {
                "spectral self-reference: exact decay of the lattice mode under the finest grid's own symbol and step"
            }
        }
    }

    pub fn operator_measure(&self, h: f64) -> Result<DiscreteMeasure> {
        match self {
            Preset::Heat | Preset::Barenblatt => discretize_local(1, &[vec![1]], h),
            Preset::Fractional { alpha } => {
                let spec = LevyOperatorSpec::new(1, vec![], NonlocalMeasure::fractional_laplacian(1, *alpha))?;
                Ok(spec.discretize(h, 0.5 * self.period())?.0)
            }
        }
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        match self {
            Preset::Barenblatt => Nonlinearity::Power { m: 2.0 },
            _ => Nonlinearity::Identity,
        }
    }

    pub fn initial_data(&self, grid: &Grid) -> Result<GridFunction> {
        use std::f64::consts::PI;
        match self {
            Preset::Heat => cell_average(|x| (2.0 * PI * x[0]).sin(), grid),
            Preset::Barenblatt => {
                let center = 0.5 * BARENBLATT_PERIOD;
                cell_average(|x| barenblatt(x[0] - center, BARENBLATT_T0, BARENBLATT_C), grid)
            }
            // a lattice mode, sampled at the nodes
            Preset::Fractional { .. } => GridFunction::from_nodes(*grid, |x| (2.0 * PI * x[0]).cos()),
        }
    }

    pub fn scheme(&self, h: f64, rule: StepRule) -> Result<SchemeConfig> {
        let grid = grid_for(self.period(), h)?;
        let nu = self.operator_measure(grid.spacing())?;
        Ok(SchemeConfig::new(grid, nu, self.nonlinearity(), rule.step(grid.spacing()), self.horizon())
            .with_tol(self.tol()))
    }
}

fn grid_for(period: f64, h: f64) -> Result<Grid> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("spacing must be positive, got {h}")));
    }
    let m = (period / h).round();
    if m < 2.0 || ((m * h - period).abs() > 1e-9 * period) {
        return Err(Error::InvalidInput(format!("spacing {h} does not divide the period {period}")));
    }
    Grid::with_period(1, m as usize, period)
}

/// `prod_i (1 + dt_i s)^{-1}`: backward Euler applied to a lattice mode with symbol `s`.
pub fn mode_decay(symbol: f64, step_sizes: &[f64]) -> f64 {
    step_sizes.iter().fold(1.0, |a, dt| a / (1.0 + dt * symbol))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub h: f64,
    pub k: f64,
    pub error_l1: f64,
    pub error_linf: f64,
    /// Fractional preset only: distance to this grid's own spectral solution.
    pub self_reference_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub preset: String,
    pub reference: String,
    /// Sorted by `h` descending.
    pub rows: Vec<ConvergenceRow>,
    /// Observed orders between successive rows.
    pub orders_l1: Vec<f64>,
    pub orders_linf: Vec<f64>,
    /// Least-squares log-log slope over all rows with a nonzero error.
    pub fitted_order_l1: f64,
    pub fitted_order_linf: f64,
}

pub const CONVERGENCE_HEADER: &str = "h,k,error_l1,error_linf,order_l1,order_linf";

impl ConvergenceTable {
    pub fn from_rows(preset: String, reference: String, mut rows: Vec<ConvergenceRow>) -> Self {
        rows.sort_by(|a, b| b.h.total_cmp(&a.h));
        let order = |e0: f64, e1: f64, h0: f64, h1: f64| (e0 / e1).ln() / (h0 / h1).ln();
        let orders_l1 = rows.windows(2).map(|w| order(w[0].error_l1, w[1].error_l1, w[0].h, w[1].h)).collect();
        let orders_linf = rows.windows(2).map(|w| order(w[0].error_linf, w[1].error_linf, w[0].h, w[1].h)).collect();
        let fit = |sel: fn(&ConvergenceRow) -> f64| {
            let pts: Vec<(f64, f64)> = rows.iter().filter(|r| sel(r) > 0.0).map(|r| (r.h.ln(), sel(r).ln())).collect();
            least_squares_slope(&pts)
        };
        let fitted_order_l1 = fit(|r| r.error_l1);
        let fitted_order_linf = fit(|r| r.error_linf);
        Self { preset, reference, rows, orders_l1, orders_linf, fitted_order_l1, fitted_order_linf }
    }

    pub fn l1_strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].error_l1 < w[0].error_l1)
    }

    pub fn linf_strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].error_linf < w[0].error_linf)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CONVERGENCE_HEADER);
        out.push('\n');
        for (i, r) in self.rows.iter().enumerate() {
            let (o1, oi) = if i == 0 {
                (String::new(), String::new())
            } else {
                (fmt_f64(self.orders_l1[i - 1]), fmt_f64(self.orders_linf[i - 1]))
            };
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                fmt_f64(r.h),
                fmt_f64(r.k),
                fmt_f64(r.error_l1),
                fmt_f64(r.error_linf),
                o1,
                oi
            ));
        }
        out
    }
}

impl fmt::Display for ConvergenceTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "preset: {}", self.preset)?;
        writeln!(f, "reference: {}", self.reference)?;
        writeln!(f, "{:>12} {:>12} {:>12} {:>12} {:>8} {:>8}", "h", "k", "err_L1", "err_Linf", "ord_L1", "ord_Linf")?;
        for (i, r) in self.rows.iter().enumerate() {
            let (o1, oi) = if i == 0 { (f64::NAN, f64::NAN) } else { (self.orders_l1[i - 1], self.orders_linf[i - 1]) };
            writeln!(
                f,
                "{:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>8.3} {:>8.3}",
                r.h, r.k, r.error_l1, r.error_linf, o1, oi
            )?;
        }
        write!(f, "fitted orders: L1 {:.3}, Linf {:.3}", self.fitted_order_l1, self.fitted_order_linf)
    }
}

fn errors(u: &GridFunction, reference: &GridFunction) -> Result<(f64, f64)> {
    let d = u.zip_map(reference, |a, b| a - b)?;
    Ok((d.lp_norm(1.0), d.lp_norm(f64::INFINITY)))
}

/// Runs `preset` on every spacing in `h_list` and measures final-time errors.
pub fn convergence_study(preset: Preset, h_list: &[f64], rule: StepRule) -> Result<ConvergenceTable> {
    use std::f64::consts::PI;
    if h_list.is_empty() {
        return Err(Error::InvalidInput("convergence study needs at least one spacing".into()));
    }
    let runs: Vec<Result<(SchemeConfig, Trajectory)>> = h_list
        .par_iter()
        .map(|&h| {
            let cfg = preset.scheme(h, rule)?;
            let u0 = preset.initial_data(&cfg.grid)?;
            let traj = Stepper::new(cfg.clone())?.run(&u0, &SourceTerm::Zero)?;
            if let Some(j) = traj.aborted_at {
                let rep = &traj.reports[j - 1];
                return Err(Error::NotConverged {
                    iterations: rep.iterations,
                    residual: rep.final_residual_sup,
                    tolerance: cfg.tol,
                });
            }
            Ok((cfg, traj))
        })
        .collect();
    let runs: Vec<(SchemeConfig, Trajectory)> = runs.into_iter().collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(runs.len());
    match preset {
        Preset::Heat => {
            let t = preset.horizon();
            let decay = (-4.0 * PI * PI * t).exp();
            for (cfg, traj) in &runs {
                let exact = cell_average(|x| decay * (2.0 * PI * x[0]).sin(), &cfg.grid)?;
                let (e1, ei) = errors(&traj.final_state, &exact)?;
                rows.push(ConvergenceRow {
                    h: cfg.grid.spacing(),
                    k: cfg.k,
                    error_l1: e1,
                    error_linf: ei,
                    self_reference_error: None,
                });
            }
        }
        Preset::Barenblatt => {
            let center = 0.5 * BARENBLATT_PERIOD;
            for (cfg, traj) in &runs {
                let exact = cell_average(|x| barenblatt(x[0] - center, BARENBLATT_T1, BARENBLATT_C), &cfg.grid)?;
                let (e1, ei) = errors(&traj.final_state, &exact)?;
                rows.push(ConvergenceRow {
                    h: cfg.grid.spacing(),
                    k: cfg.k,
                    error_l1: e1,
                    error_linf: ei,
                    self_reference_error: None,
                });
            }
        }
        Preset::Fractional { .. } => {
            let amplitude = |cfg: &SchemeConfig, traj: &Trajectory| -> Result<f64> {
                let op = StencilOperator::new(cfg.nu.clone(), cfg.grid)?;
                Ok(mode_decay(op.lattice_symbol(&[1]), &traj.step_sizes))
            };
            let finest =
                runs.iter().min_by(|a, b| a.0.grid.spacing().total_cmp(&b.0.grid.spacing())).expect("nonempty");
            let a_ref = amplitude(&finest.0, &finest.1)?;
            for (cfg, traj) in &runs {
                let u0 = preset.initial_data(&cfg.grid)?;
                let reference = u0.map(|v| a_ref * v);
                let own = u0.map(|v| amplitude(cfg, traj).map(|a| a * v).unwrap_or(f64::NAN));
                let (e1, ei) = errors(&traj.final_state, &reference)?;
                let (_, self_err) = errors(&traj.final_state, &own)?;
                rows.push(ConvergenceRow {
                    h: cfg.grid.spacing(),
                    k: cfg.k,
                    error_l1: e1,
                    error_linf: ei,
                    self_reference_error: Some(self_err),
                });
            }
        }
    }
    Ok(ConvergenceTable::from_rows(preset.name(), preset.reference_note().into(), rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stepper::run;

    fn ring(m: usize) -> (Grid, DiscreteMeasure) {
        let grid = Grid::new(1, m, 1.0).unwrap();
        let nu = DiscreteMeasure::from_entries(1, 1.0, [(vec![1], 1.0), (vec![-1], 1.0)]).unwrap();
        (grid, nu)
    }

    #[test]
    fn identical_runs_do_not_violate_contraction() {
        let (grid, nu) = ring(6);
        let cfg = SchemeConfig::new(grid, nu, Nonlinearity::power(2.0).unwrap(), 0.5, 2.0).recording_steps();
        let u0 = GridFunction::new(grid, vec![1.0, 0.0, -0.5, 0.3, 0.0, 0.2]).unwrap();
        let a = run(cfg.clone(), &u0, &SourceTerm::Zero).unwrap();
        let b = run(cfg, &u0, &SourceTerm::Zero).unwrap();
        let reps = check_suite(&a, Some(&b), &[Property::L1Contraction]).unwrap();
        assert_eq!(reps[0].max_violation, 0.0);
        assert!(reps[0].pass);
        assert_eq!(reps[0].instances, 2);
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let (grid, nu) = ring(5);
        let cfg = SchemeConfig::new(grid, nu, Nonlinearity::stefan(0.2).unwrap(), 0.3, 1.5).recording_steps();
        let u0 = GridFunction::new(grid, vec![1.0, 0.5, 0.0, 2.0, 0.1]).unwrap();
        let v0 = GridFunction::zeros(grid);
        let a = run(cfg.clone(), &u0, &SourceTerm::Zero).unwrap();
        let b = run(cfg, &v0, &SourceTerm::Zero).unwrap();
        assert!(b.states.iter().all(|s| s.values().iter().all(|&v| v == 0.0)));
        let reps = check_suite(&a, Some(&b), &Property::ALL).unwrap();
        assert!(reps.iter().all(|r| r.pass), "{reps:?}");
        // with V = 0 the contraction bound is the mass itself
        let lhs = positive_part_mass(&a.final_state, &b.final_state);
        assert!((lhs - u0.mass()).abs() <= 5.0 * 1e-10 * 5.0);
    }

    #[test]
    fn schedule_mismatch_is_rejected() {
        let (grid, nu) = ring(4);
        let u0 = GridFunction::constant(grid, 1.0);
        let a = run(
            SchemeConfig::new(grid, nu.clone(), Nonlinearity::Identity, 0.5, 1.0).recording_steps(),
            &u0,
            &SourceTerm::Zero,
        )
        .unwrap();
        let b = run(
            SchemeConfig::new(grid, nu, Nonlinearity::Identity, 0.25, 1.0).recording_steps(),
            &u0,
            &SourceTerm::Zero,
        )
        .unwrap();
        assert!(matches!(check_suite(&a, Some(&b), &[Property::Comparison]), Err(Error::ScheduleMismatch(_))));
    }

    #[test]
    fn fabricated_violation_is_caught() {
        let (grid, nu) = ring(4);
        let u0 = GridFunction::new(grid, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let mut a = run(SchemeConfig::new(grid, nu, Nonlinearity::Identity, 0.5, 1.0), &u0, &SourceTerm::Zero).unwrap();
        a.diagnostics[2].mass += 1e-3;
        a.diagnostics[2].l1 += 1e-3;
        let reps = check_suite(&a, None, &[Property::Mass, Property::L1Bound]).unwrap();
        assert!(reps.iter().all(|r| !r.pass));
    }

    #[test]
    fn battery_is_reproducible() {
        let a = battery_instance(11, 3, 20, 1e-10).unwrap();
        let b = battery_instance(11, 3, 20, 1e-10).unwrap();
        assert_eq!(a.u0, b.u0);
        assert_eq!(a.cfg.nu, b.cfg.nu);
        assert_eq!(a.cfg.k, b.cfg.k);
        let small = BatteryConfig { seed: 5, cases: 6, ..BatteryConfig::default() };
        let x = run_battery(&small).unwrap();
        let y = run_battery(&small).unwrap();
        assert_eq!(x.reports, y.reports);
        assert!(x.all_pass(), "{:?}", x.reports);
    }

    #[test]
    fn table_orders() {
        let rows = vec![
            ConvergenceRow { h: 0.25, k: 0.0, error_l1: 1e-2, error_linf: 4e-2, self_reference_error: None },
            ConvergenceRow { h: 0.5, k: 0.0, error_l1: 4e-2, error_linf: 1.6e-1, self_reference_error: None },
            ConvergenceRow { h: 0.125, k: 0.0, error_l1: 2.5e-3, error_linf: 1e-2, self_reference_error: None },
        ];
        let t = ConvergenceTable::from_rows("x".into(), "y".into(), rows);
        assert_eq!(t.rows[0].h, 0.5);
        assert!(t.orders_l1.iter().all(|o| (o - 2.0).abs() < 1e-12));
        assert!((t.fitted_order_linf - 2.0).abs() < 1e-12);
        assert!(t.l1_strictly_decreasing());
    }

    #[test]
    fn barenblatt_profile() {
        assert_eq!(barenblatt(0.0, 1.0, 0.5), 0.5);
        assert_eq!(barenblatt(3.0, 1.0, 0.5), 0.0);
        let t: f64 = 8.0;
        assert!((barenblatt(0.0, t, 0.5) - 0.25).abs() < 1e-15);
    }
}
