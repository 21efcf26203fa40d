//! Run configuration: JSON with strict key checking.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use levy_pme::grid::{cell_average, Grid, GridFunction, SourceTerm};
use levy_pme::levy::{LevyOperatorSpec, NonlocalMeasure, PointMass};
use levy_pme::nonlinearity::Nonlinearity;
use levy_pme::stepper::{SchemeConfig, Split};
use levy_pme::{DiscreteMeasure, Error};

use crate::CliError;

/// Environment variable that overrides `output.directory`.
pub const OUT_ENV: &str = "LEVY_PME_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub grid: GridSection,
    #[serde(default)]
    pub operator: OperatorSection,
    pub scheme: SchemeSection,
    #[serde(default)]
    pub nonlinearity: NonlinearitySection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub source: SourceSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    /// Defaults to `1 / M` (unit torus).
    #[serde(default)]
    pub h: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSection {
    #[serde(default)]
    pub sigma: Vec<Vec<f64>>,
    #[serde(default)]
    pub nonlocal: NonlocalSection,
    /// Defaults to half the torus period.
    #[serde(rename = "R_tail", default)]
    pub r_tail: Option<f64>,
}

impl Default for OperatorSection {
    fn default() -> Self {
        Self { sigma: vec![], nonlocal: NonlocalSection::None, r_tail: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NonlocalSection {
    #[default]
    None,
    /// Density `strength |z|^{-(N+alpha)}`; `strength` defaults to the
    /// normalization with symbol `|xi|^alpha`.
    Fractional {
        alpha: f64,
        #[serde(default)]
        strength: Option<f64>,
    },
    PointMasses {
        masses: Vec<PointMassEntry>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointMassEntry {
    pub location: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    pub k: f64,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(default)]
    pub split: SplitEntry,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// `phi_2` for the explicit part; defaults to the main nonlinearity.
    #[serde(default)]
    pub explicit_nonlinearity: Option<NonlinearitySection>,
}

fn default_tol() -> f64 {
    levy_pme::elliptic::DEFAULT_TOL
}

fn default_max_iterations() -> usize {
    levy_pme::elliptic::DEFAULT_MAX_ITERATIONS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitEntry {
    #[default]
    FullyImplicit,
    FullyExplicit,
    Radius(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NonlinearitySection {
    #[default]
    Identity,
    Power {
        m: f64,
    },
    Stefan {
        latent: f64,
    },
    PiecewiseLinear {
        points: Vec<(f64, f64)>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSection {
    Constant {
        value: f64,
    },
    /// `amplitude * sin(2 pi n x_1 / L)`.
    Sine {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "one_usize")]
        wavenumber: usize,
    },
    /// `amplitude * cos(2 pi n x_1 / L)`.
    Cosine {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "one_usize")]
        wavenumber: usize,
    },
    /// Indicator of the box `[lo, hi)` in every coordinate.
    Indicator {
        lo: f64,
        hi: f64,
        #[serde(default = "one")]
        value: f64,
    },
    /// `m = 2` Barenblatt profile at time `t0`, centered at `center` (1D).
    Barenblatt {
        #[serde(rename = "C")]
        c: f64,
        t0: f64,
        center: f64,
    },
    /// Cell values in flat order.
    Table {
        values: Vec<f64>,
    },
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection::Sine { amplitude: 1.0, wavenumber: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSection {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    /// Time slices, linearly interpolated.
    Table {
        slices: Vec<SourceSlice>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSlice {
    pub t: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Defaults to `[T]`.
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
}

fn default_directory() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { times: None, directory: default_directory() }
    }
}

fn invalid(key: &str, rule: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {rule}"))
}

impl Config {
    /// Minimal heat configuration: identity `phi`, `sigma = [1]`, `M = 64`, `k = h^2 / 2`.
    pub fn minimal_heat() -> Self {
        let h = 1.0 / 64.0;
        Config {
            grid: GridSection { n: 1, m: 64, h: Some(h) },
            operator: OperatorSection { sigma: vec![vec![1.0]], ..OperatorSection::default() },
            scheme: SchemeSection {
                k: 0.5 * h * h,
                t: 0.01,
                split: SplitEntry::FullyImplicit,
                tol: default_tol(),
                max_iterations: default_max_iterations(),
                explicit_nonlinearity: None,
            },
            nonlinearity: NonlinearitySection::Identity,
            initial: InitialSection::default(),
            source: SourceSection::Zero,
            output: OutputSection::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let mut cfg: Config = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Fills defaults and checks every invariant that does not need a run.
    pub fn resolve(&mut self) -> Result<(), CliError> {
        if !(1..=3).contains(&self.grid.n) {
            return Err(invalid("grid.N", format!("must be 1, 2 or 3, got {}", self.grid.n)));
        }
        if self.grid.m < 1 {
            return Err(invalid("grid.M", "must be at least 1"));
        }
        let h = *self.grid.h.get_or_insert(1.0 / self.grid.m as f64);
        if !(h > 0.0) || !h.is_finite() {
            return Err(invalid("grid.h", format!("must be positive, got {h}")));
        }
        let period = h * self.grid.m as f64;
        let r_tail = *self.operator.r_tail.get_or_insert(0.5 * period);
        if !(r_tail >= h) {
            return Err(invalid("operator.R_tail", format!("must be at least h = {h}, got {r_tail}")));
        }
        if self.output.times.is_none() {
            self.output.times = Some(vec![self.scheme.t]);
        }
        if !(self.scheme.k > 0.0) || !self.scheme.k.is_finite() {
            return Err(invalid("scheme.k", format!("must be positive, got {}", self.scheme.k)));
        }
        if !(self.scheme.t >= 0.0) || !self.scheme.t.is_finite() {
            return Err(invalid("scheme.T", format!("must be nonnegative, got {}", self.scheme.t)));
        }
        if !(self.scheme.tol > 0.0) {
            return Err(invalid("scheme.tol", format!("must be positive, got {}", self.scheme.tol)));
        }
        for (i, &t) in self.output.times.as_ref().unwrap().iter().enumerate() {
            if !(t >= 0.0 && t <= self.scheme.t * (1.0 + 1e-12)) {
                return Err(invalid(&format!("output.times[{i}]"), format!("{t} outside [0, T = {}]", self.scheme.t)));
            }
        }
        if let SplitEntry::Radius(r) = self.scheme.split {
            if !(r >= 0.0) {
                return Err(invalid("scheme.split.radius", format!("must be nonnegative, got {r}")));
            }
        }
        // build everything once so that errors surface at parse time
        let spec = self.operator_spec()?;
        self.nonlinearity_of(&self.nonlinearity, "nonlinearity")?;
        if let Some(e) = &self.scheme.explicit_nonlinearity {
            self.nonlinearity_of(e, "scheme.explicit_nonlinearity")?;
        }
        let grid = self.grid()?;
        self.initial_data(&grid)?;
        self.source_term(&grid)?;
        let nu = spec.discretize(h, r_tail).map_err(|e| invalid("operator", e))?.0;
        self.scheme_config_with(grid, nu)?.validate().map_err(|e| invalid("scheme.split", e))?;
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        self.grid.h.unwrap_or(1.0 / self.grid.m as f64)
    }

    pub fn r_tail(&self) -> f64 {
        self.operator.r_tail.unwrap_or(0.5 * self.spacing() * self.grid.m as f64)
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        Grid::new(self.grid.n, self.grid.m, self.spacing()).map_err(|e| invalid("grid", e))
    }

    pub fn operator_spec(&self) -> Result<LevyOperatorSpec, CliError> {
        let n = self.grid.n;
        let nonlocal = match &self.operator.nonlocal {
            NonlocalSection::None => NonlocalMeasure::none(n),
            NonlocalSection::Fractional { alpha, strength } => {
                let strength = match strength {
                    Some(s) => *s,
                    // outside (0, 2) the normalization is meaningless; let the
                    // measure check report the divergent moment instead
                    None if *alpha > 0.0 && *alpha < 2.0 => levy_pme::levy::fractional_laplacian_constant(n, *alpha),
                    None => 1.0,
                };
                NonlocalMeasure::fractional(n, *alpha, strength)
            }
            NonlocalSection::PointMasses { masses } => NonlocalMeasure::point_masses(
                n,
                masses.iter().map(|p| PointMass::new(p.location.clone(), p.weight)).collect(),
            ),
        };
        LevyOperatorSpec::from_real_columns(n, &self.operator.sigma, nonlocal).map_err(|e| match e {
            Error::InvalidMeasure(_) => invalid("operator.nonlocal", e),
            other => invalid("operator.sigma", other),
        })
    }

    fn nonlinearity_of(&self, s: &NonlinearitySection, key: &str) -> Result<Nonlinearity, CliError> {
        let nl = match s {
            NonlinearitySection::Identity => Ok(Nonlinearity::Identity),
            NonlinearitySection::Power { m } => Nonlinearity::power(*m),
            NonlinearitySection::Stefan { latent } => Nonlinearity::stefan(*latent),
            NonlinearitySection::PiecewiseLinear { points } => Nonlinearity::piecewise_linear(points),
        };
        nl.map_err(|e| invalid(key, e))
    }

    pub fn nonlinearity(&self) -> Result<Nonlinearity, CliError> {
        self.nonlinearity_of(&self.nonlinearity, "nonlinearity")
    }

    pub fn split(&self) -> Split {
        match self.scheme.split {
            SplitEntry::FullyImplicit => Split::FullyImplicit,
            SplitEntry::FullyExplicit => Split::FullyExplicit,
            SplitEntry::Radius(r) => Split::Radius(r),
        }
    }

    pub fn measure(&self) -> Result<DiscreteMeasure, CliError> {
        let (nu, _) =
            self.operator_spec()?.discretize(self.spacing(), self.r_tail()).map_err(|e| invalid("operator", e))?;
        Ok(nu)
    }

    fn scheme_config_with(&self, grid: Grid, nu: DiscreteMeasure) -> Result<SchemeConfig, CliError> {
        let nl = self.nonlinearity()?;
        let explicit = match &self.scheme.explicit_nonlinearity {
            Some(e) => self.nonlinearity_of(e, "scheme.explicit_nonlinearity")?,
            None => nl.clone(),
        };
        let mut cfg = SchemeConfig::new(grid, nu, nl, self.scheme.k, self.scheme.t)
            .with_split(self.split())
            .with_tol(self.scheme.tol)
            .with_explicit_nonlinearity(explicit)
            .with_output_times(self.output.times.clone().unwrap_or_else(|| vec![self.scheme.t]));
        cfg.max_iterations = self.scheme.max_iterations;
        Ok(cfg)
    }

    pub fn scheme_config(&self) -> Result<SchemeConfig, CliError> {
        self.scheme_config_with(self.grid()?, self.measure()?)
    }

    pub fn initial_data(&self, grid: &Grid) -> Result<GridFunction, CliError> {
        let period = grid.period();
        let wrap = |e: Error| invalid("initial", e);
        match &self.initial {
            InitialSection::Constant { value } => Ok(GridFunction::constant(*grid, *value)),
            InitialSection::Sine { amplitude, wavenumber } => {
                let w = 2.0 * PI * *wavenumber as f64 / period;
                cell_average(|x| amplitude * (w * x[0]).sin(), grid).map_err(wrap)
            }
            InitialSection::Cosine { amplitude, wavenumber } => {
                let w = 2.0 * PI * *wavenumber as f64 / period;
                cell_average(|x| amplitude * (w * x[0]).cos(), grid).map_err(wrap)
            }
            InitialSection::Indicator { lo, hi, value } => {
                cell_average(|x| if x.iter().all(|&v| v >= *lo && v < *hi) { *value } else { 0.0 }, grid).map_err(wrap)
            }
            InitialSection::Barenblatt { c, t0, center } => {
                if grid.dim() != 1 {
                    return Err(invalid("initial.kind", "barenblatt data is one-dimensional"));
                }
                if !(*t0 > 0.0) {
                    return Err(invalid("initial.t0", format!("must be positive, got {t0}")));
                }
                cell_average(|x| levy_pme::diagnostics::barenblatt(x[0] - center, *t0, *c), grid).map_err(wrap)
            }
            InitialSection::Table { values } => {
                if values.len() != grid.len() {
                    return Err(invalid(
                        "initial.values",
                        format!("expected {} values, got {}", grid.len(), values.len()),
                    ));
                }
                GridFunction::new(*grid, values.clone()).map_err(wrap)
            }
        }
    }

    pub fn source_term(&self, grid: &Grid) -> Result<SourceTerm, CliError> {
        match &self.source {
            SourceSection::Zero => Ok(SourceTerm::Zero),
            SourceSection::Constant { value } => Ok(SourceTerm::constant(*value)),
            SourceSection::Table { slices } => {
                let mut out = Vec::with_capacity(slices.len());
                for (i, s) in slices.iter().enumerate() {
                    if s.values.len() != grid.len() {
                        return Err(invalid(
                            &format!("source.slices[{i}].values"),
                            format!("expected {} values, got {}", grid.len(), s.values.len()),
                        ));
                    }
                    let g = GridFunction::new(*grid, s.values.clone()).map_err(|e| invalid("source", e))?;
                    out.push((s.t, g));
                }
                SourceTerm::table(out).map_err(|e| invalid("source.slices", e))
            }
        }
    }

    /// `output.directory`, unless the environment override is set.
    pub fn output_directory(&self) -> PathBuf {
        match std::env::var_os(OUT_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output.directory.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
