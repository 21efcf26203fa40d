//! Finite-difference schemes for nonlinear nonlocal diffusion
//! `u_t = L[phi(u)] + g` on the periodic torus, where `L` is a symmetric Levy
//! operator (local part, nonlocal part, or both) and `phi` is continuous and
//! nondecreasing.
//!
//! The pipeline: describe the operator with [`LevyOperatorSpec`], discretize
//! it into a [`DiscreteMeasure`], bind it to a [`Grid`] as a
//! [`StencilOperator`], and march in time with [`Stepper`].

pub mod diagnostics;
pub mod elliptic;
pub mod error;
pub mod grid;
pub mod levy;
pub mod nonlinearity;
pub mod operator;
pub mod quadrature;
pub mod spectral;
pub mod stepper;

pub use elliptic::{
    nonlinear_residual, resolvent_residual, resolvent_vanishing_probe, solve_linear_resolvent,
    solve_linear_resolvent_with, solve_nonlinear_elliptic, solve_nonlinear_elliptic_with, SolveReport, SolverMethod,
    SolverOptions, VanishingProbe,
};
pub use error::{Error, Result};
pub use grid::{cell_average, Grid, GridFunction, SourceTerm};
pub use levy::{
    discrete_symbol, discretize_local, discretize_nonlocal, fourier_symbol, validate_measure, DiscreteMeasure,
    LevyOperatorSpec, MeasureViolation, NonlocalMeasure, Offset, PointMass,
};
pub use nonlinearity::{solve_scalar, Nonlinearity, PiecewiseLinear};
pub use operator::{KernelAnalysis, StencilOperator};
pub use stepper::{run, DiagnosticsRow, SchemeConfig, Split, Stepper, Trajectory};
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
