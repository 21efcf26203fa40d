//! Elliptic problems on the torus.
//!
//! * the linear resolvent `eps v - L v = gamma`, `v = B_eps[gamma]`;
//! * the nonlinear problem `w - k L[phi(w)] = f` solved once per time step.
//!
//! Every returned solution carries a sup-norm residual of the equation it
//! solves, computed directly from the operator and independent of the
//! iteration that produced it.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::nonlinearity::{solve_scalar, Nonlinearity};
use crate::operator::StencilOperator;
use crate::spectral;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERATIONS: usize = 100_000;
/// Restarts without halving the true residual before CG gives up.
const CG_STALL_RESTARTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMethod {
    /// Fixed-point / nonlinear Jacobi sweeps.
    Jacobi,
    /// Conjugate gradients on the symmetric positive definite system.
    ConjugateGradient,
    /// Diagonal solve in the lattice Fourier basis, polished by CG.
    Spectral,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_residual_sup: f64,
    pub converged: bool,
    pub wall_time: Duration,
    pub method: SolverMethod,
}

impl SolveReport {
    pub fn ensure_converged(&self, tol: f64) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::NotConverged { iterations: self.iterations, residual: self.final_residual_sup, tolerance: tol })
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iterations: usize,
    pub method: SolverMethod,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iterations: DEFAULT_MAX_ITERATIONS, method: SolverMethod::ConjugateGradient }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Sup-norm residual of `eps v - L v - gamma`.
pub fn resolvent_residual(eps: f64, op: &StencilOperator, v: &GridFunction, gamma: &GridFunction) -> Result<f64> {
    let lv = op.apply(v)?;
    let r: Vec<f64> =
        v.values().iter().zip(lv.values()).zip(gamma.values()).map(|((&a, &l), &g)| eps * a - l - g).collect();
    Ok(sup(&r))
}

/// Sup-norm residual of `w - k L[phi(w)] - f`.
pub fn nonlinear_residual(
    op: &StencilOperator,
    k: f64,
    nl: &Nonlinearity,
    w: &GridFunction,
    f: &GridFunction,
) -> Result<f64> {
    let lphi = op.apply(&w.map(|v| nl.eval(v)))?;
    let r: Vec<f64> =
        w.values().iter().zip(lphi.values()).zip(f.values()).map(|((&a, &l), &b)| a - k * l - b).collect();
    Ok(sup(&r))
}

/// Solves `eps v - L v = gamma` with the default method (conjugate gradients).
pub fn solve_linear_resolvent(
    eps: f64,
    op: &StencilOperator,
    gamma: &GridFunction,
    tol: f64,
) -> Result<(GridFunction, SolveReport)> {
    solve_linear_resolvent_with(eps, op, gamma, &SolverOptions::with_tol(tol))
}

pub fn solve_linear_resolvent_with(
    eps: f64,
    op: &StencilOperator,
    gamma: &GridFunction,
    opts: &SolverOptions,
) -> Result<(GridFunction, SolveReport)> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidInput(format!("resolvent parameter eps must be positive, got {eps}")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {}", opts.tol)));
    }
    if gamma.grid() != op.grid() {
        return Err(Error::GridMismatch("resolvent data lives on a different grid".into()));
    }
    let start = Instant::now();
    let (v, iterations) = match opts.method {
        SolverMethod::Jacobi => resolvent_fixed_point(eps, op, gamma, opts)?,
        SolverMethod::ConjugateGradient => {
            let v0 = gamma.map(|g| g / (eps + op.lambda()));
            resolvent_cg(eps, op, gamma, v0, opts)?
        }
        SolverMethod::Spectral => {
            let v0 = resolvent_spectral(eps, op, gamma);
            resolvent_cg(eps, op, gamma, v0, opts)?
        }
    };
    let residual = resolvent_residual(eps, op, &v, gamma)?;
    let report = SolveReport {
        iterations,
        final_residual_sup: residual,
        converged: residual <= opts.tol,
        wall_time: start.elapsed(),
        method: opts.method,
    };
    Ok((v, report))
}

/// `v <- (gamma + S v) / (eps + Lambda)`, a sup-norm contraction with factor
/// `Lambda / (eps + Lambda)`.
fn resolvent_fixed_point(
    eps: f64,
    op: &StencilOperator,
    gamma: &GridFunction,
    opts: &SolverOptions,
) -> Result<(GridFunction, usize)> {
    let diag = eps + op.lambda();
    let mut v = gamma.map(|g| g / diag);
    for it in 0..opts.max_iterations {
        let s = op.shift_sum(&v)?;
        let mut res: f64 = 0.0;
        let next: Vec<f64> = v
            .values()
            .iter()
            .zip(s.values())
            .zip(gamma.values())
            .map(|((&a, &sv), &g)| {
                res = res.max((diag * a - sv - g).abs());
                (g + sv) / diag
            })
            .collect();
        if res <= opts.tol {
            return Ok((v, it));
        }
        v = GridFunction::from_raw(*gamma.grid(), next);
    }
    Ok((v, opts.max_iterations))
}

fn resolvent_cg(
    eps: f64,
    op: &StencilOperator,
    gamma: &GridFunction,
    v0: GridFunction,
    opts: &SolverOptions,
) -> Result<(GridFunction, usize)> {
    let grid = *gamma.grid();
    let apply_a = |x: &[f64]| -> Result<Vec<f64>> {
        let xf = GridFunction::from_raw(grid, x.to_vec());
        let lx = op.apply(&xf)?;
        Ok(x.iter().zip(lx.values()).map(|(&a, &l)| eps * a - l).collect())
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut x = v0.into_values();
    let ax = apply_a(&x)?;
    let mut r: Vec<f64> = gamma.values().iter().zip(&ax).map(|(g, a)| g - a).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut it = 0;
    let mut best_true = f64::INFINITY;
    let mut stalled = 0;
    while it < opts.max_iterations {
        if sup(&r) <= 0.5 * opts.tol {
            // confirm against the true residual before stopping
            let ax = apply_a(&x)?;
            let true_r: Vec<f64> = gamma.values().iter().zip(&ax).map(|(g, a)| g - a).collect();
            let true_sup = sup(&true_r);
            if true_sup <= 0.5 * opts.tol {
                break;
            }
            // the recurrence has drifted below the roundoff floor of the true residual
            if true_sup < 0.5 * best_true {
                best_true = true_sup;
                stalled = 0;
            } else {
                stalled += 1;
                if stalled >= CG_STALL_RESTARTS {
                    break;
                }
            }
            r = true_r;
            p = r.clone();
            rr = dot(&r, &r);
        }
        let ap = apply_a(&p)?;
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rr / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        it += 1;
    }
    Ok((GridFunction::from_raw(grid, x), it))
}

/// `v_hat(m) = gamma_hat(m) / (eps + symbol(m))`.
pub fn resolvent_spectral(eps: f64, op: &StencilOperator, gamma: &GridFunction) -> GridFunction {
    let mult: Vec<f64> = op.symbol_table().into_iter().map(|s| 1.0 / (eps + s)).collect();
    spectral::apply_multiplier(gamma, &mult)
}

/// Solves `w - k L[phi(w)] = f` by nonlinear Jacobi:
/// `w_{m+1}(x) = solve_scalar(k Lambda, f(x) + k S[phi(w_m)](x))`, `w_0 = f`.
///
/// Every iterate stays in `[min f, max f]`; the iteration is order
/// preserving, so comparison holds for the computed solutions up to the
/// residual.
pub fn solve_nonlinear_elliptic(
    op: &StencilOperator,
    k: f64,
    nl: &Nonlinearity,
    f: &GridFunction,
    tol: f64,
) -> Result<(GridFunction, SolveReport)> {
    solve_nonlinear_elliptic_with(
        op,
        k,
        nl,
        f,
        &SolverOptions { method: SolverMethod::Jacobi, ..SolverOptions::with_tol(tol) },
    )
}

pub fn solve_nonlinear_elliptic_with(
    op: &StencilOperator,
    k: f64,
    nl: &Nonlinearity,
    f: &GridFunction,
    opts: &SolverOptions,
) -> Result<(GridFunction, SolveReport)> {
    if !(k >= 0.0) || !k.is_finite() {
        return Err(Error::InvalidInput(format!("k must be nonnegative, got {k}")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {}", opts.tol)));
    }
    if f.grid() != op.grid() {
        return Err(Error::GridMismatch("elliptic data lives on a different grid".into()));
    }
    let start = Instant::now();
    if k == 0.0 || op.is_empty() {
        return Ok((
            f.clone(),
            SolveReport {
                iterations: 0,
                final_residual_sup: 0.0,
                converged: true,
                wall_time: start.elapsed(),
                method: SolverMethod::Jacobi,
            },
        ));
    }
    let grid = *f.grid();
    let c = k * op.lambda();
    let scalar_tol = opts.tol * 1e-3;
    let mut w = f.clone();
    let mut iterations = 0;
    let mut residual;
    let mut certified: f64;
    // the loop residual and the certificate round differently, so stop a
    // little early and tighten if the certificate disagrees
    let mut target = 0.5 * opts.tol;
    loop {
        let phi_w = w.map(|v| nl.eval(v));
        let s = op.shift_sum(&phi_w)?;
        // residual of the current iterate: w + k Lambda phi(w) - f - k S phi(w)
        residual = w
            .values()
            .iter()
            .zip(phi_w.values())
            .zip(s.values())
            .zip(f.values())
            .fold(0.0f64, |m, (((&wv, &pv), &sv), &fv)| m.max((wv + c * pv - fv - k * sv).abs()));
        if residual <= target {
            certified = nonlinear_residual(op, k, nl, &w, f)?;
            if certified <= opts.tol || target < 1e-3 * opts.tol {
                break;
            }
            target *= 0.25;
        }
        if iterations >= opts.max_iterations {
            certified = f64::INFINITY;
            break;
        }
        let next: Vec<f64> =
            f.values().iter().zip(s.values()).map(|(&fv, &sv)| solve_scalar(c, fv + k * sv, nl, scalar_tol)).collect();
        w = GridFunction::from_raw(grid, next);
        iterations += 1;
    }
    if !certified.is_finite() {
        certified = nonlinear_residual(op, k, nl, &w, f)?;
    }
    let final_residual_sup = certified.max(residual);
    Ok((
        w,
        SolveReport {
            iterations,
            final_residual_sup,
            converged: final_residual_sup <= opts.tol,
            wall_time: start.elapsed(),
            method: SolverMethod::Jacobi,
        },
    ))
}

/// `|| eps B_eps[q] - mean(q) ||_inf` for a decreasing sequence of `eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct VanishingProbe {
    pub rows: Vec<(f64, f64)>,
    /// Least-squares slope of `log deviation` against `log eps`.
    pub fitted_rate: f64,
    /// Slope between the two smallest `eps`.
    pub asymptotic_rate: f64,
}

impl VanishingProbe {
    pub fn is_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].1 <= w[0].1)
    }
}

/// On the torus the kernel of a connected stencil is the constants, so
/// `eps B_eps[q]` tends to the mean of `q`; the deviation should vanish
/// linearly in `eps`.
pub fn resolvent_vanishing_probe(
    op: &StencilOperator,
    q: &GridFunction,
    eps_sequence: &[f64],
    tol: f64,
) -> Result<VanishingProbe> {
    let kernel = op.kernel_analysis();
    if !kernel.connected {
        return Err(Error::DisconnectedKernel(format!(
            "symbol vanishes at {} lattice modes {:?}; eps B_eps[q] need not tend to a constant",
            kernel.zero_modes.len(),
            kernel.zero_modes.iter().take(8).collect::<Vec<_>>()
        )));
    }
    let mean = q.mean();
    let mut rows = Vec::with_capacity(eps_sequence.len());
    // B_eps maps constants c to c / eps, so eps B_eps[q] - mean = eps B_eps[q - mean];
    // solving for the mean-free part keeps the iterates O(1) as eps -> 0.
    let centered = q.map(|v| v - mean);
    for &eps in eps_sequence {
        let (v, report) = solve_linear_resolvent(eps, op, &centered, tol)?;
        report.ensure_converged(tol)?;
        let dev = eps * v.max_abs();
        rows.push((eps, dev));
    }
    let logs: Vec<(f64, f64)> = rows.iter().filter(|r| r.1 > 0.0).map(|&(e, d)| (e.ln(), d.ln())).collect();
    let fitted_rate = least_squares_slope(&logs);
    let asymptotic_rate = if logs.len() >= 2 {
        let n = logs.len();
        let (a, b) = (logs[n - 2], logs[n - 1]);
        (b.1 - a.1) / (b.0 - a.0)
    } else {
        f64::NAN
    };
    Ok(VanishingProbe { rows, fitted_rate, asymptotic_rate })
}

pub fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    if points.len() < 2 {
        return f64::NAN;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}
