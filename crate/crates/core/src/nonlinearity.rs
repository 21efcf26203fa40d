//! Continuous nondecreasing nonlinearities `phi`, their primitives
//! `Phi(r) = int_0^r phi`, and the monotone scalar solve behind the
//! implicit step.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::quadrature;

/// Number of probe points used to check black-box nonlinearities.
pub const PROBE_POINTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// `int_{xs[0]}^{xs[i]} phi`
    cumulative: Vec<f64>,
}

impl PiecewiseLinear {
    /// Breakpoints `(x_i, phi(x_i))`; linear extrapolation with the end slopes.
    pub fn new(points: &[(f64, f64)]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidInput("piecewise-linear nonlinearity needs at least 2 breakpoints".into()));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidInput(format!(
                    "breakpoints must be strictly increasing in r: {} then {}",
                    w[0].0, w[1].0
                )));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::InvalidInput(format!(
                    "phi must be nondecreasing: phi({}) = {} > phi({}) = {}",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(Error::InvalidInput("breakpoints must be finite".into()));
        }
        let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
        let mut cumulative = vec![0.0];
        for i in 0..xs.len() - 1 {
            let last = cumulative[i];
            cumulative.push(last + 0.5 * (ys[i] + ys[i + 1]) * (xs[i + 1] - xs[i]));
        }
        Ok(Self { xs, ys, cumulative })
    }

    pub fn breakpoints(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.ys.iter().copied())
    }

    fn segment(&self, r: f64) -> usize {
        let n = self.xs.len();
        self.xs.partition_point(|&x| x <= r).saturating_sub(1).min(n - 2)
    }

    fn slope(&self, i: usize) -> f64 {
        (self.ys[i + 1] - self.ys[i]) / (self.xs[i + 1] - self.xs[i])
    }

    fn eval(&self, r: f64) -> f64 {
        let i = self.segment(r);
        self.ys[i] + self.slope(i) * (r - self.xs[i])
    }

    fn derivative(&self, r: f64) -> f64 {
        self.slope(self.segment(r))
    }

    fn antiderivative(&self, r: f64) -> f64 {
        let i = self.segment(r);
        let d = r - self.xs[i];
        self.cumulative[i] + d * (self.ys[i] + 0.5 * self.slope(i) * d)
    }

    fn lipschitz(&self, bound: f64) -> f64 {
        (0..self.xs.len() - 1)
            .filter(|&i| {
                let lo = if i == 0 { f64::NEG_INFINITY } else { self.xs[i] };
                let hi = if i + 2 == self.xs.len() { f64::INFINITY } else { self.xs[i + 1] };
                hi > -bound && lo < bound
            })
            .map(|i| self.slope(i))
            .fold(0.0, f64::max)
    }
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A black-box `phi`, checked on probe grids before use.
#[derive(Clone)]
pub struct CustomNonlinearity {
    pub label: String,
    pub phi: ScalarFn,
}

impl fmt::Debug for CustomNonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Custom({})", self.label)
    }
}

#[derive(Debug, Clone)]
pub enum Nonlinearity {
    Identity,
    /// `phi(r) = |r|^{m-1} r`, `m > 0`.
    Power {
        m: f64,
    },
    /// `phi(r) = max(r - latent, 0)`.
    Stefan {
        latent: f64,
    },
    PiecewiseLinear(PiecewiseLinear),
    Custom(CustomNonlinearity),
}

impl Nonlinearity {
    pub fn power(m: f64) -> Result<Self> {
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::InvalidInput(format!("power exponent must be positive, got {m}")));
        }
        Ok(Nonlinearity::Power { m })
    }

    pub fn stefan(latent: f64) -> Result<Self> {
        if !(latent >= 0.0) || !latent.is_finite() {
            return Err(Error::InvalidInput(format!("latent heat must be nonnegative, got {latent}")));
        }
        Ok(Nonlinearity::Stefan { latent })
    }

    pub fn piecewise_linear(points: &[(f64, f64)]) -> Result<Self> {
        Ok(Nonlinearity::PiecewiseLinear(PiecewiseLinear::new(points)?))
    }

    pub fn custom(label: impl Into<String>, phi: ScalarFn) -> Self {
        Nonlinearity::Custom(CustomNonlinearity { label: label.into(), phi })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Nonlinearity::Identity => "identity",
            Nonlinearity::Power { .. } => "power",
            Nonlinearity::Stefan { .. } => "stefan",
            Nonlinearity::PiecewiseLinear(_) => "piecewise_linear",
            Nonlinearity::Custom(_) => "custom",
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        match self {
            Nonlinearity::Identity => r,
            Nonlinearity::Power { m } => {
                if *m == 1.0 {
                    r
                } else if *m == 2.0 {
                    r.abs() * r
                } else {
                    r.abs().powf(*m).copysign(r)
                }
            }
            Nonlinearity::Stefan { latent } => (r - latent).max(0.0),
            Nonlinearity::PiecewiseLinear(p) => p.eval(r),
            Nonlinearity::Custom(c) => (c.phi)(r),
        }
    }

    /// `Phi(r) = int_0^r phi`.
    pub fn primitive(&self, r: f64) -> f64 {
        match self {
            Nonlinearity::Identity => 0.5 * r * r,
            Nonlinearity::Power { m } => r.abs().powf(m + 1.0) / (m + 1.0),
            Nonlinearity::Stefan { latent } => {
                // latent >= 0, so phi vanishes on [0, latent]
                let p = (r - latent).max(0.0);
                0.5 * p * p
            }
            Nonlinearity::PiecewiseLinear(p) => p.antiderivative(r) - p.antiderivative(0.0),
            Nonlinearity::Custom(c) => {
                if r == 0.0 {
                    return 0.0;
                }
                let q = quadrature::integrate(|s| (c.phi)(s), 0.0, r, 1e-14, 1e-12);
                q.value
            }
        }
    }

    /// Right derivative where it exists; `None` where the slope is unbounded
    /// or unknown.
    pub fn derivative(&self, r: f64) -> Option<f64> {
        match self {
            Nonlinearity::Identity => Some(1.0),
            Nonlinearity::Power { m } => {
                if *m < 1.0 && r == 0.0 {
                    None
                } else {
                    Some(m * r.abs().powf(m - 1.0))
                }
            }
            Nonlinearity::Stefan { latent } => Some(if r >= *latent { 1.0 } else { 0.0 }),
            Nonlinearity::PiecewiseLinear(p) => Some(p.derivative(r)),
            Nonlinearity::Custom(_) => None,
        }
    }

    /// Lipschitz constant of `phi` on `[-bound, bound]` (infinite for fast
    /// diffusion).
    pub fn local_lipschitz(&self, bound: f64) -> f64 {
        let bound = bound.abs();
        match self {
            Nonlinearity::Identity => 1.0,
            Nonlinearity::Power { m } => {
                if *m < 1.0 {
                    if bound > 0.0 {
                        f64::INFINITY
                    } else {
                        0.0
                    }
                } else {
                    m * bound.powf(m - 1.0)
                }
            }
            Nonlinearity::Stefan { latent } => {
                if bound > *latent {
                    1.0
                } else {
                    0.0
                }
            }
            Nonlinearity::PiecewiseLinear(p) => p.lipschitz(bound),
            Nonlinearity::Custom(c) => probe_lipschitz(&*c.phi, -bound, bound),
        }
    }

    /// `|phi(r)| <= L |r|` near zero, the hypothesis of mass conservation.
    pub fn is_linearly_bounded_at_zero(&self) -> bool {
        self.eval(0.0) == 0.0 && self.local_lipschitz(1e-3).is_finite()
    }

    /// Probe-grid check that `phi` is nondecreasing and continuous on `[lo, hi]`.
    pub fn check_on_range(&self, lo: f64, hi: f64) -> Result<()> {
        check_monotone_continuous(&|r| self.eval(r), lo, hi)
    }
}

fn probe_lipschitz(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let n = PROBE_POINTS;
    let dx = (hi - lo) / n as f64;
    let mut prev = f(lo);
    let mut best: f64 = 0.0;
    for i in 1..=n {
        let x = lo + dx * i as f64;
        let v = f(x);
        best = best.max((v - prev).abs() / dx);
        prev = v;
    }
    best
}

fn check_monotone_continuous(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> Result<()> {
    if !(hi > lo) {
        return Ok(());
    }
    let n = PROBE_POINTS;
    let dx = (hi - lo) / n as f64;
    let samples: Vec<f64> = (0..=n).map(|i| f(lo + dx * i as f64)).collect();
    if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("phi is not finite at r = {}", lo + dx * i as f64)));
    }
    let scale = samples.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let typical = (samples[n] - samples[0]).abs() / n as f64;
    for i in 0..n {
        let (a, b) = (lo + dx * i as f64, lo + dx * (i + 1) as f64);
        let jump = samples[i + 1] - samples[i];
        if jump < -1e-12 * scale {
            return Err(Error::InvalidInput(format!("phi decreases between r = {a} and r = {b}")));
        }
        if jump > 50.0 * typical + 1e-9 * scale {
            // zoom in: a continuous function's increment shrinks with the interval
            let (mut x0, mut x1) = (a, b);
            for _ in 0..40 {
                let mid = 0.5 * (x0 + x1);
                if f(mid) - f(x0) >= f(x1) - f(mid) {
                    x1 = mid;
                } else {
                    x0 = mid;
                }
            }
            if f(x1) - f(x0) > 1e-6 * scale.max(jump) {
                return Err(Error::InvalidInput(format!("phi appears discontinuous near r = {x0}")));
            }
        }
    }
    Ok(())
}

/// Unique `v` with `v + c phi(v) = r` (`c >= 0`), by safeguarded Newton on
/// the exact bracket `[r - c phi(r), r]` (or its mirror).
pub fn solve_scalar(c: f64, r: f64, nl: &Nonlinearity, tol: f64) -> f64 {
    debug_assert!(c >= 0.0 && tol > 0.0);
    if c == 0.0 {
        return r;
    }
    let p = nl.eval(r);
    if p == 0.0 {
        return r;
    }
    let (mut lo, mut hi) = if p > 0.0 { (r - c * p, r) } else { (r, r - c * p) };
    let f = |v: f64| v + c * nl.eval(v) - r;
    let mut v = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fv = f(v);
        if fv.abs() <= tol {
            return v;
        }
        if fv > 0.0 {
            hi = v;
        } else {
            lo = v;
        }
        if hi - lo <= 2.0 * f64::EPSILON * v.abs().max(f64::MIN_POSITIVE) {
            return 0.5 * (lo + hi);
        }
        let newton = nl.derivative(v).map(|d| v - fv / (1.0 + c * d)).filter(|x| x.is_finite() && *x > lo && *x < hi);
        v = newton.unwrap_or(0.5 * (lo + hi));
    }
    v
}

/// `h^N sum_beta Phi(u(x_beta))`.
pub fn primitive_mass(u: &GridFunction, nl: &Nonlinearity) -> f64 {
    u.grid().cell_volume() * u.values().iter().map(|&v| nl.primitive(v)).sum::<f64>()
}
