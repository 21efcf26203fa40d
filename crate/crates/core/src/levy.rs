//! Continuum Levy operators and their finite-stencil discretizations.
//!
//! An operator is described by integer diffusion directions `sigma_i` (the
//! local part, a sum of squared directional derivatives) and a symmetric
//! Levy measure `mu` (the nonlocal part). Discretization on a grid of
//! spacing `h` produces a [`DiscreteMeasure`]: a finite symmetric set of grid
//! offsets with nonnegative weights.
//!
//! ```text
//! nu_h = h^-2 sum_i (delta_{h sigma_i} + delta_{-h sigma_i}) + mu restricted to |z| > h
//! ```
//!
//! Both the continuum and the discrete operators are Fourier multipliers;
//! their symbols are evaluated by [`fourier_symbol`] and [`discrete_symbol`].

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quadrature::{self, GAUSS3_NODES, GAUSS3_WEIGHTS, GAUSS5_NODES, GAUSS5_WEIGHTS};

/// A lattice offset (length = space dimension).
pub type Offset = Vec<i64>;

/// Radial jump density `rho(r)`, with `d mu = rho(|z|) dz`.
pub type RadialFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, PartialEq)]
pub struct PointMass {
    pub location: Vec<f64>,
    pub weight: f64,
}

impl PointMass {
    pub fn new(location: Vec<f64>, weight: f64) -> Self {
        Self { location, weight }
    }
}

#[derive(Clone)]
pub enum NonlocalKind {
    None,
    PointMasses(Vec<PointMass>),
    Radial { density: RadialFn, label: String },
    Fractional { alpha: f64, strength: f64 },
}

impl fmt::Debug for NonlocalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NonlocalKind::None => write!(f, "None"),
            NonlocalKind::PointMasses(p) => f.debug_tuple("PointMasses").field(p).finish(),
            NonlocalKind::Radial { label, .. } => write!(f, "Radial({label})"),
            NonlocalKind::Fractional { alpha, strength } => {
                f.debug_struct("Fractional").field("alpha", alpha).field("strength", strength).finish()
            }
        }
    }
}

/// A symmetric Levy measure on `R^N \ {0}`.
#[derive(Debug, Clone)]
pub struct NonlocalMeasure {
    pub dim: usize,
    pub kind: NonlocalKind,
}

impl NonlocalMeasure {
    pub fn none(dim: usize) -> Self {
        Self { dim, kind: NonlocalKind::None }
    }

    pub fn point_masses(dim: usize, masses: Vec<PointMass>) -> Self {
        Self { dim, kind: NonlocalKind::PointMasses(masses) }
    }

    /// `rho(r) = strength * r^{-(N + alpha)}`.
    pub fn fractional(dim: usize, alpha: f64, strength: f64) -> Self {
        Self { dim, kind: NonlocalKind::Fractional { alpha, strength } }
    }

    /// Fractional measure whose symbol is exactly `|xi|^alpha`.
    pub fn fractional_laplacian(dim: usize, alpha: f64) -> Self {
        Self::fractional(dim, alpha, fractional_laplacian_constant(dim, alpha))
    }

    pub fn radial(dim: usize, label: impl Into<String>, density: RadialFn) -> Self {
        Self { dim, kind: NonlocalKind::Radial { density, label: label.into() } }
    }

    pub fn is_none(&self) -> bool {
        matches!(self.kind, NonlocalKind::None)
    }

    fn density(&self) -> Option<Box<dyn Fn(f64) -> f64 + '_>> {
        match &self.kind {
            NonlocalKind::Radial { density, .. } => Some(Box::new(move |r| density(r))),
            NonlocalKind::Fractional { alpha, strength } => {
                let p = -(self.dim as f64 + alpha);
                Some(Box::new(move |r: f64| strength * r.powf(p)))
            }
            _ => None,
        }
    }

    /// `integral_{|z| > r} d mu`, in closed form where available.
    fn tail_mass(&self, r: f64) -> Result<f64> {
        match &self.kind {
            NonlocalKind::None => Ok(0.0),
            NonlocalKind::PointMasses(pm) => Ok(pm.iter().filter(|p| norm(&p.location) > r).map(|p| p.weight).sum()),
            NonlocalKind::Fractional { alpha, strength } => {
                Ok(sphere_area(self.dim) * strength * r.powf(-alpha) / alpha)
            }
            NonlocalKind::Radial { density, .. } => {
                let n = self.dim as i32;
                let q = quadrature::integrate_to_infinity(|s| density(s) * s.powi(n - 1), r, 1e-13);
                if !q.converged {
                    return Err(Error::Quadrature { achieved: q.error, requested: 1e-13 });
                }
                Ok(sphere_area(self.dim) * q.value)
            }
        }
    }
}

/// `c_{N,alpha}` such that `c |z|^{-(N+alpha)}` has symbol `|xi|^alpha`.
pub fn fractional_laplacian_constant(dim: usize, alpha: f64) -> f64 {
    use statrs::function::gamma::gamma;
    let n = dim as f64;
    alpha * 2f64.powf(alpha - 1.0) * gamma(0.5 * (n + alpha)) / (PI.powf(0.5 * n) * gamma(1.0 - 0.5 * alpha))
}

/// Surface area of the unit sphere in `R^N`.
fn sphere_area(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => {
            let n = dim as f64;
            2.0 * PI.powf(0.5 * n) / statrs::function::gamma::gamma(0.5 * n)
        }
    }
}

fn norm(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Continuum operator: local directions plus a Levy measure.
#[derive(Debug, Clone)]
pub struct LevyOperatorSpec {
    pub dim: usize,
    pub sigma_columns: Vec<Offset>,
    pub nonlocal: NonlocalMeasure,
}

impl LevyOperatorSpec {
    pub fn new(dim: usize, sigma_columns: Vec<Offset>, nonlocal: NonlocalMeasure) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidInput(format!("dimension {dim} not in 1..=3")));
        }
        for s in &sigma_columns {
            if s.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "sigma column {s:?} has length {} but dimension is {dim}",
                    s.len()
                )));
            }
            if s.iter().all(|&v| v == 0) {
                return Err(Error::InvalidInput("sigma columns must be nonzero".into()));
            }
        }
        if nonlocal.dim != dim {
            return Err(Error::InvalidInput(format!(
                "nonlocal measure dimension {} differs from operator dimension {dim}",
                nonlocal.dim
            )));
        }
        validate_measure(&nonlocal).map_err(|v| Error::InvalidMeasure(v.to_string()))?;
        Ok(Self { dim, sigma_columns, nonlocal })
    }

    /// Local part only (`mu = 0`).
    pub fn local(dim: usize, sigma_columns: Vec<Offset>) -> Result<Self> {
        Self::new(dim, sigma_columns, NonlocalMeasure::none(dim))
    }

    /// Builds the spec from real-valued directions, rejecting any column that
    /// is not an integer vector.
    pub fn from_real_columns(dim: usize, columns: &[Vec<f64>], nonlocal: NonlocalMeasure) -> Result<Self> {
        let cols = columns.iter().map(|c| integer_direction(c)).collect::<Result<Vec<_>>>()?;
        Self::new(dim, cols, nonlocal)
    }

    /// `nu_h` for this operator: local stencil plus nonlocal cells up to `r_tail`.
    pub fn discretize(&self, h: f64, r_tail: f64) -> Result<(DiscreteMeasure, f64)> {
        let local = discretize_local(self.dim, &self.sigma_columns, h)?;
        let nonlocal = discretize_nonlocal(&self.nonlocal, h, r_tail)?;
        Ok((local.sum(&nonlocal.measure)?, nonlocal.tail_mass))
    }
}

/// Checks that a real vector is an integer lattice direction.
pub fn integer_direction(v: &[f64]) -> Result<Offset> {
    v.iter()
        .map(|&x| {
            if x.is_finite() && x.fract() == 0.0 && x.abs() < 1e15 {
                Ok(x as i64)
            } else {
                Err(Error::InvalidInput(format!(
                    "sigma column {v:?} is not an integer vector; rescale it so +-h*sigma are grid points"
                )))
            }
        })
        .collect()
}

/// Reason a measure fails the admissibility check.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasureViolation {
    Asymmetric { location: Vec<f64>, weight: f64, mirrored_weight: f64 },
    NegativeWeight { location: Vec<f64>, weight: f64 },
    MassAtOrigin,
    DimensionMismatch { expected: usize, found: usize },
    NegativeDensity { radius: f64, value: f64 },
    DivergentSmallJumps,
    DivergentLargeJumps,
    InvalidParameter(String),
}

impl fmt::Display for MeasureViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeasureViolation::Asymmetric { location, weight, mirrored_weight } => {
                write!(f, "asymmetric: mass {weight} at {location:?} but {mirrored_weight} at the mirrored point")
            }
            MeasureViolation::NegativeWeight { location, weight } => {
                write!(f, "negative weight {weight} at {location:?}")
            }
            MeasureViolation::MassAtOrigin => write!(f, "point mass at the origin"),
            MeasureViolation::DimensionMismatch { expected, found } => {
                write!(f, "point location has dimension {found}, expected {expected}")
            }
            MeasureViolation::NegativeDensity { radius, value } => {
                write!(f, "negative density {value} at radius {radius}")
            }
            MeasureViolation::DivergentSmallJumps => {
                write!(f, "divergent small-|z| second moment: integral of |z|^2 over |z| < 1 is infinite")
            }
            MeasureViolation::DivergentLargeJumps => {
                write!(f, "divergent large-|z| mass: mu(|z| > 1) is infinite")
            }
            MeasureViolation::InvalidParameter(s) => write!(f, "invalid parameter: {s}"),
        }
    }
}

fn location_key(z: &[f64]) -> Vec<u64> {
    // +0.0 and -0.0 must hash together
    z.iter().map(|&v| if v == 0.0 { 0u64 } else { v.to_bits() }).collect()
}

/// Decides whether dyadic pieces of an integral decay geometrically.
fn dyadic_pieces_converge<F: Fn(f64) -> f64>(f: F, toward_zero: bool) -> std::result::Result<(), f64> {
    let mut prev = None;
    let mut ratio = 0.0;
    for k in 0..80 {
        let (a, b) = if toward_zero { (2f64.powi(-(k + 1)), 2f64.powi(-k)) } else { (2f64.powi(k), 2f64.powi(k + 1)) };
        let q = quadrature::integrate_with_limit(&f, a, b, 0.0, 1e-10, 200);
        if !q.value.is_finite() {
            return Err(f64::INFINITY);
        }
        if let Some(p) = prev {
            if p > 0.0 {
                ratio = q.value / p;
            } else if q.value > 0.0 {
                ratio = f64::INFINITY;
            } else {
                ratio = 0.0;
            }
        }
        prev = Some(q.value);
    }
    if ratio < 1.0 - 1e-9 {
        Ok(())
    } else {
        Err(ratio)
    }
}

/// Checks symmetry, nonnegativity and `integral min(|z|^2, 1) d mu < inf`.
pub fn validate_measure(m: &NonlocalMeasure) -> std::result::Result<(), MeasureViolation> {
    match &m.kind {
        NonlocalKind::None => Ok(()),
        NonlocalKind::PointMasses(pm) => {
            let mut totals: HashMap<Vec<u64>, (Vec<f64>, f64)> = HashMap::new();
            for p in pm {
                if p.location.len() != m.dim {
                    return Err(MeasureViolation::DimensionMismatch { expected: m.dim, found: p.location.len() });
                }
                if !(p.weight >= 0.0) || !p.weight.is_finite() {
                    return Err(MeasureViolation::NegativeWeight { location: p.location.clone(), weight: p.weight });
                }
                if p.location.iter().all(|&v| v == 0.0) {
                    return Err(MeasureViolation::MassAtOrigin);
                }
                if p.location.iter().any(|v| !v.is_finite()) {
                    return Err(MeasureViolation::InvalidParameter(format!("non-finite location {:?}", p.location)));
                }
                let e = totals.entry(location_key(&p.location)).or_insert_with(|| (p.location.clone(), 0.0));
                e.1 += p.weight;
            }
            for (loc, w) in totals.values() {
                let mirror: Vec<f64> = loc.iter().map(|v| -v).collect();
                let mw = totals.get(&location_key(&mirror)).map(|e| e.1).unwrap_or(0.0);
                if (w - mw).abs() > 1e-12 * w.max(mw) {
                    return Err(MeasureViolation::Asymmetric {
                        location: loc.clone(),
                        weight: *w,
                        mirrored_weight: mw,
                    });
                }
            }
            Ok(())
        }
        NonlocalKind::Fractional { alpha, strength } => {
            if !alpha.is_finite() || !strength.is_finite() || *strength <= 0.0 {
                return Err(MeasureViolation::InvalidParameter(format!(
                    "fractional measure needs finite alpha and strength > 0, got alpha={alpha}, strength={strength}"
                )));
            }
            check_radial_moments(m)
        }
        NonlocalKind::Radial { density, .. } => {
            for k in -40..=40 {
                let r = 2f64.powf(k as f64 * 0.5);
                let v = density(r);
                if !(v >= 0.0) {
                    return Err(MeasureViolation::NegativeDensity { radius: r, value: v });
                }
            }
            check_radial_moments(m)
        }
    }
}

fn check_radial_moments(m: &NonlocalMeasure) -> std::result::Result<(), MeasureViolation> {
    let rho = m.density().expect("radial kinds have a density");
    let n = m.dim as i32;
    dyadic_pieces_converge(|r| rho(r) * r.powi(n + 1), true).map_err(|_| MeasureViolation::DivergentSmallJumps)?;
    dyadic_pieces_converge(|r| rho(r) * r.powi(n - 1), false).map_err(|_| MeasureViolation::DivergentLargeJumps)?;
    Ok(())
}

/// Finite symmetric measure on the lattice `h Z^N`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    spacing: f64,
    entries: BTreeMap<Offset, f64>,
}

impl DiscreteMeasure {
    pub fn empty(dim: usize, spacing: f64) -> Self {
        Self { dim, spacing, entries: BTreeMap::new() }
    }

    /// Builds a measure from explicit entries, checking symmetry and signs.
    pub fn from_entries(dim: usize, spacing: f64, entries: impl IntoIterator<Item = (Offset, f64)>) -> Result<Self> {
        let mut m = Self::empty(dim, spacing);
        for (beta, w) in entries {
            m.check_offset(&beta)?;
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidMeasure(format!(
                    "weight {w} at {beta:?} is not a finite nonnegative number"
                )));
            }
            *m.entries.entry(beta).or_insert(0.0) += w;
        }
        for (beta, w) in &m.entries {
            let mirror: Offset = beta.iter().map(|v| -v).collect();
            if m.entries.get(&mirror) != Some(w) {
                return Err(Error::InvalidMeasure(format!("asymmetric: weight {w} at {beta:?} is not mirrored")));
            }
        }
        Ok(m)
    }

    fn check_offset(&self, beta: &[i64]) -> Result<()> {
        if beta.len() != self.dim {
            return Err(Error::InvalidInput(format!("offset {beta:?} has wrong dimension (expected {})", self.dim)));
        }
        if beta.iter().all(|&v| v == 0) {
            return Err(Error::InvalidInput("zero offset carries no jump".into()));
        }
        Ok(())
    }

    /// Adds weight `w` at both `beta` and `-beta`.
    pub fn add_symmetric(&mut self, beta: &[i64], w: f64) -> Result<()> {
        self.check_offset(beta)?;
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::InvalidMeasure(format!("weight {w} is not a finite nonnegative number")));
        }
        let mirror: Offset = beta.iter().map(|v| -v).collect();
        *self.entries.entry(beta.to_vec()).or_insert(0.0) += w;
        *self.entries.entry(mirror).or_insert(0.0) += w;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn weight(&self, beta: &[i64]) -> f64 {
        self.entries.get(beta).copied().unwrap_or(0.0)
    }

    /// Entries in lexicographic offset order.
    pub fn iter(&self) -> impl Iterator<Item = (&Offset, f64)> {
        self.entries.iter().map(|(k, &v)| (k, v))
    }

    /// `Lambda = sum_beta omega_beta`.
    pub fn total_mass(&self) -> f64 {
        self.entries.values().sum()
    }

    pub fn is_symmetric(&self) -> bool {
        self.entries.iter().all(|(beta, w)| {
            let mirror: Offset = beta.iter().map(|v| -v).collect();
            self.entries.get(&mirror) == Some(w)
        })
    }

    /// Entrywise sum; both measures must live on the same lattice.
    pub fn sum(&self, other: &DiscreteMeasure) -> Result<DiscreteMeasure> {
        if self.dim != other.dim || self.spacing != other.spacing {
            return Err(Error::InvalidInput(format!(
                "cannot add measures on different lattices (dim {} vs {}, h {} vs {})",
                self.dim, other.dim, self.spacing, other.spacing
            )));
        }
        let mut out = self.clone();
        for (beta, w) in &other.entries {
            *out.entries.entry(beta.clone()).or_insert(0.0) += w;
        }
        Ok(out)
    }

    /// Splits entries by a predicate on the offset, preserving each weight.
    pub fn partition<P: Fn(&[i64]) -> bool>(&self, keep_first: P) -> (DiscreteMeasure, DiscreteMeasure) {
        let mut a = Self::empty(self.dim, self.spacing);
        let mut b = Self::empty(self.dim, self.spacing);
        for (beta, &w) in &self.entries {
            if keep_first(beta) {
                a.entries.insert(beta.clone(), w);
            } else {
                b.entries.insert(beta.clone(), w);
            }
        }
        (a, b)
    }

    /// Same offsets and weights multiplied by `factor >= 0`.
    pub fn scaled(&self, factor: f64) -> DiscreteMeasure {
        let mut out = self.clone();
        for w in out.entries.values_mut() {
            *w *= factor;
        }
        out
    }

    /// Euclidean length of the physical jump `h beta`.
    pub fn jump_length(&self, beta: &[i64]) -> f64 {
        self.spacing * beta.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }
}

/// `nu_sigma^h = h^-2 sum_i (delta_{h sigma_i} + delta_{-h sigma_i})`.
pub fn discretize_local(dim: usize, sigma_columns: &[Offset], h: f64) -> Result<DiscreteMeasure> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidInput(format!("spacing h must be positive, got {h}")));
    }
    let mut m = DiscreteMeasure::empty(dim, h);
    let w = 1.0 / (h * h);
    for s in sigma_columns {
        m.add_symmetric(s, w)?;
    }
    Ok(m)
}

/// Result of discretizing the nonlocal part.
#[derive(Debug, Clone)]
pub struct NonlocalDiscretization {
    pub measure: DiscreteMeasure,
    /// Mass of `mu` beyond `r_tail` that was dropped.
    pub tail_mass: f64,
}

/// `mu` restricted to `|z| > h`, lumped onto grid offsets.
///
/// Densities: each offset receives the `mu`-mass of its grid cell
/// `h beta + [-h/2, h/2]^N` intersected with the annulus `h < |z| <= r_tail`.
/// Point masses beyond `h` move to the nearest offset, split evenly on ties.
pub fn discretize_nonlocal(m: &NonlocalMeasure, h: f64, r_tail: f64) -> Result<NonlocalDiscretization> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidInput(format!("spacing h must be positive, got {h}")));
    }
    if !(r_tail >= h) {
        return Err(Error::InvalidInput(format!("R_tail = {r_tail} must be at least h = {h}")));
    }
    validate_measure(m).map_err(|v| Error::InvalidMeasure(v.to_string()))?;
    let dim = m.dim;
    match &m.kind {
        NonlocalKind::None => Ok(NonlocalDiscretization { measure: DiscreteMeasure::empty(dim, h), tail_mass: 0.0 }),
        NonlocalKind::PointMasses(pm) => {
            let mut raw: BTreeMap<Offset, f64> = BTreeMap::new();
            let mut tail = 0.0;
            for p in pm {
                let r = norm(&p.location);
                if r <= h {
                    continue;
                }
                if r > r_tail {
                    tail += p.weight;
                    continue;
                }
                for (beta, share) in nearest_offsets(&p.location, h) {
                    if beta.iter().all(|&v| v == 0) {
                        continue;
                    }
                    *raw.entry(beta).or_insert(0.0) += p.weight * share;
                }
            }
            let mut measure = DiscreteMeasure::empty(dim, h);
            for (beta, w) in &raw {
                if is_canonical(beta) {
                    let mirror: Offset = beta.iter().map(|v| -v).collect();
                    let mw = raw.get(&mirror).copied().unwrap_or(0.0);
                    measure.add_symmetric(beta, 0.5 * (w + mw))?;
                }
            }
            Ok(NonlocalDiscretization { measure, tail_mass: tail })
        }
        NonlocalKind::Fractional { .. } | NonlocalKind::Radial { .. } => {
            let rho = m.density().expect("density kinds");
            let reach = (r_tail / h + 0.5).ceil() as i64;
            let mut measure = DiscreteMeasure::empty(dim, h);
            let mut beta = vec![-reach; dim];
            loop {
                if is_canonical(&beta) {
                    let w = cell_mass(&*rho, &beta, h, r_tail)?;
                    if w > 0.0 {
                        measure.add_symmetric(&beta, w)?;
                    }
                }
                if !advance(&mut beta, -reach, reach) {
                    break;
                }
            }
            Ok(NonlocalDiscretization { measure, tail_mass: m.tail_mass(r_tail)? })
        }
    }
}

/// First nonzero coordinate positive.
fn is_canonical(beta: &[i64]) -> bool {
    beta.iter().find(|&&v| v != 0).is_some_and(|&v| v > 0)
}

fn advance(beta: &mut [i64], lo: i64, hi: i64) -> bool {
    for i in (0..beta.len()).rev() {
        if beta[i] < hi {
            beta[i] += 1;
            return true;
        }
        beta[i] = lo;
    }
    false
}

fn nearest_offsets(z: &[f64], h: f64) -> Vec<(Offset, f64)> {
    let mut out: Vec<(Offset, f64)> = vec![(Vec::new(), 1.0)];
    for &zi in z {
        let t = zi / h;
        let fl = t.floor();
        let choices: Vec<(i64, f64)> =
            if t - fl == 0.5 { vec![(fl as i64, 0.5), (fl as i64 + 1, 0.5)] } else { vec![(t.round() as i64, 1.0)] };
        out = out
            .into_iter()
            .flat_map(|(b, s)| {
                choices.iter().map(move |&(c, cs)| {
                    let mut nb = b.clone();
                    nb.push(c);
                    (nb, s * cs)
                })
            })
            .collect();
    }
    out
}

fn box_radii(lo: &[f64], hi: &[f64]) -> (f64, f64) {
    let mut rmin2 = 0.0;
    let mut rmax2 = 0.0;
    for (&a, &b) in lo.iter().zip(hi) {
        let near = if a > 0.0 {
            a
        } else if b < 0.0 {
            -b
        } else {
            0.0
        };
        let far = a.abs().max(b.abs());
        rmin2 += near * near;
        rmax2 += far * far;
    }
    (rmin2.sqrt(), rmax2.sqrt())
}

fn cell_mass(rho: &dyn Fn(f64) -> f64, beta: &[i64], h: f64, r_tail: f64) -> Result<f64> {
    let lo: Vec<f64> = beta.iter().map(|&b| h * (b as f64 - 0.5)).collect();
    let hi: Vec<f64> = beta.iter().map(|&b| h * (b as f64 + 0.5)).collect();
    let (rmin, rmax) = box_radii(&lo, &hi);
    if rmax <= h || rmin >= r_tail {
        return Ok(0.0);
    }
    if beta.len() == 1 {
        // the cell is an interval on one side of the origin
        let (a, b) = (lo[0].abs().min(hi[0].abs()), lo[0].abs().max(hi[0].abs()));
        let a = a.max(h);
        let b = b.min(r_tail);
        if b <= a {
            return Ok(0.0);
        }
        let q = quadrature::integrate(rho, a, b, 0.0, 1e-13);
        if !q.converged {
            return Err(Error::Quadrature { achieved: q.error, requested: 1e-13 * q.value.abs() });
        }
        return Ok(q.value);
    }
    Ok(box_integral(rho, &lo, &hi, h, r_tail, 0))
}

const MAX_CUT_DEPTH: usize = 7;
const MAX_SMOOTH_DEPTH: usize = 6;

/// Tensor Gauss cubature of `rho(|z|)` over a box clipped to the annulus,
/// refined dyadically where the box is cut or the two rules disagree.
fn box_integral(rho: &dyn Fn(f64) -> f64, lo: &[f64], hi: &[f64], r_in: f64, r_out: f64, depth: usize) -> f64 {
    let (rmin, rmax) = box_radii(lo, hi);
    if rmax <= r_in || rmin >= r_out {
        return 0.0;
    }
    let inside = rmin > r_in && rmax <= r_out;
    if inside {
        let g5 = tensor_rule(rho, lo, hi, &GAUSS5_NODES, &GAUSS5_WEIGHTS, r_in, r_out);
        if depth >= MAX_SMOOTH_DEPTH {
            return g5;
        }
        let g3 = tensor_rule(rho, lo, hi, &GAUSS3_NODES, &GAUSS3_WEIGHTS, r_in, r_out);
        if (g5 - g3).abs() <= 1e-11 * g5.abs() {
            return g5;
        }
    } else if depth >= MAX_CUT_DEPTH {
        return tensor_rule(rho, lo, hi, &GAUSS5_NODES, &GAUSS5_WEIGHTS, r_in, r_out);
    }
    let dim = lo.len();
    let mid: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let mut total = 0.0;
    for corner in 0..(1usize << dim) {
        let mut clo = vec![0.0; dim];
        let mut chi = vec![0.0; dim];
        for d in 0..dim {
            if corner >> d & 1 == 0 {
                clo[d] = lo[d];
                chi[d] = mid[d];
            } else {
                clo[d] = mid[d];
                chi[d] = hi[d];
            }
        }
        total += box_integral(rho, &clo, &chi, r_in, r_out, depth + 1);
    }
    total
}

fn tensor_rule(
    rho: &dyn Fn(f64) -> f64,
    lo: &[f64],
    hi: &[f64],
    nodes: &[f64],
    weights: &[f64],
    r_in: f64,
    r_out: f64,
) -> f64 {
    let dim = lo.len();
    let q = nodes.len();
    let vol: f64 = lo.iter().zip(hi).map(|(a, b)| b - a).product();
    let mut idx = vec![0usize; dim];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        let mut r2 = 0.0;
        for d in 0..dim {
            let x = lo[d] + (hi[d] - lo[d]) * nodes[idx[d]];
            w *= weights[idx[d]];
            r2 += x * x;
        }
        let r = r2.sqrt();
        if r > r_in && r <= r_out {
            total += w * rho(r);
        }
        let mut d = dim;
        loop {
            if d == 0 {
                return total * vol;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < q {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Continuum symbol `sum_i (sigma_i . xi)^2 + integral (1 - cos(z . xi)) d mu(z)`.
pub fn fourier_symbol(spec: &LevyOperatorSpec, xi: &[f64]) -> Result<f64> {
    fourier_symbol_with_tol(spec, xi, 1e-10)
}

pub fn fourier_symbol_with_tol(spec: &LevyOperatorSpec, xi: &[f64], tol: f64) -> Result<f64> {
    if xi.len() != spec.dim {
        return Err(Error::InvalidInput(format!("xi has length {}, expected {}", xi.len(), spec.dim)));
    }
    let local: f64 = spec
        .sigma_columns
        .iter()
        .map(|s| {
            let d: f64 = s.iter().zip(xi).map(|(&a, b)| a as f64 * b).sum();
            d * d
        })
        .sum();
    let nonlocal = match &spec.nonlocal.kind {
        NonlocalKind::None => 0.0,
        NonlocalKind::PointMasses(pm) => pm
            .iter()
            .map(|p| {
                let phase: f64 = p.location.iter().zip(xi).map(|(a, b)| a * b).sum();
                p.weight * one_minus_cos(phase)
            })
            .sum(),
        _ => radial_symbol(&spec.nonlocal, norm(xi), tol)?,
    };
    Ok(local + nonlocal)
}

fn one_minus_cos(x: f64) -> f64 {
    let s = (0.5 * x).sin();
    2.0 * s * s
}

/// Bessel `J_0` (trapezoid on the periodic integral for moderate
/// arguments, Hankel asymptotics beyond).
fn bessel_j0(s: f64) -> f64 {
    let s = s.abs();
    if s < 20.0 {
        let n = 64;
        let mut acc = 0.0;
        for i in 0..n {
            let th = PI * (i as f64 + 0.5) / n as f64;
            acc += (s * th.sin()).cos();
        }
        acc / n as f64
    } else {
        let mut p = 0.0;
        let mut q = 0.0;
        let mut term = 1.0;
        let mut k = 0usize;
        loop {
            // term_k = prod_{j=1..k} (2j-1)^2 / (k! (8s)^k)
            if k.is_multiple_of(2) {
                p += if (k / 2).is_multiple_of(2) { term } else { -term };
            } else {
                q += if (k / 2).is_multiple_of(2) { -term } else { term };
            }
            let next = term * ((2 * k + 1) as f64).powi(2) / ((k + 1) as f64 * 8.0 * s);
            if next >= term || next < 1e-17 || k > 30 {
                break;
            }
            term = next;
            k += 1;
        }
        let chi = s - 0.25 * PI;
        (2.0 / (PI * s)).sqrt() * (p * chi.cos() - q * chi.sin())
    }
}

/// Angular average `K_N(s) = integral_{S^{N-1}} (1 - cos(s theta_1)) d theta`.
fn angular_kernel(dim: usize, s: f64) -> f64 {
    match dim {
        1 => 2.0 * one_minus_cos(s),
        2 => {
            if s < 0.5 {
                let t = 0.25 * s * s;
                // 1 - J0 series
                2.0 * PI * (t - t * t / 4.0 + t * t * t / 36.0 - t.powi(4) / 576.0 + t.powi(5) / 14400.0)
            } else {
                2.0 * PI * (1.0 - bessel_j0(s))
            }
        }
        _ => {
            if s < 1e-2 {
                let s2 = s * s;
                4.0 * PI * (s2 / 6.0 - s2 * s2 / 120.0 + s2 * s2 * s2 / 5040.0)
            } else {
                4.0 * PI * (1.0 - s.sin() / s)
            }
        }
    }
}

/// Oscillating part `o_N(s)` with `K_N(s) = |S^{N-1}| - o_N(s)`.
fn angular_oscillation(dim: usize, s: f64) -> f64 {
    match dim {
        1 => 2.0 * s.cos(),
        2 => 2.0 * PI * bessel_j0(s),
        _ => 4.0 * PI * s.sin() / s,
    }
}

fn radial_symbol(m: &NonlocalMeasure, a: f64, tol: f64) -> Result<f64> {
    if a == 0.0 {
        return Ok(0.0);
    }
    let rho = m.density().expect("density kinds");
    let n = m.dim as i32;
    let half = PI / a;
    // start of the oscillatory tail, near a zero of o_N
    let phase = match m.dim {
        1 => 0.5 * PI,
        2 => 0.75 * PI,
        _ => PI,
    };
    let head_halves = 8;
    let start = (head_halves as f64 * PI + phase) / a;

    let mut head = 0.0;
    let mut err = 0.0;
    let mut lo = 0.0;
    let mut cuts: Vec<f64> = (1..=head_halves).map(|j| j as f64 * half).collect();
    cuts.push(start);
    for hi in cuts {
        let q = quadrature::integrate(
            |r| rho(r) * r.powi(n - 1) * angular_kernel(m.dim, r * a),
            lo,
            hi,
            tol * 1e-2,
            tol * 1e-2,
        );
        head += q.value;
        err += q.error;
        lo = hi;
    }

    let plateau = m.tail_mass(start)?;
    let mut partial = Vec::with_capacity(48);
    let mut acc = 0.0;
    let mut lo = start;
    for _ in 0..48 {
        let hi = lo + half;
        let q = quadrature::integrate(
            |r| rho(r) * r.powi(n - 1) * angular_oscillation(m.dim, r * a),
            lo,
            hi,
            tol * 1e-3,
            1e-13,
        );
        acc += q.value;
        err += q.error;
        partial.push(acc);
        lo = hi;
    }
    let (osc, osc_err) = accelerate_tail(&partial);
    err += osc_err;
    let value = head + plateau - osc;
    let requested = tol * value.abs().max(1.0);
    if !(err <= requested) {
        return Err(Error::Quadrature { achieved: err, requested });
    }
    Ok(value.max(0.0))
}

fn accelerate_tail(partial: &[f64]) -> (f64, f64) {
    let (a, e1) = quadrature::accelerate_partial_sums(partial);
    let (b, _) = quadrature::accelerate_partial_sums(&partial[..partial.len() - 1]);
    (a, e1.max((a - b).abs()))
}

/// Discrete symbol `sum_beta omega_beta (1 - cos(h beta . xi))`.
pub fn discrete_symbol(nu: &DiscreteMeasure, xi: &[f64]) -> f64 {
    let h = nu.spacing;
    nu.entries
        .iter()
        .map(|(beta, &w)| {
            let phase: f64 = beta.iter().zip(xi).map(|(&b, &x)| h * b as f64 * x).sum();
            w * one_minus_cos(phase)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frac(alpha: f64) -> LevyOperatorSpec {
        LevyOperatorSpec::new(1, vec![], NonlocalMeasure::fractional_laplacian(1, alpha)).unwrap()
    }

    #[test]
    fn validate_examples() {
        assert!(validate_measure(&NonlocalMeasure::fractional(1, 1.0, 1.0)).is_ok());
        let sym =
            NonlocalMeasure::point_masses(1, vec![PointMass::new(vec![1.0], 1.0), PointMass::new(vec![-1.0], 1.0)]);
        assert!(validate_measure(&sym).is_ok());
        let asym = NonlocalMeasure::point_masses(1, vec![PointMass::new(vec![1.0], 1.0)]);
        let err = validate_measure(&asym).unwrap_err();
        assert!(err.to_string().contains("asymmetric"), "{err}");
    }

    #[test]
    fn validate_rejects_divergent_moments() {
        let e = validate_measure(&NonlocalMeasure::fractional(1, 2.5, 1.0)).unwrap_err();
        assert_eq!(e, MeasureViolation::DivergentSmallJumps);
        let e = validate_measure(&NonlocalMeasure::fractional(2, 2.0, 1.0)).unwrap_err();
        assert_eq!(e, MeasureViolation::DivergentSmallJumps);
        let e = validate_measure(&NonlocalMeasure::fractional(1, -0.5, 1.0)).unwrap_err();
        assert_eq!(e, MeasureViolation::DivergentLargeJumps);
        let bad = NonlocalMeasure::radial(1, "neg", Arc::new(|r: f64| -r));
        assert!(matches!(validate_measure(&bad), Err(MeasureViolation::NegativeDensity { .. })));
    }

    #[test]
    fn local_stencils() {
        let m = discretize_local(1, &[vec![1]], 0.5).unwrap();
        assert_eq!(m.weight(&[1]), 4.0);
        assert_eq!(m.weight(&[-1]), 4.0);
        assert_eq!(m.len(), 2);

        let m = discretize_local(2, &[vec![1, 0], vec![0, 1]], 1.0).unwrap();
        for b in [[1, 0], [-1, 0], [0, 1], [0, -1]] {
            assert_eq!(m.weight(&b), 1.0);
        }
        assert_eq!(m.len(), 4);

        assert!(discretize_local(1, &[], 0.1).unwrap().is_empty());

        // repeated directions accumulate
        let m = discretize_local(1, &[vec![1], vec![1]], 1.0).unwrap();
        assert_eq!(m.weight(&[1]), 2.0);
        assert_eq!(m.total_mass(), 4.0);
    }

    #[test]
    fn non_integer_sigma_rejected() {
        let e = LevyOperatorSpec::from_real_columns(1, &[vec![0.5]], NonlocalMeasure::none(1)).unwrap_err();
        assert!(e.to_string().contains("integer"));
    }

    #[test]
    fn point_masses_land_on_grid() {
        let m = NonlocalMeasure::point_masses(1, vec![PointMass::new(vec![1.0], 1.0), PointMass::new(vec![-1.0], 1.0)]);
        let d = discretize_nonlocal(&m, 0.5, 2.0).unwrap();
        assert_eq!(d.measure.weight(&[2]), 1.0);
        assert_eq!(d.measure.weight(&[-2]), 1.0);
        assert_eq!(d.measure.len(), 2);
        assert_eq!(d.tail_mass, 0.0);
    }

    #[test]
    fn point_mass_ties_split() {
        let m =
            NonlocalMeasure::point_masses(1, vec![PointMass::new(vec![1.25], 2.0), PointMass::new(vec![-1.25], 2.0)]);
        let d = discretize_nonlocal(&m, 0.5, 4.0).unwrap();
        assert_eq!(d.measure.weight(&[2]), 1.0);
        assert_eq!(d.measure.weight(&[3]), 1.0);
        assert_eq!(d.measure.weight(&[-3]), 1.0);
        assert!(d.measure.is_symmetric());
    }

    #[test]
    fn empty_nonlocal() {
        let d = discretize_nonlocal(&NonlocalMeasure::none(2), 0.1, 1.0).unwrap();
        assert!(d.measure.is_empty());
        assert_eq!(d.tail_mass, 0.0);
    }

    #[test]
    fn fractional_mass_matches_closed_form() {
        for &(h, r) in &[(0.5, 2.0), (0.1, 3.0), (1.0 / 64.0, 0.5)] {
            let d = discretize_nonlocal(&NonlocalMeasure::fractional(1, 1.0, 1.0), h, r).unwrap();
            let exact = 2.0 * (1.0 / h - 1.0 / r);
            assert!((d.measure.total_mass() - exact).abs() < 1e-8, "h={h}: {} vs {exact}", d.measure.total_mass());
            assert!((d.tail_mass - 2.0 / r).abs() < 1e-12);
            assert!(d.measure.is_symmetric());
        }
    }

    #[test]
    fn fractional_2d_mass() {
        // closed form: 2 pi c (h^-a - R^-a) / a
        let (h, r, a) = (0.25, 1.5, 1.0);
        let d = discretize_nonlocal(&NonlocalMeasure::fractional(2, a, 1.0), h, r).unwrap();
        let exact = 2.0 * PI * (h.powf(-a) - r.powf(-a)) / a;
        let rel = (d.measure.total_mass() - exact).abs() / exact;
        assert!(rel < 1e-4, "rel {rel}");
        assert!(d.measure.is_symmetric());
    }

    #[test]
    fn symbols_trivial_examples() {
        let spec = LevyOperatorSpec::local(2, vec![vec![1, 0]]).unwrap();
        assert_eq!(fourier_symbol(&spec, &[2.0, 0.0]).unwrap(), 4.0);

        let pm =
            NonlocalMeasure::point_masses(1, vec![PointMass::new(vec![1.0], 1.0), PointMass::new(vec![-1.0], 1.0)]);
        let spec = LevyOperatorSpec::new(1, vec![], pm).unwrap();
        let s = fourier_symbol(&spec, &[3.0]).unwrap();
        assert!((s - 2.0 * (1.0 - 3f64.cos())).abs() < 1e-14);

        let h = 0.1;
        let nu = discretize_local(1, &[vec![1]], h).unwrap();
        let xi = 2.5;
        let s = discrete_symbol(&nu, &[xi]);
        assert!((s - 2.0 / (h * h) * (1.0 - (h * xi).cos())).abs() < 1e-10);
        assert_eq!(discrete_symbol(&nu, &[0.0]), 0.0);
    }

    #[test]
    fn fractional_symbol_is_power_of_xi() {
        for &alpha in &[0.5, 1.0, 1.5] {
            let spec = frac(alpha);
            for &xi in &[0.3, 1.0, 2.0, 7.5] {
                let s = fourier_symbol(&spec, &[xi]).unwrap();
                let exact = xi.powf(alpha);
                assert!((s - exact).abs() < 1e-6, "alpha={alpha} xi={xi}: {s} vs {exact}");
            }
        }
    }

    #[test]
    fn fractional_symbol_higher_dims() {
        for dim in [2usize, 3] {
            let spec = LevyOperatorSpec::new(dim, vec![], NonlocalMeasure::fractional_laplacian(dim, 1.0)).unwrap();
            let mut xi = vec![0.0; dim];
            xi[0] = 1.2;
            xi[1] = -0.5;
            let s = fourier_symbol(&spec, &xi).unwrap();
            let exact = norm(&xi);
            assert!((s - exact).abs() < 1e-6, "dim={dim}: {s} vs {exact}");
        }
    }

    #[test]
    fn bessel_matches_reference_values() {
        // J0(1), J0(5), J0(25), J0(100)
        let cases = [
            (1.0, 0.765_197_686_557_966_6),
            (5.0, -0.177_596_771_314_338_3),
            (25.0, 0.096_266_783_275_958_16),
            (100.0, 0.019_985_850_304_223_12),
        ];
        for (x, v) in cases {
            assert!((bessel_j0(x) - v).abs() < 1e-12, "J0({x}) = {}", bessel_j0(x));
        }
    }

    #[test]
    fn local_symbol_taylor_error() {
        let xi = 3.0;
        let mut prev = f64::INFINITY;
        for k in 3..=7 {
            let h = 2f64.powi(-k);
            let nu = discretize_local(1, &[vec![1]], h).unwrap();
            let err = (discrete_symbol(&nu, &[xi]) - xi * xi).abs();
            assert!(err <= xi.powi(4) * h * h / 12.0 + 1e-12);
            assert!(err < prev);
            prev = err;
        }
    }
}
