//! One-dimensional quadrature used by the measure discretization, the
//! symbol evaluation and the cell/time averages.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

/// Three-point Gauss-Legendre rule on [0, 1] (exact for quintics).
pub const GAUSS3_NODES: [f64; 3] = [0.5 - 0.387_298_334_620_741_7, 0.5, 0.5 + 0.387_298_334_620_741_7];
pub const GAUSS3_WEIGHTS: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];

/// Five-point Gauss-Legendre rule on [0, 1].
pub const GAUSS5_NODES: [f64; 5] = [
    0.5 - 0.453_089_922_969_332_2,
    0.5 - 0.269_234_655_052_841_6,
    0.5,
    0.5 + 0.269_234_655_052_841_6,
    0.5 + 0.453_089_922_969_332_2,
];
pub const GAUSS5_WEIGHTS: [f64; 5] = [
    0.118_463_442_528_094_5,
    0.239_314_335_249_683_2,
    0.284_444_444_444_444_4,
    0.239_314_335_249_683_2,
    0.118_463_442_528_094_5,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let pair = f(center - dx) + f(center + dx);
        kronrod += w * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive Gauss-Kronrod (7/15) integration of `f` over `[a, b]`.
///
/// The integrand is never evaluated at the endpoints, so integrable endpoint
/// singularities are handled by repeated bisection.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Quadrature {
    integrate_with_limit(&f, a, b, abs_tol, rel_tol, 4000)
}

pub fn integrate_with_limit<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_segments: usize,
) -> Quadrature {
    if a == b {
        return Quadrature { value: 0.0, error: 0.0, converged: true };
    }
    let (value, error) = gk15(f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value, error });
    let mut total = value;
    let mut total_err = error;
    let mut count = 1;
    loop {
        if total_err <= abs_tol.max(rel_tol * total.abs()) {
            return Quadrature { value: total, error: total_err, converged: true };
        }
        if count >= max_segments {
            break;
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval exhausted at machine precision
            heap.push(Segment { error: 0.0, ..worst });
            total_err = heap.iter().map(|s| s.error).sum();
            if heap.iter().all(|s| s.error == 0.0) {
                break;
            }
            continue;
        }
        let (lv, le) = gk15(f, worst.a, mid);
        let (rv, re) = gk15(f, mid, worst.b);
        total += lv + rv - worst.value;
        total_err += le + re - worst.error;
        heap.push(Segment { a: worst.a, b: mid, value: lv, error: le });
        heap.push(Segment { a: mid, b: worst.b, value: rv, error: re });
        count += 1;
        if count % 64 == 0 {
            // refresh running sums to limit drift
            total = heap.iter().map(|s| s.value).sum();
            total_err = heap.iter().map(|s| s.error).sum();
        }
    }
    total = heap.iter().map(|s| s.value).sum();
    total_err = heap.iter().map(|s| s.error).sum();
    Quadrature { value: total, error: total_err, converged: total_err <= abs_tol.max(rel_tol * total.abs()) }
}

/// Integral of `f` over `[start, inf)` by summing dyadic blocks
/// `[start 2^j, start 2^{j+1}]` and extrapolating the geometric tail.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, start: f64, tol: f64) -> Quadrature {
    assert!(start > 0.0, "dyadic tail needs a positive start");
    let mut total = 0.0;
    let mut err = 0.0;
    let mut prev: Option<f64> = None;
    let mut lo = start;
    for _ in 0..200 {
        let hi = 2.0 * lo;
        let q = integrate_with_limit(&f, lo, hi, tol * 1e-3, 1e-13, 400);
        total += q.value;
        err += q.error;
        if let Some(p) = prev {
            if p != 0.0 {
                let ratio = q.value / p;
                if (0.0..1.0).contains(&ratio) {
                    let tail = q.value * ratio / (1.0 - ratio);
                    if tail.abs() <= tol.max(1e-14 * total.abs()) {
                        // geometric extrapolation of the remainder
                        return Quadrature { value: total + tail, error: err + tail.abs() * 1e-2, converged: true };
                    }
                }
            } else if q.value == 0.0 {
                return Quadrature { value: total, error: err, converged: true };
            }
        }
        prev = Some(q.value);
        lo = hi;
        if !lo.is_finite() {
            break;
        }
    }
    Quadrature { value: total, error: f64::INFINITY, converged: false }
}

/// Sum of an alternating series given its partial sums, accelerated by
/// repeated averaging (Euler transform). Returns the estimate and the
/// difference between the last two averaging levels.
pub fn accelerate_partial_sums(partial: &[f64]) -> (f64, f64) {
    match partial.len() {
        0 => (0.0, 0.0),
        1 => (partial[0], f64::INFINITY),
        _ => {
            let mut row = partial.to_vec();
            let mut last_change = f64::INFINITY;
            while row.len() > 1 {
                let next: Vec<f64> = row.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
                last_change = (next[next.len() - 1] - row[row.len() - 1]).abs();
                row = next;
            }
            (row[0], last_change)
        }
    }
}
