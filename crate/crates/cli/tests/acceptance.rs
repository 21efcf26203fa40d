//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; the process exits nonzero if
//! any criterion fails.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use levy_pme::diagnostics::{barenblatt, convergence_study, run_battery, BatteryConfig, Preset};
use levy_pme::elliptic::{resolvent_vanishing_probe, solve_linear_resolvent};
use levy_pme::levy::{discrete_symbol, fourier_symbol, NonlocalMeasure};
use levy_pme::operator::pairing;
use levy_pme::stepper::{SchemeConfig, Stepper};
use levy_pme::{DiscreteMeasure, Error, Grid, GridFunction, LevyOperatorSpec, Nonlinearity, StencilOperator};
use levy_pme_cli::commands::{execute, Cli};

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

type Criterion = (&'static str, Duration, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 resolvent estimates", Duration::from_secs(30), resolvent_estimates),
        ("2 circulant oracle", Duration::MAX, circulant_oracle),
        ("3 property battery", Duration::from_secs(300), property_battery),
        ("4 heat convergence", Duration::from_secs(60), heat_convergence),
        ("5 barenblatt convergence", Duration::from_secs(300), barenblatt_convergence),
        ("6 fractional consistency", Duration::from_secs(120), fractional_consistency),
        ("7 discrete liouville", Duration::from_secs(60), discrete_liouville),
        ("8 determinism", Duration::MAX, determinism),
    ];
    let mut failures = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let verdict = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let pass = verdict.pass && in_time;
        if !pass {
            failures += 1;
        }
        let timing = if in_time { String::new() } else { format!(" over budget {budget:?}") };
        println!(
            "{} criterion {name}: {} [{:.1}s{timing}]",
            if pass { "PASS" } else { "FAIL" },
            verdict.detail,
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}

// --- helpers -------------------------------------------------------------

fn random_offset(rng: &mut ChaCha8Rng, dim: usize, reach: i64) -> Vec<i64> {
    loop {
        let b: Vec<i64> = (0..dim).map(|_| rng.gen_range(-reach..=reach)).collect();
        if b.iter().any(|&v| v != 0) {
            return b;
        }
    }
}

fn random_function(rng: &mut ChaCha8Rng, grid: Grid) -> GridFunction {
    let values = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    GridFunction::new(grid, values).unwrap()
}

/// Direct dense solve with partial pivoting.
#[allow(clippy::needless_range_loop)]
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Breadth-first search over the torus graph whose edges are the stencil offsets.
fn torus_connected(offsets: &[Vec<i64>], dim: usize, m: usize) -> bool {
    let n = m.pow(dim as u32);
    let flat = |p: &[usize]| p.iter().rev().fold(0, |acc, &v| acc * m + v);
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([vec![0usize; dim]]);
    seen[0] = true;
    let mut count = 1;
    while let Some(p) = queue.pop_front() {
        for b in offsets {
            let q: Vec<usize> = p.iter().zip(b).map(|(&x, &d)| (x as i64 + d).rem_euclid(m as i64) as usize).collect();
            let i = flat(&q);
            if !seen[i] {
                seen[i] = true;
                count += 1;
                queue.push_back(q);
            }
        }
    }
    count == n
}

// --- criteria ------------------------------------------------------------

fn resolvent_estimates() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    let mut failures = 0;
    for _ in 0..100 {
        let dim = rng.gen_range(1..=2);
        let m = if dim == 1 { rng.gen_range(4..=128) } else { rng.gen_range(4..=64) };
        let h = 1.0 / m as f64;
        let mut nu = DiscreteMeasure::empty(dim, h);
        for _ in 0..rng.gen_range(1..=6) {
            let b = random_offset(&mut rng, dim, 4);
            nu.add_symmetric(&b, rng.gen_range(0.1..2.0)).unwrap();
        }
        let grid = Grid::new(dim, m, h).unwrap();
        let op = StencilOperator::new(nu, grid).unwrap();
        let eps = 10f64.powf(rng.gen_range(-2.0..1.0));
        let g1 = random_function(&mut rng, grid);
        let g2 = random_function(&mut rng, grid);
        // eps B_eps is a sup contraction, so this residual bounds the error in eps v
        let (v1, r1) = solve_linear_resolvent(eps, &op, &g1, 1e-11).unwrap();
        let (v2, r2) = solve_linear_resolvent(eps, &op, &g2, 1e-11).unwrap();
        let l1 = eps * v1.lp_norm(1.0) - g1.lp_norm(1.0);
        let linf = eps * v1.max_abs() - g1.max_abs();
        let x = pairing(&v1, &g2).unwrap();
        let y = pairing(&g1, &v2).unwrap();
        let scale = v1.lp_norm(2.0) * g2.lp_norm(2.0);
        let rel = (x - y).abs() / scale;
        worst = (worst.0.max(l1), worst.1.max(linf), worst.2.max(rel));
        if !(r1.converged && r2.converged) || l1 > 1e-10 || linf > 1e-10 || rel > 1e-10 {
            failures += 1;
        }
    }
    Verdict::new(
        failures == 0,
        format!(
            "100 instances, {failures} failing; max excess L1 {:.2e}, Linf {:.2e}, max relative asymmetry {:.2e}",
            worst.0, worst.1, worst.2
        ),
    )
}

fn circulant_oracle() -> Verdict {
    let grid = Grid::new(1, 4, 1.0).unwrap();
    let nu = DiscreteMeasure::from_entries(1, 1.0, [(vec![1], 1.0), (vec![-1], 1.0)]).unwrap();
    let op = StencilOperator::new(nu.clone(), grid).unwrap();
    let delta = GridFunction::new(grid, vec![1.0, 0.0, 0.0, 0.0]).unwrap();

    // (1 - L) v = delta with L v_i = v_{i+1} + v_{i-1} - 2 v_i, periodic.
    let matrix: Vec<Vec<f64>> = (0..4)
        .map(|i| {
            (0..4)
                .map(|j| match (j + 4 - i) % 4 {
                    0 => 3.0,
                    1 | 3 => -1.0,
                    _ => 0.0,
                })
                .collect()
        })
        .collect();
    let oracle = gauss_solve(matrix, vec![1.0, 0.0, 0.0, 0.0]);
    let expected = [7.0 / 15.0, 1.0 / 5.0, 2.0 / 15.0, 1.0 / 5.0];
    let oracle_err = oracle.iter().zip(expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let (v, _) = solve_linear_resolvent(1.0, &op, &delta, 1e-14).unwrap();
    let resolvent_err = v.values().iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let stepper = Stepper::new(SchemeConfig::new(grid, nu, Nonlinearity::Identity, 1.0, 1.0).with_tol(1e-14)).unwrap();
    let (u1, _) = stepper.step(&delta, &GridFunction::zeros(grid), 1.0).unwrap();
    let step_err = u1.values().iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let pass = oracle_err <= 1e-14 && resolvent_err <= 1e-12 && step_err <= 1e-12;
    Verdict::new(pass, format!("resolvent error {resolvent_err:.2e}, heat step error {step_err:.2e} vs direct solve"))
}

fn property_battery() -> Verdict {
    let cfg = BatteryConfig { seed: 7, cases: 200, steps: 20, ..BatteryConfig::default() };
    let outcome = run_battery(&cfg).unwrap();
    let failing: Vec<String> = outcome.reports.iter().filter(|r| !r.pass).map(|r| r.name.clone()).collect();
    let instances: usize = outcome.reports.iter().map(|r| r.instances).max().unwrap_or(0);
    let worst = outcome
        .reports
        .iter()
        .map(|r| format!("{} {:.1e}/{:.1e}", r.name, r.max_violation, r.slack))
        .collect::<Vec<_>>()
        .join(", ");
    Verdict::new(
        outcome.all_pass() && outcome.instances.len() == 200,
        format!("200 instances (up to {instances} checks per property), failing {failing:?}; violation/slack: {worst}"),
    )
}

fn heat_convergence() -> Verdict {
    let preset = Preset::Heat;
    let table = convergence_study(preset, &preset.default_h_list(), preset.default_step_rule()).unwrap();
    let min_order = table.orders_linf.iter().copied().fold(f64::INFINITY, f64::min);
    Verdict::new(
        min_order >= 1.8 && table.rows.len() == 5,
        format!("h = 2^-4..2^-8, k = h^2/2, Linf orders {:?}", rounded(&table.orders_linf)),
    )
}

fn barenblatt_convergence() -> Verdict {
    // support of t^{-1/3} (C - x^2 / (12 t^{2/3}))_+ is |x| <= t^{1/3} sqrt(12 C)
    let (c, t, period): (f64, f64, f64) = (0.5, 2.0, 16.0);
    let radius = t.cbrt() * (12.0 * c).sqrt();
    let margin = 0.5 * period - radius;
    let inside = barenblatt(0.99 * radius, t, c) > 0.0 && barenblatt(1.01 * radius, t, c) == 0.0;

    let preset = Preset::Barenblatt;
    let table = convergence_study(preset, &preset.default_h_list(), preset.default_step_rule()).unwrap();
    let pass = inside
        && margin >= period / 4.0
        && table.rows.len() == 5
        && table.l1_strictly_decreasing()
        && table.fitted_order_l1 >= 0.5;
    Verdict::new(
        pass,
        format!(
            "support margin {margin:.2} >= L/4 = {:.1}; L1 errors {:?} strictly decreasing: {}, fitted order {:.2}",
            period / 4.0,
            table.rows.iter().map(|r| format!("{:.2e}", r.error_l1)).collect::<Vec<_>>(),
            table.l1_strictly_decreasing(),
            table.fitted_order_l1
        ),
    )
}

fn rounded(v: &[f64]) -> Vec<String> {
    v.iter().map(|x| format!("{x:.3}")).collect()
}

/// Sup of `|discrete - continuum|` over `0 <= xi <= window`.
fn symbol_error(alpha: f64, h: f64, r_tail: f64, window: f64) -> f64 {
    let spec = LevyOperatorSpec::new(1, vec![], NonlocalMeasure::fractional_laplacian(1, alpha)).unwrap();
    let (nu, _) = spec.discretize(h, r_tail).unwrap();
    (0..=256)
        .map(|i| {
            let xi = window * i as f64 / 256.0;
            let exact = fourier_symbol(&spec, &[xi]).unwrap();
            assert!((exact - xi.powf(alpha)).abs() <= 1e-8 * xi.powf(alpha).max(1.0));
            (discrete_symbol(&nu, &[xi]) - exact).abs()
        })
        .fold(0.0, f64::max)
}

fn fractional_consistency() -> Verdict {
    let hs: Vec<f64> = (3..=7).map(|i| 2f64.powi(-i)).collect();
    let window = PI / (2.0 * hs[0]);
    let mut pass = true;
    let mut parts = Vec::new();
    for alpha in [0.5, 1.0, 1.5] {
        // fixed frequency window, truncation radius 1/h
        let errs: Vec<f64> = hs.iter().map(|&h| symbol_error(alpha, h, 1.0 / h, window)).collect();
        let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
        // moving window |xi| <= pi/(2h) with R_tail = L/2; informational
        let moving: Vec<f64> = hs.iter().map(|&h| symbol_error(alpha, h, 0.5, PI / (2.0 * h))).collect();

        let preset = Preset::Fractional { alpha };
        let table = convergence_study(preset, &hs, preset.default_step_rule()).unwrap();
        let self_ref = table.rows.iter().filter_map(|r| r.self_reference_error).fold(0.0, f64::max);
        let ok = decreasing && self_ref <= 1e-8 && table.rows.iter().all(|r| r.self_reference_error.is_some());
        pass &= ok;
        parts.push(format!(
            "alpha {alpha}: fixed-window errors {} decreasing {decreasing}, self-reference {self_ref:.1e} (moving-window, info: {})",
            errs.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(" "),
            moving.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(" ")
        ));
    }
    Verdict::new(pass, parts.join("; "))
}

fn discrete_liouville() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let eps = [1e-1, 1e-2, 1e-3, 1e-4];
    let mut accepted = 0;
    let mut failures = 0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    while accepted < 50 {
        let dim = rng.gen_range(1..=2);
        let m = rng.gen_range(4..=16);
        let offsets: Vec<Vec<i64>> = (0..rng.gen_range(1..=3)).map(|_| random_offset(&mut rng, dim, 3)).collect();
        let mut symmetric = offsets.clone();
        symmetric.extend(offsets.iter().map(|b| b.iter().map(|v| -v).collect::<Vec<_>>()));
        if !torus_connected(&symmetric, dim, m) {
            continue;
        }
        accepted += 1;
        let mut nu = DiscreteMeasure::empty(dim, 1.0);
        for b in &offsets {
            nu.add_symmetric(b, rng.gen_range(0.1..2.0)).unwrap();
        }
        let grid = Grid::new(dim, m, 1.0).unwrap();
        let op = StencilOperator::new(nu, grid).unwrap();
        let q = random_function(&mut rng, grid);
        let kernel = op.kernel_analysis();
        let probe = resolvent_vanishing_probe(&op, &q, &eps, 1e-13).unwrap();
        let rate = probe.asymptotic_rate;
        lo = lo.min(rate);
        hi = hi.max(rate);
        let ok = kernel.connected
            && kernel.zero_modes == vec![vec![0; dim]]
            && probe.is_decreasing()
            && (rate - 1.0).abs() <= 0.05
            && (probe.fitted_rate - 1.0).abs() <= 0.2;
        if !ok {
            failures += 1;
        }
    }

    let grid = Grid::new(1, 4, 1.0).unwrap();
    let nu = DiscreteMeasure::from_entries(1, 1.0, [(vec![2], 1.0), (vec![-2], 1.0)]).unwrap();
    let op = StencilOperator::new(nu, grid).unwrap();
    let kernel = op.kernel_analysis();
    let q = GridFunction::new(grid, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let flagged = !kernel.connected
        && kernel.zero_modes == vec![vec![0], vec![2]]
        && matches!(resolvent_vanishing_probe(&op, &q, &eps, 1e-13), Err(Error::DisconnectedKernel(_)));

    Verdict::new(
        failures == 0 && flagged,
        format!(
            "50 connected stencils, {failures} failing, asymptotic rates in [{lo:.4}, {hi:.4}]; {{+-2}} on M=4 flagged: {flagged}"
        ),
    )
}

fn run_once(config: &Path, out: &Path) -> Result<(), String> {
    let args = ["levy-pme", "--quiet", "--out", out.to_str().unwrap(), "run", config.to_str().unwrap()];
    let cli = Cli::try_parse_from(args).map_err(|e| e.to_string())?;
    let outcome = execute(&cli, args.iter().map(|s| s.to_string()).collect()).map_err(|e| e.to_string())?;
    if outcome.success {
        Ok(())
    } else {
        Err(outcome.summary.join("; "))
    }
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    let cells = 32;
    let source: Vec<f64> = (0..cells * cells).map(|i| if i % 7 == 0 { 0.5 } else { 0.0 }).collect();
    let text = serde_json::json!({
        "grid": { "N": 2, "M": cells },
        "operator": {
            "sigma": [[1.0, 0.0]],
            "nonlocal": { "kind": "fractional", "alpha": 1.2 }
        },
        "scheme": { "k": 1e-3, "T": 0.02, "split": { "radius": 0.1 }, "tol": 1e-10 },
        "nonlinearity": { "kind": "power", "m": 2.0 },
        "initial": { "kind": "indicator", "lo": 0.25, "hi": 0.75 },
        "source": { "kind": "table", "slices": [
            { "t": 0.0, "values": source },
            { "t": 0.02, "values": vec![0.0; cells * cells] }
        ] },
        "output": { "times": [0.01, 0.02] }
    });
    fs::write(&config, text.to_string()).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    if let Err(e) = run_once(&config, &a).and_then(|_| run_once(&config, &b)) {
        return Verdict::new(false, format!("run failed: {e}"));
    }
    let mut names: Vec<String> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    names.sort();
    let differing: Vec<&String> =
        names.iter().filter(|n| fs::read(a.join(n)).ok() != fs::read(b.join(n)).ok()).collect();
    let same_listing = fs::read_dir(&b).unwrap().count() == names.len() + 1;
    Verdict::new(
        differing.is_empty() && same_listing && !names.is_empty(),
        format!("{} output files compared byte for byte, differing {differing:?}", names.len()),
    )
}
