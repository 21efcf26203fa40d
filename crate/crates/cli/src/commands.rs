//! Subcommand dispatch.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use levy_pme::diagnostics::{
    check_suite, convergence_study, reports_csv, run_battery, BatteryConfig, Preset, Property, PropertyReport, StepRule,
};
use levy_pme::elliptic::{resolvent_residual, resolvent_vanishing_probe, solve_linear_resolvent};
use levy_pme::grid::fmt_f64;
use levy_pme::levy::{discrete_symbol, fourier_symbol};
use levy_pme::operator::StencilOperator;
use levy_pme::stepper::Stepper;
use levy_pme::GridFunction;

use crate::config::{Config, NonlocalSection, OUT_ENV};
use crate::output::{OutputDir, PropertySummary, RunManifest};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "levy-pme",
    version,
    about = "Monotone schemes for nonlinear nonlocal diffusion u_t = L[phi(u)] + g on the torus",
    after_help = "Output directory: --out, else the LEVY_PME_OUT environment variable, else output.directory \
                  from the configuration (default \"out\").\n\
                  Exit status: 0 on success, 1 when a property fails or a solve does not converge, \
                  2 on configuration errors, 3 on i/o errors."
)]
pub struct Cli {
    /// JSON run configuration (subcommands without one use the built-in heat setup).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for the randomized property battery.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Number of battery instances.
    #[arg(long, global = true, default_value_t = 200)]
    pub cases: usize,
    /// Output directory (overrides LEVY_PME_OUT and the configuration).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Suppress the summary on standard output.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetName {
    Heat,
    Barenblatt,
    Fractional,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// March the configured problem to T and check the single-run estimates.
    Run {
        /// Configuration file (same as --config).
        config_file: Option<PathBuf>,
    },
    /// Convergence study for a built-in preset.
    Study {
        #[arg(long, value_enum, default_value = "heat")]
        preset: PresetName,
        /// Fractional order for the fractional preset.
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Comma-separated spacings (defaults depend on the preset).
        #[arg(long, value_delimiter = ',')]
        h_list: Option<Vec<f64>>,
        /// Step rule k = factor * h^power.
        #[arg(long)]
        k_factor: Option<f64>,
        #[arg(long)]
        k_power: Option<f64>,
    },
    /// Randomized battery of the a priori estimates.
    Props {
        /// Time steps per run.
        #[arg(long, default_value_t = 20)]
        steps: usize,
    },
    /// Continuum versus discrete symbol along the first frequency axis.
    Symbol {
        /// start:step:stop
        #[arg(long, default_value = "0:0.5:20")]
        xi_grid: String,
    },
    /// Resolvent estimates and the vanishing probe for eps -> 0, with the
    /// configured initial data as right-hand side.
    Resolvent {
        /// Comma-separated eps values, decreasing.
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.01,0.001,0.0001")]
        eps: Vec<f64>,
    },
}

/// Result of a subcommand that ran to completion.
#[derive(Debug)]
pub struct Outcome {
    pub success: bool,
    pub summary: Vec<String>,
    /// Printed on standard error even with `--quiet`.
    pub warnings: Vec<String>,
    pub directory: PathBuf,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.success {
            0
        } else {
            1
        }
    }
}

fn load_config(cli: &Cli, positional: Option<&PathBuf>) -> Result<(Config, bool), CliError> {
    match positional.or(cli.config.as_ref()) {
        Some(path) => Ok((Config::load(path)?, true)),
        None => {
            let mut cfg = Config::minimal_heat();
            cfg.resolve()?;
            Ok((cfg, false))
        }
    }
}

fn output_root(cli: &Cli, cfg: &Config) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| cfg.output_directory())
}

fn default_root(cli: &Cli, sub: &str) -> PathBuf {
    if let Some(out) = &cli.out {
        return out.clone();
    }
    match std::env::var_os(OUT_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => Path::new("out").join(sub),
    }
}

fn config_json(cfg: &Config) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn finish(
    mut manifest: RunManifest,
    out: OutputDir,
    reports: &[PropertyReport],
    success: bool,
    message: Option<String>,
    mut summary: Vec<String>,
) -> Result<Outcome, CliError> {
    manifest.files = out.files().to_vec();
    manifest.properties = reports.iter().map(PropertySummary::from).collect();
    manifest.status = if success { "ok".into() } else { "failed".into() };
    manifest.message = message.clone();
    manifest.write(out.root())?;
    if let Some(m) = message {
        summary.push(m);
    }
    Ok(Outcome { success, summary, warnings: manifest.warnings, directory: out.root().to_path_buf() })
}

/// Runs the parsed command line; errors are configuration or library failures
/// that prevented the command from producing its outputs.
pub fn execute(cli: &Cli, arguments: Vec<String>) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::Run { config_file } => run(cli, config_file.as_ref(), arguments),
        Command::Study { preset, alpha, h_list, k_factor, k_power } => {
            study(cli, *preset, *alpha, h_list.clone(), *k_factor, *k_power, arguments)
        }
        Command::Props { steps } => props(cli, *steps, arguments),
        Command::Symbol { xi_grid } => symbol(cli, xi_grid, arguments),
        Command::Resolvent { eps } => resolvent(cli, eps, arguments),
    }
}

fn run(cli: &Cli, positional: Option<&PathBuf>, arguments: Vec<String>) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let (cfg, _) = load_config(cli, positional)?;
    let mut manifest = RunManifest::new("run", arguments);
    manifest.config = Some(config_json(&cfg));
    let grid = cfg.grid()?;
    let scheme = cfg.scheme_config()?;
    let u0 = cfg.initial_data(&grid)?;
    let g = cfg.source_term(&grid)?;
    manifest.warnings.extend(support_warning(&cfg, &u0)?);
    let setup = start.elapsed().as_secs_f64();

    let march = Instant::now();
    let traj = Stepper::new(scheme)?.run(&u0, &g)?;
    manifest.wall_time_seconds.push(("setup".into(), setup));
    manifest.wall_time_seconds.push(("march".into(), march.elapsed().as_secs_f64()));

    let mut out = OutputDir::create(&output_root(cli, &cfg))?;
    out.write("diagnostics.csv", &traj.diagnostics_csv())?;
    let mut index = String::from("index,time,file\n");
    for (i, (t, snap)) in traj.snapshots.iter().enumerate() {
        let name = format!("snapshot_{i:04}.csv");
        out.write(&name, &snap.to_csv())?;
        index.push_str(&format!("{i},{},{name}\n", fmt_f64(*t)));
    }
    out.write("snapshots.csv", &index)?;
    let mut solves = String::from("step,iterations,residual_sup,converged\n");
    for (j, r) in traj.reports.iter().enumerate() {
        solves.push_str(&format!("{},{},{},{}\n", j + 1, r.iterations, fmt_f64(r.final_residual_sup), r.converged));
    }
    out.write("solves.csv", &solves)?;
    let mut regularity = String::from("time,drift_l1,time_cbrt\n");
    for (t, d, c) in traj.time_regularity() {
        regularity.push_str(&format!("{},{},{}\n", fmt_f64(t), fmt_f64(d), fmt_f64(c)));
    }
    out.write("time_regularity.csv", &regularity)?;

    let which = [
        Property::L1Bound,
        Property::L2Bound,
        Property::LinfBound,
        Property::Energy,
        Property::Mass,
        Property::SolverConvergence,
    ];
    let reports = check_suite(&traj, None, &which)?;
    out.write("properties.csv", &reports_csv(&reports))?;

    let success = traj.completed() && reports.iter().all(|r| r.pass);
    let mut summary = vec![format!(
        "run: {} steps to T = {} on {}^{} cells, final mass {:.6e}",
        traj.steps(),
        cfg.scheme.t,
        grid.cells(),
        grid.dim(),
        traj.final_state.mass()
    )];
    summary.extend(reports.iter().map(|r| r.to_string()));
    let message = match traj.aborted_at {
        Some(j) => Some(format!("solve at step {j} did not converge; trajectory truncated")),
        None => reports.iter().find(|r| !r.pass).map(|r| format!("property {} failed", r.name)),
    };
    finish(manifest, out, &reports, success, message, summary)
}

/// Compactly supported data should stay farther than the operator's reach
/// from the edge of the period cell, where the torus wraps around.
fn support_warning(cfg: &Config, u0: &GridFunction) -> Result<Option<String>, CliError> {
    let values = u0.values();
    if values.iter().all(|&v| v != 0.0) {
        return Ok(None);
    }
    let nu = cfg.measure()?;
    let reach = if matches!(cfg.operator.nonlocal, NonlocalSection::None) {
        nu.iter().map(|(b, _)| nu.jump_length(b)).fold(0.0, f64::max)
    } else {
        cfg.r_tail()
    };
    let grid = u0.grid();
    let (h, m) = (grid.spacing(), grid.cells());
    let gap = (0..values.len())
        .filter(|&i| values[i] != 0.0)
        .flat_map(|i| grid.multi_index(i))
        .map(|b| (h * b as f64).min(h * (m - b - 1) as f64))
        .fold(f64::INFINITY, f64::min);
    Ok((gap.is_finite() && gap < reach).then(|| {
        format!(
            "initial support comes within {} of the period boundary, less than the operator reach {}; \
             the solution will interact with its periodic images",
            fmt_f64(gap),
            fmt_f64(reach)
        )
    }))
}

fn study(
    cli: &Cli,
    preset: PresetName,
    alpha: f64,
    h_list: Option<Vec<f64>>,
    k_factor: Option<f64>,
    k_power: Option<f64>,
    arguments: Vec<String>,
) -> Result<Outcome, CliError> {
    let preset = match preset {
        PresetName::Heat => Preset::Heat,
        PresetName::Barenblatt => Preset::Barenblatt,
        PresetName::Fractional => {
            if !(alpha > 0.0 && alpha < 2.0) {
                return Err(CliError::Config(format!("--alpha: must lie in (0, 2), got {alpha}")));
            }
            Preset::Fractional { alpha }
        }
    };
    let mut rule = preset.default_step_rule();
    if let Some(f) = k_factor {
        rule.factor = f;
    }
    if let Some(p) = k_power {
        rule.power = p;
    }
    if !(rule.factor > 0.0) {
        return Err(CliError::Config(format!("--k-factor: must be positive, got {}", rule.factor)));
    }
    let h_list = h_list.unwrap_or_else(|| preset.default_h_list());
    let start = Instant::now();
    let table = convergence_study(preset, &h_list, StepRule { ..rule })?;
    let mut manifest = RunManifest::new("study", arguments);
    manifest.wall_time_seconds.push(("study".into(), start.elapsed().as_secs_f64()));
    let mut out = OutputDir::create(&default_root(cli, "study"))?;
    out.write("convergence.csv", &table.to_csv())?;
    let summary = vec![table.to_string()];
    finish(manifest, out, &[], true, None, summary)
}

fn props(cli: &Cli, steps: usize, arguments: Vec<String>) -> Result<Outcome, CliError> {
    if steps == 0 {
        return Err(CliError::Config("--steps: must be positive".into()));
    }
    let start = Instant::now();
    let battery = BatteryConfig { seed: cli.seed, cases: cli.cases, steps, ..BatteryConfig::default() };
    let outcome = run_battery(&battery)?;
    let mut manifest = RunManifest::new("props", arguments);
    manifest.seed = Some(cli.seed);
    manifest.wall_time_seconds.push(("battery".into(), start.elapsed().as_secs_f64()));
    let mut out = OutputDir::create(&default_root(cli, "props"))?;
    out.write("properties.csv", &reports_csv(&outcome.reports))?;
    let mut inst = String::from("index,dim,cells,stencil_size,split,nonlinearity,k,pass\n");
    for s in &outcome.instances {
        inst.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.index,
            s.dim,
            s.cells,
            s.stencil_size,
            s.split,
            s.nonlinearity,
            fmt_f64(s.k),
            s.pass
        ));
    }
    out.write("instances.csv", &inst)?;
    let success = outcome.all_pass();
    let mut summary = vec![format!("props: {} instances, seed {}", cli.cases, cli.seed)];
    summary.extend(outcome.reports.iter().map(|r| r.to_string()));
    let message = outcome.reports.iter().find(|r| !r.pass).map(|r| format!("property {} failed", r.name));
    finish(manifest, out, &outcome.reports, success, message, summary)
}

/// Parses `start:step:stop` into an inclusive grid.
pub fn parse_xi_grid(text: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Config(format!("--xi-grid: expected start:step:stop, got {text:?}"));
    let parts: Vec<f64> =
        text.split(':').map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_, _>>()?;
    let [a, s, b] = parts[..] else { return Err(bad()) };
    if !(s > 0.0) || !(b >= a) || !a.is_finite() || !b.is_finite() {
        return Err(bad());
    }
    let n = ((b - a) / s + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| a + i as f64 * s).collect())
}

fn symbol(cli: &Cli, xi_grid: &str, arguments: Vec<String>) -> Result<Outcome, CliError> {
    let xs = parse_xi_grid(xi_grid)?;
    let (cfg, _) = load_config(cli, None)?;
    let spec = cfg.operator_spec()?;
    let nu = cfg.measure()?;
    let n = cfg.grid.n;
    let start = Instant::now();
    let mut csv = String::from("xi,continuum,discrete,abs_error\n");
    let mut worst: f64 = 0.0;
    for &x in &xs {
        let mut xi = vec![0.0; n];
        xi[0] = x;
        let c = fourier_symbol(&spec, &xi)?;
        let d = discrete_symbol(&nu, &xi);
        worst = worst.max((c - d).abs());
        csv.push_str(&format!("{},{},{},{}\n", fmt_f64(x), fmt_f64(c), fmt_f64(d), fmt_f64((c - d).abs())));
    }
    let mut manifest = RunManifest::new("symbol", arguments);
    manifest.config = Some(config_json(&cfg));
    manifest.wall_time_seconds.push(("symbols".into(), start.elapsed().as_secs_f64()));
    let mut out = OutputDir::create(&output_root(cli, &cfg))?;
    out.write("symbol.csv", &csv)?;
    let summary = vec![format!("symbol: {} frequencies, max |continuum - discrete| = {worst:.6e}", xs.len())];
    finish(manifest, out, &[], true, None, summary)
}

fn resolvent(cli: &Cli, eps: &[f64], arguments: Vec<String>) -> Result<Outcome, CliError> {
    if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0)) {
        return Err(CliError::Config("--eps: values must be positive".into()));
    }
    let (cfg, _) = load_config(cli, None)?;
    let grid = cfg.grid()?;
    let op = StencilOperator::new(cfg.measure()?, grid)?;
    let gamma = cfg.initial_data(&grid)?;
    let tol = cfg.scheme.tol;
    let start = Instant::now();
    let mut manifest = RunManifest::new("resolvent", arguments);
    manifest.config = Some(config_json(&cfg));
    let mut out = OutputDir::create(&output_root(cli, &cfg))?;

    let kernel = op.kernel_analysis();
    let mut kcsv = String::from("mode\n");
    for m in &kernel.zero_modes {
        kcsv.push_str(&m.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "));
        kcsv.push('\n');
    }
    out.write("kernel.csv", &kcsv)?;

    let mut est = String::from("eps,eps_l1,gamma_l1,eps_linf,gamma_linf,residual_sup\n");
    let mut estimates_ok = true;
    for &e in eps {
        let (v, report) = solve_linear_resolvent(e, &op, &gamma, tol)?;
        report.ensure_converged(tol)?;
        let residual = resolvent_residual(e, &op, &v, &gamma)?;
        let (el1, gl1) = (e * v.lp_norm(1.0), gamma.lp_norm(1.0));
        let (einf, ginf) = (e * v.lp_norm(f64::INFINITY), gamma.lp_norm(f64::INFINITY));
        estimates_ok &= el1 <= gl1 + 1e-10 && einf <= ginf + 1e-10;
        est.push_str(&format!(
            "{},{},{},{},{},{}\n",
            fmt_f64(e),
            fmt_f64(el1),
            fmt_f64(gl1),
            fmt_f64(einf),
            fmt_f64(ginf),
            fmt_f64(residual)
        ));
    }
    out.write("estimates.csv", &est)?;

    let mut summary = vec![format!(
        "resolvent: kernel spanned by {} lattice mode(s), spectral gap {:.6e}",
        kernel.zero_modes.len(),
        kernel.min_nonzero_symbol
    )];
    let (success, message) = match resolvent_vanishing_probe(&op, &gamma, eps, tol) {
        Ok(probe) => {
            let mut csv = String::from("eps,deviation\n");
            for (e, d) in &probe.rows {
                csv.push_str(&format!("{},{}\n", fmt_f64(*e), fmt_f64(*d)));
            }
            out.write("resolvent.csv", &csv)?;
            summary.push(format!(
                "vanishing probe: decreasing = {}, fitted rate {:.4}, asymptotic rate {:.4}",
                probe.is_decreasing(),
                probe.fitted_rate,
                probe.asymptotic_rate
            ));
            let ok = estimates_ok && probe.is_decreasing();
            (ok, if ok { None } else { Some("resolvent estimates or probe failed".to_string()) })
        }
        Err(e) => (false, Some(e.to_string())),
    };
    manifest.wall_time_seconds.push(("resolvent".into(), start.elapsed().as_secs_f64()));
    finish(manifest, out, &[], success, message, summary)
}
