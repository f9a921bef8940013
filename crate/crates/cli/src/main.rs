//! Command-line front end for the toolkit.
//!
//! Exit codes: 0 success, 1 usage or config problem, 2 numerical failure
//! (non-convergence, budget miss, non-finite state), 3 violated structural
//! assumption (non-positive jump factor, period product away from one, and
//! the like).  Every file-producing command writes a sibling
//! `<output>.manifest.json` recording the resolved parameters; CSV bodies
//! are deterministic, manifests differ only in the duration field.

mod reproduce;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::{json, Map, Value};

use impulsive_dde::analyze::{analyze, AnalyzeError};
use impulsive_dde::cauchy::{cauchy_h, gamma_extrema, CauchyError};
use impulsive_dde::expr::{self, VarSet};
use impulsive_dde::fixpoint::{iterate_to_fixed_point, FixpointError};
use impulsive_dde::halanay::{solve_rate, HalanayError, HalanayProblem};
use impulsive_dde::model::{load_model, InitialHistory, ModelError, ModelSpec};
use impulsive_dde::sim::{integrate, SimError, Trajectory};

#[derive(Parser)]
#[command(
    name = "impulsive-dde",
    version,
    about = "Simulation and certification toolkit for impulsive delay equations"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate the model forward and write the trajectory as CSV.
    Simulate {
        /// Model config (JSON).
        config: PathBuf,
        /// Final time of the integration window.
        #[arg(long)]
        t_end: f64,
        /// Step size; at most a quarter of the shortest impulse gap.
        #[arg(long, default_value_t = 0.01)]
        h: f64,
        /// History expression in t; defaults to the config's history block.
        #[arg(long)]
        history: Option<String>,
        /// Start time paired with --history.
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Analyze the config and report the derived constants and verdicts.
    Verify {
        /// Model config (JSON).
        config: PathBuf,
        /// Print the full report as JSON instead of the summary lines.
        #[arg(long)]
        json: bool,
    },
    /// Iterate the integral operator to its fixed point and write it as CSV.
    Fixpoint {
        /// Model config (JSON).
        config: PathBuf,
        /// Residual tolerance for the sweep loop.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Grid step bound.
        #[arg(long, default_value_t = 0.01)]
        h_grid: f64,
        /// Right end of the reported window; output covers one delay span
        /// ahead of time zero up to here.
        #[arg(long, default_value_t = 10.0)]
        t_report: f64,
        /// Output CSV path; a residual summary lands next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the delayed comparison problem for its certified decay rate.
    Halanay {
        /// Model config; its analysis supplies (R, S, tau, c).
        config: Option<PathBuf>,
        /// Linear decay coefficient.
        #[arg(long = "R")]
        r: Option<f64>,
        /// Delayed gain.
        #[arg(long = "S")]
        s: Option<f64>,
        /// Delay bound.
        #[arg(long)]
        tau: Option<f64>,
        /// Worst per-instant growth factor (at least one).
        #[arg(long)]
        c: Option<f64>,
    },
    /// Evaluate the impulsive decay weight H(t, s) and its envelope bounds.
    Cauchy {
        /// Model config (JSON).
        config: PathBuf,
        /// Source time.
        #[arg(long)]
        s: f64,
        /// Target time, at least the source time.
        #[arg(long)]
        t: f64,
    },
    /// Run a named worked case end to end and check its pinned numbers.
    Reproduce {
        /// Case id: example1 or example56.
        case: String,
        /// Directory for the emitted files.
        #[arg(long, default_value = "reproduce-out")]
        outdir: PathBuf,
    },
}

/// Failure classified by exit code.
pub(crate) enum Failure {
    Usage(String),
    Numerical(String),
    Assumption(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Numerical(_) => 2,
            Failure::Assumption(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Numerical(m) | Failure::Assumption(m) => m,
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        if e.is_assumption_violation() {
            Failure::Assumption(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

impl From<AnalyzeError> for Failure {
    fn from(e: AnalyzeError) -> Self {
        if e.is_assumption_violation() {
            Failure::Assumption(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::BadStep { .. } | SimError::BadSpan { .. } | SimError::BadHistory { .. } => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<FixpointError> for Failure {
    fn from(e: FixpointError) -> Self {
        match e {
            FixpointError::BadStep { .. }
            | FixpointError::BadSpan { .. }
            | FixpointError::InstantOffGrid { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<HalanayError> for Failure {
    fn from(e: HalanayError) -> Self {
        match e {
            HalanayError::BadParameter { .. } => Failure::Usage(e.to_string()),
            HalanayError::Cauchy(CauchyError::PeriodProductNotOne { .. }) => {
                Failure::Assumption(e.to_string())
            }
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<CauchyError> for Failure {
    fn from(e: CauchyError) -> Self {
        match e {
            CauchyError::BadOrder { .. } => Failure::Usage(e.to_string()),
            CauchyError::PeriodProductNotOne { .. } => Failure::Assumption(e.to_string()),
            CauchyError::Eval { .. } => Failure::Numerical(e.to_string()),
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; real parse errors
            // are usage failures.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(f) = run(cli.cmd) {
        eprintln!("error: {}", f.message());
        std::process::exit(f.code());
    }
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Simulate { config, t_end, h, history, alpha, out } => {
            cmd_simulate(&config, t_end, h, history.as_deref(), alpha, &out)
        }
        Cmd::Verify { config, json } => cmd_verify(&config, json),
        Cmd::Fixpoint { config, tol, h_grid, t_report, out } => {
            cmd_fixpoint(&config, tol, h_grid, t_report, &out)
        }
        Cmd::Halanay { config, r, s, tau, c } => cmd_halanay(config.as_deref(), r, s, tau, c),
        Cmd::Cauchy { config, s, t } => cmd_cauchy(&config, s, t),
        Cmd::Reproduce { case, outdir } => reproduce::run(&case, &outdir),
    }
}

pub(crate) fn load(config: &Path) -> Result<ModelSpec, Failure> {
    let text = fs::read_to_string(config)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", config.display())))?;
    Ok(load_model(&text)?)
}

/// 17 significant digits: doubles round-trip losslessly.
pub(crate) fn sig17(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn write_csv(path: &Path, header: &str, rows: &[(f64, f64, f64)]) -> Result<(), Failure> {
    let mut body = String::with_capacity(header.len() + 1 + rows.len() * 72);
    body.push_str(header);
    body.push('\n');
    for &(t, a, b) in rows {
        body.push_str(&sig17(t));
        body.push(',');
        body.push_str(&sig17(a));
        body.push(',');
        body.push_str(&sig17(b));
        body.push('\n');
    }
    fs::write(path, body).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
}

/// Node rows `(t, left, right-or-left)` for CSV output.
pub(crate) fn trajectory_rows(traj: &Trajectory) -> Vec<(f64, f64, f64)> {
    (0..traj.len())
        .map(|i| {
            let t = traj.times()[i];
            let l = traj.left_values()[i];
            (t, l, traj.right_value(i).unwrap_or(l))
        })
        .collect()
}

pub(crate) fn write_json(path: &Path, value: &Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::Numerical(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
}

/// Writes `<out>.manifest.json` next to an output file.
pub(crate) fn write_manifest(
    out: &Path,
    command: &str,
    config: Option<&Path>,
    mut parameters: Map<String, Value>,
    started: Instant,
) -> Result<(), Failure> {
    parameters.insert("command".into(), json!(command));
    if let Some(c) = config {
        parameters.insert("config_path".into(), json!(c.display().to_string()));
    }
    parameters.insert("toolkit_version".into(), json!(env!("CARGO_PKG_VERSION")));
    parameters.insert(
        "duration_seconds".into(),
        json!(started.elapsed().as_secs_f64()),
    );
    let path = PathBuf::from(format!("{}.manifest.json", out.display()));
    write_json(&path, &Value::Object(parameters))
}

fn cmd_simulate(
    config: &Path,
    t_end: f64,
    h: f64,
    history: Option<&str>,
    alpha: f64,
    out: &Path,
) -> Result<(), Failure> {
    let started = Instant::now();
    let model = load(config)?;
    let hist = match history {
        Some(src) => {
            let e = expr::parse(src, VarSet::TimeOnly)
                .map_err(|e| Failure::Usage(format!("--history: {e}")))?;
            InitialHistory::from_expr(alpha, e)
        }
        None => model
            .default_history()
            .cloned()
            .ok_or_else(|| Failure::Usage("config declares no history; pass --history".into()))?,
    };
    let traj = integrate(&model, &hist, t_end, h)?;
    write_csv(out, "t,x_left,x_right", &trajectory_rows(&traj))?;

    let mut p = Map::new();
    p.insert("t_end".into(), json!(t_end));
    p.insert("h".into(), json!(h));
    p.insert("alpha".into(), json!(hist.alpha()));
    if let Some(src) = history {
        p.insert("history".into(), json!(src));
    }
    write_manifest(out, "simulate", Some(config), p, started)
}

fn cmd_verify(config: &Path, json_only: bool) -> Result<(), Failure> {
    let model = load(config)?;
    let report = analyze(&model)?;
    if json_only {
        let value = serde_json::to_value(&report)
            .map_err(|e| Failure::Numerical(format!("cannot serialize report: {e}")))?;
        println!(
            "{}",
            serde_json::to_string_pretty(&value)
                .map_err(|e| Failure::Numerical(format!("cannot serialize report: {e}")))?
        );
        return Ok(());
    }
    let verdict = |ok: bool| if ok { "ok" } else { "FAILS" };
    println!("M1 = {:.6}", report.m1);
    println!("M2 = {:.6}  (whole-range variant {:.6})", report.m2, report.m2_global_variant);
    if report.m2_variants_disagree {
        println!("note: the two removal-sup conventions disagree on the sign of M2");
    }
    println!(
        "existence:     lhs = {:.6} -> {}  (needs < 1 and M2 > 0)",
        report.existence_lhs,
        verdict(report.existence_ok)
    );
    println!(
        "attractivity:  lhs = {:.6} -> {}",
        report.attractivity_lhs,
        verdict(report.attractivity_ok)
    );
    println!(
        "delay vs gap:  sigma_bar = {:.6}, eta_min = {:.6} -> {}",
        report.sigma_bar,
        report.eta_min,
        verdict(report.delay_vs_eta_ok)
    );
    Ok(())
}

fn cmd_fixpoint(
    config: &Path,
    tol: f64,
    h_grid: f64,
    t_report: f64,
    out: &Path,
) -> Result<(), Failure> {
    let started = Instant::now();
    let model = load(config)?;
    let report = analyze(&model)?;
    let run = iterate_to_fixed_point(&model, &report, h_grid, t_report, tol)?;

    // Only the converged window goes out; warm-up nodes stay internal.
    let phi = &run.phi;
    let rows: Vec<(f64, f64, f64)> = (0..phi.len())
        .filter(|&i| phi.nodes()[i] >= run.valid_from)
        .map(|i| {
            let t = phi.nodes()[i];
            let l = phi.left_values()[i];
            (t, l, phi.right_value(i).unwrap_or(l))
        })
        .collect();
    write_csv(out, "t,phi_left,phi_right", &rows)?;

    let summary = json!({
        "iterations": run.residuals.len(),
        "final_residual": run.residuals.last().copied().unwrap_or(0.0),
        "residuals": run.residuals,
        "w": run.w,
        "tol": run.tol,
        "h_grid": h_grid,
        "t_report": t_report,
        "valid_from": run.valid_from,
    });
    write_json(&out.with_extension("summary.json"), &summary)?;

    let mut p = Map::new();
    p.insert("tol".into(), json!(tol));
    p.insert("h_grid".into(), json!(h_grid));
    p.insert("t_report".into(), json!(t_report));
    write_manifest(out, "fixpoint", Some(config), p, started)
}

fn cmd_halanay(
    config: Option<&Path>,
    r: Option<f64>,
    s: Option<f64>,
    tau: Option<f64>,
    c: Option<f64>,
) -> Result<(), Failure> {
    let p = match (config, r, s, tau, c) {
        (Some(path), None, None, None, None) => {
            let model = load(path)?;
            let report = analyze(&model)?;
            HalanayProblem::from_report(&report)?
        }
        (None, Some(r), Some(s), Some(tau), Some(c)) => HalanayProblem::new(r, s, tau, c)?,
        _ => {
            return Err(Failure::Usage(
                "pass either a config path or all of --R --S --tau --c".into(),
            ))
        }
    };
    let rate = solve_rate(&p)?;
    println!(
        "{}",
        json!({ "r": p.r, "s": p.s, "tau": p.tau, "c": p.c, "rate": rate })
    );
    Ok(())
}

fn cmd_cauchy(config: &Path, s: f64, t: f64) -> Result<(), Failure> {
    let model = load(config)?;
    let report = analyze(&model)?;
    let h = cauchy_h(&model, t, s)?;
    let ext = gamma_extrema(model.schedule())?;
    let span = t - s;
    let upper = ext.amp_upper() * (-report.a_l * span).exp();
    let lower = ext.amp_lower() * (-report.a_m * span).exp();
    println!(
        "{}",
        json!({ "s": s, "t": t, "h": h, "lower": lower, "upper": upper })
    );
    Ok(())
}
