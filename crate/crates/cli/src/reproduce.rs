//! End-to-end reruns of the two worked cases with their pinned numbers.
//!
//! Each case writes its artifacts into the output directory, prints one
//! PASS/FAIL line per check, and mirrors those lines into `summary.txt`.
//! Any failed check makes the command exit with the numerical-failure code.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde_json::{json, Map};

use impulsive_dde::analyze::analyze;
use impulsive_dde::fixpoint::iterate_to_fixed_point;
use impulsive_dde::grid::{GridFunction, Side};
use impulsive_dde::model::InitialHistory;
use impulsive_dde::presets;
use impulsive_dde::sim::integrate;

use crate::{trajectory_rows, write_csv, write_json, write_manifest, Failure};

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

pub(crate) fn run(case: &str, outdir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(outdir)
        .map_err(|e| Failure::Usage(format!("cannot create {}: {e}", outdir.display())))?;
    match case {
        "example56" => saturating_case(outdir),
        "example1" => linear_case(outdir),
        other => Err(Failure::Usage(format!(
            "unknown case `{other}`; expected example1 or example56"
        ))),
    }
}

fn finish(case: &str, outdir: &Path, checks: Vec<Check>) -> Result<(), Failure> {
    let mut lines = Vec::with_capacity(checks.len() + 1);
    let failed = checks.iter().filter(|c| !c.pass).count();
    for c in &checks {
        lines.push(format!(
            "{} {}: {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        ));
    }
    lines.push(format!(
        "{case}: {}/{} checks passed",
        checks.len() - failed,
        checks.len()
    ));
    let text = lines.join("\n") + "\n";
    print!("{text}");
    fs::write(outdir.join("summary.txt"), text)
        .map_err(|e| Failure::Usage(format!("cannot write summary: {e}")))?;
    if failed > 0 {
        Err(Failure::Numerical(format!(
            "{failed} of {} reproduction checks failed",
            checks.len()
        )))
    } else {
        Ok(())
    }
}

/// Saturating model: analysis constants, collapse of four starts, the
/// fixed-point run, and the solution property of the fixed point.
fn saturating_case(outdir: &Path) -> Result<(), Failure> {
    let started = Instant::now();
    let model = presets::saturating_model();
    let report = analyze(&model)?;
    write_json(
        &outdir.join("analysis.json"),
        &serde_json::to_value(&report)
            .map_err(|e| Failure::Numerical(format!("cannot serialize report: {e}")))?,
    )?;
    let mut checks = Vec::new();

    checks.push(Check {
        name: "analysis constants",
        pass: (report.m1 - 2.1736).abs() <= 1e-3 && report.existence_ok && report.attractivity_ok,
        detail: format!(
            "M1 = {:.6}, existence lhs = {:.6}, attractivity lhs = {:.6}",
            report.m1, report.existence_lhs, report.attractivity_lhs
        ),
    });

    let starts = [0.3, 0.8, 1.5, 2.5];
    let mut finals = Vec::new();
    for h0 in starts {
        let traj = integrate(&model, &InitialHistory::constant(0.0, h0), 30.0, 0.01)?;
        finals.push(traj.eval(30.0, Side::Left)?);
        write_csv(
            &outdir.join(format!("trajectory_{h0}.csv")),
            "t,x_left,x_right",
            &trajectory_rows(&traj),
        )?;
    }
    let mut worst_gap: f64 = 0.0;
    for i in 0..finals.len() {
        for j in i + 1..finals.len() {
            worst_gap = worst_gap.max((finals[i] - finals[j]).abs());
        }
    }
    checks.push(Check {
        name: "trajectories collapse at t = 30",
        pass: worst_gap < 1e-3,
        detail: format!("largest pairwise gap {worst_gap:.2e}"),
    });

    let run = iterate_to_fixed_point(&model, &report, 0.01, 10.0, 1e-6)?;
    let phi = &run.phi;
    let rows: Vec<(f64, f64, f64)> = (0..phi.len())
        .filter(|&i| phi.nodes()[i] >= run.valid_from)
        .map(|i| {
            let t = phi.nodes()[i];
            let l = phi.left_values()[i];
            (t, l, phi.right_value(i).unwrap_or(l))
        })
        .collect();
    write_csv(&outdir.join("fixpoint.csv"), "t,phi_left,phi_right", &rows)?;
    write_json(
        &outdir.join("fixpoint.summary.json"),
        &json!({
            "iterations": run.residuals.len(),
            "final_residual": run.residuals.last().copied().unwrap_or(0.0),
            "residuals": run.residuals,
            "w": run.w,
            "tol": run.tol,
            "valid_from": run.valid_from,
        }),
    )?;

    let mut worst_ratio: f64 = 0.0;
    for pair in run.residuals.windows(2) {
        worst_ratio = worst_ratio.max(pair[1] / pair[0]);
    }
    let converged = run.residuals.last().copied().unwrap_or(f64::INFINITY) <= run.tol;
    checks.push(Check {
        name: "iteration contracts",
        pass: converged && worst_ratio <= 0.95,
        detail: format!(
            "{} sweeps, final residual {:.2e}, worst ratio {:.3}",
            run.residuals.len(),
            run.residuals.last().copied().unwrap_or(f64::INFINITY),
            worst_ratio
        ),
    });

    let band_ok = run
        .iterate_ranges
        .iter()
        .all(|&(lo, hi)| lo >= report.m2 - 1e-6 && hi <= report.m1 + 1e-6);
    checks.push(Check {
        name: "iterates stay in the band",
        pass: band_ok,
        detail: format!("[M2, M1] = [{:.6}, {:.6}]", report.m2, report.m1),
    });

    // Hand the fixed point's tail over one delay span to the integrator
    // and watch the trajectory ride along the fixed point.
    let keep: Vec<usize> = (0..phi.len())
        .filter(|&i| phi.nodes()[i] >= -model.sigma_bar() && phi.nodes()[i] <= 0.0)
        .collect();
    let history = InitialHistory::from_grid(
        0.0,
        GridFunction::new(
            keep.iter().map(|&i| phi.nodes()[i]).collect(),
            keep.iter().map(|&i| phi.left_values()[i]).collect(),
            keep.iter().map(|&i| phi.right_value(i)).collect(),
        )
        .map_err(|e| Failure::Numerical(format!("fixed-point tail: {e}")))?,
    );
    let traj = integrate(&model, &history, 10.0, 0.01)?;
    let mut worst_dev: f64 = 0.0;
    for k in 0..=200 {
        let t = 0.05 * k as f64;
        worst_dev = worst_dev.max((traj.eval(t, Side::Left)? - phi.eval(t, Side::Left)).abs());
    }
    checks.push(Check {
        name: "fixed point solves the model",
        pass: worst_dev <= 5e-3,
        detail: format!("largest deviation {worst_dev:.2e} over [0, 10]"),
    });

    let mut p = Map::new();
    p.insert("case".into(), json!("example56"));
    p.insert("t_end".into(), json!(30.0));
    p.insert("h".into(), json!(0.01));
    p.insert("histories".into(), json!(starts));
    p.insert("fixpoint_tol".into(), json!(1e-6));
    p.insert("fixpoint_h_grid".into(), json!(0.01));
    p.insert("fixpoint_t_report".into(), json!(10.0));
    write_manifest(&outdir.join("run"), "reproduce", None, p, started)?;

    finish("example56", outdir, checks)
}

/// Linear counterexample: existence verdict, the closed form at integer
/// times, the pinned tail value, and eventual negativity.
fn linear_case(outdir: &Path) -> Result<(), Failure> {
    let started = Instant::now();
    let model = presets::linear_counterexample();
    let report = analyze(&model)?;
    write_json(
        &outdir.join("analysis.json"),
        &serde_json::to_value(&report)
            .map_err(|e| Failure::Numerical(format!("cannot serialize report: {e}")))?,
    )?;
    let mut checks = Vec::new();

    checks.push(Check {
        name: "existence verdict is false",
        pass: !report.existence_ok,
        detail: format!(
            "existence_ok = {}, M2 = {:.6}",
            report.existence_ok, report.m2
        ),
    });

    let traj = integrate(&model, &InitialHistory::constant(0.0, 1.0), 10.0, 1e-3)?;
    write_csv(
        &outdir.join("trajectory.csv"),
        "t,x_left,x_right",
        &trajectory_rows(&traj),
    )?;

    // x(n) = e^(-n) x0 - e^(-1) (1 - e^(-n)) / (1 - e^(-1)) with the jump
    // at the start applied.
    let e1 = (-1.0_f64).exp();
    let mut worst_cf: f64 = 0.0;
    for n in 0..=10 {
        let en = (-(n as f64)).exp();
        let expected = en - e1 * (1.0 - en) / (1.0 - e1);
        worst_cf = worst_cf.max((traj.eval(n as f64, Side::Left)? - expected).abs());
    }
    checks.push(Check {
        name: "closed form at integer times",
        pass: worst_cf < 1e-8,
        detail: format!("largest deviation {worst_cf:.2e}"),
    });

    let x10 = traj.eval(10.0, Side::Left)?;
    let pinned = -0.5819048852379487;
    checks.push(Check {
        name: "tail value at t = 10",
        pass: (x10 - pinned).abs() < 1e-6,
        detail: format!("x(10) = {x10:.10}, pinned {pinned:.10}"),
    });

    let mut negative = true;
    for (i, &t) in traj.times().iter().enumerate() {
        let left_ok = t <= 1.0 || traj.left_values()[i] < 0.0;
        let right_ok = t < 1.0 || traj.right_value(i).unwrap_or(traj.left_values()[i]) < 0.0;
        if !(left_ok && right_ok) {
            negative = false;
            break;
        }
    }
    checks.push(Check {
        name: "no positive almost periodic solution",
        pass: negative,
        detail: "trajectory negative from t = 1+ onward for x(0) = 1".into(),
    });

    let mut p = Map::new();
    p.insert("case".into(), json!("example1"));
    p.insert("t_end".into(), json!(10.0));
    p.insert("h".into(), json!(1e-3));
    p.insert("x0".into(), json!(1.0));
    write_manifest(&outdir.join("run"), "reproduce", None, p, started)?;

    finish("example1", outdir, checks)
}
