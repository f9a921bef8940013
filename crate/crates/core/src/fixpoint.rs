//! Picard iteration for the backward-integral form of the model.
//!
//! A bounded solution satisfies, at every time t,
//!
//!   x(t) = sum over instants t_k in the past of H(t, t_k+) delta_k
//!        + integral of H(t, s+) g(s, x-history) ds,
//!
//! where H is the weight from `cauchy` taken from the right of s and g
//! collects the production, kernel and removal parts of the right-hand
//! side.  The integral over the infinite past is truncated to a window W
//! chosen so the discarded tail is below the requested tolerance, and the
//! operator is applied on a fixed grid until successive iterates agree.
//! Below the window the grid function is read through its clamp, which
//! the window length already budgets for.

use serde::Serialize;
use thiserror::Error;

use crate::analyze::AnalysisReport;
use crate::expr::{self, EvalError};
use crate::grid::{GridError, GridFunction, Side};
use crate::model::{DelayTerm, ModelSpec};
use crate::quad::adaptive_simpson;

/// Hard cap on sweeps; the precondition check makes the map a contraction,
/// so hitting this means the tolerance is unreachable on this grid.
const ITER_CAP: usize = 200;

/// Relative tolerance for the once-per-run decay integrals.
const A_INT_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FixpointError {
    #[error("grid step must be positive and finite, got {h}")]
    BadStep { h: f64 },
    #[error("window [{lo}, {hi}] is empty")]
    BadSpan { lo: f64, hi: f64 },
    #[error(
        "the iteration needs a positive lower level and a contracting map; \
         got m2 = {m2}, contraction sum = {lhs}"
    )]
    NotContractive { m2: f64, lhs: f64 },
    #[error("instant at t = {t} is not a grid node, so a panel would straddle it")]
    InstantOffGrid { t: f64 },
    #[error("no convergence after {cap} sweeps; last residual {last}")]
    NoConvergence {
        cap: usize,
        last: f64,
        residuals: Vec<f64>,
    },
    #[error("coefficient evaluation failed at t = {t}")]
    Eval {
        t: f64,
        #[source]
        source: EvalError,
    },
    #[error("operator value became non-finite at t = {t}")]
    NonFinite { t: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Converged output of [`iterate_to_fixed_point`].
#[derive(Debug, Clone, Serialize)]
pub struct FixpointRun {
    /// The fixed point of the discretized operator.
    #[serde(skip)]
    pub phi: GridFunction,
    /// Sup-norm distance between successive iterates, one entry per sweep.
    pub residuals: Vec<f64>,
    /// Truncation window used for every node.
    pub w: f64,
    /// Requested residual tolerance.
    pub tol: f64,
    /// Nodes at or after this time see a full window; values below it are
    /// warm-up and only enter through exponentially damped lookups.
    pub valid_from: f64,
    /// Per sweep, the (min, max) the output takes over nodes at or after
    /// `valid_from`, both one-sided values included.
    pub iterate_ranges: Vec<(f64, f64)>,
}

/// Window length W such that the discarded tail of the backward integral,
/// bounded by A K e^(-a_L W) with K the level of the forcing, is at most
/// `tol`.  Clamped at zero: if even the whole-line bound is below `tol`
/// there is nothing to cut.
pub fn truncation_window(report: &AnalysisReport, tol: f64) -> f64 {
    assert!(tol > 0.0 && tol.is_finite(), "tolerance must be positive");
    let forcing: f64 = report
        .b_m
        .iter()
        .zip(&report.c_m)
        .zip(&report.h_m_global)
        .map(|((b, c), h)| b + c + h)
        .sum();
    let k = forcing / report.a_l
        + report.delta_abs_max / (1.0 - (-report.a_l * report.eta_min).exp());
    if k <= 0.0 {
        return 0.0;
    }
    ((report.envelope_upper * k / tol).ln() / report.a_l).max(0.0)
}

/// One application of the backward-integral operator on the grid carried
/// by `phi`.  Instants of the schedule inside the span must sit on grid
/// nodes; `w` is the truncation window used at every node.
pub fn apply_f(model: &ModelSpec, phi: &GridFunction, w: f64) -> Result<GridFunction, FixpointError> {
    if !(w >= 0.0) || !w.is_finite() {
        return Err(FixpointError::BadStep { h: w });
    }
    let op = Operator::build(model, phi.nodes().to_vec(), w)?;
    op.sweep(phi)
}

/// Iterates the operator from the constant mid-band guess until the
/// sup-norm residual drops below `tol`.  The grid spans
/// [-(sigma_bar + W), t_report] with step at most `h` and instants merged
/// in as nodes, so the converged window covers [-sigma_bar, t_report]: one
/// delay span of usable history ahead of time zero plus the requested
/// forward stretch.  W is sized for a quarter of `tol` so truncation does
/// not eat the whole budget.
pub fn iterate_to_fixed_point(
    model: &ModelSpec,
    report: &AnalysisReport,
    h: f64,
    t_report: f64,
    tol: f64,
) -> Result<FixpointRun, FixpointError> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(FixpointError::BadStep { h });
    }
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(FixpointError::BadStep { h: tol });
    }
    if !(report.m2 > 0.0) || !report.existence_ok {
        return Err(FixpointError::NotContractive {
            m2: report.m2,
            lhs: report.existence_lhs,
        });
    }
    let w = truncation_window(report, 0.25 * tol);
    let lo = -(report.sigma_bar + w);
    if !(t_report > lo) || !t_report.is_finite() {
        return Err(FixpointError::BadSpan { lo, hi: t_report });
    }
    let nodes = build_grid(model, lo, t_report, h)?;
    let op = Operator::build(model, nodes.clone(), w)?;

    let mid = 0.5 * (report.m1 + report.m2);
    let n = nodes.len();
    let mut phi = GridFunction::new(nodes, vec![mid; n], vec![None; n])?;

    let valid_from = lo + w;
    let mut residuals = Vec::new();
    let mut iterate_ranges = Vec::new();
    for _ in 0..ITER_CAP {
        let next = op.sweep(&phi)?;
        let res = phi.sup_diff(&next);
        residuals.push(res);
        iterate_ranges.push(range_over_valid(&next, valid_from));
        phi = next;
        if res <= tol {
            return Ok(FixpointRun {
                phi,
                residuals,
                w,
                tol,
                valid_from,
                iterate_ranges,
            });
        }
    }
    let last = *residuals.last().unwrap();
    Err(FixpointError::NoConvergence {
        cap: ITER_CAP,
        last,
        residuals,
    })
}

fn range_over_valid(phi: &GridFunction, valid_from: f64) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, &t) in phi.nodes().iter().enumerate() {
        if t < valid_from {
            continue;
        }
        let v = phi.left_values()[i];
        lo = lo.min(v);
        hi = hi.max(v);
        if let Some(r) = phi.right_value(i) {
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    (lo, hi)
}

/// Uniform nodes over [lo, hi] with every instant of the schedule merged
/// in: an instant replaces the nearest node when it is closer than a
/// quarter step, otherwise it is inserted, so cells never straddle a jump
/// and never exceed the requested step.
fn build_grid(model: &ModelSpec, lo: f64, hi: f64, h: f64) -> Result<Vec<f64>, FixpointError> {
    if !(hi > lo) {
        return Err(FixpointError::BadSpan { lo, hi });
    }
    let n = ((hi - lo) / h).ceil().max(1.0) as usize;
    let mut nodes: Vec<f64> = (0..=n)
        .map(|i| lo + (hi - lo) * i as f64 / n as f64)
        .collect();
    let step = (hi - lo) / n as f64;
    for imp in model.schedule().impulses_in(lo, hi) {
        let k = nodes.partition_point(|&u| u < imp.time);
        let mut snapped = false;
        for j in [k.saturating_sub(1), k.min(nodes.len() - 1)] {
            if (nodes[j] - imp.time).abs() < 0.25 * step {
                nodes[j] = imp.time;
                snapped = true;
                break;
            }
        }
        if !snapped && nodes[k] != imp.time {
            nodes.insert(k, imp.time);
        }
    }
    Ok(nodes)
}

/// Precomputed geometry for one grid: decay factors per cell and the
/// instants pinned to their nodes.  Everything here is iterate-independent.
struct Operator<'m> {
    model: &'m ModelSpec,
    nodes: Vec<f64>,
    mids: Vec<f64>,
    /// exp(-integral of a) over each full cell.
    e_cell: Vec<f64>,
    /// exp(-integral of a) from each cell's midpoint to its right edge.
    e_mid: Vec<f64>,
    /// (gamma, delta) for nodes that carry an instant.
    jumps: Vec<Option<(f64, f64)>>,
    w: f64,
    /// Panel width cap for the inner kernel quadrature.
    h_panel: f64,
}

impl<'m> Operator<'m> {
    fn build(model: &'m ModelSpec, nodes: Vec<f64>, w: f64) -> Result<Self, FixpointError> {
        let n = nodes.len();
        if n < 2 {
            return Err(FixpointError::BadSpan {
                lo: nodes.first().copied().unwrap_or(f64::NAN),
                hi: nodes.last().copied().unwrap_or(f64::NAN),
            });
        }
        let mut jumps = vec![None; n];
        for imp in model.schedule().impulses_in(nodes[0], nodes[n - 1]) {
            let k = nodes.partition_point(|&u| u < imp.time);
            let hit = [k.saturating_sub(1), k.min(n - 1)]
                .into_iter()
                .find(|&j| (nodes[j] - imp.time).abs() <= 1e-9 * imp.time.abs().max(1.0));
            match hit {
                Some(j) => jumps[j] = Some((imp.gamma, imp.delta)),
                None => return Err(FixpointError::InstantOffGrid { t: imp.time }),
            }
        }

        let mut mids = Vec::with_capacity(n - 1);
        let mut e_cell = Vec::with_capacity(n - 1);
        let mut e_mid = Vec::with_capacity(n - 1);
        let mut h_panel: f64 = 0.0;
        let mut a_of = |u: f64| {
            expr::evaluate(model.a(), u, None).map_err(|source| FixpointError::Eval { t: u, source })
        };
        for j in 0..n - 1 {
            let (t0, t1) = (nodes[j], nodes[j + 1]);
            let mid = 0.5 * (t0 + t1);
            let da = adaptive_simpson(&mut a_of, t0, t1, A_INT_TOL)?;
            let da_half = adaptive_simpson(&mut a_of, t0, mid, A_INT_TOL)?;
            mids.push(mid);
            e_cell.push((-da).exp());
            e_mid.push((da_half - da).exp());
            h_panel = h_panel.max(t1 - t0);
        }
        Ok(Operator {
            model,
            nodes,
            mids,
            e_cell,
            e_mid,
            jumps,
            w,
            h_panel,
        })
    }

    /// The forcing g(s) of the integral form read off a fixed grid
    /// function: production, kernel part and removal of every term.
    fn integrand(&self, phi: &GridFunction, s: f64, side: Side) -> Result<f64, FixpointError> {
        let ev = |e: &expr::Expression, t: f64| {
            expr::evaluate(e, t, None).map_err(|source| FixpointError::Eval { t: s, source })
        };
        let mut g = 0.0;
        for term in self.model.terms() {
            if !term.b.is_zero() {
                let b = ev(&term.b, s)?;
                if b != 0.0 {
                    let tau = ev(&term.tau, s)?;
                    let x = phi.eval(s - tau, side);
                    let p = expr::pow_checked(x, term.alpha())
                        .map_err(|source| FixpointError::Eval { t: s, source })?;
                    g += b / (1.0 + p);
                }
            }
            if term.is_distributed() {
                let c = ev(&term.c, s)?;
                if c != 0.0 {
                    g += c * self.inner_kernel(phi, term, s, side)?;
                }
            }
            if !term.harvest.is_zero() {
                let sg = ev(&term.sigma, s)?;
                let x = phi.eval(s - sg, side);
                g -= expr::evaluate(&term.harvest, s, Some(x))
                    .map_err(|source| FixpointError::Eval { t: s, source })?;
            }
        }
        if !g.is_finite() {
            return Err(FixpointError::NonFinite { t: s });
        }
        Ok(g)
    }

    /// Kernel integral over the fixed span, panels cut at the images of
    /// the instants.  The delayed argument decreases in r, so panel tops
    /// (in time) are approached from the left and bottoms from the right;
    /// at r = 0 the outer side carries through.
    fn inner_kernel(
        &self,
        phi: &GridFunction,
        term: &DelayTerm,
        s: f64,
        side: Side,
    ) -> Result<f64, FixpointError> {
        let span = self.model.kernel_span();
        let mut cuts = vec![0.0, span];
        for imp in self.model.schedule().impulses_in(s - span, s) {
            let r = s - imp.time;
            if r > 0.0 && r < span {
                cuts.push(r);
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();

        let point = |r: f64, pside: Side| -> Result<f64, FixpointError> {
            let v = expr::evaluate(&term.v, r, None)
                .map_err(|source| FixpointError::Eval { t: s, source })?;
            if v == 0.0 {
                return Ok(0.0);
            }
            let xv = phi.eval(s - r, if r == 0.0 { side } else { pside });
            let p = expr::pow_checked(xv, term.beta())
                .map_err(|source| FixpointError::Eval { t: s, source })?;
            Ok(v / (1.0 + p))
        };

        let mut acc = 0.0;
        for win in cuts.windows(2) {
            let (lo, hi) = (win[0], win[1]);
            let panels = (((hi - lo) / self.h_panel).ceil().max(1.0)) as usize;
            for p in 0..panels {
                let r0 = lo + (hi - lo) * p as f64 / panels as f64;
                let r1 = if p + 1 == panels {
                    hi
                } else {
                    lo + (hi - lo) * (p + 1) as f64 / panels as f64
                };
                let f0 = point(r0, Side::Left)?;
                let fm = point(0.5 * (r0 + r1), Side::Left)?;
                let f1 = point(r1, Side::Right)?;
                acc += (r1 - r0) / 6.0 * (f0 + 4.0 * fm + f1);
            }
        }
        Ok(acc)
    }

    /// One full application of the operator.  The forcing is evaluated
    /// once per cell edge and midpoint (it does not depend on the output
    /// node), each cell's Simpson integral is pre-weighted to its own
    /// right edge, and then every node runs a right-to-left walk that
    /// extends the weight across cells and instants.  Right values at
    /// instants come from the jump relation exactly.
    fn sweep(&self, phi: &GridFunction) -> Result<GridFunction, FixpointError> {
        let n = self.nodes.len();
        let mut g_right = vec![0.0; n];
        let mut g_left = vec![0.0; n];
        for j in 0..n {
            if j + 1 < n {
                g_right[j] = self.integrand(phi, self.nodes[j], Side::Right)?;
            }
            if j > 0 {
                g_left[j] = self.integrand(phi, self.nodes[j], Side::Left)?;
            }
        }
        // Local integral of H(edge, s) g(s) over cell j, weighted so that
        // the walk only ever multiplies by whole-cell factors.
        let mut local = vec![0.0; n - 1];
        for j in 0..n - 1 {
            let gm = self.integrand(phi, self.mids[j], Side::Left)?;
            let wdt = self.nodes[j + 1] - self.nodes[j];
            local[j] =
                wdt / 6.0 * (self.e_cell[j] * g_right[j] + 4.0 * self.e_mid[j] * gm + g_left[j + 1]);
        }

        let mut left = vec![0.0; n];
        let mut right = vec![None; n];
        for i in 0..n {
            let t = self.nodes[i];
            let floor = t - self.w;
            let mut acc = 0.0;
            let mut weight = 1.0;
            let mut j = i;
            while j > 0 {
                if self.nodes[j] <= floor {
                    break;
                }
                // An instant at the output node itself only shapes the
                // right value, which the jump relation supplies below.
                if j < i {
                    if let Some((gamma, delta)) = self.jumps[j] {
                        acc += weight * delta;
                        weight *= 1.0 + gamma;
                    }
                }
                acc += weight * local[j - 1];
                weight *= self.e_cell[j - 1];
                j -= 1;
            }
            if !acc.is_finite() {
                return Err(FixpointError::NonFinite { t });
            }
            left[i] = acc;
        }
        for i in 0..n {
            if let Some((gamma, delta)) = self.jumps[i] {
                right[i] = Some((1.0 + gamma) * left[i] + delta);
            }
        }
        Ok(phi.with_values(left, right)?)
    }
}
