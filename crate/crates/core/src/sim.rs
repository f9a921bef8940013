//! Trajectory integration.
//!
//! Each interval between scheduled instants is smooth, so the stepper runs
//! classical fourth-order Runge-Kutta per cell, with cell boundaries pinned
//! to the instants.  At an instant the left limit is stored as the node
//! value and integration restarts from `(1 + gamma) * x + delta`, computed
//! exactly.  A jump scheduled at the history start is applied before the
//! first step.
//!
//! Delayed arguments read from a cubic Hermite interpolant over completed
//! nodes; an argument landing inside the step being computed resolves to
//! the current stage state (exact for zero delay) or to an extension of the
//! newest completed segment.  Every step is recomputed once against its own
//! provisional segment, keeping fourth order when a delay shrinks below the
//! step.  Nodes store slopes for both sides, since the derivative jumps
//! wherever a delayed argument crosses an instant; the opening stage of a
//! step resolves exact crossings to the right branch, closing stages to the
//! left.
//!
//! Kernel-weighted terms integrate with per-panel Simpson, panels no wider
//! than the step and split where the delayed argument crosses an instant or
//! the history junction.

use thiserror::Error;

use crate::expr::{self, EvalError, Expression};
use crate::grid::Side;
use crate::model::{DelayTerm, InitialHistory, ModelSpec};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("step {h} is not in (0, {limit}]; steps must fit four per shortest gap")]
    BadStep { h: f64, limit: f64 },
    #[error("t_end = {t_end} must lie beyond the history start {alpha}")]
    BadSpan { alpha: f64, t_end: f64 },
    #[error("history must be nonnegative with a positive start value; found {value} at t = {t}")]
    BadHistory { t: f64, value: f64 },
    #[error("state became non-finite at t = {t}")]
    NonFinite { t: f64 },
    #[error("evaluation failed at t = {t}: {source}")]
    Eval {
        t: f64,
        #[source]
        source: EvalError,
    },
    #[error("t = {t} is outside the trajectory domain [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },
    #[error("trajectories share no grid nodes in the requested window")]
    EmptyOverlap,
}

/// Computed solution: node times with one-sided values and slopes, post-jump
/// values at instants, and the history for queries before the start.
///
/// Every node stores both slopes because the derivative may jump where a
/// delayed argument crosses an instant even though the value is continuous;
/// the segment to the right of a node interpolates from the right slope.
#[derive(Debug, Clone)]
pub struct Trajectory {
    alpha: f64,
    t_end: f64,
    sigma_bar: f64,
    times: Vec<f64>,
    left: Vec<f64>,
    dleft: Vec<f64>,
    dright: Vec<f64>,
    right: Vec<Option<f64>>,
    history: InitialHistory,
}

impl Trajectory {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn left_values(&self) -> &[f64] {
        &self.left
    }

    /// Post-jump value at node `i`, when the node carries an instant.
    pub fn right_value(&self, i: usize) -> Option<f64> {
        self.right[i]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Value at `t`, with the requested one-sided limit at instants.
    /// Times before the start fall through to the history; the queryable
    /// domain is `[alpha - sigma_bar, t_end]`.
    pub fn eval(&self, t: f64, side: Side) -> Result<f64, SimError> {
        let lo = self.alpha - self.sigma_bar;
        if !(t >= lo && t <= self.t_end) {
            return Err(SimError::OutOfDomain { t, lo, hi: self.t_end });
        }
        if t < self.alpha {
            return self.history.eval(t).map_err(|source| SimError::Eval { t, source });
        }
        Ok(self.dense(t, side))
    }

    /// Interpolated value for t in [times[0], t_end].
    fn dense(&self, u: f64, side: Side) -> f64 {
        match self.times.binary_search_by(|probe| probe.partial_cmp(&u).unwrap()) {
            Ok(k) => match side {
                Side::Left => self.left[k],
                Side::Right => self.right[k].unwrap_or(self.left[k]),
            },
            Err(k) => {
                // times[k-1] < u < times[k]; k >= 1 by the domain guard.
                let i = k - 1;
                let (x0, d0) = (self.right[i].unwrap_or(self.left[i]), self.dright[i]);
                hermite(
                    self.times[i],
                    x0,
                    d0,
                    self.times[i + 1],
                    self.left[i + 1],
                    self.dleft[i + 1],
                    u,
                )
            }
        }
    }
}

/// Value at `t` with the requested side; history times are served from the
/// initial data.
pub fn evaluate_at(traj: &Trajectory, t: f64, side: Side) -> Result<f64, SimError> {
    traj.eval(t, side)
}

/// Absolute differences at shared grid nodes inside `[lo, hi]`, using left
/// values.  Nodes match by exact time equality, which holds for runs with
/// the same cell layout and nested steps.
pub fn pairwise_gap(
    a: &Trajectory,
    b: &Trajectory,
    lo: f64,
    hi: f64,
) -> Result<Vec<(f64, f64)>, SimError> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.times.len() && j < b.times.len() {
        if a.times[i] == b.times[j] {
            let t = a.times[i];
            if t >= lo && t <= hi {
                out.push((t, (a.left[i] - b.left[j]).abs()));
            }
            i += 1;
            j += 1;
        } else if a.times[i] < b.times[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    if out.is_empty() {
        return Err(SimError::EmptyOverlap);
    }
    Ok(out)
}

fn hermite(t0: f64, x0: f64, d0: f64, t1: f64, x1: f64, d1: f64, u: f64) -> f64 {
    let h = t1 - t0;
    let s = (u - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * x0
        + (s3 - 2.0 * s2 + s) * h * d0
        + (-2.0 * s3 + 3.0 * s2) * x1
        + (s3 - s2) * h * d1
}

fn check_history(h: &InitialHistory, sigma_bar: f64) -> Result<(), SimError> {
    let alpha = h.alpha();
    let n = 256;
    for i in 0..=n {
        let u = alpha - sigma_bar + sigma_bar * i as f64 / n as f64;
        let v = h.eval(u).map_err(|source| SimError::Eval { t: u, source })?;
        if v < 0.0 {
            return Err(SimError::BadHistory { t: u, value: v });
        }
    }
    let v0 = h.eval(alpha).map_err(|source| SimError::Eval { t: alpha, source })?;
    if !(v0 > 0.0) {
        return Err(SimError::BadHistory { t: alpha, value: v0 });
    }
    Ok(())
}

struct Walker<'m> {
    model: &'m ModelSpec,
    h: f64,
    traj: Trajectory,
    cursor_x: f64,
}

impl<'m> Walker<'m> {
    /// Delayed state at `u` while computing a stage at (`stage_t`, `stage_x`).
    fn lookup(&self, u: f64, stage_t: f64, stage_x: f64, side: Side) -> Result<f64, SimError> {
        if u >= stage_t {
            return Ok(stage_x);
        }
        if u < self.traj.alpha {
            return self
                .traj
                .history
                .eval(u)
                .map_err(|source| SimError::Eval { t: u, source });
        }
        // The alpha node exists before any stage with stage_t > alpha.
        let n = self.traj.times.len();
        let t_last = self.traj.times[n - 1];
        if u <= t_last {
            return Ok(self.traj.dense(u, side));
        }
        // Ahead of the newest node but behind the stage: extend the newest
        // branch.  After a jump only the post-jump slope is available.
        if let Some(rv) = self.traj.right[n - 1] {
            return Ok(rv + (u - t_last) * self.traj.dright[n - 1]);
        }
        if n >= 2 {
            let x0 = self.traj.right[n - 2].unwrap_or(self.traj.left[n - 2]);
            return Ok(hermite(
                self.traj.times[n - 2],
                x0,
                self.traj.dright[n - 2],
                t_last,
                self.traj.left[n - 1],
                self.traj.dleft[n - 1],
                u,
            ));
        }
        Ok(self.traj.left[0] + (u - t_last) * self.traj.dright[0])
    }

    /// Right-hand side at (`t`, `x`).  `hit` picks the branch when a delayed
    /// argument lands exactly on a stored instant: stages sitting at the
    /// start of a step continue to the right of such a node, stages at its
    /// end close off the left branch.
    fn rhs(&self, t: f64, x: f64, hit: Side) -> Result<f64, SimError> {
        let ev = |e: &Expression| {
            expr::evaluate(e, t, None).map_err(|source| SimError::Eval { t, source })
        };
        let mut ds = -ev(self.model.a())? * x;
        for term in self.model.terms() {
            if !term.b.is_zero() {
                let b = ev(&term.b)?;
                if b != 0.0 {
                    let tau = ev(&term.tau)?;
                    let xv = self.lookup(t - tau, t, x, hit)?;
                    let p = expr::pow_checked(xv, term.alpha)
                        .map_err(|source| SimError::Eval { t, source })?;
                    ds += b / (1.0 + p);
                }
            }
            if term.distributed {
                let c = ev(&term.c)?;
                if c != 0.0 {
                    ds += c * self.kernel_integral(term, t, x)?;
                }
            }
            if !term.harvest.is_zero() {
                let sg = ev(&term.sigma)?;
                let xv = self.lookup(t - sg, t, x, hit)?;
                let hv = expr::evaluate(&term.harvest, t, Some(xv))
                    .map_err(|source| SimError::Eval { t, source })?;
                ds -= hv;
            }
        }
        if !ds.is_finite() {
            return Err(SimError::NonFinite { t });
        }
        Ok(ds)
    }

    /// Kernel-weighted production read-out at time `tstar`.
    fn kernel_integral(&self, term: &DelayTerm, tstar: f64, stage_x: f64) -> Result<f64, SimError> {
        let span = self.model.kernel_span();
        let mut cuts = vec![0.0, span];
        for imp in self.model.schedule().impulses_in(tstar - span, tstar) {
            let r = tstar - imp.time;
            if r > 0.0 && r < span {
                cuts.push(r);
            }
        }
        let junction = tstar - self.traj.alpha;
        if junction > 0.0 && junction < span {
            cuts.push(junction);
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();

        let point = |r: f64, side: Side| -> Result<f64, SimError> {
            let v = expr::evaluate(&term.v, r, None)
                .map_err(|source| SimError::Eval { t: tstar, source })?;
            if v == 0.0 {
                return Ok(0.0);
            }
            let xv = self.lookup(tstar - r, tstar, stage_x, side)?;
            let p = expr::pow_checked(xv, term.beta)
                .map_err(|source| SimError::Eval { t: tstar, source })?;
            Ok(v / (1.0 + p))
        };

        let mut acc = 0.0;
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let panels = (((hi - lo) / self.h).ceil().max(1.0)) as usize;
            for p in 0..panels {
                let r0 = lo + (hi - lo) * p as f64 / panels as f64;
                let r1 = if p + 1 == panels {
                    hi
                } else {
                    lo + (hi - lo) * (p + 1) as f64 / panels as f64
                };
                // The delayed argument decreases in r, so the upper end of
                // the panel in time is r0: approach it from below (left),
                // and the lower end from above (right).
                let f0 = point(r0, Side::Left)?;
                let fm = point(0.5 * (r0 + r1), Side::Left)?;
                let f1 = point(r1, Side::Right)?;
                acc += (r1 - r0) / 6.0 * (f0 + 4.0 * fm + f1);
            }
        }
        Ok(acc)
    }

    fn rk_stages(&self, t0: f64, t1: f64, x0: f64, k1: f64) -> Result<(f64, f64), SimError> {
        let hs = t1 - t0;
        let tm = t0 + 0.5 * hs;
        let k2 = self.rhs(tm, x0 + 0.5 * hs * k1, Side::Left)?;
        let k3 = self.rhs(tm, x0 + 0.5 * hs * k2, Side::Left)?;
        let k4 = self.rhs(t1, x0 + hs * k3, Side::Left)?;
        let x1 = x0 + hs / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !x1.is_finite() {
            return Err(SimError::NonFinite { t: t1 });
        }
        let d1 = self.rhs(t1, x1, Side::Left)?;
        Ok((x1, d1))
    }

    fn step(&mut self, t0: f64, t1: f64) -> Result<(), SimError> {
        let x0 = self.cursor_x;
        // The opening stage continues to the right of the start node, and
        // its value is the right slope there; both differ from the stored
        // left slope where a delayed argument crosses an instant.
        let k1 = self.rhs(t0, x0, Side::Right)?;
        let start = self.traj.times.len() - 1;
        self.traj.dright[start] = k1;
        let (x1, d1) = self.rk_stages(t0, t1, x0, k1)?;
        self.traj.times.push(t1);
        self.traj.left.push(x1);
        self.traj.dleft.push(d1);
        self.traj.dright.push(d1);
        self.traj.right.push(None);
        // The predictor used branch extension for in-step lookups; redo the
        // stages against the provisional segment so those lookups interpolate
        // at full order.
        let (xc, dc) = self.rk_stages(t0, t1, x0, k1)?;
        let last = self.traj.times.len() - 1;
        self.traj.left[last] = xc;
        self.traj.dleft[last] = dc;
        self.traj.dright[last] = dc;
        self.cursor_x = xc;
        Ok(())
    }

    fn advance_cell(&mut self, c0: f64, c1: f64) -> Result<(), SimError> {
        let raw = (c1 - c0) / self.h;
        let n = ((raw - 1e-9).ceil().max(1.0)) as usize;
        for i in 0..n {
            let t0 = c0 + (c1 - c0) * i as f64 / n as f64;
            let t1 = if i + 1 == n { c1 } else { c0 + (c1 - c0) * (i + 1) as f64 / n as f64 };
            self.step(t0, t1)?;
        }
        Ok(())
    }

    fn apply_jump(&mut self, time: f64, gamma: f64, delta: f64) -> Result<(), SimError> {
        let rv = (1.0 + gamma) * self.cursor_x + delta;
        if !rv.is_finite() {
            return Err(SimError::NonFinite { t: time });
        }
        let rd = self.rhs(time, rv, Side::Right)?;
        let last = self.traj.times.len() - 1;
        debug_assert_eq!(self.traj.times[last], time);
        self.traj.right[last] = Some(rv);
        self.traj.dright[last] = rd;
        self.cursor_x = rv;
        Ok(())
    }
}

/// Integrates from the history start to `t_end` with step `h`.
///
/// The step must fit at least four times into the shortest schedule gap so
/// every cell carries enough nodes for dense output.  The history must be
/// nonnegative on the look-back window and positive at its right end.
pub fn integrate(
    model: &ModelSpec,
    history: &InitialHistory,
    t_end: f64,
    h: f64,
) -> Result<Trajectory, SimError> {
    let (eta, _) = model.schedule().gap_range();
    let limit = eta / 4.0;
    if !(h > 0.0 && h.is_finite() && h <= limit) {
        return Err(SimError::BadStep { h, limit });
    }
    let alpha = history.alpha();
    if !(t_end.is_finite() && t_end > alpha) {
        return Err(SimError::BadSpan { alpha, t_end });
    }
    check_history(history, model.sigma_bar())?;

    let x0 = history
        .eval(alpha)
        .map_err(|source| SimError::Eval { t: alpha, source })?;
    let mut walker = Walker {
        model,
        h,
        traj: Trajectory {
            alpha,
            t_end,
            sigma_bar: model.sigma_bar(),
            times: vec![alpha],
            left: vec![x0],
            dleft: vec![0.0],
            dright: vec![0.0],
            right: vec![None],
            history: history.clone(),
        },
        cursor_x: x0,
    };
    let d0 = walker.rhs(alpha, x0, Side::Left)?;
    walker.traj.dleft[0] = d0;
    walker.traj.dright[0] = d0;

    // A jump scheduled exactly at the start applies before integrating.
    if let Some(imp) = model.schedule().impulse_at(alpha) {
        walker.apply_jump(alpha, imp.gamma, imp.delta)?;
    }

    let mut cursor = alpha;
    let mut boundaries: Vec<(f64, Option<(f64, f64)>)> = model
        .schedule()
        .impulses_in(alpha, t_end)
        .into_iter()
        .map(|imp| (imp.time, Some((imp.gamma, imp.delta))))
        .collect();
    if boundaries.last().map(|&(t, _)| t) != Some(t_end) {
        boundaries.push((t_end, None));
    }
    for (bt, jump) in boundaries {
        walker.advance_cell(cursor, bt)?;
        if let Some((gamma, delta)) = jump {
            walker.apply_jump(bt, gamma, delta)?;
        }
        cursor = bt;
    }
    Ok(walker.traj)
}
