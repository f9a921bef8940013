//! Model description: coefficients, delay terms, impulse schedule, history.
//!
//! The state equation combines exponential decay `-a(t) x`, per-term discrete
//! and kernel-weighted production with saturating nonlinearities, and a
//! Lipschitz removal term.  Between scheduled instants the state follows the
//! differential equation; at instant `t_k` the stored value is the left limit
//! and the restart value is `(1 + gamma_k) * x(t_k) + delta_k`.
//!
//! Configs are JSON; [`load_model`] parses, validates, and caches derived
//! quantities (maximum look-back `sigma_bar`, schedule gap statistics).

use std::collections::BTreeMap;

use serde::Deserialize;
use thiserror::Error;

use crate::expr::{self, BoundsError, EvalError, Expression, ParseError, VarSet};
use crate::grid::Side;
use crate::quad;

/// Sampling budget used while validating a config.
const LOAD_WINDOW: f64 = 200.0;
const LOAD_SAMPLES: usize = 20_000;
/// State grid cap for removal-term containment checks.
const LOAD_X_CAP: f64 = 100.0;
const KERNEL_PANELS: usize = 10_000;
const KERNEL_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config is not valid JSON: {0}")]
    Json(String),
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: ParseError,
    },
    #[error("{path}: {msg}")]
    Invalid { path: String, msg: String },
    #[error("{path}: kernel integrates to {integral} over [0, {span}], expected 1 within {KERNEL_TOL}")]
    KernelNotNormalized { path: String, integral: f64, span: f64 },
    #[error("{path}: declared bounds [{dec_lo}, {dec_hi}] fail to contain sampled range [{obs_lo}, {obs_hi}]")]
    BoundsNotContained {
        path: String,
        dec_lo: f64,
        dec_hi: f64,
        obs_lo: f64,
        obs_hi: f64,
    },
    #[error("impulses.gamma[{index}]: jump factor 1+gamma must be positive, got gamma = {gamma}")]
    GammaFactorNotPositive { index: usize, gamma: f64 },
    #[error("a: lower bound {a_lo} must be positive")]
    DampingNotPositive { a_lo: f64 },
    #[error("{path}: bounds sampling failed: {source}")]
    Sampling {
        path: String,
        #[source]
        source: BoundsError,
    },
}

impl ModelError {
    /// True for violations of the structural positivity assumptions
    /// (positive damping floor, positive jump factors) as opposed to plain
    /// config mistakes.
    pub fn is_assumption_violation(&self) -> bool {
        matches!(
            self,
            ModelError::GammaFactorNotPositive { .. } | ModelError::DampingNotPositive { .. }
        )
    }
}

/// One scheduled jump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Impulse {
    pub index: i64,
    pub time: f64,
    pub gamma: f64,
    pub delta: f64,
}

/// Periodic impulse schedule: instants `t0 + q * period + offsets[r]` for
/// integer q, with jump parameters repeating with the same period.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseSchedule {
    t0: f64,
    period: f64,
    offsets: Vec<f64>,
    gamma: Vec<f64>,
    delta: Vec<f64>,
}

/// Smallest and largest delta values plus magnitude extremes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaStats {
    pub min: f64,
    pub max: f64,
    pub abs_min: f64,
    pub abs_max: f64,
}

impl ImpulseSchedule {
    pub fn new(
        t0: f64,
        period: f64,
        offsets: Vec<f64>,
        gamma: Vec<f64>,
        delta: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let invalid = |msg: &str| ModelError::Invalid {
            path: "impulses".into(),
            msg: msg.into(),
        };
        if !t0.is_finite() {
            return Err(invalid("t0 must be finite"));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(invalid("period_length must be positive and finite"));
        }
        if offsets.is_empty() {
            return Err(invalid("offsets must list at least one instant per period"));
        }
        if gamma.len() != offsets.len() || delta.len() != offsets.len() {
            return Err(invalid("gamma and delta must have one entry per offset"));
        }
        if !(offsets[0] >= 0.0) {
            return Err(invalid("offsets must be nonnegative"));
        }
        for i in 1..offsets.len() {
            if !(offsets[i] > offsets[i - 1]) {
                return Err(invalid("offsets must be strictly increasing"));
            }
        }
        if !(offsets[offsets.len() - 1] < period) {
            return Err(invalid("offsets must stay below period_length"));
        }
        for (i, &g) in gamma.iter().enumerate() {
            if !(g.is_finite() && g > -1.0) {
                return Err(ModelError::GammaFactorNotPositive { index: i, gamma: g });
            }
        }
        for (i, &d) in delta.iter().enumerate() {
            if !d.is_finite() {
                return Err(invalid(&format!("delta[{i}] must be finite")));
            }
        }
        Ok(Self { t0, period, offsets, gamma, delta })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn period_length(&self) -> f64 {
        self.period
    }

    pub fn period_count(&self) -> usize {
        self.offsets.len()
    }

    pub fn gamma_pattern(&self) -> &[f64] {
        &self.gamma
    }

    pub fn delta_pattern(&self) -> &[f64] {
        &self.delta
    }

    pub fn time_of(&self, k: i64) -> f64 {
        let p = self.offsets.len() as i64;
        let q = k.div_euclid(p);
        let r = k.rem_euclid(p) as usize;
        self.t0 + q as f64 * self.period + self.offsets[r]
    }

    pub fn gamma_of(&self, k: i64) -> f64 {
        let p = self.offsets.len() as i64;
        self.gamma[k.rem_euclid(p) as usize]
    }

    pub fn delta_of(&self, k: i64) -> f64 {
        let p = self.offsets.len() as i64;
        self.delta[k.rem_euclid(p) as usize]
    }

    /// Smallest k with t_k >= u.
    pub fn first_index_at_or_after(&self, u: f64) -> i64 {
        let p = self.offsets.len() as i64;
        let guess = ((u - self.t0) / self.period).floor() as i64 - 1;
        let mut k = guess
            .checked_mul(p)
            .expect("schedule index overflow");
        while self.time_of(k) < u {
            k += 1;
        }
        while k > guess * p && self.time_of(k - 1) >= u {
            k -= 1;
        }
        k
    }

    /// Smallest k with t_k > u.
    pub fn first_index_after(&self, u: f64) -> i64 {
        let mut k = self.first_index_at_or_after(u);
        while self.time_of(k) <= u {
            k += 1;
        }
        k
    }

    /// Scheduled jumps with instants in the half-open window (s, t].
    pub fn impulses_in(&self, s: f64, t: f64) -> Vec<Impulse> {
        let mut out = Vec::new();
        if !(t >= s) {
            return out;
        }
        let mut k = self.first_index_after(s);
        loop {
            let time = self.time_of(k);
            if time > t {
                break;
            }
            out.push(Impulse {
                index: k,
                time,
                gamma: self.gamma_of(k),
                delta: self.delta_of(k),
            });
            k += 1;
        }
        out
    }

    /// The jump scheduled exactly at `u`, if any.
    pub fn impulse_at(&self, u: f64) -> Option<Impulse> {
        let k = self.first_index_at_or_after(u);
        let time = self.time_of(k);
        (time == u).then_some(Impulse {
            index: k,
            time,
            gamma: self.gamma_of(k),
            delta: self.delta_of(k),
        })
    }

    /// Minimum and maximum gap between consecutive instants.
    pub fn gap_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let p = self.offsets.len();
        for i in 1..p {
            let g = self.offsets[i] - self.offsets[i - 1];
            lo = lo.min(g);
            hi = hi.max(g);
        }
        let wrap = self.period - self.offsets[p - 1] + self.offsets[0];
        lo = lo.min(wrap);
        hi = hi.max(wrap);
        (lo, hi)
    }

    pub fn delta_stats(&self) -> DeltaStats {
        let mut s = DeltaStats {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            abs_min: f64::INFINITY,
            abs_max: 0.0,
        };
        for &d in &self.delta {
            s.min = s.min.min(d);
            s.max = s.max.max(d);
            s.abs_min = s.abs_min.min(d.abs());
            s.abs_max = s.abs_max.max(d.abs());
        }
        s
    }

    pub fn gamma_min(&self) -> f64 {
        self.gamma.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// One production/removal term of the state equation.
#[derive(Debug, Clone)]
pub struct DelayTerm {
    pub(crate) b: Expression,
    pub(crate) alpha: f64,
    pub(crate) tau: Expression,
    pub(crate) c: Expression,
    pub(crate) beta: f64,
    pub(crate) v: Expression,
    pub(crate) harvest: Expression,
    pub(crate) lipschitz: f64,
    pub(crate) sigma: Expression,
    pub(crate) distributed: bool,
}

impl DelayTerm {
    /// Discrete-delay production only; no kernel part, no removal.
    pub fn new(b: Expression, alpha: f64, tau: Expression) -> Self {
        Self {
            b,
            alpha,
            tau,
            c: Expression::Num(0.0),
            beta: 1.0,
            v: Expression::Num(1.0),
            harvest: Expression::Num(0.0),
            lipschitz: 0.0,
            sigma: Expression::Num(0.0),
            distributed: false,
        }
    }

    /// Adds the kernel-weighted production part.
    pub fn distributed(mut self, c: Expression, beta: f64, v: Expression) -> Self {
        self.c = c;
        self.beta = beta;
        self.v = v;
        self.distributed = true;
        self
    }

    /// Adds the removal part with its declared Lipschitz constant in x.
    pub fn harvested(mut self, harvest: Expression, lipschitz: f64, sigma: Expression) -> Self {
        self.harvest = harvest;
        self.lipschitz = lipschitz;
        self.sigma = sigma;
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn is_distributed(&self) -> bool {
        self.distributed
    }
}

/// Initial data on `[alpha - sigma_bar, alpha]`, either a closed form or a
/// previously computed grid function.
#[derive(Debug, Clone)]
pub struct InitialHistory {
    alpha: f64,
    data: HistoryData,
}

#[derive(Debug, Clone)]
enum HistoryData {
    Expr(Expression),
    Grid(crate::grid::GridFunction),
}

impl InitialHistory {
    pub fn from_expr(alpha: f64, expr: Expression) -> Self {
        Self { alpha, data: HistoryData::Expr(expr) }
    }

    pub fn constant(alpha: f64, value: f64) -> Self {
        Self::from_expr(alpha, Expression::Num(value))
    }

    pub fn from_grid(alpha: f64, grid: crate::grid::GridFunction) -> Self {
        Self { alpha, data: HistoryData::Grid(grid) }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn eval(&self, u: f64) -> Result<f64, EvalError> {
        match &self.data {
            HistoryData::Expr(e) => expr::evaluate(e, u, None),
            HistoryData::Grid(g) => Ok(g.eval(u, Side::Left)),
        }
    }
}

/// Validated model: coefficients, terms, schedule, optional default history.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub(crate) a: Expression,
    pub(crate) kernel_span: f64,
    pub(crate) terms: Vec<DelayTerm>,
    pub(crate) schedule: ImpulseSchedule,
    pub(crate) declared: BTreeMap<String, (f64, f64)>,
    pub(crate) history: Option<InitialHistory>,
    pub(crate) sigma_bar: f64,
}

impl ModelSpec {
    pub fn a(&self) -> &Expression {
        &self.a
    }

    pub fn kernel_span(&self) -> f64 {
        self.kernel_span
    }

    pub fn terms(&self) -> &[DelayTerm] {
        &self.terms
    }

    pub fn schedule(&self) -> &ImpulseSchedule {
        &self.schedule
    }

    pub fn declared_bounds(&self, key: &str) -> Option<(f64, f64)> {
        self.declared.get(key).copied()
    }

    pub fn default_history(&self) -> Option<&InitialHistory> {
        self.history.as_ref()
    }

    /// Largest look-back of any delayed argument: kernel span, discrete
    /// delays, and removal delays.  Zero when there are no terms.
    pub fn sigma_bar(&self) -> f64 {
        self.sigma_bar
    }

    /// Validates parts and derives cached quantities.  `history` is checked
    /// for nonnegativity on the look-back window and positivity at its start.
    pub fn assemble(
        a: Expression,
        kernel_span: f64,
        terms: Vec<DelayTerm>,
        schedule: ImpulseSchedule,
        declared: BTreeMap<String, (f64, f64)>,
        history: Option<InitialHistory>,
    ) -> Result<Self, ModelError> {
        if !(kernel_span.is_finite() && kernel_span > 0.0) {
            return Err(ModelError::Invalid {
                path: "T".into(),
                msg: "kernel span must be positive and finite".into(),
            });
        }

        for (i, term) in terms.iter().enumerate() {
            let path = |f: &str| format!("terms[{i}].{f}");
            if !(term.alpha.is_finite() && term.alpha > 0.0) {
                return Err(ModelError::Invalid {
                    path: path("alpha"),
                    msg: "exponent must be positive and finite".into(),
                });
            }
            if term.distributed && !(term.beta.is_finite() && term.beta > 0.0) {
                return Err(ModelError::Invalid {
                    path: path("beta"),
                    msg: "exponent must be positive and finite".into(),
                });
            }
            if !(term.lipschitz.is_finite() && term.lipschitz >= 0.0) {
                return Err(ModelError::Invalid {
                    path: path("harvest_lipschitz"),
                    msg: "Lipschitz constant must be nonnegative and finite".into(),
                });
            }
            if term.distributed {
                check_kernel(&term.v, kernel_span, &path("v"))?;
            }
        }

        // Containment of every declared range over sampled values.
        for (key, &(lo, hi)) in &declared {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(ModelError::Invalid {
                    path: format!("declared_bounds.{key}"),
                    msg: "range must be a finite [lo, hi] pair".into(),
                });
            }
            let (target, x_range) = lookup_declared(&a, &terms, key)?;
            let (obs_lo, obs_hi) = sample_range(target, key, x_range)?;
            if obs_lo < lo || obs_hi > hi {
                return Err(ModelError::BoundsNotContained {
                    path: key.clone(),
                    dec_lo: lo,
                    dec_hi: hi,
                    obs_lo,
                    obs_hi,
                });
            }
        }

        // Damping floor: declared bound wins, otherwise the sampled one.
        let a_lo = match declared.get("a") {
            Some(&(lo, _)) => lo,
            None => sample_range(&a, "a", None)?.0,
        };
        if !(a_lo > 0.0) {
            return Err(ModelError::DampingNotPositive { a_lo });
        }

        // Delays must be nonnegative for the state to depend on its past.
        let mut sigma_bar: f64 = 0.0;
        for (i, term) in terms.iter().enumerate() {
            for (field, e) in [("tau", &term.tau), ("sigma", &term.sigma)] {
                let key = format!("terms[{i}].{field}");
                let (lo, hi) = match declared.get(&key) {
                    Some(&d) => {
                        // Containment was checked above; the declared range
                        // also bounds the true one.
                        d
                    }
                    None => sample_range(e, &key, None)?,
                };
                if lo < 0.0 {
                    return Err(ModelError::Invalid {
                        path: key,
                        msg: format!("delay must be nonnegative (found {lo})"),
                    });
                }
                sigma_bar = sigma_bar.max(hi);
            }
            if term.distributed {
                sigma_bar = sigma_bar.max(kernel_span);
            }
        }

        if let Some(h) = &history {
            check_history(h, sigma_bar)?;
        }

        Ok(Self { a, kernel_span, terms, schedule, declared, history, sigma_bar })
    }
}

fn sample_range(
    e: &Expression,
    path: &str,
    x_range: Option<(f64, f64)>,
) -> Result<(f64, f64), ModelError> {
    expr::estimate_bounds(e, LOAD_WINDOW, LOAD_SAMPLES, x_range).map_err(|source| {
        ModelError::Sampling { path: path.into(), source }
    })
}

fn lookup_declared<'m>(
    a: &'m Expression,
    terms: &'m [DelayTerm],
    key: &str,
) -> Result<(&'m Expression, Option<(f64, f64)>), ModelError> {
    let bad = || ModelError::Invalid {
        path: format!("declared_bounds.{key}"),
        msg: "unknown key; expected a or terms[i].{b,c,tau,sigma,harvest}".into(),
    };
    if key == "a" {
        return Ok((a, None));
    }
    let rest = key.strip_prefix("terms[").ok_or_else(bad)?;
    let close = rest.find(']').ok_or_else(bad)?;
    let idx: usize = rest[..close].parse().map_err(|_| bad())?;
    let term = terms.get(idx).ok_or_else(bad)?;
    let field = rest[close + 1..].strip_prefix('.').ok_or_else(bad)?;
    match field {
        "b" => Ok((&term.b, None)),
        "c" => Ok((&term.c, None)),
        "tau" => Ok((&term.tau, None)),
        "sigma" => Ok((&term.sigma, None)),
        "harvest" => Ok((&term.harvest, Some((0.0, LOAD_X_CAP)))),
        _ => Err(bad()),
    }
}

fn check_kernel(v: &Expression, span: f64, path: &str) -> Result<(), ModelError> {
    let mut f = |r: f64| expr::evaluate(v, r, None);
    let integral = quad::composite_simpson(&mut f, 0.0, span, KERNEL_PANELS).map_err(|source| {
        ModelError::Parse {
            path: path.into(),
            source: ParseError::Syntax { pos: 0, msg: format!("kernel evaluation failed: {source}") },
        }
    })?;
    // Also reject kernels that dip negative at the quadrature points.
    for i in 0..=KERNEL_PANELS {
        let r = span * i as f64 / KERNEL_PANELS as f64;
        let val = expr::evaluate(v, r, None).map_err(|e| ModelError::Invalid {
            path: path.into(),
            msg: format!("kernel evaluation failed at r = {r}: {e}"),
        })?;
        if val < -1e-12 {
            return Err(ModelError::Invalid {
                path: path.into(),
                msg: format!("kernel must be nonnegative (found {val} at r = {r})"),
            });
        }
    }
    if (integral - 1.0).abs() > KERNEL_TOL {
        return Err(ModelError::KernelNotNormalized {
            path: path.into(),
            integral,
            span,
        });
    }
    Ok(())
}

fn check_history(h: &InitialHistory, sigma_bar: f64) -> Result<(), ModelError> {
    let alpha = h.alpha();
    let n = 256;
    for i in 0..=n {
        let u = alpha - sigma_bar + sigma_bar * i as f64 / n as f64;
        let val = h.eval(u).map_err(|e| ModelError::Invalid {
            path: "history.xi".into(),
            msg: format!("evaluation failed at t = {u}: {e}"),
        })?;
        if val < 0.0 {
            return Err(ModelError::Invalid {
                path: "history.xi".into(),
                msg: format!("history must be nonnegative on the look-back window (found {val} at t = {u})"),
            });
        }
    }
    let start = h.eval(alpha).map_err(|e| ModelError::Invalid {
        path: "history.xi".into(),
        msg: format!("evaluation failed at t = {alpha}: {e}"),
    })?;
    if !(start > 0.0) {
        return Err(ModelError::Invalid {
            path: "history.xi".into(),
            msg: format!("history must be positive at its right end (found {start})"),
        });
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    a: String,
    #[serde(rename = "T", default = "one")]
    kernel_span: f64,
    #[serde(default)]
    terms: Vec<RawTerm>,
    impulses: RawImpulses,
    #[serde(default)]
    declared_bounds: BTreeMap<String, [f64; 2]>,
    #[serde(default)]
    history: Option<RawHistory>,
}

fn one() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTerm {
    b: String,
    alpha: f64,
    tau: String,
    #[serde(default)]
    c: Option<String>,
    #[serde(default)]
    beta: Option<f64>,
    #[serde(default)]
    v: Option<String>,
    #[serde(default)]
    harvest: Option<String>,
    #[serde(default)]
    harvest_lipschitz: Option<f64>,
    #[serde(default)]
    sigma: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawImpulses {
    t0: f64,
    period_length: f64,
    offsets: Vec<f64>,
    gamma: Vec<f64>,
    delta: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHistory {
    alpha: f64,
    xi: String,
}

fn parse_field(src: &str, vars: VarSet, path: &str) -> Result<Expression, ModelError> {
    expr::parse(src, vars).map_err(|source| ModelError::Parse { path: path.into(), source })
}

/// Parses and validates a JSON model config.
pub fn load_model(text: &str) -> Result<ModelSpec, ModelError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig =
        serde_path_to_error::deserialize(de).map_err(|e| ModelError::Json(e.to_string()))?;

    let a = parse_field(&raw.a, VarSet::TimeOnly, "a")?;

    let mut terms = Vec::with_capacity(raw.terms.len());
    for (i, rt) in raw.terms.iter().enumerate() {
        let path = |f: &str| format!("terms[{i}].{f}");
        let b = parse_field(&rt.b, VarSet::TimeOnly, &path("b"))?;
        let tau = parse_field(&rt.tau, VarSet::TimeOnly, &path("tau"))?;
        let mut term = DelayTerm::new(b, rt.alpha, tau);

        match (&rt.c, &rt.v) {
            (Some(c_src), Some(v_src)) => {
                let beta = rt.beta.ok_or_else(|| ModelError::Invalid {
                    path: path("beta"),
                    msg: "required when c is present".into(),
                })?;
                let c = parse_field(c_src, VarSet::TimeOnly, &path("c"))?;
                let v = parse_field(v_src, VarSet::TimeOnly, &path("v"))?;
                term = term.distributed(c, beta, v);
            }
            (None, None) => {}
            (Some(_), None) => {
                return Err(ModelError::Invalid {
                    path: path("v"),
                    msg: "required when c is present".into(),
                });
            }
            (None, Some(_)) => {
                return Err(ModelError::Invalid {
                    path: path("c"),
                    msg: "required when v is present".into(),
                });
            }
        }

        if let Some(h_src) = &rt.harvest {
            let lipschitz = rt.harvest_lipschitz.ok_or_else(|| ModelError::Invalid {
                path: path("harvest_lipschitz"),
                msg: "required when harvest is present".into(),
            })?;
            let harvest = parse_field(h_src, VarSet::TimeAndState, &path("harvest"))?;
            let sigma = match &rt.sigma {
                Some(s) => parse_field(s, VarSet::TimeOnly, &path("sigma"))?,
                None => Expression::Num(0.0),
            };
            term = term.harvested(harvest, lipschitz, sigma);
        } else if rt.harvest_lipschitz.is_some() || rt.sigma.is_some() {
            return Err(ModelError::Invalid {
                path: path("harvest"),
                msg: "required when harvest_lipschitz or sigma is present".into(),
            });
        }

        terms.push(term);
    }

    let schedule = ImpulseSchedule::new(
        raw.impulses.t0,
        raw.impulses.period_length,
        raw.impulses.offsets,
        raw.impulses.gamma,
        raw.impulses.delta,
    )?;

    let declared = raw
        .declared_bounds
        .into_iter()
        .map(|(k, [lo, hi])| (k, (lo, hi)))
        .collect();

    let history = match raw.history {
        Some(rh) => {
            let xi = parse_field(&rh.xi, VarSet::TimeOnly, "history.xi")?;
            if !rh.alpha.is_finite() {
                return Err(ModelError::Invalid {
                    path: "history.alpha".into(),
                    msg: "must be finite".into(),
                });
            }
            Some(InitialHistory::from_expr(rh.alpha, xi))
        }
        None => None,
    };

    ModelSpec::assemble(a, raw.kernel_span, terms, schedule, declared, history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn sched(t0: f64, period: f64, offsets: &[f64], gamma: &[f64], delta: &[f64]) -> ImpulseSchedule {
        ImpulseSchedule::new(t0, period, offsets.to_vec(), gamma.to_vec(), delta.to_vec()).unwrap()
    }

    #[test]
    fn reference_config_loads() {
        let m = presets::saturating_model();
        assert_eq!(m.terms().len(), 1);
        assert_eq!(m.schedule().period_count(), 2);
        assert_eq!(m.schedule().period_length(), 2.0);
        assert_eq!(m.sigma_bar(), 1.0);
        assert_eq!(m.declared_bounds("a"), Some((5.0, 6.0)));
        assert!(m.terms()[0].is_distributed());
        assert_eq!(m.terms()[0].lipschitz(), 0.5);
        assert!(m.default_history().is_some());
    }

    #[test]
    fn linear_counterexample_config_loads() {
        let m = presets::linear_counterexample();
        assert!(m.terms().is_empty());
        assert_eq!(m.sigma_bar(), 0.0);
        assert_eq!(m.schedule().period_count(), 1);
        let s = m.schedule().delta_stats();
        assert_eq!((s.min, s.max), (-1.0, -1.0));
    }

    #[test]
    fn schedule_index_arithmetic() {
        let s = sched(0.0, 2.0, &[0.0, 1.0], &[-0.5, 1.0], &[1.0, 0.5]);
        assert_eq!(s.time_of(0), 0.0);
        assert_eq!(s.time_of(1), 1.0);
        assert_eq!(s.time_of(2), 2.0);
        assert_eq!(s.time_of(3), 3.0);
        assert_eq!(s.time_of(-1), -1.0);
        assert_eq!(s.time_of(-2), -2.0);
        assert_eq!(s.gamma_of(2), -0.5);
        assert_eq!(s.gamma_of(-1), 1.0);
        assert_eq!(s.delta_of(3), 0.5);

        assert_eq!(s.first_index_at_or_after(0.5), 1);
        assert_eq!(s.first_index_at_or_after(1.0), 1);
        assert_eq!(s.first_index_at_or_after(1.0 + 1e-9), 2);
        assert_eq!(s.first_index_at_or_after(-0.5), 0);
        assert_eq!(s.first_index_at_or_after(-1e9 + 0.5), -999999999);
        assert_eq!(s.first_index_after(1.0), 2);

        let in_window: Vec<i64> = s.impulses_in(0.0, 2.0).iter().map(|i| i.index).collect();
        assert_eq!(in_window, vec![1, 2]);
        assert!(s.impulses_in(0.25, 0.75).is_empty());

        assert_eq!(s.impulse_at(1.0).unwrap().index, 1);
        assert_eq!(s.impulse_at(1.0).unwrap().gamma, 1.0);
        assert!(s.impulse_at(0.3).is_none());
    }

    #[test]
    fn gap_statistics() {
        let s = sched(0.0, 2.0, &[0.0, 1.0], &[0.0, 0.0], &[0.0, 0.0]);
        assert_eq!(s.gap_range(), (1.0, 1.0));
        let s = sched(0.0, 2.0, &[0.0, 0.3], &[0.0, 0.0], &[0.0, 0.0]);
        let (lo, hi) = s.gap_range();
        assert!((lo - 0.3).abs() < 1e-15);
        assert!((hi - 1.7).abs() < 1e-15);
        let s = sched(5.0, 3.0, &[0.5], &[0.0], &[0.0]);
        assert_eq!(s.gap_range(), (3.0, 3.0));
        assert_eq!(s.time_of(0), 5.5);
    }

    #[test]
    fn delta_statistics() {
        let s = sched(0.0, 2.0, &[0.0, 1.0], &[0.0, 0.0], &[1.0, 0.5]);
        let d = s.delta_stats();
        assert_eq!((d.min, d.max, d.abs_min, d.abs_max), (0.5, 1.0, 0.5, 1.0));
        let s = sched(0.0, 2.0, &[0.0, 1.0], &[0.0, 0.0], &[-2.0, 0.5]);
        let d = s.delta_stats();
        assert_eq!((d.min, d.max, d.abs_min, d.abs_max), (-2.0, 0.5, 0.5, 2.0));
    }

    #[test]
    fn gamma_at_or_below_minus_one_is_rejected() {
        let err = ImpulseSchedule::new(0.0, 1.0, vec![0.0], vec![-1.0], vec![0.0]).unwrap_err();
        assert!(matches!(err, ModelError::GammaFactorNotPositive { index: 0, .. }));
        assert!(err.is_assumption_violation());
        let err = ImpulseSchedule::new(0.0, 1.0, vec![0.0], vec![-1.5], vec![0.0]).unwrap_err();
        assert!(matches!(err, ModelError::GammaFactorNotPositive { .. }));
    }

    #[test]
    fn offsets_must_fit_the_period() {
        let err = ImpulseSchedule::new(0.0, 1.0, vec![0.0, 1.0], vec![0.0; 2], vec![0.0; 2])
            .unwrap_err();
        assert!(matches!(err, ModelError::Invalid { .. }));
        let err = ImpulseSchedule::new(0.0, 1.0, vec![0.5, 0.25], vec![0.0; 2], vec![0.0; 2])
            .unwrap_err();
        assert!(matches!(err, ModelError::Invalid { .. }));
        let err = ImpulseSchedule::new(0.0, 1.0, vec![], vec![], vec![]).unwrap_err();
        assert!(matches!(err, ModelError::Invalid { .. }));
    }

    fn patch(config: &str, from: &str, to: &str) -> String {
        assert!(config.contains(from), "missing pattern {from}");
        config.replacen(from, to, 1)
    }

    #[test]
    fn kernel_normalization_is_enforced() {
        let bad = patch(presets::SATURATING_JSON, "\"v\": \"1\"", "\"v\": \"2\"");
        let err = load_model(&bad).unwrap_err();
        match err {
            ModelError::KernelNotNormalized { integral, .. } => {
                assert!((integral - 2.0).abs() < 1e-9)
            }
            other => panic!("unexpected error {other:?}"),
        }
        // A non-uniform kernel with unit mass is fine.
        let ok = patch(presets::SATURATING_JSON, "\"v\": \"1\"", "\"v\": \"2*(1-t)\"");
        load_model(&ok).unwrap();
    }

    #[test]
    fn declared_bounds_must_contain_samples() {
        let bad = patch(
            presets::SATURATING_JSON,
            "\"a\": [5.0, 6.0]",
            "\"a\": [5.0, 5.5]",
        );
        let err = load_model(&bad).unwrap_err();
        match err {
            ModelError::BoundsNotContained { path, obs_hi, .. } => {
                assert_eq!(path, "a");
                assert!(obs_hi > 5.5);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_declared_key_is_rejected() {
        let bad = patch(
            presets::SATURATING_JSON,
            "\"a\": [5.0, 6.0]",
            "\"terms[0].v\": [0.0, 2.0]",
        );
        assert!(matches!(load_model(&bad).unwrap_err(), ModelError::Invalid { .. }));
    }

    #[test]
    fn nonpositive_damping_floor_is_an_assumption_violation() {
        let cfg = r#"{
            "a": "sin(t)",
            "impulses": { "t0": 0.0, "period_length": 1.0, "offsets": [0.0], "gamma": [0.0], "delta": [0.0] }
        }"#;
        let err = load_model(cfg).unwrap_err();
        assert!(matches!(err, ModelError::DampingNotPositive { .. }));
        assert!(err.is_assumption_violation());
    }

    #[test]
    fn negative_delay_is_rejected() {
        let bad = patch(
            presets::SATURATING_JSON,
            "\"tau\": \"sin((sqrt(3)/2)*t)^2\"",
            "\"tau\": \"0-1\"",
        );
        // The declared tau range no longer matters; remove it to reach the
        // nonnegativity check.
        let bad = patch(&bad, "\"terms[0].tau\": [0.0, 1.0],", "");
        let err = load_model(&bad).unwrap_err();
        match err {
            ModelError::Invalid { path, .. } => assert_eq!(path, "terms[0].tau"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_field_paths() {
        let bad = patch(presets::SATURATING_JSON, "\"b\": \"0.1*(1+abs(sin(sqrt(3)*t)))\"", "\"b\": \"0.1*(\"");
        match load_model(&bad).unwrap_err() {
            ModelError::Parse { path, .. } => assert_eq!(path, "terms[0].b"),
            other => panic!("unexpected error {other:?}"),
        }
        // State variable is rejected outside the removal term.
        let bad = patch(presets::SATURATING_JSON, "\"a\": \"5 + abs(sin(sqrt(2)*t))\"", "\"a\": \"5 + x\"");
        match load_model(&bad).unwrap_err() {
            ModelError::Parse { path, source } => {
                assert_eq!(path, "a");
                assert!(matches!(source, ParseError::StateNotAllowed { .. }));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_json_fields_are_rejected_with_a_path() {
        let bad = patch(presets::SATURATING_JSON, "\"alpha\": 2.0,", "\"alpha\": 2.0, \"alphaa\": 3.0,");
        match load_model(&bad).unwrap_err() {
            ModelError::Json(msg) => assert!(msg.contains("alphaa"), "message: {msg}"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_lipschitz_is_rejected() {
        let bad = patch(presets::SATURATING_JSON, "\"harvest_lipschitz\": 0.5,", "");
        match load_model(&bad).unwrap_err() {
            ModelError::Invalid { path, .. } => assert_eq!(path, "terms[0].harvest_lipschitz"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn history_must_be_admissible() {
        let bad = patch(presets::SATURATING_JSON, "\"xi\": \"1\"", "\"xi\": \"0-1\"");
        assert!(matches!(load_model(&bad).unwrap_err(), ModelError::Invalid { .. }));
        // Zero at the right end of the history window is rejected too.
        let bad = patch(presets::SATURATING_JSON, "\"xi\": \"1\"", "\"xi\": \"0\"");
        assert!(matches!(load_model(&bad).unwrap_err(), ModelError::Invalid { .. }));
    }

    #[test]
    fn spec_types_are_shareable_across_threads() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<ModelSpec>();
        assert_send_sync::<ImpulseSchedule>();
        assert_send_sync::<InitialHistory>();
    }
}
