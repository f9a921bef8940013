//! Decay-rate certificates for the delayed comparison inequality
//!
//!   D+ y(t) <= -R y(t) + S sup of y over [t - tau, t],
//!
//! whose solutions, when the delayed gain is weak enough, decay like
//! e^(-lambda t) with lambda the root solved here.  Jumps multiply the
//! bound by the same per-instant factors the Cauchy weight carries, so the
//! envelope reuses the schedule products from `cauchy`.

use serde::Serialize;
use thiserror::Error;

use crate::analyze::AnalysisReport;
use crate::cauchy::{self, CauchyError};
use crate::model::ImpulseSchedule;

/// Absolute bisection tolerance for the rate.
const RATE_TOL: f64 = 1e-12;

/// Minimum usable points for an empirical fit.
const MIN_FIT_POINTS: usize = 10;

#[derive(Debug, Error)]
pub enum HalanayError {
    #[error("infeasible: the jump factor must satisfy c < R/S, got c = {c} with R/S = {ratio}")]
    Infeasible { c: f64, ratio: f64 },
    #[error("{what} must be {requirement}, got {value}")]
    BadParameter {
        what: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("need at least {need} usable points after windowing, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error(transparent)]
    Cauchy(#[from] CauchyError),
}

/// Comparison problem: linear decay `r`, delayed gain `s`, delay bound
/// `tau`, and the worst per-instant growth factor `c` (at least one, since
/// it is a max against one).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HalanayProblem {
    pub r: f64,
    pub s: f64,
    pub tau: f64,
    pub c: f64,
}

impl HalanayProblem {
    pub fn new(r: f64, s: f64, tau: f64, c: f64) -> Result<Self, HalanayError> {
        let check = |what: &'static str, requirement: &'static str, value: f64, ok: bool| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(HalanayError::BadParameter {
                    what,
                    requirement,
                    value,
                })
            }
        };
        check("R", "positive and finite", r, r > 0.0)?;
        check("S", "positive and finite", s, s > 0.0)?;
        check("tau", "nonnegative and finite", tau, tau >= 0.0)?;
        check("c", "at least 1 and finite", c, c >= 1.0)?;
        Ok(HalanayProblem { r, s, tau, c })
    }

    /// Instantiates the comparison problem the attractivity argument
    /// produces: decay a_L, gain equal to the contraction sum before the
    /// A/a_L factor, delay sigma_bar, and the reciprocal worst shrink.
    pub fn from_report(report: &AnalysisReport) -> Result<Self, HalanayError> {
        let s: f64 = report
            .b_m
            .iter()
            .zip(&report.k_star)
            .zip(&report.c_m)
            .zip(&report.g_star)
            .zip(&report.lipschitz)
            .map(|((((b, k), c), g), l)| b * k + c * g + l)
            .sum();
        let c = (1.0 / (1.0 + report.gamma_min)).max(1.0);
        HalanayProblem::new(report.a_l, s, report.sigma_bar, c)
    }
}

/// The largest certified decay rate: the unique positive root of
/// g(lambda) = lambda + S c e^(lambda tau) - R.  g is strictly increasing
/// with g(0) < 0 exactly when c < R/S, so bisection on [0, R] converges;
/// without delay the root is R - S c in closed form.
pub fn solve_rate(p: &HalanayProblem) -> Result<f64, HalanayError> {
    let ratio = p.r / p.s;
    if !(p.c < ratio) {
        return Err(HalanayError::Infeasible { c: p.c, ratio });
    }
    if p.tau == 0.0 {
        return Ok(p.r - p.s * p.c);
    }
    let g = |l: f64| l + p.s * p.c * (l * p.tau).exp() - p.r;
    let (mut lo, mut hi) = (0.0, p.r);
    while hi - lo > RATE_TOL {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Decay envelope at one time: `exact` carries the product of the jump
/// factors realized in (t0, t], `simplified` replaces it with the
/// schedule-wide maximum (never smaller, since the empty product is 1 and
/// whole periods multiply to 1).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Envelope {
    pub rate: f64,
    pub exact: f64,
    pub simplified: f64,
}

pub fn certified_envelope(
    p: &HalanayProblem,
    ybar0: f64,
    schedule: &ImpulseSchedule,
    t0: f64,
    t: f64,
) -> Result<Envelope, HalanayError> {
    if !(ybar0 > 0.0 && ybar0.is_finite()) {
        return Err(HalanayError::BadParameter {
            what: "ybar0",
            requirement: "positive and finite",
            value: ybar0,
        });
    }
    if !(t >= t0) {
        return Err(HalanayError::BadParameter {
            what: "t",
            requirement: "at or after t0",
            value: t,
        });
    }
    let rate = solve_rate(p)?;
    let decay = (-rate * (t - t0)).exp();
    let q = schedule.first_index_after(t0);
    let pidx = schedule.first_index_after(t) - 1;
    let product = cauchy::gamma_product(schedule, q, pidx);
    let gamma_m = cauchy::gamma_extrema(schedule)?.prod_max;
    Ok(Envelope {
        rate,
        exact: ybar0 * product * decay,
        simplified: ybar0 * gamma_m * decay,
    })
}

/// Straight-line fit of a decaying gap record.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EmpiricalFit {
    /// Negated slope of ln(window-sup gap) against time.
    pub rate: f64,
    /// Log-space intercept: exp of it estimates the gap amplitude at t = 0.
    pub intercept: f64,
    /// Set when the windowed record is identically zero, in which case the
    /// rate is the +infinity sentinel.
    pub all_zero: bool,
}

/// Fits an exponential rate to `gaps`, given as (time, gap) with
/// nondecreasing times.  Each gap is first replaced by its supremum over
/// [t, t + window] so that oscillating records that touch zero between
/// peaks still have a well-defined logarithm; the fit then runs over the
/// second half of the record, skipping any points that are still zero.
pub fn fit_empirical_rate(
    gaps: &[(f64, f64)],
    window: f64,
) -> Result<EmpiricalFit, HalanayError> {
    if !(window >= 0.0 && window.is_finite()) {
        return Err(HalanayError::BadParameter {
            what: "window",
            requirement: "nonnegative and finite",
            value: window,
        });
    }
    let n = gaps.len();
    let mut windowed = Vec::with_capacity(n);
    for i in 0..n {
        let (t, mut sup) = gaps[i];
        for &(u, g) in &gaps[i + 1..] {
            if u > t + window {
                break;
            }
            sup = sup.max(g);
        }
        windowed.push((t, sup));
    }
    let tail = &windowed[n / 2..];
    if tail.iter().all(|&(_, g)| g == 0.0) {
        return Ok(EmpiricalFit {
            rate: f64::INFINITY,
            intercept: f64::NEG_INFINITY,
            all_zero: true,
        });
    }
    let usable: Vec<(f64, f64)> = tail
        .iter()
        .filter(|&&(_, g)| g > 0.0)
        .map(|&(t, g)| (t, g.ln()))
        .collect();
    if usable.len() < MIN_FIT_POINTS {
        return Err(HalanayError::TooFewPoints {
            need: MIN_FIT_POINTS,
            got: usable.len(),
        });
    }
    let m = usable.len() as f64;
    let st: f64 = usable.iter().map(|&(t, _)| t).sum();
    let sy: f64 = usable.iter().map(|&(_, y)| y).sum();
    let stt: f64 = usable.iter().map(|&(t, _)| t * t).sum();
    let sty: f64 = usable.iter().map(|&(t, y)| t * y).sum();
    let slope = (m * sty - st * sy) / (m * stt - st * st);
    let intercept = (sy - slope * st) / m;
    Ok(EmpiricalFit {
        rate: -slope,
        intercept,
        all_zero: false,
    })
}
