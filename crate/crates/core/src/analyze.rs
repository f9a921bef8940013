//! Certification constants and verdicts.
//!
//! From a model this derives the invariant band `[m2, m1]` of the state, the
//! jump-product envelope amplitudes, the contraction sums that decide whether
//! a unique positive bounded solution exists and attracts, and the verdicts
//! themselves.  Coefficient ranges prefer declared bounds and fall back to
//! sampling, except the removal sup over the band, which is always sampled
//! because it depends on `m1`.

use serde::Serialize;
use thiserror::Error;

use crate::cauchy::{self, CauchyError};
use crate::expr::{self, BoundsError, Expression};
use crate::model::{DelayTerm, ModelSpec};

const WINDOW: f64 = 200.0;
const SAMPLES: usize = 20_000;
/// State cap standing in for "all of the positive axis" when sampling.
const X_CAP: f64 = 1_000.0;
const SLOPE_T_SAMPLES: usize = 640;
const SLOPE_X_SAMPLES: usize = 100;

#[derive(Debug, Error)]
pub enum AnalyzeError {
    #[error("sampling {path} failed: {source}")]
    Sampling {
        path: String,
        #[source]
        source: BoundsError,
    },
    #[error("terms[{index}]: sampled removal slope {observed} exceeds the declared constant {declared}")]
    SlopeBoundExceeded { index: usize, declared: f64, observed: f64 },
    #[error(transparent)]
    Cauchy(#[from] CauchyError),
    #[error("{what} is not finite")]
    NonFinite { what: String },
}

impl AnalyzeError {
    /// True when the input breaks a structural assumption rather than a
    /// numerical budget.
    pub fn is_assumption_violation(&self) -> bool {
        matches!(
            self,
            AnalyzeError::SlopeBoundExceeded { .. }
                | AnalyzeError::Cauchy(CauchyError::PeriodProductNotOne { .. })
        )
    }
}

/// Every derived constant plus the verdicts, flat for JSON output.
///
/// Vector fields are per term.  `g_star` is zero for terms without a
/// kernel part; an infinite slope sup (possible when `m2 <= 0` meets an
/// exponent below one) serializes as null.
#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub a_l: f64,
    pub a_m: f64,
    pub b_l: Vec<f64>,
    pub b_m: Vec<f64>,
    pub c_l: Vec<f64>,
    pub c_m: Vec<f64>,
    pub h_l: Vec<f64>,
    pub h_m_global: Vec<f64>,
    pub h_m_restricted: Vec<f64>,
    pub lipschitz: Vec<f64>,
    pub delta_l: f64,
    pub delta_m: f64,
    pub delta_abs_min: f64,
    pub delta_abs_max: f64,
    pub eta_min: f64,
    pub eta_max: f64,
    pub gamma_min: f64,
    pub gamma_prod_max: f64,
    pub gamma_prod_min: f64,
    pub envelope_upper: f64,
    pub envelope_lower: f64,
    /// Uniform bound on the shift-difference diagnostic of the linear part.
    pub m_diag: f64,
    pub m1: f64,
    pub m2: f64,
    /// `m2` recomputed with the removal sup taken over the capped positive
    /// axis instead of the band.
    pub m2_global_variant: f64,
    pub k_star: Vec<f64>,
    pub g_star: Vec<f64>,
    pub existence_lhs: f64,
    pub attractivity_lhs: f64,
    pub sigma_bar: f64,
    pub existence_ok: bool,
    pub attractivity_ok: bool,
    pub delay_vs_eta_ok: bool,
    pub m2_positive: bool,
    /// The two removal-sup conventions disagree on the sign of `m2`.
    pub m2_variants_disagree: bool,
    /// `m2 <= 0`, so the band degenerates and the slope sups lose their
    /// domain; they are still reported, over the part of the band above zero.
    pub domain_warning: bool,
}

/// Largest slope of `x^p` over the band `[lo, hi]`, in closed form.
///
/// The derivative `p x^(p-1)` is monotone in `x`, so the sup sits at an
/// endpoint; below `p = 1` it blows up when the band touches zero.
fn power_slope_sup(p: f64, lo: f64, hi: f64) -> f64 {
    if p == 1.0 {
        1.0
    } else if p > 1.0 {
        p * hi.powf(p - 1.0)
    } else if lo > 0.0 {
        p * lo.powf(p - 1.0)
    } else {
        f64::INFINITY
    }
}

fn resolve(
    model: &ModelSpec,
    key: &str,
    e: &Expression,
    x_range: Option<(f64, f64)>,
) -> Result<(f64, f64), AnalyzeError> {
    if let Some(r) = model.declared_bounds(key) {
        return Ok(r);
    }
    expr::estimate_bounds(e, WINDOW, SAMPLES, x_range)
        .map_err(|source| AnalyzeError::Sampling { path: key.into(), source })
}

fn sampled_sup(e: &Expression, key: &str, x_hi: f64) -> Result<f64, AnalyzeError> {
    expr::estimate_bounds(e, WINDOW, SAMPLES, Some((0.0, x_hi)))
        .map(|(_, hi)| hi)
        .map_err(|source| AnalyzeError::Sampling { path: key.into(), source })
}

/// Difference quotients of the removal term must stay under the declared
/// constant; the state grid is quadratically graded because saturating
/// removal is steepest near zero.
fn check_removal_slope(term: &DelayTerm, index: usize) -> Result<(), AnalyzeError> {
    if term.harvest.is_zero() {
        return Ok(());
    }
    let declared = term.lipschitz();
    let mut observed: f64 = 0.0;
    for j in 0..=SLOPE_T_SAMPLES {
        let t = WINDOW * j as f64 / SLOPE_T_SAMPLES as f64;
        let ev = |x: f64| {
            expr::evaluate(&term.harvest, t, Some(x)).map_err(|source| AnalyzeError::Sampling {
                path: format!("terms[{index}].harvest"),
                source: BoundsError::Eval { t, source },
            })
        };
        let mut x_prev = 0.0;
        let mut f_prev = ev(0.0)?;
        for i in 1..=SLOPE_X_SAMPLES {
            let u = i as f64 / SLOPE_X_SAMPLES as f64;
            let x = X_CAP * u * u;
            let f = ev(x)?;
            observed = observed.max((f - f_prev).abs() / (x - x_prev));
            x_prev = x;
            f_prev = f;
        }
    }
    if observed > declared * (1.0 + 1e-12) {
        return Err(AnalyzeError::SlopeBoundExceeded { index, declared, observed });
    }
    Ok(())
}

/// Derives every constant and verdict for `model`.
pub fn analyze(model: &ModelSpec) -> Result<AnalysisReport, AnalyzeError> {
    let (a_l, a_m) = resolve(model, "a", model.a(), None)?;

    let n = model.terms().len();
    let mut b_l = Vec::with_capacity(n);
    let mut b_m = Vec::with_capacity(n);
    let mut c_l = Vec::with_capacity(n);
    let mut c_m = Vec::with_capacity(n);
    let mut h_l = Vec::with_capacity(n);
    let mut h_m_global = Vec::with_capacity(n);
    let mut lipschitz = Vec::with_capacity(n);
    for (i, term) in model.terms().iter().enumerate() {
        let key = |f: &str| format!("terms[{i}].{f}");
        let (lo, hi) = resolve(model, &key("b"), &term.b, None)?;
        b_l.push(lo);
        b_m.push(hi);
        let (lo, hi) = if term.is_distributed() {
            resolve(model, &key("c"), &term.c, None)?
        } else {
            (0.0, 0.0)
        };
        c_l.push(lo);
        c_m.push(hi);
        let (lo, hi) = if term.harvest.is_zero() {
            (0.0, 0.0)
        } else {
            resolve(model, &key("harvest"), &term.harvest, Some((0.0, X_CAP)))?
        };
        h_l.push(lo);
        h_m_global.push(hi);
        lipschitz.push(term.lipschitz());
        check_removal_slope(term, i)?;
    }

    let extrema = cauchy::gamma_extrema(model.schedule())?;
    let amp_a = extrema.amp_upper();
    let amp_b = extrema.amp_lower();
    let (eta_min, eta_max) = model.schedule().gap_range();
    let dstats = model.schedule().delta_stats();
    let m_diag = cauchy::shift_diag(a_l, eta_min, &extrema);

    // Upper level: strongest sustained inflow against the weakest damping,
    // plus the jump surplus replenished every shortest gap.
    let inflow: f64 = (0..n).map(|i| b_m[i] + c_m[i] - h_l[i]).sum();
    let m1 = amp_a / a_l * inflow + amp_a * dstats.max / (1.0 - (-a_l * eta_min).exp());
    if !m1.is_finite() {
        return Err(AnalyzeError::NonFinite { what: "m1".into() });
    }

    // Removal sup over the band needs m1, so it is sampled here rather than
    // resolved from declared bounds.
    let mut h_m_restricted = Vec::with_capacity(n);
    for (i, term) in model.terms().iter().enumerate() {
        let sup = if term.harvest.is_zero() {
            0.0
        } else {
            sampled_sup(&term.harvest, &format!("terms[{i}].harvest"), m1.max(0.0))?
        };
        h_m_restricted.push(sup);
    }

    // Lower level: weakest inflow saturated at the top of the band, minus
    // the strongest removal, plus the worst surviving jump contribution.
    let m2_sum = |h_m: &[f64]| -> Result<f64, AnalyzeError> {
        let mut s = 0.0;
        for (i, term) in model.terms().iter().enumerate() {
            let pa = expr::pow_checked(m1, term.alpha()).map_err(|source| {
                AnalyzeError::Sampling {
                    path: format!("terms[{i}].alpha"),
                    source: BoundsError::Eval { t: m1, source },
                }
            })?;
            s += b_l[i] / (1.0 + pa);
            if term.is_distributed() {
                let pb = expr::pow_checked(m1, term.beta()).map_err(|source| {
                    AnalyzeError::Sampling {
                        path: format!("terms[{i}].beta"),
                        source: BoundsError::Eval { t: m1, source },
                    }
                })?;
                s += c_l[i] / (1.0 + pb);
            }
            s -= h_m[i];
        }
        Ok(s)
    };
    let impulse_part = if dstats.min >= 0.0 {
        let q = (-a_m * eta_max).exp();
        amp_b * dstats.min * q / (1.0 - q)
    } else {
        amp_a * dstats.min / (1.0 - (-a_l * eta_min).exp())
    };
    let m2 = amp_b / a_m * m2_sum(&h_m_restricted)? + impulse_part;
    let m2_global_variant = amp_b / a_m * m2_sum(&h_m_global)? + impulse_part;
    if !m2.is_finite() {
        return Err(AnalyzeError::NonFinite { what: "m2".into() });
    }

    let k_star: Vec<f64> =
        model.terms().iter().map(|t| power_slope_sup(t.alpha(), m2, m1)).collect();
    let g_star: Vec<f64> = model
        .terms()
        .iter()
        .map(|t| if t.is_distributed() { power_slope_sup(t.beta(), m2, m1) } else { 0.0 })
        .collect();

    let contraction_sum: f64 =
        (0..n).map(|i| b_m[i] * k_star[i] + c_m[i] * g_star[i] + lipschitz[i]).sum();
    let existence_lhs = amp_a / a_l * contraction_sum;
    let att_factor = amp_a.max(1.0 / (1.0 + extrema.gamma_min));
    let attractivity_lhs = att_factor / a_l * contraction_sum;

    let m2_positive = m2 > 0.0;
    let delay_vs_eta_ok = model.sigma_bar() <= eta_min;
    Ok(AnalysisReport {
        a_l,
        a_m,
        b_l,
        b_m,
        c_l,
        c_m,
        h_l,
        h_m_global,
        h_m_restricted,
        lipschitz,
        delta_l: dstats.min,
        delta_m: dstats.max,
        delta_abs_min: dstats.abs_min,
        delta_abs_max: dstats.abs_max,
        eta_min,
        eta_max,
        gamma_min: extrema.gamma_min,
        gamma_prod_max: extrema.prod_max,
        gamma_prod_min: extrema.prod_min,
        envelope_upper: amp_a,
        envelope_lower: amp_b,
        m_diag,
        m1,
        m2,
        m2_global_variant,
        k_star,
        g_star,
        existence_lhs,
        attractivity_lhs,
        sigma_bar: model.sigma_bar(),
        existence_ok: m2_positive && existence_lhs < 1.0,
        attractivity_ok: m2_positive && delay_vs_eta_ok && attractivity_lhs < 1.0,
        delay_vs_eta_ok,
        m2_positive,
        m2_variants_disagree: m2_positive != (m2_global_variant > 0.0),
        domain_warning: m2 <= 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, VarSet};
    use crate::model::ImpulseSchedule;
    use crate::presets;
    use std::collections::BTreeMap;

    fn expr(s: &str) -> Expression {
        parse(s, VarSet::TimeOnly).unwrap()
    }

    fn state_expr(s: &str) -> Expression {
        parse(s, VarSet::TimeAndState).unwrap()
    }

    fn quiet_schedule() -> ImpulseSchedule {
        ImpulseSchedule::new(0.0, 1.0, vec![0.0], vec![0.0], vec![0.0]).unwrap()
    }

    fn assemble(
        a: &str,
        terms: Vec<DelayTerm>,
        sched: ImpulseSchedule,
        declared: BTreeMap<String, (f64, f64)>,
    ) -> ModelSpec {
        ModelSpec::assemble(expr(a), 1.0, terms, sched, declared, None).unwrap()
    }

    #[test]
    fn reference_constants_match_pinned_values() {
        let r = analyze(&presets::saturating_model()).unwrap();
        assert_eq!(r.a_l, 5.0);
        assert_eq!(r.a_m, 6.0);
        assert_eq!((r.b_l[0], r.b_m[0]), (0.1, 0.2));
        assert_eq!((r.c_l[0], r.c_m[0]), (0.1, 0.2));
        assert_eq!((r.h_l[0], r.h_m_global[0]), (0.0, 0.05));
        assert_eq!(r.lipschitz[0], 0.5);

        assert_eq!(r.gamma_min, -0.5);
        assert_eq!(r.gamma_prod_max, 2.0);
        assert_eq!(r.gamma_prod_min, 0.5);
        assert_eq!(r.envelope_upper, 2.0);
        assert_eq!(r.envelope_lower, 0.5);
        assert!(r.envelope_upper >= 1.0 && 1.0 >= r.envelope_lower && r.envelope_lower > 0.0);
        assert_eq!((r.delta_l, r.delta_m), (0.5, 1.0));
        assert_eq!((r.delta_abs_min, r.delta_abs_max), (0.5, 1.0));
        assert_eq!((r.eta_min, r.eta_max), (1.0, 1.0));
        assert!((r.m_diag - 6.4).abs() < 1e-12);

        assert!((r.m1 - 2.1735673098126087).abs() < 1e-12, "m1 = {}", r.m1);
        assert!(
            (r.h_m_restricted[0] - 0.008927404985310207).abs() < 5e-6,
            "h_m_restricted = {}",
            r.h_m_restricted[0]
        );
        assert!((r.m2 - 0.0027887934061372327).abs() < 1e-6, "m2 = {}", r.m2);
        assert!(r.m2 <= r.m1);
        assert!(
            (r.m2_global_variant - -0.0006339228450869167).abs() < 1e-6,
            "global variant = {}",
            r.m2_global_variant
        );
        assert!(r.m2_global_variant < 0.0);
        assert!(r.m2_variants_disagree);

        assert!((r.k_star[0] - 2.0 * r.m1).abs() < 1e-12);
        assert!((r.g_star[0] - 2.0 * r.m1).abs() < 1e-12);
        assert!((r.existence_lhs - 0.8955415391400348).abs() < 1e-9);
        assert!((r.attractivity_lhs - r.existence_lhs).abs() < 1e-15);

        assert_eq!(r.sigma_bar, 1.0);
        assert!(r.delay_vs_eta_ok);
        assert!(r.m2_positive);
        assert!(r.existence_ok);
        assert!(r.attractivity_ok);
        assert!(!r.domain_warning);
    }

    #[test]
    fn simple_model_levels_are_exact() {
        let term = DelayTerm::new(expr("1"), 1.0, expr("0.5"));
        let m = assemble("1", vec![term], quiet_schedule(), BTreeMap::new());
        let r = analyze(&m).unwrap();
        // No jump effect: amplitude one and no surplus, so the upper level
        // is just inflow over damping and the lower level its saturation.
        assert_eq!(r.m1, 1.0);
        assert_eq!(r.m2, 0.5);
        assert_eq!(r.k_star[0], 1.0);
        assert_eq!(r.existence_lhs, 1.0);
        assert!(!r.existence_ok, "strict inequality must fail at exactly one");
        assert!(r.m2_positive);
    }

    #[test]
    fn band_is_linear_in_source_scale() {
        let build = |lam: f64| {
            let term = DelayTerm::new(expr(&format!("{lam}*0.4*(2+cos(t))")), 2.0, expr("0.5"))
                .distributed(expr(&format!("{lam}*0.15")), 2.0, expr("1"))
                .harvested(state_expr(&format!("{lam}*0.1*abs(x)/(10+abs(x))")), lam * 0.05, expr("0.25"));
            assemble("3", vec![term], quiet_schedule(), BTreeMap::new())
        };
        let full = analyze(&build(1.0)).unwrap();
        let half = analyze(&build(0.5)).unwrap();
        let quarter = analyze(&build(0.25)).unwrap();
        assert!((2.0 * half.m1 - full.m1).abs() < 1e-15 * full.m1);
        assert!((4.0 * quarter.m1 - full.m1).abs() < 1e-15 * full.m1);
    }

    #[test]
    fn slope_sup_matches_grid_search() {
        for &p in &[0.3, 0.7, 1.0, 1.5, 2.0, 2.7] {
            for &(lo, hi) in &[(0.002, 2.17), (0.5, 1.0), (1e-3, 10.0)] {
                let closed = power_slope_sup(p, lo, hi);
                let mut grid: f64 = 0.0;
                for j in 0..=10_000 {
                    let x = lo + (hi - lo) * j as f64 / 10_000.0;
                    grid = grid.max(p * x.powf(p - 1.0));
                }
                assert!(
                    (closed - grid).abs() <= 1e-6 * grid,
                    "p = {p}, band = [{lo}, {hi}]: {closed} vs {grid}"
                );
            }
        }
    }

    #[test]
    fn stronger_surplus_raises_the_upper_level() {
        let build = |deltas: Vec<f64>, decl_a: (f64, f64)| {
            let term = DelayTerm::new(expr("0.1*(1+abs(sin(sqrt(3)*t)))"), 2.0, expr("0.5"));
            let sched = ImpulseSchedule::new(0.0, 2.0, vec![0.0, 1.0], vec![-0.5, 1.0], deltas).unwrap();
            let mut declared = BTreeMap::new();
            declared.insert("a".into(), decl_a);
            assemble("5 + abs(sin(sqrt(2)*t))", vec![term], sched, declared)
        };
        let base = analyze(&build(vec![1.0, 0.5], (5.0, 6.0))).unwrap();
        let more_surplus = analyze(&build(vec![1.2, 0.5], (5.0, 6.0))).unwrap();
        let weaker_damping = analyze(&build(vec![1.0, 0.5], (4.0, 6.0))).unwrap();
        assert!(more_surplus.m1 > base.m1);
        assert!(weaker_damping.m1 > base.m1);
    }

    #[test]
    fn single_term_attractivity_reduces_to_product_form() {
        let term = DelayTerm::new(expr("0.15*(2+abs(sin(t)))"), 2.0, expr("0.5"));
        let sched =
            ImpulseSchedule::new(0.0, 2.0, vec![0.0, 1.0], vec![-0.5, 1.0], vec![0.2, 0.1]).unwrap();
        let m = assemble("4", vec![term], sched, BTreeMap::new());
        let r = analyze(&m).unwrap();
        let factor = r.envelope_upper.max(1.0 / (1.0 + r.gamma_min));
        let reduced = factor / r.a_l * (r.b_m[0] * r.k_star[0]);
        assert!((r.attractivity_lhs - reduced).abs() < 1e-15);
    }

    #[test]
    fn draining_counterexample_fails_existence() {
        let r = analyze(&presets::linear_counterexample()).unwrap();
        // Pure draining: both levels collapse to the negative jump tail.
        assert!((r.m1 - -1.5819767068693265).abs() < 1e-12);
        assert!((r.m2 - r.m1).abs() < 1e-15);
        assert!(!r.m2_positive);
        assert!(!r.existence_ok);
        assert!(!r.attractivity_ok);
        assert!(r.domain_warning);
        assert!(r.k_star.is_empty());
    }

    #[test]
    fn removal_sign_switches_the_lower_formula() {
        let build = |delta: f64| {
            let term = DelayTerm::new(expr("0.3"), 1.0, expr("0.25"));
            let sched = ImpulseSchedule::new(0.0, 1.0, vec![0.0], vec![0.0], vec![delta]).unwrap();
            assemble("2", vec![term], sched, BTreeMap::new())
        };
        let pos = analyze(&build(0.5)).unwrap();
        assert!((pos.m1 - 0.7282588213748329).abs() < 1e-12);
        assert!((pos.m2 - 0.1650513770643069).abs() < 1e-12);
        let neg = analyze(&build(-0.5)).unwrap();
        assert!((neg.m1 - -0.42825882137483284).abs() < 1e-12);
        assert!((neg.m2 - -0.31590234678838397).abs() < 1e-12);
        assert!(!neg.existence_ok);
    }

    #[test]
    fn declared_slope_bound_is_checked() {
        let term = DelayTerm::new(expr("0.1"), 1.0, expr("0.25")).harvested(
            state_expr("0.5*abs(x)/(1+0.001*abs(x))"),
            0.1,
            expr("0"),
        );
        let m = assemble("1", vec![term], quiet_schedule(), BTreeMap::new());
        match analyze(&m) {
            Err(e @ AnalyzeError::SlopeBoundExceeded { index: 0, declared, observed }) => {
                assert_eq!(declared, 0.1);
                assert!(observed > 0.4, "observed = {observed}");
                assert!(e.is_assumption_violation());
            }
            other => panic!("unexpected result {other:?}"),
        }
    }

    #[test]
    fn late_removal_blocks_attractivity_only() {
        let term = DelayTerm::new(expr("0.1"), 1.0, expr("0.25")).harvested(
            state_expr("0.01*abs(x)/(1+abs(x))"),
            0.01,
            expr("2"),
        );
        let m = assemble("1", vec![term], quiet_schedule(), BTreeMap::new());
        let r = analyze(&m).unwrap();
        assert!(r.sigma_bar > r.eta_min);
        assert!(!r.delay_vs_eta_ok);
        assert!(r.existence_ok);
        assert!(!r.attractivity_ok);
    }
}
