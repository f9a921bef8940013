//! Evolution weights of the linear impulsive part.
//!
//! Between instants the homogeneous solution scales by `exp(-int a)`; each
//! crossed instant multiplies in its factor `1 + gamma_k`.  The weight
//! `cauchy_h(t, s)` counts instants in `[s, t)`: a jump exactly at `s` is
//! absorbed into the weight, a jump exactly at `t` is not.  That matches a
//! state read as a left limit at `t` evolving from a pre-jump value at `s`.

use thiserror::Error;

use crate::expr::{self, EvalError};
use crate::model::{ImpulseSchedule, ModelSpec};
use crate::quad;

/// Tolerance on the one-period jump-factor product; products drifting from 1
/// would grow or vanish over long windows and void every envelope below.
pub const PERIOD_PRODUCT_TOL: f64 = 1e-12;

const INT_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum CauchyError {
    #[error("weight requires s <= t, got s = {s}, t = {t}")]
    BadOrder { s: f64, t: f64 },
    #[error("jump-factor product over one period is {product}, admissible schedules need 1 within {PERIOD_PRODUCT_TOL}")]
    PeriodProductNotOne { product: f64 },
    #[error("coefficient evaluation failed at t = {t}: {source}")]
    Eval {
        t: f64,
        #[source]
        source: EvalError,
    },
}

/// Extremes of jump-factor products over consecutive instants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaExtrema {
    /// Largest product over a nonempty window of consecutive instants.
    pub prod_max: f64,
    /// Smallest such product.
    pub prod_min: f64,
    /// Smallest single gamma in the pattern.
    pub gamma_min: f64,
}

impl GammaExtrema {
    /// Upper envelope amplitude: max of the product sup and 1.
    pub fn amp_upper(&self) -> f64 {
        self.prod_max.max(1.0)
    }

    /// Lower envelope amplitude: min of the product inf and 1.
    pub fn amp_lower(&self) -> f64 {
        self.prod_min.min(1.0)
    }
}

/// Product of `1 + gamma_k` for k in `[q, p]`; 1 when the range is empty.
///
/// Whole periods contribute through the pattern product, so shifting both
/// ends by the pattern length reproduces the same float exactly.
pub fn gamma_product(s: &ImpulseSchedule, q: i64, p: i64) -> f64 {
    if q > p {
        return 1.0;
    }
    let pattern = s.period_count() as i64;
    let n = p - q + 1;
    let full = n.div_euclid(pattern);
    let rem = n.rem_euclid(pattern);
    let mut head = 1.0;
    for j in 0..rem {
        head *= 1.0 + s.gamma_of(q + j);
    }
    if full == 0 {
        return head;
    }
    let mut pi0 = 1.0;
    for j in 0..pattern {
        pi0 *= 1.0 + s.gamma_of(j);
    }
    assert!(full <= i32::MAX as i64, "window spans too many periods");
    head * pi0.powi(full as i32)
}

/// Product extrema over all windows of consecutive instants.
///
/// Requires the one-period product to be 1 (within [`PERIOD_PRODUCT_TOL`]);
/// then every window reduces to one of the sub-period windows scanned here.
pub fn gamma_extrema(s: &ImpulseSchedule) -> Result<GammaExtrema, CauchyError> {
    let p = s.period_count() as i64;
    let pi0 = gamma_product(s, 0, p - 1);
    if (pi0 - 1.0).abs() > PERIOD_PRODUCT_TOL {
        return Err(CauchyError::PeriodProductNotOne { product: pi0 });
    }
    let mut prod_max = f64::NEG_INFINITY;
    let mut prod_min = f64::INFINITY;
    for q in 0..p {
        for len in 1..=(2 * p) {
            let v = gamma_product(s, q, q + len - 1);
            prod_max = prod_max.max(v);
            prod_min = prod_min.min(v);
        }
    }
    Ok(GammaExtrema { prod_max, prod_min, gamma_min: s.gamma_min() })
}

fn integral_of_a(m: &ModelSpec, s: f64, t: f64) -> Result<f64, CauchyError> {
    let mut f = |r: f64| {
        expr::evaluate(m.a(), r, None).map_err(|source| CauchyError::Eval { t: r, source })
    };
    quad::adaptive_simpson(&mut f, s, t, INT_TOL)
}

/// Weight carrying a pre-jump state at `s` to the left limit at `t`;
/// includes the factor of a jump exactly at `s`, excludes one exactly at `t`.
pub fn cauchy_h(m: &ModelSpec, t: f64, s: f64) -> Result<f64, CauchyError> {
    if !(t >= s) {
        return Err(CauchyError::BadOrder { s, t });
    }
    if t == s {
        return Ok(1.0);
    }
    let sched = m.schedule();
    let k0 = sched.first_index_at_or_after(s);
    let k1 = sched.first_index_at_or_after(t);
    Ok(gamma_product(sched, k0, k1 - 1) * (-integral_of_a(m, s, t)?).exp())
}

/// Weight carrying a post-jump state at `s` to the left limit at `t`:
/// only jumps strictly inside `(s, t)` contribute factors.  This is the
/// correct weight for mass injected at `s` by the jump itself.
pub fn cauchy_h_after(m: &ModelSpec, t: f64, s: f64) -> Result<f64, CauchyError> {
    if !(t >= s) {
        return Err(CauchyError::BadOrder { s, t });
    }
    if t == s {
        return Ok(1.0);
    }
    let sched = m.schedule();
    let k0 = sched.first_index_after(s);
    let k1 = sched.first_index_at_or_after(t);
    Ok(gamma_product(sched, k0, k1 - 1) * (-integral_of_a(m, s, t)?).exp())
}

/// Uniform bound on weighted shifts of the inhomogeneous response: the
/// factor turning a sup bound on forcing into a sup bound on the state.
pub fn shift_diag(a_lo: f64, eta_min: f64, ext: &GammaExtrema) -> f64 {
    let base = 2.0 / a_lo;
    let refill = 1.0 / (1.0 + ext.gamma_min) * (1.0 + 2.0 / (a_lo * eta_min));
    base.max(ext.prod_max.max(1.0) * (base + refill))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, VarSet};
    use crate::model::ModelSpec;
    use std::collections::BTreeMap;

    fn bare_model(a: &str, sched: ImpulseSchedule) -> ModelSpec {
        ModelSpec::assemble(
            parse(a, VarSet::TimeOnly).unwrap(),
            1.0,
            vec![],
            sched,
            BTreeMap::new(),
            None,
        )
        .unwrap()
    }

    fn sched(
        t0: f64,
        period: f64,
        offsets: &[f64],
        gamma: &[f64],
        delta: &[f64],
    ) -> ImpulseSchedule {
        ImpulseSchedule::new(t0, period, offsets.to_vec(), gamma.to_vec(), delta.to_vec()).unwrap()
    }

    #[test]
    fn empty_product_is_one() {
        let s = sched(0.0, 1.0, &[0.0], &[0.5], &[0.0]);
        assert_eq!(gamma_product(&s, 3, 2), 1.0);
        assert_eq!(gamma_product(&s, 0, -1), 1.0);
    }

    #[test]
    fn products_shift_by_whole_periods_exactly() {
        let s = sched(0.0, 2.0, &[0.0, 1.0], &[-0.5, 1.0], &[0.0, 0.0]);
        for q in -6i64..6 {
            for p in q..q + 9 {
                let a = gamma_product(&s, q, p);
                let b = gamma_product(&s, q + 2, p + 2);
                assert_eq!(a.to_bits(), b.to_bits(), "q={q} p={p}");
            }
        }
    }

    #[test]
    fn constant_rate_weights_match_closed_forms() {
        let m = bare_model("2", sched(0.0, 1.0, &[0.0], &[0.5], &[0.0]));
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
        assert_eq!(cauchy_h(&m, 0.75, 0.75).unwrap(), 1.0);
        // No instant inside [0.25, 0.5).
        assert!(close(cauchy_h(&m, 0.5, 0.25).unwrap(), (-0.5f64).exp()));
        // One instant (t = 1) inside [0.5, 1.5).
        assert!(close(cauchy_h(&m, 1.5, 0.5).unwrap(), 1.5 * (-2.0f64).exp()));
        // Two instants (t = 1, 2) inside [0.5, 2.5).
        assert!(close(cauchy_h(&m, 2.5, 0.5).unwrap(), 2.25 * (-4.0f64).exp()));
        // Jump exactly at s is included...
        assert!(close(cauchy_h(&m, 1.5, 1.0).unwrap(), 1.5 * (-1.0f64).exp()));
        // ...a jump exactly at t is not.
        assert!(close(cauchy_h(&m, 1.0, 0.5).unwrap(), (-1.0f64).exp()));
        // The post-jump weight drops the factor at s.
        assert!(close(cauchy_h_after(&m, 1.5, 1.0).unwrap(), (-1.0f64).exp()));
        assert!(cauchy_h(&m, 0.0, 1.0).is_err());
    }

    #[test]
    fn left_and_right_weights_differ_by_the_jump_factor() {
        let m = crate::presets::saturating_model();
        for &s in &[0.0, 1.0, 2.0, 5.0] {
            let g = m.schedule().impulse_at(s).unwrap().gamma;
            for &t in &[s + 0.5, s + 1.0, s + 3.7] {
                let from_left = cauchy_h(&m, t, s).unwrap();
                let from_right = cauchy_h_after(&m, t, s).unwrap();
                assert!(
                    (from_left - (1.0 + g) * from_right).abs() <= 1e-12 * from_left.abs(),
                    "s={s} t={t}"
                );
            }
        }
    }

    #[test]
    fn time_varying_rate_integrates_exactly() {
        let m = bare_model(
            "1 + 0.5*sin(t)",
            sched(1e6, 1.0, &[0.0], &[0.0], &[0.0]),
        );
        let (s, t): (f64, f64) = (0.3, 4.1);
        let exact = (-(t - s) - 0.5 * (s.cos() - t.cos())).exp();
        let got = cauchy_h(&m, t, s).unwrap();
        assert!((got - exact).abs() < 1e-10 * exact);
    }

    #[test]
    fn weights_compose_along_intermediate_times() {
        let m = crate::presets::saturating_model();
        let times = [-1.3, 0.0, 0.4, 1.0, 1.7, 2.0, 3.25, 6.0];
        for i in 0..times.len() {
            for j in i..times.len() {
                for k in j..times.len() {
                    let (r, s, t) = (times[i], times[j], times[k]);
                    let whole = cauchy_h(&m, t, r).unwrap();
                    let split = cauchy_h(&m, t, s).unwrap() * cauchy_h(&m, s, r).unwrap();
                    assert!(
                        (whole - split).abs() <= 1e-9 * whole.abs().max(1e-30),
                        "r={r} s={s} t={t}: {whole} vs {split}"
                    );
                }
            }
        }
    }

    #[test]
    fn reference_schedule_extrema_are_exact() {
        let m = crate::presets::saturating_model();
        let ext = gamma_extrema(m.schedule()).unwrap();
        assert_eq!(ext.prod_max, 2.0);
        assert_eq!(ext.prod_min, 0.5);
        assert_eq!(ext.gamma_min, -0.5);
        assert_eq!(ext.amp_upper(), 2.0);
        assert_eq!(ext.amp_lower(), 0.5);
    }

    #[test]
    fn drifting_period_product_is_rejected_but_finite_products_grow() {
        let s = sched(0.0, 2.0, &[0.0, 1.0], &[1.0, 1.0], &[0.0, 0.0]);
        match gamma_extrema(&s).unwrap_err() {
            CauchyError::PeriodProductNotOne { product } => assert_eq!(product, 4.0),
            other => panic!("unexpected error {other:?}"),
        }
        // Finite-window products still evaluate: 2^k growth per instant.
        assert_eq!(gamma_product(&s, 0, 9), 1024.0);
    }

    #[test]
    fn weights_sit_inside_the_exponential_envelope() {
        let m = crate::presets::saturating_model();
        let ext = gamma_extrema(m.schedule()).unwrap();
        let (a_lo, a_hi) = m.declared_bounds("a").unwrap();
        let (upper, lower) = (ext.amp_upper(), ext.amp_lower());
        let mut s = -5.0;
        while s < 15.0 {
            let mut dt = 0.05;
            while dt < 8.0 {
                let h = cauchy_h(&m, s + dt, s).unwrap();
                let hi = upper * (-a_lo * dt).exp();
                let lo = lower * (-a_hi * dt).exp();
                assert!(
                    h <= hi * (1.0 + 1e-9) && h >= lo * (1.0 - 1e-9),
                    "s={s} dt={dt}: {lo} <= {h} <= {hi}"
                );
                dt *= 1.9;
            }
            s += 0.61;
        }
    }

    #[test]
    fn shift_diagnostic_matches_hand_value() {
        let m = crate::presets::saturating_model();
        let ext = gamma_extrema(m.schedule()).unwrap();
        let (eta_min, _) = m.schedule().gap_range();
        let got = shift_diag(5.0, eta_min, &ext);
        // max(0.4, 2 * (0.4 + 2 * (1 + 0.4))) = 6.4 with these jump factors.
        assert!((got - 6.4).abs() < 1e-12);
    }
}
