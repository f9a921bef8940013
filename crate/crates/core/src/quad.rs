//! Simpson quadrature over fallible integrands.

/// Composite Simpson rule with `panels` equal panels on [a, b].
///
/// Exact for cubics on each panel; callers split at integrand kinks so every
/// panel sees a smooth function.
pub fn composite_simpson<E>(
    f: &mut impl FnMut(f64) -> Result<f64, E>,
    a: f64,
    b: f64,
    panels: usize,
) -> Result<f64, E> {
    debug_assert!(panels > 0);
    let h = (b - a) / panels as f64;
    let mut acc = 0.0;
    let mut f_lo = f(a)?;
    for i in 0..panels {
        let lo = a + h * i as f64;
        let hi = if i + 1 == panels { b } else { a + h * (i + 1) as f64 };
        let f_mid = f(0.5 * (lo + hi))?;
        let f_hi = f(hi)?;
        acc += (hi - lo) / 6.0 * (f_lo + 4.0 * f_mid + f_hi);
        f_lo = f_hi;
    }
    Ok(acc)
}

/// Adaptive Simpson with interval bisection and Richardson correction,
/// targeting `rel_tol` relative accuracy.
pub fn adaptive_simpson<E>(
    f: &mut impl FnMut(f64) -> Result<f64, E>,
    a: f64,
    b: f64,
    rel_tol: f64,
) -> Result<f64, E> {
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a)?;
    let fb = f(b)?;
    let m = 0.5 * (a + b);
    let fm = f(m)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let tol = rel_tol * whole.abs().max(1e-12 * (b - a).abs());
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 40)
}

#[allow(clippy::too_many_arguments)]
fn recurse<E>(
    f: &mut impl FnMut(f64) -> Result<f64, E>,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    m: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, E> {
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    let l = recurse(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)?;
    let r = recurse(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)?;
    Ok(l + r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn ok(f: impl Fn(f64) -> f64) -> impl FnMut(f64) -> Result<f64, Infallible> {
        move |x| Ok(f(x))
    }

    #[test]
    fn composite_is_exact_for_cubics() {
        let v = composite_simpson(&mut ok(|x| x * x * x - 2.0 * x), 0.0, 2.0, 2).unwrap();
        assert!((v - (4.0 - 4.0)).abs() < 1e-14);
        let v = composite_simpson(&mut ok(|x| x * x), 0.0, 1.0, 1).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn composite_converges_fourth_order() {
        let exact = 1.0 - (-1.0f64).exp();
        let err = |n: usize| {
            (composite_simpson(&mut ok(|x| (-x).exp()), 0.0, 1.0, n).unwrap() - exact).abs()
        };
        let (e1, e2) = (err(8), err(16));
        assert!(e2 * 12.0 < e1, "e1={e1}, e2={e2}");
    }

    #[test]
    fn adaptive_meets_relative_tolerance() {
        let v = adaptive_simpson(&mut ok(f64::sin), 0.0, std::f64::consts::PI, 1e-10).unwrap();
        assert!((v - 2.0).abs() < 1e-10);
        let v = adaptive_simpson(&mut ok(|x| 5.0 + (x * 2.0f64.sqrt()).sin().abs()), 0.0, 3.0, 1e-10)
            .unwrap();
        // Independent check with a fine composite rule on the kink-free halves.
        let kink = std::f64::consts::PI / 2.0f64.sqrt();
        let fine = composite_simpson(&mut ok(|x| 5.0 + (x * 2.0f64.sqrt()).sin().abs()), 0.0, kink, 4000)
            .unwrap()
            + composite_simpson(&mut ok(|x| 5.0 + (x * 2.0f64.sqrt()).sin().abs()), kink, 3.0, 4000)
                .unwrap();
        assert!((v - fine).abs() < 1e-7 * fine.abs());
    }

    #[test]
    fn errors_propagate() {
        let mut f = |x: f64| if x > 0.5 { Err("boom") } else { Ok(x) };
        assert_eq!(composite_simpson(&mut f, 0.0, 1.0, 4), Err("boom"));
        assert_eq!(adaptive_simpson(&mut f, 0.0, 1.0, 1e-6), Err("boom"));
    }
}
