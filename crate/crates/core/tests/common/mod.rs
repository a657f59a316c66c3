//! Numerical oracles shared by the integration tests. Nothing here calls
//! into the library's inference code.
#![allow(dead_code)]

pub mod recursion;
pub mod toy;

use std::f64::consts::PI;

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

/// Evenly spaced nodes covering [lo, hi] and the step between them.
pub fn grid(lo: f64, hi: f64, n: usize) -> (Vec<f64>, f64) {
    let h = (hi - lo) / (n - 1) as f64;
    ((0..n).map(|i| lo + h * i as f64).collect(), h)
}

/// Adaptive Simpson quadrature of `f` over [a, b].
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Stirling series for ln Γ(a), accurate to ~1e−15 once shifted to a ≥ 10.
fn ln_gamma_stirling(mut a: f64) -> f64 {
    let mut shift = 0.0;
    while a < 10.0 {
        shift -= a.ln();
        a += 1.0;
    }
    let inv = 1.0 / a;
    let inv2 = inv * inv;
    let series = inv
        * (1.0 / 12.0
            - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 * (1.0 / 1680.0 - inv2 / 1188.0))));
    shift + (a - 0.5) * a.ln() - a + 0.5 * (2.0 * PI).ln() + series
}

/// P(a, x) by integrating the Gamma(a, 1) density over [0, x].
///
/// For a < 1 the substitution t = u^(1/a) removes the singularity at the
/// origin; the density is evaluated in log space to survive large a.
pub fn gamma_cdf_quadrature(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let lg = ln_gamma_stirling(a);
    if a < 1.0 {
        // ∫_0^x t^(a−1) e^−t dt = (1/a) ∫_0^(x^a) e^(−u^(1/a)) du
        let f = |u: f64| (-u.powf(1.0 / a)).exp();
        return simpson(&f, 0.0, x.powf(a), 1e-15) / a / lg.exp();
    }
    let density = |t: f64| {
        if t <= 0.0 {
            if a == 1.0 {
                1.0
            } else {
                0.0
            }
        } else {
            ((a - 1.0) * t.ln() - t - lg).exp()
        }
    };
    // Split at the mode so each piece is unimodal.
    let mode = (a - 1.0).max(0.0);
    if x <= mode || mode == 0.0 {
        simpson(&density, 0.0, x, 1e-15)
    } else {
        simpson(&density, 0.0, mode, 1e-15) + simpson(&density, mode, x, 1e-15)
    }
}

/// ln P(a, x) for x below the mode, with the density rescaled by its value
/// at x so that tiny masses keep their relative accuracy.
pub fn ln_gamma_cdf_quadrature(a: f64, x: f64) -> f64 {
    assert!(a > 1.0 && x > 0.0 && x <= a - 1.0);
    let ln_f = |t: f64| (a - 1.0) * t.ln() - t;
    let peak = ln_f(x);
    let scaled = |t: f64| if t <= 0.0 { 0.0 } else { (ln_f(t) - peak).exp() };
    simpson(&scaled, 0.0, x, 1e-13).ln() + peak - ln_gamma_stirling(a)
}
