use crate::error::{Error, Result};

const MAX_DEPTH: u32 = 50;

/// Adaptive Simpson quadrature with Richardson correction.
///
/// `tol` is an absolute error target for the whole interval.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let v = step(&f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::DomainError(format!(
            "integrand not finite on [{a}, {b}]"
        )))
    }
}

#[allow(clippy::too_many_arguments)]
fn step(
    f: &impl Fn(f64) -> f64,
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
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol || (m - a) <= f64::EPSILON * a.abs().max(b.abs()) {
        return left + right + delta / 15.0;
    }
    step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}
