//! Adaptive Simpson quadrature for the information-number integrals.

use crate::error::{Error, Result};

const MAX_DEPTH: usize = 40;
/// Uniform panels before adaptation starts. Peaked integrands on wide
/// domains (a density against a clipped LLR) look flat to a 5-point probe
/// and would otherwise terminate immediately with a near-zero answer.
const INITIAL_PANELS: usize = 64;

/// Integrate `f` over `[a, b]` to absolute tolerance `tol`.
///
/// Classic adaptive Simpson with Richardson correction, started from a fixed
/// uniform subdivision. Depth exhaustion with a local error estimate above
/// tolerance is reported as a failure carrying the achieved tolerance.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    let mut worst = 0.0f64;
    let mut total = 0.0f64;
    let panel_tol = tol / INITIAL_PANELS as f64;
    let w = (b - a) / INITIAL_PANELS as f64;
    for i in 0..INITIAL_PANELS {
        let pa = a + i as f64 * w;
        let pb = if i == INITIAL_PANELS - 1 { b } else { pa + w };
        let fa = f(pa);
        let fb = f(pb);
        let m = 0.5 * (pa + pb);
        let fm = f(m);
        let whole = simpson(pa, pb, fa, fm, fb);
        total += recurse(f, pa, pb, fa, fm, fb, whole, panel_tol, MAX_DEPTH, &mut worst);
    }
    if worst > panel_tol {
        return Err(Error::QuadratureFailed {
            achieved: worst,
            requested: tol,
        });
    }
    Ok(total)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
    worst: &mut f64,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let err = (left + right - whole) / 15.0;
    if err.abs() <= tol || depth == 0 {
        if depth == 0 && err.abs() > tol {
            *worst = worst.max(err.abs());
        }
        return left + right + err;
    }
    let half_tol = 0.5 * tol;
    recurse(f, a, m, fa, flm, fm, left, half_tol, depth - 1, worst)
        + recurse(f, m, b, fm, frm, fb, right, half_tol, depth - 1, worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let f = |x: f64| 3.0 * x * x;
        let v = adaptive_simpson(&f, 0.0, 2.0, 1e-10).unwrap();
        assert!((v - 8.0).abs() < 1e-10);
    }

    #[test]
    fn gaussian_mass() {
        let f = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let v = adaptive_simpson(&f, -12.0, 12.0, 1e-10).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn oscillatory_converges() {
        let f = |x: f64| (20.0 * x).sin();
        let v = adaptive_simpson(&f, 0.0, 1.0, 1e-9).unwrap();
        let exact = (1.0 - (20.0f64).cos()) / 20.0;
        assert!((v - exact).abs() < 1e-8);
    }
}
