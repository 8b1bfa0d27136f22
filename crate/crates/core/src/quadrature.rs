//! Adaptive Simpson quadrature on a bounded interval.

use crate::error::{OpeError, Result};

/// Absolute tolerance used for every integral over the continuous state space.
pub const ABS_TOL: f64 = 1e-8;
/// Upper bound on the number of accepted subintervals.
pub const MAX_SUBDIVISIONS: usize = 1 << 20;

const INITIAL_PANELS: usize = 16;
const MAX_DEPTH: u32 = 50;

struct Panel {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

/// Integrate `f` over `[a, b]` to absolute tolerance `tol`.
///
/// The interval is first cut into a fixed number of panels so that integrands
/// with kinks at simple rational points are not mistaken for polynomials.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(b > a) {
        return Ok(0.0);
    }
    let mut stack = Vec::with_capacity(64);
    let h = (b - a) / INITIAL_PANELS as f64;
    let panel_tol = tol / INITIAL_PANELS as f64;
    for k in 0..INITIAL_PANELS {
        let lo = a + h * k as f64;
        let hi = if k + 1 == INITIAL_PANELS { b } else { lo + h };
        let mid = 0.5 * (lo + hi);
        let (fa, fm, fb) = (f(lo), f(mid), f(hi));
        stack.push(Panel { a: lo, b: hi, fa, fm, fb, whole: simpson(lo, hi, fa, fm, fb), tol: panel_tol, depth: 0 });
    }

    let mut total = 0.0;
    let mut compensation = 0.0;
    let mut accepted = 0usize;
    let mut worst_err = 0.0f64;
    while let Some(p) = stack.pop() {
        let m = 0.5 * (p.a + p.b);
        let lm = 0.5 * (p.a + m);
        let rm = 0.5 * (m + p.b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(p.a, m, p.fa, flm, p.fm);
        let right = simpson(m, p.b, p.fm, frm, p.fb);
        let delta = left + right - p.whole;
        if !delta.is_finite() {
            return Err(OpeError::Quadrature { achieved: f64::INFINITY, subdivisions: accepted });
        }
        if delta.abs() <= 15.0 * p.tol || p.depth >= MAX_DEPTH {
            if p.depth >= MAX_DEPTH {
                worst_err = worst_err.max(delta.abs() / 15.0);
            }
            // Kahan summation keeps the accumulated rounding below the tolerance.
            let term = left + right + delta / 15.0 - compensation;
            let t = total + term;
            compensation = (t - total) - term;
            total = t;
            accepted += 1;
            if accepted > MAX_SUBDIVISIONS {
                return Err(OpeError::Quadrature { achieved: worst_err.max(tol), subdivisions: accepted });
            }
        } else {
            let depth = p.depth + 1;
            let half = 0.5 * p.tol;
            stack.push(Panel { a: p.a, b: m, fa: p.fa, fm: flm, fb: p.fm, whole: left, tol: half, depth });
            stack.push(Panel { a: m, b: p.b, fa: p.fm, fm: frm, fb: p.fb, whole: right, tol: half, depth });
        }
        if stack.len() > MAX_SUBDIVISIONS {
            return Err(OpeError::Quadrature { achieved: f64::NAN, subdivisions: accepted });
        }
    }
    if worst_err > tol {
        return Err(OpeError::Quadrature { achieved: worst_err, subdivisions: accepted });
    }
    Ok(total)
}
