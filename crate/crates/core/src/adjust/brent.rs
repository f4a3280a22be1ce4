//! Brent's derivative-free scalar minimizer (parabolic interpolation with a
//! golden-section fallback), after Forsythe, Malcolm & Moler's `fmin`.

use crate::error::{Error, Result};

/// (3 - sqrt(5)) / 2
const GOLDEN: f64 = 0.381_966_011_250_105_1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrentResult {
    pub x: f64,
    pub fx: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Minimizes `f` on `[lo, hi]`. The objective is never evaluated outside the
/// bracket, and at most `max_iters` iterations are performed.
pub fn brent_minimize<F>(mut f: F, lo: f64, hi: f64, tol: f64, max_iters: usize) -> Result<BrentResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::arg(format!("invalid bracket [{lo}, {hi}]")));
    }
    if !(tol > 0.0) {
        return Err(Error::arg(format!("tolerance {tol} must be positive")));
    }
    let mut eval = |x: f64, n: &mut usize| -> Result<f64> {
        *n += 1;
        let v = f(x)?;
        if !v.is_finite() {
            return Err(Error::NonFinite { x, value: v });
        }
        Ok(v)
    };
    let sqrt_eps = f64::EPSILON.sqrt();
    let mut evaluations = 0;

    let (mut a, mut b) = (lo, hi);
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = eval(x, &mut evaluations)?;
    let (mut fw, mut fv) = (fx, fx);
    // d: current step, e: step before last
    let (mut d, mut e) = (0.0f64, 0.0f64);

    let mut iterations = 0;
    while iterations < max_iters {
        let mid = 0.5 * (a + b);
        let tol1 = sqrt_eps * x.abs() + tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - mid).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        iterations += 1;

        let mut golden = true;
        if e.abs() > tol1 {
            // parabola through (x, fx), (w, fw), (v, fv)
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            } else {
                q = -q;
            }
            let e_prev = e;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < mid { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < mid { b - x } else { a - x };
            d = GOLDEN * e;
        }

        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let u = u.clamp(lo, hi);
        let fu = eval(u, &mut evaluations)?;

        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Ok(BrentResult {
        x,
        fx,
        iterations,
        evaluations,
    })
}
