//! Error-function family.
//!
//! `erf` and `erfc` come from `libm` (the FreeBSD msun implementation, under
//! one ulp). `erfcx(x) = exp(x²)·erfc(x)` is evaluated here so that products
//! like `exp(a)·erfc(b)` with large `a` can be formed without overflow.

use std::f64::consts::PI;

#[inline]
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

#[inline]
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Below this the direct product is accurate to a few ulp; above it the
/// continued fraction converges in a few dozen terms.
const ERFCX_SWITCH: f64 = 5.0;

/// Scaled complementary error function, `exp(x²)·erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        // erfc(x) = 2 - erfc(-x)
        return 2.0 * (x * x).exp() - erfcx(-x);
    }
    if x < ERFCX_SWITCH {
        return (x * x).exp() * erfc(x);
    }
    if x.is_infinite() {
        return 0.0;
    }
    // Laplace continued fraction: erfc(x) = exp(-x²)/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    // evaluated by modified Lentz.
    let tiny = 1e-300;
    let mut f = x;
    let mut c = f;
    let mut d = 0.0;
    for n in 1..500 {
        let a = 0.5 * f64::from(n);
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        d = 1.0 / d;
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / (PI.sqrt() * f)
}
