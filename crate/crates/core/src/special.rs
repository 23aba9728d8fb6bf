//! Standard normal density, distribution and quantile functions.
//!
//! Everything is evaluated in `f64` and converted at the boundary; the
//! `f32` instantiation only loses precision at the final cast.

use std::f64::consts::{PI, SQRT_2};

use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::scalar::Real;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub(crate) fn pdf64(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub(crate) fn log_pdf64(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

pub(crate) fn cdf64(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Upper tail `1 - Φ(x)` without cancellation.
pub(crate) fn sf64(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// `log Φ(x)`, accurate far into the lower tail.
pub(crate) fn log_cdf64(x: f64) -> f64 {
    if x > -30.0 {
        let c = cdf64(x);
        if c > 0.5 {
            // log(1 - sf) keeps digits in the upper tail
            (-sf64(x)).ln_1p()
        } else {
            c.ln()
        }
    } else {
        // Mills ratio asymptotic series
        let z2 = 1.0 / (x * x);
        let series = 1.0 - z2 + 3.0 * z2 * z2 - 15.0 * z2 * z2 * z2 + 105.0 * z2.powi(4);
        log_pdf64(x) - (-x).ln() + series.ln()
    }
}

pub(crate) fn quantile64(u: f64) -> f64 {
    if u <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if u >= 1.0 {
        return f64::INFINITY;
    }
    let mut x = -SQRT_2 * erfc_inv(2.0 * u);
    // one Halley refinement against the tail-aware cdf
    let (err, dens) = if u < 0.5 {
        (cdf64(x) - u, pdf64(x))
    } else {
        (-(sf64(x) - (1.0 - u)), pdf64(x))
    };
    if dens > 0.0 && err.is_finite() {
        let t = err / dens;
        x -= t / (1.0 + 0.5 * x * t);
    }
    x
}

/// Quantile of the upper tail: returns `x` with `1 - Φ(x) = s`.
pub(crate) fn isf64(s: f64) -> f64 {
    -quantile64(s)
}

#[inline]
pub fn norm_pdf<T: Real>(x: T) -> T {
    T::lit(pdf64(x.as_f64()))
}

#[inline]
pub fn norm_log_pdf<T: Real>(x: T) -> T {
    T::lit(log_pdf64(x.as_f64()))
}

#[inline]
pub fn norm_cdf<T: Real>(x: T) -> T {
    T::lit(cdf64(x.as_f64()))
}

#[inline]
pub fn norm_sf<T: Real>(x: T) -> T {
    T::lit(sf64(x.as_f64()))
}

#[inline]
pub fn norm_log_cdf<T: Real>(x: T) -> T {
    T::lit(log_cdf64(x.as_f64()))
}

/// Inverse of Φ. Returns ±∞ at the closed ends of `[0, 1]`.
#[inline]
pub fn norm_quantile<T: Real>(u: T) -> T {
    T::lit(quantile64(u.as_f64()))
}

/// Probability mass of the standard normal on `[a, b]`, computed on the
/// side of zero that avoids cancellation.
pub(crate) fn interval_mass64(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        sf64(a) - sf64(b)
    } else if b <= 0.0 {
        cdf64(b) - cdf64(a)
    } else {
        1.0 - cdf64(a) - sf64(b)
    }
}

/// `log` of [`interval_mass64`], stable when both ends sit deep in a tail.
pub(crate) fn log_interval_mass64(a: f64, b: f64) -> f64 {
    let m = interval_mass64(a, b);
    if m > 1e-280 {
        return m.ln();
    }
    // deep tail: log Φ(b) + log(1 - exp(log Φ(a) - log Φ(b)))
    let (lo, hi) = if a >= 0.0 { (-b, -a) } else { (a, b) };
    let lb = log_cdf64(hi);
    let la = log_cdf64(lo);
    lb + (-(la - lb).exp()).ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert!((cdf64(0.0) - 0.5).abs() < 1e-16);
        assert!((cdf64(1.5) - 0.933_192_798_731_141_9).abs() < 1e-14);
        assert!((cdf64(4.0) - 0.999_968_328_758_166_9).abs() < 1e-14);
        assert!((pdf64(0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
    }

    #[test]
    fn quantile_inverts_cdf_including_tails() {
        for &u in &[1e-300, 1e-100, 1e-20, 1e-8, 0.01, 0.3, 0.5, 0.77, 0.999, 1.0 - 1e-12] {
            let x = quantile64(u);
            let back = if u < 0.5 { cdf64(x) } else { 1.0 - sf64(x) };
            assert!(((back - u) / u).abs() < 1e-10, "u={u} x={x} back={back}");
        }
    }

    #[test]
    fn log_cdf_is_continuous_across_branch() {
        let a = log_cdf64(-29.999_999);
        let b = log_cdf64(-30.000_001);
        assert!((a - b).abs() < 1e-4);
        assert!(log_cdf64(-200.0).is_finite());
        assert!(log_cdf64(10.0) < 0.0 && log_cdf64(10.0) > -1e-20);
    }

    #[test]
    fn interval_mass_tails() {
        let m = interval_mass64(8.0, 9.0);
        assert!(m > 0.0 && (m - (sf64(8.0) - sf64(9.0))).abs() < 1e-25);
        let lm = log_interval_mass64(-60.0, -50.0);
        assert!(lm.is_finite() && lm < -1000.0);
    }
}
