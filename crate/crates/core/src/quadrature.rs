//! Adaptive Gauss–Kronrod (7/15) integration.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("quadrature did not converge: estimate {estimate}, error bound {error} after {evaluations} evaluations")]
    NoConvergence {
        estimate: f64,
        error: f64,
        evaluations: usize,
    },
    #[error("integrand returned a non-finite value at {at}")]
    NonFinite { at: f64 },
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Result<(f64, f64), QuadratureError> {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(centre);
    if !fc.is_finite() {
        return Err(QuadratureError::NonFinite { at: centre });
    }
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, &x) in XGK.iter().enumerate().take(7) {
        let dx = half * x;
        let (l, r) = (f(centre - dx), f(centre + dx));
        if !l.is_finite() || !r.is_finite() {
            return Err(QuadratureError::NonFinite { at: centre + dx });
        }
        kron += WGK[j] * (l + r);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (l + r);
        }
    }
    let est = kron * half;
    let err = ((kron - gauss) * half).abs();
    Ok((est, err))
}

/// Integrates `f` over the finite interval `[a, b]` to within
/// `max(abs_tol, rel_tol * |I|)`.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<f64, QuadratureError> {
    if a == b {
        return Ok(0.0);
    }
    let max_intervals = 2000;
    let (est, err) = kronrod(&mut f, a, b)?;
    let mut pieces = vec![(a, b, est, err)];
    let mut total = est;
    let mut total_err = err;
    let mut evaluations = 15;
    while total_err > abs_tol.max(rel_tol * total.abs()) {
        if pieces.len() >= max_intervals {
            return Err(QuadratureError::NoConvergence {
                estimate: total,
                error: total_err,
                evaluations,
            });
        }
        let (idx, _) = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("nonempty");
        let (lo, hi, e0, r0) = pieces.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        let (e1, r1) = kronrod(&mut f, lo, mid)?;
        let (e2, r2) = kronrod(&mut f, mid, hi)?;
        evaluations += 30;
        total += e1 + e2 - e0;
        total_err += r1 + r2 - r0;
        pieces.push((lo, mid, e1, r1));
        pieces.push((mid, hi, e2, r2));
        if mid <= lo || mid >= hi {
            break;
        }
    }
    // re-sum to shed accumulated rounding from the running updates
    Ok(pieces.iter().map(|p| p.2).sum())
}

/// Integrates over `[a, b]` after splitting at the given interior points.
pub fn integrate_pieces<F: FnMut(f64) -> f64>(
    mut f: F,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
) -> Result<f64, QuadratureError> {
    let mut total = 0.0;
    let per = abs_tol / (breaks.len().max(2) - 1) as f64;
    for w in breaks.windows(2) {
        total += integrate(&mut f, w[0], w[1], per, rel_tol)?;
    }
    Ok(total)
}

/// Integrates over the whole real line via `x = t / (1 - t²)`.
pub fn integrate_real_line<F: FnMut(f64) -> f64>(mut f: F, abs_tol: f64, rel_tol: f64) -> Result<f64, QuadratureError> {
    integrate(
        |t: f64| {
            let d = 1.0 - t * t;
            if d <= 0.0 {
                return 0.0;
            }
            let x = t / d;
            let v = f(x) * (1.0 + t * t) / (d * d);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        -1.0,
        1.0,
        abs_tol,
        rel_tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_and_gaussian() {
        let v = integrate(|x| x * x * x - 2.0 * x, 0.0, 3.0, 1e-13, 0.0).unwrap();
        assert!((v - (81.0 / 4.0 - 9.0)).abs() < 1e-12);
        let g = integrate_real_line(|x| (-0.5 * x * x).exp(), 1e-12, 0.0).unwrap();
        assert!((g - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn kinks_need_subdivision() {
        let v = integrate(|x: f64| (x - 0.3).abs(), 0.0, 1.0, 1e-12, 0.0).unwrap();
        assert!((v - (0.045 + 0.245)).abs() < 1e-11);
    }
}
