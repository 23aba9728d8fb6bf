//! Quadratic B-splines on equidistant knots and the second-difference penalty.
//!
//! A basis with `J` functions on `[A, B]` splits the interval into
//! `L = J - 2` cells of width `δ = (B - A) / L`. Basis `j` (0-based) is the
//! uniform quadratic B-spline supported on `[A + (j-2)δ, A + (j+1)δ]`,
//! clipped to `[A, B]`. The two functions at each end therefore lose part of
//! their support and integrate to `δ/6` and `5δ/6`; all others integrate to
//! `δ`. The clipped set is still a partition of unity on `[A, B]`.

use thiserror::Error;

use crate::scalar::Real;

/// Degree of every basis in this crate.
pub const DEGREE: usize = 2;

/// Smallest basis size for which both end corrections and interior pieces occur.
pub const MIN_BASES: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("invalid interval [{lower}, {upper}]: upper bound must exceed lower bound")]
    InvalidInterval { lower: f64, upper: f64 },
    #[error("a quadratic basis needs at least {min} functions, got {got}")]
    TooFewBases { got: usize, min: usize },
    #[error("point {x} lies outside [{lower}, {upper}]")]
    OutOfRange { x: f64, lower: f64, upper: f64 },
    #[error("coefficient vector has length {got}, basis has {expected} functions")]
    LengthMismatch { got: usize, expected: usize },
}

/// Quadratic B-spline basis on `[A, B]` with equidistant interior knots.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis<T: Real = f64> {
    lower: T,
    upper: T,
    num_bases: usize,
    delta: T,
    knots: Vec<T>,
    areas: Vec<T>,
}

impl<T: Real> SplineBasis<T> {
    pub fn new(lower: T, upper: T, num_bases: usize) -> Result<Self, SplineError> {
        if !(upper > lower) || !lower.is_finite() || !upper.is_finite() {
            return Err(SplineError::InvalidInterval {
                lower: lower.as_f64(),
                upper: upper.as_f64(),
            });
        }
        if num_bases < MIN_BASES {
            return Err(SplineError::TooFewBases {
                got: num_bases,
                min: MIN_BASES,
            });
        }
        let cells = num_bases - DEGREE;
        let delta = (upper - lower) / T::lit(cells as f64);

        let mut knots = Vec::with_capacity(2 * DEGREE + cells + 1);
        knots.extend(std::iter::repeat_n(lower, DEGREE));
        for i in 0..=cells {
            knots.push(if i == cells {
                upper
            } else {
                lower + delta * T::lit(i as f64)
            });
        }
        knots.extend(std::iter::repeat_n(upper, DEGREE));

        let sixth = delta / T::lit(6.0);
        let areas = (0..num_bases)
            .map(|j| {
                if j == 0 || j == num_bases - 1 {
                    sixth
                } else if j == 1 || j == num_bases - 2 {
                    sixth * T::lit(5.0)
                } else {
                    delta
                }
            })
            .collect();

        Ok(Self {
            lower,
            upper,
            num_bases,
            delta,
            knots,
            areas,
        })
    }

    pub fn lower(&self) -> T {
        self.lower
    }

    pub fn upper(&self) -> T {
        self.upper
    }

    pub fn num_bases(&self) -> usize {
        self.num_bases
    }

    /// Interior knot spacing `δ`.
    pub fn delta(&self) -> T {
        self.delta
    }

    /// Full knot vector with each boundary knot repeated `DEGREE + 1` times.
    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    /// `∫_A^B b_j(x) dx` for every basis function.
    pub fn areas(&self) -> &[T] {
        &self.areas
    }

    pub fn contains(&self, x: T) -> bool {
        x >= self.lower && x <= self.upper
    }

    /// Cell index and local coordinate in `[0, 1]`. The last cell is closed at `B`.
    #[inline]
    fn locate(&self, x: T) -> (usize, T) {
        let cells = self.num_bases - DEGREE;
        let u = (x - self.lower) / self.delta;
        let mut cell = u.floor().to_usize().unwrap_or(0);
        if cell >= cells {
            cell = cells - 1;
        }
        let v = u - T::lit(cell as f64);
        (cell, v.max(T::zero()).min(T::one()))
    }

    /// The (at most) three nonzero basis values at `x`: returns the index of
    /// the first one and the three values. No range check.
    #[inline]
    pub fn eval_local(&self, x: T) -> (usize, [T; 3]) {
        let (cell, v) = self.locate(x);
        let half = T::lit(0.5);
        let w = T::one() - v;
        (cell, [half * w * w, half + v * w, half * v * v])
    }

    /// Evaluates all `J` basis functions at `x ∈ [A, B]`.
    pub fn eval(&self, x: T) -> Result<Vec<T>, SplineError> {
        self.check(x)?;
        let mut out = vec![T::zero(); self.num_bases];
        let (first, vals) = self.eval_local(x);
        out[first..first + 3].copy_from_slice(&vals);
        Ok(out)
    }

    /// `Σ_j b_j(x) c_j` with `x` clamped into `[A, B]`.
    #[inline]
    pub fn combine_clamped(&self, x: T, coefs: &[T]) -> T {
        let x = x.max(self.lower).min(self.upper);
        let (first, vals) = self.eval_local(x);
        vals[0] * coefs[first] + vals[1] * coefs[first + 1] + vals[2] * coefs[first + 2]
    }

    /// `∫_A^x b_j(t) dt` for every `j`, `x` clamped into `[A, B]`.
    pub fn integrals(&self, x: T) -> Vec<T> {
        let x = x.max(self.lower).min(self.upper);
        (0..self.num_bases)
            .map(|j| self.cumulative(j, x) - self.cumulative(j, self.lower))
            .collect()
    }

    /// Antiderivative of the unclipped uniform B-spline `j`, zero left of its support.
    fn cumulative(&self, j: usize, y: T) -> T {
        let start = self.lower + self.delta * T::lit(j as f64 - 2.0);
        let u = (y - start) / self.delta;
        let sixth = T::lit(1.0 / 6.0);
        let third = T::lit(1.0 / 3.0);
        let half = T::lit(0.5);
        let value = if u <= T::zero() {
            T::zero()
        } else if u < T::one() {
            u * u * u * sixth
        } else if u < T::lit(2.0) {
            let w = u - T::one();
            sixth + w * (half + w * (half - w * third))
        } else if u < T::lit(3.0) {
            let w = T::lit(3.0) - u;
            T::one() - w * w * w * sixth
        } else {
            T::one()
        };
        value * self.delta
    }

    fn check(&self, x: T) -> Result<(), SplineError> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(SplineError::OutOfRange {
                x: x.as_f64(),
                lower: self.lower.as_f64(),
                upper: self.upper.as_f64(),
            })
        }
    }
}

/// `P = DᵀD` where `D` is the `(J-2) × J` second-difference operator.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix<T: Real = f64> {
    dim: usize,
    entries: Vec<T>,
}

impl<T: Real> PenaltyMatrix<T> {
    pub fn new(dim: usize) -> Result<Self, SplineError> {
        if dim < 3 {
            return Err(SplineError::TooFewBases { got: dim, min: 3 });
        }
        let mut entries = vec![T::zero(); dim * dim];
        let stencil = [T::one(), T::lit(-2.0), T::one()];
        for row in 0..dim - 2 {
            for (a, &sa) in stencil.iter().enumerate() {
                for (b, &sb) in stencil.iter().enumerate() {
                    entries[(row + a) * dim + row + b] += sa * sb;
                }
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Rank of `P`; its null space is spanned by constant and linear sequences.
    pub fn rank(&self) -> usize {
        self.dim - 2
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[i * self.dim + j]
    }

    /// `xᵀPx`, computed as the sum of squared second differences.
    pub fn quad_form(&self, x: &[T]) -> T {
        debug_assert_eq!(x.len(), self.dim);
        x.windows(3)
            .map(|w| {
                let d = w[0] - T::lit(2.0) * w[1] + w[2];
                d * d
            })
            .sum()
    }

    /// `P x`.
    pub fn apply(&self, x: &[T]) -> Vec<T> {
        (0..self.dim)
            .map(|i| {
                let row = &self.entries[i * self.dim..(i + 1) * self.dim];
                row.iter().zip(x).map(|(&a, &b)| a * b).sum()
            })
            .collect()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.entries
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(a: f64, b: f64, j: usize) -> SplineBasis<f64> {
        SplineBasis::new(a, b, j).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(matches!(
            SplineBasis::new(1.0, 1.0, 8),
            Err(SplineError::InvalidInterval { .. })
        ));
        assert!(matches!(
            SplineBasis::new(0.0, 1.0, 4),
            Err(SplineError::TooFewBases { got: 4, .. })
        ));
        assert!(PenaltyMatrix::<f64>::new(2).is_err());
    }

    #[test]
    fn areas_on_default_grid() {
        let b = basis(0.0, 10.0, 12);
        assert!((b.delta() - 1.0).abs() < 1e-15);
        let expect = [
            1.0 / 6.0,
            5.0 / 6.0,
            1.0,
            1.0,
            1.0,
            1.0,
            1.0,
            1.0,
            1.0,
            1.0,
            5.0 / 6.0,
            1.0 / 6.0,
        ];
        for (a, e) in b.areas().iter().zip(expect) {
            assert!((a - e).abs() < 1e-15);
        }
        let total: f64 = b.areas().iter().sum();
        assert!((total - 10.0).abs() < 1e-12);
    }

    #[test]
    fn knot_vector_layout() {
        let b = basis(0.0, 6.0, 8);
        let k = b.knots();
        assert_eq!(k.len(), 2 * DEGREE + (8 - DEGREE) + 1);
        assert_eq!(&k[..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&k[k.len() - 3..], &[6.0, 6.0, 6.0]);
        assert!(k.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn middle_piece_peak() {
        // basis 3 has its middle piece on [2, 3]; evaluate at the centre
        let b = basis(0.0, 6.0, 8);
        let v = b.eval(2.5).unwrap();
        assert!((v[3] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn endpoint_values() {
        let b = basis(0.0, 10.0, 12);
        let at_a = b.eval(0.0).unwrap();
        assert_eq!(at_a[0], 0.5);
        assert_eq!(at_a[1], 0.5);
        assert!(at_a[2..].iter().all(|&v| v == 0.0));
        let at_b = b.eval(10.0).unwrap();
        assert_eq!(at_b[11], 0.5);
        assert_eq!(at_b[10], 0.5);
        assert!(at_b[..10].iter().all(|&v| v == 0.0));
        assert!(b.eval(10.000_1).is_err());
        assert!(b.eval(-1e-9).is_err());
    }

    #[test]
    fn partition_of_unity_on_fine_grid() {
        let b = basis(-1.5, 4.0, 9);
        for i in 0..1000 {
            let x = -1.5 + 5.5 * i as f64 / 999.0;
            let v = b.eval(x).unwrap();
            assert!(v.iter().all(|&e| e >= 0.0));
            assert!(v.iter().filter(|&&e| e != 0.0).count() <= 3);
            let s: f64 = v.iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn quadrature_matches_areas_and_integrals() {
        // composite Simpson per cell is exact for piecewise quadratics
        let b = basis(0.0, 10.0, 12);
        let cells = 10;
        let mut quad = [0.0; 12];
        for c in 0..cells {
            let lo = c as f64;
            let pts = [lo + 1e-13, lo + 0.5, lo + 1.0 - 1e-13];
            let w = [1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0];
            for (x, wt) in pts.iter().zip(w) {
                for (q, v) in quad.iter_mut().zip(b.eval(*x).unwrap()) {
                    *q += wt * v;
                }
            }
        }
        for (q, a) in quad.iter().zip(b.areas()) {
            assert!((q - a).abs() < 1e-10);
        }
        let full = b.integrals(10.0);
        for (f, a) in full.iter().zip(b.areas()) {
            assert!((f - a).abs() < 1e-12);
        }
        assert!(b.integrals(0.0).iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn penalty_examples() {
        let p = PenaltyMatrix::<f64>::new(4).unwrap();
        // only two difference rows touch the third coefficient when J = 4
        assert_eq!(p.quad_form(&[0.0, 0.0, 1.0, 0.0]), 5.0);
        let p5 = PenaltyMatrix::<f64>::new(5).unwrap();
        assert_eq!(p5.quad_form(&[0.0, 0.0, 1.0, 0.0, 0.0]), 6.0);
        let p = PenaltyMatrix::<f64>::new(12).unwrap();
        assert_eq!(p.rank(), 10);
        assert_eq!(p.quad_form(&[3.3; 12]), 0.0);
        let lin: Vec<f64> = (0..12).map(|i| i as f64).collect();
        assert_eq!(p.quad_form(&lin), 0.0);
        // dense form agrees with the difference form
        let x: Vec<f64> = (0..12).map(|i| ((i * 7 % 5) as f64).sin()).collect();
        let px = p.apply(&x);
        let dense: f64 = px.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((dense - p.quad_form(&x)).abs() < 1e-12);
        for i in 0..12 {
            for j in 0..12 {
                assert_eq!(p.get(i, j), p.get(j, i));
            }
        }
    }

    #[test]
    fn penalty_is_psd() {
        use nalgebra::DMatrix;
        let p = PenaltyMatrix::<f64>::new(12).unwrap();
        let m = DMatrix::from_row_slice(12, 12, p.as_slice());
        let eig = m.symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&e| e >= -1e-10));
        assert_eq!(eig.eigenvalues.iter().filter(|&&e| e.abs() < 1e-10).count(), 2);
    }

    #[test]
    fn works_in_single_precision() {
        let b = SplineBasis::<f32>::new(0.0, 10.0, 12).unwrap();
        let s: f32 = b.eval(3.3).unwrap().iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}
