//! Correlation matrices in spherical Cholesky coordinates and the Gaussian
//! copula built on them.
//!
//! Row ℓ of the lower-triangular factor `V` (1-based) is a unit vector:
//! row 1 is `e₁`, row 2 is `(b₁, √(1-b₁²))`, and for ℓ ≥ 3 the first ℓ-1
//! entries are `b_{ℓ-1}` times a point on the sphere described by the angles
//! `θ_{i₁(ℓ)} … θ_{i₂(ℓ)}`, with `v_{ℓℓ} = √(1-b_{ℓ-1}²)`.

use std::f64::consts::PI;

use rand::Rng;
use thiserror::Error;

use crate::densities::{normal_score, DensityError, Univariate};
use crate::linalg::{backward_solve_transposed, cholesky, forward_solve, inverse_from_cholesky, lower_mul};
use crate::scalar::Real;
use crate::special::norm_cdf;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CopulaError {
    #[error("{name}[{index}] = {value} violates its bound")]
    Bound {
        name: &'static str,
        index: usize,
        value: f64,
    },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("diagonal entry {index} is {value}, expected 1")]
    NonUnitDiagonal { index: usize, value: f64 },
    #[error("coordinate {index} sits on the support boundary; its normal score is infinite")]
    BoundaryScore { index: usize },
    #[error(transparent)]
    Density(#[from] DensityError),
}

/// First θ index (1-based) used by row ℓ ≥ 3.
pub fn theta_start(row: usize) -> usize {
    (row * row + 8 - 5 * row) / 2
}

/// Last θ index (1-based) used by row ℓ ≥ 3; also the θ count for dimension ℓ.
pub fn theta_end(row: usize) -> usize {
    (row * row + 2 - 3 * row) / 2
}

/// Number of angles for dimension `d`.
pub fn theta_len(d: usize) -> usize {
    if d < 3 {
        0
    } else {
        theta_end(d)
    }
}

/// Correlation matrix together with its spherical parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalCorrelation<T: Real = f64> {
    dim: usize,
    b: Vec<T>,
    theta: Vec<T>,
    v: Vec<T>,
    r: Vec<T>,
}

impl<T: Real> SphericalCorrelation<T> {
    /// Builds `R = V Vᵀ` from `b` (length D-1, |b| < 1) and `θ`
    /// (length (D-1)(D-2)/2, |θ| ≤ π).
    pub fn new(b: Vec<T>, theta: Vec<T>) -> Result<Self, CopulaError> {
        let dim = b.len() + 1;
        if theta.len() != theta_len(dim) {
            return Err(CopulaError::LengthMismatch(format!(
                "dimension {dim} needs {} angles, got {}",
                theta_len(dim),
                theta.len()
            )));
        }
        for (i, &v) in b.iter().enumerate() {
            if !(v.abs() < T::one()) {
                return Err(CopulaError::Bound {
                    name: "b",
                    index: i,
                    value: v.as_f64(),
                });
            }
        }
        let pi = T::lit(PI);
        for (i, &v) in theta.iter().enumerate() {
            if !(v.abs() <= pi) {
                return Err(CopulaError::Bound {
                    name: "theta",
                    index: i,
                    value: v.as_f64(),
                });
            }
        }
        let v = build_factor(dim, &b, &theta);
        let mut r = vec![T::zero(); dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                let s: T = (0..=j).map(|k| v[i * dim + k] * v[j * dim + k]).sum();
                let s = if i == j { T::one() } else { s };
                r[i * dim + j] = s;
                r[j * dim + i] = s;
            }
        }
        Ok(Self { dim, b, theta, v, r })
    }

    /// Identity correlation of dimension `dim`.
    pub fn identity(dim: usize) -> Self {
        assert!(dim >= 1);
        Self::new(vec![T::zero(); dim - 1], vec![T::zero(); theta_len(dim)]).expect("zero parameters are valid")
    }

    /// Recovers spherical parameters reproducing `r` (row-major `D×D`).
    ///
    /// Each angle except the last of a row lies in `[-π/2, π/2]`; the last is
    /// folded into `(-π/2, π/2]` by flipping the sign of `b`.
    pub fn from_matrix(r: &[T], dim: usize) -> Result<Self, CopulaError> {
        if r.len() != dim * dim || dim == 0 {
            return Err(CopulaError::LengthMismatch(format!(
                "{} entries for dimension {dim}",
                r.len()
            )));
        }
        let tol = T::lit(1e-10).max(T::epsilon() * T::lit(64.0));
        for i in 0..dim {
            let d = r[i * dim + i];
            if (d - T::one()).abs() > tol {
                return Err(CopulaError::NonUnitDiagonal {
                    index: i,
                    value: d.as_f64(),
                });
            }
            for j in 0..i {
                if (r[i * dim + j] - r[j * dim + i]).abs() > tol {
                    return Err(CopulaError::NotPositiveDefinite);
                }
            }
        }
        let l = cholesky(r, dim).ok_or(CopulaError::NotPositiveDefinite)?;
        let half_pi = T::lit(PI / 2.0);
        let pi = T::lit(PI);
        let mut b = vec![T::zero(); dim.saturating_sub(1)];
        let mut theta = vec![T::zero(); theta_len(dim)];
        for row in 2..=dim {
            let i = row - 1;
            // renormalize the row to shed Cholesky rounding
            let norm: T = (0..row).map(|k| l[i * dim + k] * l[i * dim + k]).sum::<T>().sqrt();
            let entries: Vec<T> = (0..row).map(|k| l[i * dim + k] / norm).collect();
            let diag = entries[i].min(T::one());
            let mut bv = (T::one() - diag * diag).max(T::zero()).sqrt();
            if row == 2 {
                b[0] = entries[0];
                continue;
            }
            let start = theta_start(row) - 1;
            let count = row - 2;
            let mut angles = vec![T::zero(); count];
            if bv > T::zero() {
                let u: Vec<T> = entries[..row - 1].iter().map(|&e| e / bv).collect();
                for k in 0..count {
                    let rest: T = u[k + 1..].iter().map(|&e| e * e).sum::<T>().sqrt();
                    angles[k] = if k + 1 == count {
                        u[k].atan2(u[k + 1])
                    } else {
                        u[k].atan2(rest)
                    };
                }
                let last = angles[count - 1];
                if last.abs() > half_pi {
                    bv = -bv;
                    for a in angles[..count - 1].iter_mut() {
                        *a = -*a;
                    }
                    angles[count - 1] = if last > T::zero() { last - pi } else { last + pi };
                }
            }
            b[row - 2] = bv;
            theta[start..start + count].copy_from_slice(&angles);
        }
        Self::new(b, theta)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn b(&self) -> &[T] {
        &self.b
    }
    pub fn theta(&self) -> &[T] {
        &self.theta
    }
    /// Lower-triangular factor, row-major.
    pub fn factor(&self) -> &[T] {
        &self.v
    }
    /// Correlation matrix, row-major.
    pub fn matrix(&self) -> &[T] {
        &self.r
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.r[i * self.dim + j]
    }

    /// `Π (1 - b_t²)`.
    pub fn determinant(&self) -> T {
        self.b.iter().map(|&b| T::one() - b * b).fold(T::one(), |a, v| a * v)
    }

    pub fn log_determinant(&self) -> T {
        self.b.iter().map(|&b| (-b * b).ln_1p()).sum()
    }

    pub fn inverse(&self) -> Vec<T> {
        inverse_from_cholesky(&self.v, self.dim)
    }

    /// `yᵀ R⁻¹ y`.
    pub fn mahalanobis(&self, y: &[T]) -> T {
        let mut z = y.to_vec();
        forward_solve(&self.v, self.dim, &mut z);
        z.iter().map(|&v| v * v).sum()
    }

    /// `R⁻¹ y`.
    pub fn solve(&self, y: &[T]) -> Vec<T> {
        let mut z = y.to_vec();
        forward_solve(&self.v, self.dim, &mut z);
        backward_solve_transposed(&self.v, self.dim, &mut z);
        z
    }

    /// Log density of `MVN(0, R)` at `y`.
    pub fn normal_ln_pdf(&self, y: &[T]) -> T {
        let d = T::lit(self.dim as f64);
        -T::lit(0.5) * (self.mahalanobis(y) + self.log_determinant() + d * T::lit((2.0 * PI).ln()))
    }

    /// Sum of `MVN(0, R)` log densities over `n` vectors whose scatter matrix
    /// `Σ y yᵀ` is `scatter`.
    pub fn scatter_ln_likelihood(&self, scatter: &[T], n: usize) -> T {
        let inv = self.inverse();
        let trace: T = inv.iter().zip(scatter).map(|(&a, &s)| a * s).sum();
        let d = T::lit(self.dim as f64);
        let n = T::lit(n as f64);
        -T::lit(0.5) * (trace + n * (self.log_determinant() + d * T::lit((2.0 * PI).ln())))
    }

    /// Draws one vector from `MVN(0, R)`.
    pub fn sample_scores<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let e: Vec<T> = (0..self.dim)
            .map(|_| T::lit(rng.sample::<f64, _>(rand_distr::StandardNormal)))
            .collect();
        lower_mul(&self.v, self.dim, &e)
    }
}

fn build_factor<T: Real>(dim: usize, b: &[T], theta: &[T]) -> Vec<T> {
    let mut v = vec![T::zero(); dim * dim];
    v[0] = T::one();
    for row in 2..=dim {
        let i = row - 1;
        let bv = b[row - 2];
        let diag = (T::one() - bv * bv).sqrt();
        if row == 2 {
            v[i * dim] = bv;
        } else {
            let start = theta_start(row) - 1;
            let angles = &theta[start..start + row - 2];
            let mut prod = bv;
            for (k, &a) in angles.iter().enumerate() {
                v[i * dim + k] = prod * a.sin();
                prod *= a.cos();
            }
            v[i * dim + row - 2] = prod;
        }
        v[i * dim + i] = diag;
        let norm: T = (0..row).map(|k| v[i * dim + k] * v[i * dim + k]).sum::<T>().sqrt();
        for k in 0..row {
            v[i * dim + k] /= norm;
        }
    }
    v
}

/// Gaussian copula with arbitrary continuous marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCopula<T: Real, M> {
    correlation: SphericalCorrelation<T>,
    marginals: Vec<M>,
}

impl<T: Real, M: Univariate<T>> GaussianCopula<T, M> {
    pub fn new(correlation: SphericalCorrelation<T>, marginals: Vec<M>) -> Result<Self, CopulaError> {
        if marginals.len() != correlation.dim() {
            return Err(CopulaError::LengthMismatch(format!(
                "{} marginals for dimension {}",
                marginals.len(),
                correlation.dim()
            )));
        }
        Ok(Self { correlation, marginals })
    }

    pub fn correlation(&self) -> &SphericalCorrelation<T> {
        &self.correlation
    }

    pub fn marginals(&self) -> &[M] {
        &self.marginals
    }

    /// Normal scores `Φ⁻¹(F_ℓ(x_ℓ))`.
    pub fn normal_scores(&self, x: &[T]) -> Result<Vec<T>, CopulaError> {
        if x.len() != self.marginals.len() {
            return Err(CopulaError::LengthMismatch(format!(
                "point of length {} for dimension {}",
                x.len(),
                self.marginals.len()
            )));
        }
        x.iter()
            .zip(&self.marginals)
            .enumerate()
            .map(|(i, (&xi, m))| {
                let y = normal_score(m.cdf(xi).as_f64(), m.sf(xi).as_f64());
                if y.is_finite() {
                    Ok(T::lit(y))
                } else {
                    Err(CopulaError::BoundaryScore { index: i })
                }
            })
            .collect()
    }

    /// Log of the copula factor `|R|^{-1/2} exp{-½ yᵀ(R⁻¹ - I)y}` alone.
    pub fn ln_copula_factor(&self, x: &[T]) -> Result<T, CopulaError> {
        let y = self.normal_scores(x)?;
        Ok(copula_factor_from_scores(&self.correlation, &y))
    }

    /// Log joint density: copula factor plus the marginal log densities.
    pub fn ln_pdf(&self, x: &[T]) -> Result<T, CopulaError> {
        let factor = self.ln_copula_factor(x)?;
        let marg: T = x
            .iter()
            .zip(&self.marginals)
            .enumerate()
            .map(|(i, (&xi, m))| {
                let (lo, hi) = m.support();
                if xi <= lo || xi >= hi {
                    Err(CopulaError::BoundaryScore { index: i })
                } else {
                    Ok(m.ln_pdf(xi))
                }
            })
            .sum::<Result<T, _>>()?;
        Ok(factor + marg)
    }

    /// `n` joint draws, one row per draw.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Vec<T>>, CopulaError> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let y = self.correlation.sample_scores(rng);
            let row = y
                .iter()
                .zip(&self.marginals)
                .map(|(&yi, m)| {
                    let u = norm_cdf(yi);
                    let u = u.max(T::min_positive_value()).min(T::one() - T::epsilon());
                    m.quantile(u)
                })
                .collect::<Result<Vec<T>, _>>()?;
            out.push(row);
        }
        Ok(out)
    }
}

/// `-½ log|R| - ½ yᵀ(R⁻¹ - I)y` for given normal scores.
pub fn copula_factor_from_scores<T: Real>(r: &SphericalCorrelation<T>, y: &[T]) -> T {
    let yy: T = y.iter().map(|&v| v * v).sum();
    -T::lit(0.5) * (r.log_determinant() + r.mahalanobis(y) - yy)
}
