//! Univariate kernels and mixtures.
//!
//! Every family implements [`Univariate`]: density, distribution function,
//! quantile and sampling. Quantiles of mixtures have no closed form and are
//! solved by a safeguarded Newton/bisection on the distribution function.

use rand::Rng;
use thiserror::Error;

use crate::scalar::Real;
use crate::special::{
    cdf64, interval_mass64, isf64, log_cdf64, log_interval_mass64, log_pdf64, pdf64, quantile64, sf64,
};
use crate::splines::SplineBasis;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DensityError {
    #[error("probability {0} outside the open unit interval")]
    ProbabilityOutOfRange(f64),
    #[error("point {x} outside the support [{lower}, {upper}]")]
    OutsideSupport { x: f64, lower: f64, upper: f64 },
    #[error("mixture weights must be nonnegative and sum to one (sum = {0})")]
    BadWeights(f64),
    #[error("parameter `{name}` is invalid: {value}")]
    BadParameter { name: &'static str, value: f64 },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
}

/// Common interface of the univariate families.
pub trait Univariate<T: Real> {
    /// Density; zero outside the support.
    fn pdf(&self, x: T) -> T;

    fn ln_pdf(&self, x: T) -> T {
        self.pdf(x).ln()
    }

    /// Distribution function, clamped to `[0, 1]`.
    fn cdf(&self, x: T) -> T;

    /// Survival function `1 - F(x)`; overridden where the upper tail can be
    /// computed without cancellation.
    fn sf(&self, x: T) -> T {
        T::one() - self.cdf(x)
    }

    /// Closed support; infinite ends for unbounded families.
    fn support(&self) -> (T, T);

    /// Density with a range check.
    fn density(&self, x: T) -> Result<T, DensityError> {
        let (lo, hi) = self.support();
        if x < lo || x > hi || x.is_nan() {
            return Err(DensityError::OutsideSupport {
                x: x.as_f64(),
                lower: lo.as_f64(),
                upper: hi.as_f64(),
            });
        }
        Ok(self.pdf(x))
    }

    fn quantile(&self, u: T) -> Result<T, DensityError> {
        check_probability(u)?;
        Ok(solve_quantile(self, u))
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let u = open_uniform(rng);
        solve_quantile(self, T::lit(u))
    }
}

pub(crate) fn check_probability<T: Real>(u: T) -> Result<(), DensityError> {
    if u > T::zero() && u < T::one() {
        Ok(())
    } else {
        Err(DensityError::ProbabilityOutOfRange(u.as_f64()))
    }
}

/// Uniform draw on the open interval `(0, 1)`.
pub fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Inverts a continuous distribution function on its support. Brackets are
/// grown geometrically for unbounded supports, then refined by Newton steps
/// that fall back to bisection whenever they leave the bracket.
fn solve_quantile<T: Real, D: Univariate<T> + ?Sized>(dist: &D, u: T) -> T {
    let (lo_s, hi_s) = dist.support();
    let u = u.as_f64();
    let cdf = |x: f64| dist.cdf(T::lit(x)).as_f64();
    let pdf = |x: f64| dist.pdf(T::lit(x)).as_f64();

    let mut lo = lo_s.as_f64();
    let mut hi = hi_s.as_f64();
    if !lo.is_finite() {
        let mut step = 1.0;
        lo = if hi.is_finite() { hi.min(0.0) - 1.0 } else { -1.0 };
        while cdf(lo) > u {
            lo -= step;
            step *= 2.0;
        }
    }
    if !hi.is_finite() {
        let mut step = 1.0;
        hi = lo.max(0.0) + 1.0;
        while cdf(hi) < u {
            hi += step;
            step *= 2.0;
        }
    }

    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = cdf(x) - u;
        if f.abs() <= 1e-15 {
            break;
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = pdf(x);
        let newton = x - f / d;
        x = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-14 * (1.0 + x.abs()) {
            break;
        }
    }
    T::lit(x)
}

fn check_weights<T: Real>(w: &[T]) -> Result<(), DensityError> {
    let s: T = w.iter().copied().sum();
    if w.iter().any(|&v| v < T::zero() || !v.is_finite())
        || (s - T::one()).abs() > T::lit(1e-9).max(T::epsilon() * T::lit(64.0))
    {
        return Err(DensityError::BadWeights(s.as_f64()));
    }
    Ok(())
}

fn check_positive<T: Real>(name: &'static str, v: T) -> Result<(), DensityError> {
    if v > T::zero() && v.is_finite() {
        Ok(())
    } else {
        Err(DensityError::BadParameter {
            name,
            value: v.as_f64(),
        })
    }
}

// ---------------------------------------------------------------------------
// Normal and truncated normal building blocks (f64 for the sampler hot paths)
// ---------------------------------------------------------------------------

/// Normal log density.
#[inline]
pub fn normal_ln_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let z = (x - mean) / var.sqrt();
    log_pdf64(z) - 0.5 * var.ln()
}

/// Log density of `TN(mean, var, [lower, upper])` at `x` (−∞ outside).
#[inline]
pub fn trunc_normal_ln_pdf(x: f64, mean: f64, var: f64, lower: f64, upper: f64) -> f64 {
    if x < lower || x > upper {
        return f64::NEG_INFINITY;
    }
    let sd = var.sqrt();
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;
    log_pdf64((x - mean) / sd) - sd.ln() - log_interval_mass64(a, b)
}

/// Distribution function of `TN(mean, var, [lower, upper])`.
#[inline]
pub fn trunc_normal_cdf(x: f64, mean: f64, var: f64, lower: f64, upper: f64) -> f64 {
    if x <= lower {
        return 0.0;
    }
    if x >= upper {
        return 1.0;
    }
    let sd = var.sqrt();
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;
    let z = (x - mean) / sd;
    let total = interval_mass64(a, b);
    if total > 1e-280 {
        (interval_mass64(a, z) / total).clamp(0.0, 1.0)
    } else {
        let lt = log_interval_mass64(a, b);
        (log_interval_mass64(a, z) - lt).exp().clamp(0.0, 1.0)
    }
}

/// Survival function of `TN(mean, var, [lower, upper])`.
#[inline]
pub fn trunc_normal_sf(x: f64, mean: f64, var: f64, lower: f64, upper: f64) -> f64 {
    if x <= lower {
        return 1.0;
    }
    if x >= upper {
        return 0.0;
    }
    let sd = var.sqrt();
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;
    let z = (x - mean) / sd;
    (log_interval_mass64(z, b) - log_interval_mass64(a, b))
        .exp()
        .clamp(0.0, 1.0)
}

/// Draws from the standard normal restricted to `[a, b]`.
pub fn sample_std_trunc_normal<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    debug_assert!(a <= b);
    if a == b {
        return a;
    }
    if a >= 0.0 {
        return -lower_side_draw(rng, -b, -a);
    }
    if b <= 0.0 {
        return lower_side_draw(rng, a, b);
    }
    // straddles zero: plain inverse cdf is well conditioned
    let pa = cdf64(a);
    let pb = cdf64(b);
    let u = pa + open_uniform(rng) * (pb - pa);
    quantile64(u).clamp(a, b)
}

/// Draw on `[a, b]` with `a < b ≤ 0`.
fn lower_side_draw<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let pb = cdf64(b);
    if pb > 1e-250 {
        let pa = cdf64(a);
        let u = pa + open_uniform(rng) * (pb - pa);
        return quantile64(u).clamp(a, b);
    }
    // deep tail: mirror to [-b, -a] and use exponential/uniform rejection
    let lo = -b;
    let hi = -a;
    let width = hi - lo;
    if width < 1.0 / lo {
        loop {
            let z = lo + open_uniform(rng) * width;
            if open_uniform(rng).ln() <= -0.5 * (z * z - lo * lo) {
                return -z;
            }
        }
    }
    let alpha = 0.5 * (lo + (lo * lo + 4.0).sqrt());
    loop {
        let z = lo - open_uniform(rng).ln() / alpha;
        if z > hi {
            continue;
        }
        if open_uniform(rng).ln() <= -0.5 * (z - alpha) * (z - alpha) {
            return -z;
        }
    }
}

/// Draws from `TN(mean, sd², [lower, upper])`; either bound may be infinite.
pub fn sample_trunc_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64, lower: f64, upper: f64) -> f64 {
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;
    (mean + sd * sample_std_trunc_normal(rng, a, b)).clamp(lower, upper)
}

// ---------------------------------------------------------------------------
// Families
// ---------------------------------------------------------------------------

/// Normal distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian<T: Real = f64> {
    pub mean: T,
    pub sd: T,
}

impl<T: Real> Gaussian<T> {
    pub fn new(mean: T, sd: T) -> Result<Self, DensityError> {
        check_positive("sd", sd)?;
        Ok(Self { mean, sd })
    }

    pub fn standard() -> Self {
        Self {
            mean: T::zero(),
            sd: T::one(),
        }
    }
}

impl<T: Real> Univariate<T> for Gaussian<T> {
    fn pdf(&self, x: T) -> T {
        T::lit(pdf64(((x - self.mean) / self.sd).as_f64())) / self.sd
    }
    fn ln_pdf(&self, x: T) -> T {
        T::lit(log_pdf64(((x - self.mean) / self.sd).as_f64())) - self.sd.ln()
    }
    fn cdf(&self, x: T) -> T {
        T::lit(cdf64(((x - self.mean) / self.sd).as_f64()))
    }
    fn sf(&self, x: T) -> T {
        T::lit(sf64(((x - self.mean) / self.sd).as_f64()))
    }
    fn support(&self) -> (T, T) {
        (T::neg_infinity(), T::infinity())
    }
    fn quantile(&self, u: T) -> Result<T, DensityError> {
        check_probability(u)?;
        Ok(self.mean + self.sd * T::lit(quantile64(u.as_f64())))
    }
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        self.mean + self.sd * T::lit(z)
    }
}

/// Log-normal distribution with log-scale mean and variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormal<T: Real = f64> {
    pub log_mean: T,
    pub log_var: T,
}

impl<T: Real> LogNormal<T> {
    pub fn new(log_mean: T, log_var: T) -> Result<Self, DensityError> {
        check_positive("log_var", log_var)?;
        Ok(Self { log_mean, log_var })
    }
}

impl<T: Real> Univariate<T> for LogNormal<T> {
    fn pdf(&self, x: T) -> T {
        if x <= T::zero() {
            return T::zero();
        }
        self.ln_pdf(x).exp()
    }
    fn ln_pdf(&self, x: T) -> T {
        if x <= T::zero() {
            return T::neg_infinity();
        }
        let sd = self.log_var.sqrt();
        T::lit(log_pdf64(((x.ln() - self.log_mean) / sd).as_f64())) - sd.ln() - x.ln()
    }
    fn cdf(&self, x: T) -> T {
        if x <= T::zero() {
            return T::zero();
        }
        T::lit(cdf64(((x.ln() - self.log_mean) / self.log_var.sqrt()).as_f64()))
    }
    fn sf(&self, x: T) -> T {
        if x <= T::zero() {
            return T::one();
        }
        T::lit(sf64(((x.ln() - self.log_mean) / self.log_var.sqrt()).as_f64()))
    }
    fn support(&self) -> (T, T) {
        (T::zero(), T::infinity())
    }
    fn quantile(&self, u: T) -> Result<T, DensityError> {
        check_probability(u)?;
        Ok((self.log_mean + self.log_var.sqrt() * T::lit(quantile64(u.as_f64()))).exp())
    }
}

/// Finite mixture of normals truncated to a common interval `[A, B]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncNormMixture<T: Real = f64> {
    weights: Vec<T>,
    means: Vec<T>,
    variances: Vec<T>,
    lower: T,
    upper: T,
}

impl<T: Real> TruncNormMixture<T> {
    pub fn new(weights: Vec<T>, means: Vec<T>, variances: Vec<T>, lower: T, upper: T) -> Result<Self, DensityError> {
        if weights.len() != means.len() || means.len() != variances.len() || weights.is_empty() {
            return Err(DensityError::LengthMismatch(format!(
                "{} weights, {} means, {} variances",
                weights.len(),
                means.len(),
                variances.len()
            )));
        }
        check_weights(&weights)?;
        for &v in &variances {
            check_positive("variance", v)?;
        }
        if !(upper > lower) {
            return Err(DensityError::BadParameter {
                name: "upper",
                value: upper.as_f64(),
            });
        }
        Ok(Self {
            weights,
            means,
            variances,
            lower,
            upper,
        })
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }
    pub fn means(&self) -> &[T] {
        &self.means
    }
    pub fn variances(&self) -> &[T] {
        &self.variances
    }
}

impl<T: Real> Univariate<T> for TruncNormMixture<T> {
    fn pdf(&self, x: T) -> T {
        if x < self.lower || x > self.upper {
            return T::zero();
        }
        let (x, lo, hi) = (x.as_f64(), self.lower.as_f64(), self.upper.as_f64());
        let s: f64 = self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .filter(|((w, _), _)| **w > T::zero())
            .map(|((w, m), v)| w.as_f64() * trunc_normal_ln_pdf(x, m.as_f64(), v.as_f64(), lo, hi).exp())
            .sum();
        T::lit(s)
    }

    fn cdf(&self, x: T) -> T {
        let (x, lo, hi) = (x.as_f64(), self.lower.as_f64(), self.upper.as_f64());
        let s: f64 = self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .filter(|((w, _), _)| **w > T::zero())
            .map(|((w, m), v)| w.as_f64() * trunc_normal_cdf(x, m.as_f64(), v.as_f64(), lo, hi))
            .sum();
        T::lit(s.clamp(0.0, 1.0))
    }

    fn sf(&self, x: T) -> T {
        let (x, lo, hi) = (x.as_f64(), self.lower.as_f64(), self.upper.as_f64());
        let s: f64 = self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .filter(|((w, _), _)| **w > T::zero())
            .map(|((w, m), v)| w.as_f64() * trunc_normal_sf(x, m.as_f64(), v.as_f64(), lo, hi))
            .sum();
        T::lit(s.clamp(0.0, 1.0))
    }

    fn support(&self) -> (T, T) {
        (self.lower, self.upper)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let k = pick_index(rng, &self.weights);
        T::lit(sample_trunc_normal(
            rng,
            self.means[k].as_f64(),
            self.variances[k].as_f64().sqrt(),
            self.lower.as_f64(),
            self.upper.as_f64(),
        ))
    }
}

/// Draws an index with probability proportional to `weights`.
pub fn pick_index<T: Real, R: Rng + ?Sized>(rng: &mut R, weights: &[T]) -> usize {
    let total: f64 = weights.iter().map(|w| w.as_f64()).sum();
    let mut u = rng.random::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        u -= w.as_f64();
        if u < 0.0 {
            return k;
        }
    }
    weights
        .iter()
        .rposition(|w| *w > T::zero())
        .unwrap_or(weights.len() - 1)
}

/// Normalized mixture of B-splines: `f(x) = B(x)ᵀ exp(ξ) / Σ_m δ_m exp(ξ_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BsplineDensity<T: Real = f64> {
    basis: SplineBasis<T>,
    log_coefs: Vec<T>,
    // exp(ξ - max ξ) / normalizer, so density = B(x)·scaled
    scaled: Vec<T>,
    normalizer: T,
}

impl<T: Real> BsplineDensity<T> {
    pub fn new(basis: SplineBasis<T>, log_coefs: Vec<T>) -> Result<Self, DensityError> {
        if log_coefs.len() != basis.num_bases() {
            return Err(DensityError::LengthMismatch(format!(
                "{} coefficients for {} bases",
                log_coefs.len(),
                basis.num_bases()
            )));
        }
        if log_coefs.iter().any(|c| !c.is_finite()) {
            return Err(DensityError::BadParameter {
                name: "log_coefs",
                value: f64::NAN,
            });
        }
        let top = log_coefs.iter().copied().fold(T::neg_infinity(), T::max);
        let expd: Vec<T> = log_coefs.iter().map(|&c| (c - top).exp()).collect();
        let norm: T = expd.iter().zip(basis.areas()).map(|(&e, &a)| e * a).sum();
        let scaled = expd.iter().map(|&e| e / norm).collect();
        Ok(Self {
            normalizer: norm * top.exp(),
            basis,
            log_coefs,
            scaled,
        })
    }

    pub fn basis(&self) -> &SplineBasis<T> {
        &self.basis
    }

    pub fn log_coefs(&self) -> &[T] {
        &self.log_coefs
    }

    /// `Σ_m δ_m exp(ξ_m)`.
    pub fn normalizer(&self) -> T {
        self.normalizer
    }
}

impl<T: Real> Univariate<T> for BsplineDensity<T> {
    fn pdf(&self, x: T) -> T {
        if !self.basis.contains(x) {
            return T::zero();
        }
        self.basis.combine_clamped(x, &self.scaled)
    }

    fn cdf(&self, x: T) -> T {
        let i = self.basis.integrals(x);
        let s: T = i.iter().zip(&self.scaled).map(|(&a, &b)| a * b).sum();
        s.max(T::zero()).min(T::one())
    }

    fn sf(&self, x: T) -> T {
        let i = self.basis.integrals(x);
        let s: T = i
            .iter()
            .zip(self.basis.areas())
            .zip(&self.scaled)
            .map(|((&a, &full), &b)| (full - a) * b)
            .sum();
        s.max(T::zero()).min(T::one())
    }

    fn support(&self) -> (T, T) {
        (self.basis.lower(), self.basis.upper())
    }
}

/// Two-component normal kernel whose mean is zero for every parameter value:
/// `p N(c₁μ̃, σ₁²) + (1-p) N(c₂μ̃, σ₂²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestrictedErrorKernel<T: Real = f64> {
    pub p: T,
    pub mu_tilde: T,
    pub var1: T,
    pub var2: T,
}

impl<T: Real> RestrictedErrorKernel<T> {
    pub fn new(p: T, mu_tilde: T, var1: T, var2: T) -> Result<Self, DensityError> {
        if !(p >= T::zero() && p <= T::one()) {
            return Err(DensityError::BadParameter {
                name: "p",
                value: p.as_f64(),
            });
        }
        if !mu_tilde.is_finite() {
            return Err(DensityError::BadParameter {
                name: "mu_tilde",
                value: mu_tilde.as_f64(),
            });
        }
        check_positive("var1", var1)?;
        check_positive("var2", var2)?;
        Ok(Self {
            p,
            mu_tilde,
            var1,
            var2,
        })
    }

    /// The standard normal special case `(p, μ̃, σ₁², σ₂²) = (0.5, 0, 1, 1)`.
    pub fn standard() -> Self {
        Self {
            p: T::lit(0.5),
            mu_tilde: T::zero(),
            var1: T::one(),
            var2: T::one(),
        }
    }

    /// `(c₁, c₂)`.
    pub fn coefficients(&self) -> (T, T) {
        let q = T::one() - self.p;
        let r = (self.p * self.p + q * q).sqrt();
        (q / r, -self.p / r)
    }

    /// Component means `(μ₁, μ₂)`.
    pub fn means(&self) -> (T, T) {
        let (c1, c2) = self.coefficients();
        (c1 * self.mu_tilde, c2 * self.mu_tilde)
    }

    pub fn mean(&self) -> T {
        let (m1, m2) = self.means();
        self.p * m1 + (T::one() - self.p) * m2
    }

    pub fn variance(&self) -> T {
        let (m1, m2) = self.means();
        self.p * (self.var1 + m1 * m1) + (T::one() - self.p) * (self.var2 + m2 * m2)
    }

    #[inline]
    pub(crate) fn pdf64(&self, x: f64) -> f64 {
        let (m1, m2) = self.means();
        let p = self.p.as_f64();
        let mut s = 0.0;
        if p > 0.0 {
            s += p * normal_ln_pdf(x, m1.as_f64(), self.var1.as_f64()).exp();
        }
        if p < 1.0 {
            s += (1.0 - p) * normal_ln_pdf(x, m2.as_f64(), self.var2.as_f64()).exp();
        }
        s
    }

    #[inline]
    pub(crate) fn cdf64(&self, x: f64) -> f64 {
        let (m1, m2) = self.means();
        let p = self.p.as_f64();
        p * cdf64((x - m1.as_f64()) / self.var1.as_f64().sqrt())
            + (1.0 - p) * cdf64((x - m2.as_f64()) / self.var2.as_f64().sqrt())
    }

    #[inline]
    pub(crate) fn sf64(&self, x: f64) -> f64 {
        let (m1, m2) = self.means();
        let p = self.p.as_f64();
        p * sf64((x - m1.as_f64()) / self.var1.as_f64().sqrt())
            + (1.0 - p) * sf64((x - m2.as_f64()) / self.var2.as_f64().sqrt())
    }
}

impl<T: Real> Univariate<T> for RestrictedErrorKernel<T> {
    fn pdf(&self, x: T) -> T {
        T::lit(self.pdf64(x.as_f64()))
    }
    fn cdf(&self, x: T) -> T {
        T::lit(self.cdf64(x.as_f64()))
    }
    fn sf(&self, x: T) -> T {
        T::lit(self.sf64(x.as_f64()))
    }
    fn support(&self) -> (T, T) {
        (T::neg_infinity(), T::infinity())
    }
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let (m1, m2) = self.means();
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        if rng.random::<f64>() < self.p.as_f64() {
            m1 + self.var1.sqrt() * T::lit(z)
        } else {
            m2 + self.var2.sqrt() * T::lit(z)
        }
    }
}

/// Mixture of mean-restricted kernels; its mean is zero by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMixture<T: Real = f64> {
    weights: Vec<T>,
    kernels: Vec<RestrictedErrorKernel<T>>,
}

impl<T: Real> ErrorMixture<T> {
    pub fn new(weights: Vec<T>, kernels: Vec<RestrictedErrorKernel<T>>) -> Result<Self, DensityError> {
        if weights.len() != kernels.len() || weights.is_empty() {
            return Err(DensityError::LengthMismatch(format!(
                "{} weights for {} kernels",
                weights.len(),
                kernels.len()
            )));
        }
        check_weights(&weights)?;
        Ok(Self { weights, kernels })
    }

    pub fn standard() -> Self {
        Self {
            weights: vec![T::one()],
            kernels: vec![RestrictedErrorKernel::standard()],
        }
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn kernels(&self) -> &[RestrictedErrorKernel<T>] {
        &self.kernels
    }

    /// Mixture mean; zero up to rounding for any valid parameters.
    pub fn mean(&self) -> T {
        self.weights.iter().zip(&self.kernels).map(|(&w, k)| w * k.mean()).sum()
    }

    pub fn variance(&self) -> T {
        self.weights
            .iter()
            .zip(&self.kernels)
            .map(|(&w, k)| w * k.variance())
            .sum::<T>()
            - self.mean() * self.mean()
    }
}

impl<T: Real> Univariate<T> for ErrorMixture<T> {
    fn pdf(&self, x: T) -> T {
        let x = x.as_f64();
        T::lit(
            self.weights
                .iter()
                .zip(&self.kernels)
                .filter(|(w, _)| **w > T::zero())
                .map(|(w, k)| w.as_f64() * k.pdf64(x))
                .sum(),
        )
    }
    fn cdf(&self, x: T) -> T {
        let x = x.as_f64();
        let s: f64 = self
            .weights
            .iter()
            .zip(&self.kernels)
            .filter(|(w, _)| **w > T::zero())
            .map(|(w, k)| w.as_f64() * k.cdf64(x))
            .sum();
        T::lit(s.clamp(0.0, 1.0))
    }
    fn sf(&self, x: T) -> T {
        let x = x.as_f64();
        let s: f64 = self
            .weights
            .iter()
            .zip(&self.kernels)
            .filter(|(w, _)| **w > T::zero())
            .map(|(w, k)| w.as_f64() * k.sf64(x))
            .sum();
        T::lit(s.clamp(0.0, 1.0))
    }
    fn support(&self) -> (T, T) {
        (T::neg_infinity(), T::infinity())
    }
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let k = pick_index(rng, &self.weights);
        self.kernels[k].sample(rng)
    }
}

/// Laplace mixture shifted and scaled to mean zero and unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledLaplaceMixture<T: Real = f64> {
    weights: Vec<T>,
    locations: Vec<T>,
    scales: Vec<T>,
    shift: T,
    scale: T,
}

impl<T: Real> ScaledLaplaceMixture<T> {
    pub fn new(weights: Vec<T>, locations: Vec<T>, scales: Vec<T>) -> Result<Self, DensityError> {
        if weights.len() != locations.len() || locations.len() != scales.len() || weights.is_empty() {
            return Err(DensityError::LengthMismatch(format!(
                "{} weights, {} locations, {} scales",
                weights.len(),
                locations.len(),
                scales.len()
            )));
        }
        check_weights(&weights)?;
        for &b in &scales {
            check_positive("scale", b)?;
        }
        let mean: T = weights.iter().zip(&locations).map(|(&w, &m)| w * m).sum();
        let second: T = weights
            .iter()
            .zip(&locations)
            .zip(&scales)
            .map(|((&w, &m), &b)| w * (T::lit(2.0) * b * b + m * m))
            .sum();
        let scale = (second - mean * mean).sqrt();
        Ok(Self {
            weights,
            locations,
            scales,
            shift: mean,
            scale,
        })
    }

    /// `(shift, scale)` of the standardizing affine map.
    pub fn standardization(&self) -> (T, T) {
        (self.shift, self.scale)
    }

    fn raw_pdf(&self, y: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.locations)
            .zip(&self.scales)
            .map(|((w, m), b)| {
                let b = b.as_f64();
                w.as_f64() * (-(y - m.as_f64()).abs() / b).exp() / (2.0 * b)
            })
            .sum()
    }

    fn raw_cdf(&self, y: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.locations)
            .zip(&self.scales)
            .map(|((w, m), b)| {
                let z = (y - m.as_f64()) / b.as_f64();
                let c = if z < 0.0 { 0.5 * z.exp() } else { 1.0 - 0.5 * (-z).exp() };
                w.as_f64() * c
            })
            .sum()
    }
}

impl<T: Real> Univariate<T> for ScaledLaplaceMixture<T> {
    fn pdf(&self, x: T) -> T {
        let y = (self.shift + self.scale * x).as_f64();
        self.scale * T::lit(self.raw_pdf(y))
    }
    fn cdf(&self, x: T) -> T {
        let y = (self.shift + self.scale * x).as_f64();
        T::lit(self.raw_cdf(y).clamp(0.0, 1.0))
    }
    fn support(&self) -> (T, T) {
        (T::neg_infinity(), T::infinity())
    }
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let k = pick_index(rng, &self.weights);
        let u = open_uniform(rng) - 0.5;
        let y = self.locations[k].as_f64() - self.scales[k].as_f64() * u.signum() * (1.0 - 2.0 * u.abs()).ln();
        (T::lit(y) - self.shift) / self.scale
    }
}

/// Any of the univariate families, for heterogeneous collections of marginals.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyDensity<T: Real = f64> {
    Gaussian(Gaussian<T>),
    LogNormal(LogNormal<T>),
    TruncNormMixture(TruncNormMixture<T>),
    Bspline(BsplineDensity<T>),
    ErrorKernel(RestrictedErrorKernel<T>),
    ErrorMixture(ErrorMixture<T>),
    Laplace(ScaledLaplaceMixture<T>),
}

macro_rules! dispatch {
    ($self:ident, $d:ident => $e:expr) => {
        match $self {
            AnyDensity::Gaussian($d) => $e,
            AnyDensity::LogNormal($d) => $e,
            AnyDensity::TruncNormMixture($d) => $e,
            AnyDensity::Bspline($d) => $e,
            AnyDensity::ErrorKernel($d) => $e,
            AnyDensity::ErrorMixture($d) => $e,
            AnyDensity::Laplace($d) => $e,
        }
    };
}

impl<T: Real> Univariate<T> for AnyDensity<T> {
    fn pdf(&self, x: T) -> T {
        dispatch!(self, d => d.pdf(x))
    }
    fn ln_pdf(&self, x: T) -> T {
        dispatch!(self, d => d.ln_pdf(x))
    }
    fn cdf(&self, x: T) -> T {
        dispatch!(self, d => d.cdf(x))
    }
    fn sf(&self, x: T) -> T {
        dispatch!(self, d => d.sf(x))
    }
    fn support(&self) -> (T, T) {
        dispatch!(self, d => d.support())
    }
    fn quantile(&self, u: T) -> Result<T, DensityError> {
        dispatch!(self, d => d.quantile(u))
    }
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        dispatch!(self, d => d.sample(rng))
    }
}

macro_rules! any_from {
    ($($variant:ident($ty:ident)),*) => {
        $(impl<T: Real> From<$ty<T>> for AnyDensity<T> {
            fn from(d: $ty<T>) -> Self {
                AnyDensity::$variant(d)
            }
        })*
    };
}

any_from!(
    Gaussian(Gaussian),
    LogNormal(LogNormal),
    TruncNormMixture(TruncNormMixture),
    Bspline(BsplineDensity),
    ErrorKernel(RestrictedErrorKernel),
    ErrorMixture(ErrorMixture),
    Laplace(ScaledLaplaceMixture)
);

/// Upper-tail quantile helper shared with the copula code: `x` with `1 - Φ(x) = s`.
pub(crate) fn normal_isf(s: f64) -> f64 {
    isf64(s)
}

/// Normal score `Φ⁻¹(F(x))` computed from whichever tail is more accurate.
pub fn normal_score(cdf: f64, sf: f64) -> f64 {
    if cdf <= 0.5 {
        quantile64(cdf)
    } else {
        normal_isf(sf)
    }
}

/// `log Φ(x)` re-exported for the likelihood code.
#[inline]
pub fn ln_norm_cdf(x: f64) -> f64 {
    log_cdf64(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate, integrate_pieces, integrate_real_line};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn uniform_bspline_density_is_flat() {
        let basis = SplineBasis::new(0.0, 10.0, 12).unwrap();
        let d = BsplineDensity::new(basis, vec![0.7; 12]).unwrap();
        for i in 0..=50 {
            let x = i as f64 * 0.2;
            assert!((d.pdf(x) - 0.1).abs() < 1e-12);
        }
        assert!((d.cdf(10.0) - 1.0).abs() < 1e-13);
        assert_eq!(d.cdf(0.0), 0.0);
        assert!((d.normalizer() - 10.0 * 0.7f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn bspline_density_integrates_to_one() {
        let basis = SplineBasis::new(0.0, 10.0, 12).unwrap();
        let xi: Vec<f64> = (0..12).map(|j| (j as f64 * 0.9).sin() * 2.0).collect();
        let d = BsplineDensity::new(basis, xi).unwrap();
        let breaks: Vec<f64> = (0..=10).map(|v| v as f64).collect();
        let total = integrate_pieces(|x| d.pdf(x), &breaks, 1e-12, 0.0).unwrap();
        assert!((total - 1.0).abs() < 1e-10);
        // cdf agrees with quadrature of the density
        let part = integrate_pieces(|x| d.pdf(x), &[0.0, 1.0, 2.0, 3.0, 3.7], 1e-12, 0.0).unwrap();
        assert!((d.cdf(3.7) - part).abs() < 1e-10);
    }

    #[test]
    fn restricted_kernel_reduces_to_standard_normal() {
        let k = RestrictedErrorKernel::<f64>::new(0.5, 0.0, 1.0, 1.0).unwrap();
        assert!((k.pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-12);
        assert!((k.cdf(1.3) - cdf64(1.3)).abs() < 1e-15);
    }

    #[test]
    fn restricted_kernel_coefficients() {
        let k = RestrictedErrorKernel::<f64>::new(0.4, 2.0, 1.0, 1.0).unwrap();
        let (c1, c2) = k.coefficients();
        // c1 = 0.6/sqrt(0.52), c2 = -0.4/sqrt(0.52)
        assert!((c1 - 0.832_050_294_337_843_8).abs() < 1e-12);
        assert!((c2 + 0.554_700_196_225_229_1).abs() < 1e-12);
        let (m1, m2) = k.means();
        assert!((0.4 * m1 + 0.6 * m2).abs() < 1e-15);
        let k1 = RestrictedErrorKernel::<f64>::new(1.0, 3.7, 0.5, 2.0).unwrap();
        assert_eq!(k1.means().0, 0.0);
        assert_eq!(k1.mean(), 0.0);
    }

    #[test]
    fn error_mixture_quadrature_mean_is_zero() {
        let kernels = vec![
            RestrictedErrorKernel::<f64>::new(0.2, 1.5, 0.3, 1.2).unwrap(),
            RestrictedErrorKernel::<f64>::new(0.7, -2.0, 0.8, 0.4).unwrap(),
            RestrictedErrorKernel::<f64>::new(0.5, 0.9, 2.0, 0.1).unwrap(),
        ];
        let m = ErrorMixture::<f64>::new(vec![0.3, 0.5, 0.2], kernels).unwrap();
        assert!(m.mean().abs() < 1e-12);
        let qmean = integrate_real_line(|x| x * m.pdf(x), 1e-12, 0.0).unwrap();
        assert!(qmean.abs() < 1e-8);
        let total = integrate_real_line(|x| m.pdf(x), 1e-12, 0.0).unwrap();
        assert!((total - 1.0).abs() < 1e-8);
        let qvar = integrate_real_line(|x| x * x * m.pdf(x), 1e-12, 0.0).unwrap();
        assert!((qvar - m.variance()).abs() < 1e-8);
    }

    #[test]
    fn symmetric_special_case() {
        let k = RestrictedErrorKernel::<f64>::new(0.5, 1.7, 0.6, 0.6).unwrap();
        for &x in &[0.1, 0.9, 2.5] {
            assert!((k.pdf(x) - k.pdf(-x)).abs() < 1e-14);
        }
        let k = RestrictedErrorKernel::<f64>::new(0.3, 0.0, 0.6, 0.6).unwrap();
        assert!((k.pdf(1.1) - k.pdf(-1.1)).abs() < 1e-15);
    }

    #[test]
    fn truncated_mixture_basics() {
        let m = TruncNormMixture::<f64>::new(vec![0.25, 0.5, 0.25], vec![-0.5, 0.75, 2.0], vec![0.5625; 3], 0.0, 6.0)
            .unwrap();
        assert_eq!(m.cdf(0.0), 0.0);
        assert!((m.cdf(6.0) - 1.0).abs() < 1e-15);
        let total = integrate(|x| m.pdf(x), 0.0, 6.0, 1e-12, 0.0).unwrap();
        assert!((total - 1.0).abs() < 1e-10);
        assert!(m.density(6.5).is_err());
        assert_eq!(m.pdf(-0.1), 0.0);
        let mut r = rng();
        for _ in 0..10_000 {
            let x = m.sample(&mut r);
            assert!((0.0..=6.0).contains(&x));
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        let basis = SplineBasis::new(0.0, 10.0, 12).unwrap();
        let xi: Vec<f64> = (0..12).map(|j| -(j as f64 - 3.0).powi(2) / 8.0).collect();
        let bs = BsplineDensity::new(basis, xi).unwrap();
        let em = ErrorMixture::<f64>::new(
            vec![0.6, 0.4],
            vec![
                RestrictedErrorKernel::<f64>::new(0.4, 2.0, 2.0, 1.0).unwrap(),
                RestrictedErrorKernel::<f64>::new(0.5, 0.0, 0.25, 0.25).unwrap(),
            ],
        )
        .unwrap();
        let lap = ScaledLaplaceMixture::<f64>::new(vec![0.5, 0.5], vec![0.0, 2.0], vec![2.0, 1.0]).unwrap();
        for i in 1..40 {
            let x = 0.25 * i as f64;
            let back = bs.quantile(bs.cdf(x)).unwrap();
            assert!((back - x).abs() < 1e-8, "bspline {x} -> {back}");
            let y = x - 5.0;
            let back = em.quantile(em.cdf(y)).unwrap();
            assert!((back - y).abs() < 1e-8, "error mixture {y} -> {back}");
            let back = lap.quantile(lap.cdf(y / 2.0)).unwrap();
            assert!((back - y / 2.0).abs() < 1e-8, "laplace {y} -> {back}");
        }
        assert!(bs.quantile(0.0).is_err());
        assert!(em.quantile(1.0).is_err());
    }

    #[test]
    fn laplace_mixture_standardized_moments() {
        let lap = ScaledLaplaceMixture::<f64>::new(vec![0.25, 0.5, 0.25], vec![0.0, 0.0, 0.0], vec![2.0; 3]).unwrap();
        let mean = integrate_real_line(|x| x * lap.pdf(x), 1e-13, 0.0).unwrap();
        let var = integrate_real_line(|x| x * x * lap.pdf(x), 1e-13, 0.0).unwrap();
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-8);
        let skewed = ScaledLaplaceMixture::<f64>::new(vec![0.3, 0.7], vec![-1.0, 4.0], vec![0.5, 2.0]).unwrap();
        let mean = integrate_pieces(|x| x * skewed.pdf(x), &[-40.0, -2.0, 0.0, 2.0, 40.0], 1e-12, 0.0).unwrap();
        let var = integrate_pieces(|x| x * x * skewed.pdf(x), &[-40.0, -2.0, 0.0, 2.0, 40.0], 1e-12, 0.0).unwrap();
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-8);
    }

    #[test]
    fn truncated_normal_sampler_handles_tails() {
        let mut r = rng();
        for _ in 0..2000 {
            let z = sample_std_trunc_normal(&mut r, 40.0, 40.5);
            assert!((40.0..=40.5).contains(&z));
            let z = sample_std_trunc_normal(&mut r, -1e3, -50.0);
            assert!((-1e3..=-50.0).contains(&z));
            let z = sample_std_trunc_normal(&mut r, 60.0, 60.000_001);
            assert!((60.0..=60.000_001).contains(&z));
            let z = sample_std_trunc_normal(&mut r, 0.0, f64::INFINITY);
            assert!(z >= 0.0);
        }
        // mean of a one-sided tail draw matches the inverse Mills ratio
        let n = 50_000;
        let a = 3.0;
        let m: f64 = (0..n)
            .map(|_| sample_std_trunc_normal(&mut r, a, f64::INFINITY))
            .sum::<f64>()
            / n as f64;
        let mills = pdf64(a) / sf64(a);
        assert!((m - mills).abs() < 0.01);
    }

    #[test]
    fn trunc_normal_helpers_agree() {
        let total = integrate(
            |x| trunc_normal_ln_pdf(x, 1.0, 4.0, -0.5, 2.5).exp(),
            -0.5,
            2.5,
            1e-13,
            0.0,
        )
        .unwrap();
        assert!((total - 1.0).abs() < 1e-10);
        let part = integrate(
            |x| trunc_normal_ln_pdf(x, 1.0, 4.0, -0.5, 2.5).exp(),
            -0.5,
            1.2,
            1e-13,
            0.0,
        )
        .unwrap();
        assert!((trunc_normal_cdf(1.2, 1.0, 4.0, -0.5, 2.5) - part).abs() < 1e-12);
        // far-tail truncation window stays finite
        let lp = trunc_normal_ln_pdf(9.5, 0.0, 0.01, 9.0, 10.0);
        assert!(lp.is_finite());
    }

    #[test]
    fn single_precision_instances() {
        let k = RestrictedErrorKernel::<f32>::new(0.4, 2.0, 1.0, 1.0).unwrap();
        assert!(k.mean().abs() < 1e-6);
        let basis = SplineBasis::<f32>::new(0.0, 10.0, 12).unwrap();
        let d = BsplineDensity::new(basis, vec![0.0f32; 12]).unwrap();
        assert!((d.pdf(4.2) - 0.1).abs() < 1e-6);
    }
}
