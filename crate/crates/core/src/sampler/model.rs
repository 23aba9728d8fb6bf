//! Density-relevant parameters of one posterior state and the model they
//! define.

use serde::{Deserialize, Serialize};

use crate::copula::{copula_factor_from_scores, theta_len, SphericalCorrelation};
use crate::densities::{
    normal_ln_pdf, normal_score, trunc_normal_cdf, trunc_normal_ln_pdf, trunc_normal_sf, BsplineDensity,
    RestrictedErrorKernel, Univariate,
};
use crate::latent::PROB_FLOOR;
use crate::special::norm_cdf;
use crate::splines::SplineBasis;

use super::SamplerError;

/// Sizes shared by every snapshot of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub q: usize,
    pub p: usize,
    pub num_bases: usize,
    pub x_atoms: usize,
    pub eps_atoms: usize,
    pub support: (f64, f64),
    pub variance_upper: f64,
}

impl Dims {
    pub fn components(&self) -> usize {
        self.q + self.p
    }
    pub fn surrogates(&self) -> usize {
        2 * self.q + self.p
    }
    pub(crate) fn basis(&self) -> SplineBasis {
        SplineBasis::new(self.support.0, self.support.1, self.num_bases).expect("validated support")
    }
    pub(crate) fn variance_basis(&self) -> SplineBasis {
        SplineBasis::new(0.0, self.variance_upper, self.num_bases).expect("validated support")
    }
}

/// Parameters that determine the fitted densities.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    /// B-spline log coefficients of the episodic intake densities (q × J).
    pub xi: Vec<Vec<f64>>,
    /// Mixture weights of the regular intake densities (p × K_X).
    pub x_weights: Vec<Vec<f64>>,
    /// Shared truncated-normal atoms.
    pub x_mu: Vec<f64>,
    pub x_var: Vec<f64>,
    /// Error mixture weights per amount coordinate ((q+p) × K_ε).
    pub eps_weights: Vec<Vec<f64>>,
    pub eps_atoms: Vec<RestrictedErrorKernel>,
    /// Log variance-function coefficients per amount coordinate ((q+p) × J).
    pub vartheta: Vec<Vec<f64>>,
    /// Probit consumption coefficients (q × J).
    pub beta: Vec<Vec<f64>>,
    pub rx: SphericalCorrelation,
    pub re: SphericalCorrelation,
}

impl Parameters {
    /// Column names of the flat representation.
    pub fn field_names(dims: &Dims, names: &[String]) -> Vec<String> {
        let (q, d, j) = (dims.q, dims.components(), dims.num_bases);
        let mut out = Vec::new();
        for name in &names[..q] {
            out.extend((0..j).map(|m| format!("xi.{name}.{m}")));
        }
        for name in &names[q..d] {
            out.extend((0..dims.x_atoms).map(|k| format!("x_weight.{name}.{k}")));
        }
        out.extend((0..dims.x_atoms).map(|k| format!("x_mu.{k}")));
        out.extend((0..dims.x_atoms).map(|k| format!("x_var.{k}")));
        for name in &names[..d] {
            out.extend((0..dims.eps_atoms).map(|k| format!("eps_weight.{name}.{k}")));
        }
        for key in ["eps_p", "eps_mu", "eps_var1", "eps_var2"] {
            out.extend((0..dims.eps_atoms).map(|k| format!("{key}.{k}")));
        }
        for name in &names[..d] {
            out.extend((0..j).map(|m| format!("vartheta.{name}.{m}")));
        }
        for name in &names[..q] {
            out.extend((0..j).map(|m| format!("beta.{name}.{m}")));
        }
        for prefix in ["rx", "re"] {
            out.extend((0..d - 1).map(|t| format!("{prefix}_b.{t}")));
            out.extend((0..theta_len(d)).map(|s| format!("{prefix}_theta.{s}")));
        }
        out
    }

    pub fn to_row(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.xi.iter().for_each(|v| out.extend_from_slice(v));
        self.x_weights.iter().for_each(|v| out.extend_from_slice(v));
        out.extend_from_slice(&self.x_mu);
        out.extend_from_slice(&self.x_var);
        self.eps_weights.iter().for_each(|v| out.extend_from_slice(v));
        out.extend(self.eps_atoms.iter().map(|a| a.p));
        out.extend(self.eps_atoms.iter().map(|a| a.mu_tilde));
        out.extend(self.eps_atoms.iter().map(|a| a.var1));
        out.extend(self.eps_atoms.iter().map(|a| a.var2));
        self.vartheta.iter().for_each(|v| out.extend_from_slice(v));
        self.beta.iter().for_each(|v| out.extend_from_slice(v));
        for r in [&self.rx, &self.re] {
            out.extend_from_slice(r.b());
            out.extend_from_slice(r.theta());
        }
        out
    }

    pub fn from_row(dims: &Dims, row: &[f64]) -> Result<Self, SamplerError> {
        let (q, p, d, j) = (dims.q, dims.p, dims.components(), dims.num_bases);
        let (kx, ke) = (dims.x_atoms, dims.eps_atoms);
        let mut it = row.iter().copied();
        let mut take = |n: usize| -> Result<Vec<f64>, SamplerError> {
            let v: Vec<f64> = it.by_ref().take(n).collect();
            if v.len() == n {
                Ok(v)
            } else {
                Err(SamplerError::Format("draw row is too short".into()))
            }
        };
        let xi = (0..q).map(|_| take(j)).collect::<Result<Vec<_>, _>>()?;
        let x_weights = (0..p).map(|_| take(kx)).collect::<Result<Vec<_>, _>>()?;
        let x_mu = take(kx)?;
        let x_var = take(kx)?;
        let eps_weights = (0..d).map(|_| take(ke)).collect::<Result<Vec<_>, _>>()?;
        let (ep, em, e1, e2) = (take(ke)?, take(ke)?, take(ke)?, take(ke)?);
        let eps_atoms = (0..ke)
            .map(|k| RestrictedErrorKernel::new(ep[k], em[k], e1[k], e2[k]))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| SamplerError::Format(e.to_string()))?;
        let vartheta = (0..d).map(|_| take(j)).collect::<Result<Vec<_>, _>>()?;
        let beta = (0..q).map(|_| take(j)).collect::<Result<Vec<_>, _>>()?;
        let mut corr = || -> Result<SphericalCorrelation, SamplerError> {
            let b = take(d - 1)?;
            let t = take(theta_len(d))?;
            SphericalCorrelation::new(b, t).map_err(|e| SamplerError::Format(e.to_string()))
        };
        let rx = corr()?;
        let re = corr()?;
        if it.next().is_some() {
            return Err(SamplerError::Format("draw row is too long".into()));
        }
        Ok(Self {
            xi,
            x_weights,
            x_mu,
            x_var,
            eps_weights,
            eps_atoms,
            vartheta,
            beta,
            rx,
            re,
        })
    }
}

/// Precomputed two-component error kernel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FastKernel {
    p: f64,
    m1: f64,
    m2: f64,
    sd1: f64,
    sd2: f64,
    lc1: f64,
    lc2: f64,
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

impl FastKernel {
    pub(crate) fn new(k: &RestrictedErrorKernel) -> Self {
        let (m1, m2) = k.means();
        let (sd1, sd2) = (k.var1.sqrt(), k.var2.sqrt());
        Self {
            p: k.p,
            m1,
            m2,
            sd1,
            sd2,
            lc1: k.p.ln() - sd1.ln() - LN_SQRT_2PI,
            lc2: (1.0 - k.p).ln() - sd2.ln() - LN_SQRT_2PI,
        }
    }

    #[inline]
    pub(crate) fn ln_pdf(&self, e: f64) -> f64 {
        let z1 = (e - self.m1) / self.sd1;
        let z2 = (e - self.m2) / self.sd2;
        log_add(self.lc1 - 0.5 * z1 * z1, self.lc2 - 0.5 * z2 * z2)
    }

    #[inline]
    fn cdf(&self, e: f64) -> f64 {
        self.p * norm_cdf((e - self.m1) / self.sd1) + (1.0 - self.p) * norm_cdf((e - self.m2) / self.sd2)
    }

    #[inline]
    fn sf(&self, e: f64) -> f64 {
        self.p * norm_cdf((self.m1 - e) / self.sd1) + (1.0 - self.p) * norm_cdf((self.m2 - e) / self.sd2)
    }

    pub(crate) fn weight_first(&self) -> f64 {
        self.p
    }

    pub(crate) fn branch(&self, t: u8) -> (f64, f64) {
        if t == 0 {
            (self.m1, self.sd1)
        } else {
            (self.m2, self.sd2)
        }
    }
}

#[inline]
pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Error mixture with cached kernels and log weights.
#[derive(Debug, Clone)]
pub(crate) struct FastErrorMixture {
    active: Vec<(f64, f64, FastKernel)>,
}

impl FastErrorMixture {
    pub(crate) fn new(weights: &[f64], kernels: &[FastKernel]) -> Self {
        let active = weights
            .iter()
            .zip(kernels)
            .filter(|(w, _)| **w > 0.0)
            .map(|(&w, k)| (w, w.ln(), *k))
            .collect();
        Self { active }
    }

    pub(crate) fn ln_pdf(&self, e: f64) -> f64 {
        let mut acc = f64::NEG_INFINITY;
        for (_, lw, k) in &self.active {
            acc = log_add(acc, lw + k.ln_pdf(e));
        }
        acc
    }

    pub(crate) fn score(&self, e: f64) -> f64 {
        let (mut c, mut s) = (0.0, 0.0);
        for (w, _, k) in &self.active {
            c += w * k.cdf(e);
            s += w * k.sf(e);
        }
        normal_score(c.clamp(0.0, 1.0), s.clamp(0.0, 1.0))
    }

    pub(crate) fn cdf(&self, e: f64) -> f64 {
        self.active
            .iter()
            .map(|(w, _, k)| w * k.cdf(e))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }
}

/// Marginal intake density of one component.
#[derive(Debug, Clone)]
pub(crate) enum XMarginal {
    Bspline(BsplineDensity),
    Mixture {
        atoms: Vec<(f64, f64, f64)>, // (ln weight, mean, var)
        lower: f64,
        upper: f64,
    },
}

impl XMarginal {
    pub(crate) fn ln_pdf(&self, x: f64) -> f64 {
        match self {
            Self::Bspline(b) => b.pdf(x).ln(),
            Self::Mixture { atoms, lower, upper } => {
                let mut acc = f64::NEG_INFINITY;
                for &(lw, m, v) in atoms {
                    acc = log_add(acc, lw + trunc_normal_ln_pdf(x, m, v, *lower, *upper));
                }
                acc
            }
        }
    }

    pub(crate) fn cdf_sf(&self, x: f64) -> (f64, f64) {
        match self {
            Self::Bspline(b) => (b.cdf(x), b.sf(x)),
            Self::Mixture { atoms, lower, upper } => {
                let (mut c, mut s) = (0.0, 0.0);
                for &(lw, m, v) in atoms {
                    let w = lw.exp();
                    c += w * trunc_normal_cdf(x, m, v, *lower, *upper);
                    s += w * trunc_normal_sf(x, m, v, *lower, *upper);
                }
                (c.clamp(0.0, 1.0), s.clamp(0.0, 1.0))
            }
        }
    }

    pub(crate) fn score(&self, x: f64) -> f64 {
        let (c, s) = self.cdf_sf(x);
        normal_score(c, s)
    }
}

/// The densities implied by one [`Parameters`] value.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub(crate) q: usize,
    pub(crate) d: usize,
    pub(crate) support: (f64, f64),
    pub(crate) basis: SplineBasis,
    pub(crate) var_basis: SplineBasis,
    pub(crate) x_marg: Vec<XMarginal>,
    pub(crate) kernels: Vec<FastKernel>,
    pub(crate) err: Vec<FastErrorMixture>,
    pub(crate) var_coefs: Vec<Vec<f64>>,
    pub(crate) beta: Vec<Vec<f64>>,
    pub(crate) rx: SphericalCorrelation,
    pub(crate) re: SphericalCorrelation,
}

impl FittedModel {
    pub fn new(dims: &Dims, params: &Parameters) -> Result<Self, SamplerError> {
        let (q, d) = (dims.q, dims.components());
        let basis = dims.basis();
        let mut x_marg = Vec::with_capacity(d);
        for xi in &params.xi {
            let b = BsplineDensity::new(basis.clone(), xi.clone()).map_err(|e| SamplerError::Format(e.to_string()))?;
            x_marg.push(XMarginal::Bspline(b));
        }
        for w in &params.x_weights {
            let atoms = w
                .iter()
                .zip(params.x_mu.iter().zip(&params.x_var))
                .filter(|(w, _)| **w > 0.0)
                .map(|(&w, (&m, &v))| (w.ln(), m, v))
                .collect();
            x_marg.push(XMarginal::Mixture {
                atoms,
                lower: dims.support.0,
                upper: dims.support.1,
            });
        }
        let kernels: Vec<FastKernel> = params.eps_atoms.iter().map(FastKernel::new).collect();
        let err = params
            .eps_weights
            .iter()
            .map(|w| FastErrorMixture::new(w, &kernels))
            .collect();
        Ok(Self {
            q,
            d,
            support: dims.support,
            basis,
            var_basis: dims.variance_basis(),
            x_marg,
            kernels,
            err,
            var_coefs: params
                .vartheta
                .iter()
                .map(|v| v.iter().map(|c| c.exp()).collect())
                .collect(),
            beta: params.beta.clone(),
            rx: params.rx.clone(),
            re: params.re.clone(),
        })
    }

    pub fn num_components(&self) -> usize {
        self.d
    }
    pub fn num_episodic(&self) -> usize {
        self.q
    }
    pub fn support(&self) -> (f64, f64) {
        self.support
    }
    pub fn x_correlation(&self) -> &SphericalCorrelation {
        &self.rx
    }
    pub fn error_correlation(&self) -> &SphericalCorrelation {
        &self.re
    }

    /// Marginal intake density of component `l` (zero outside the support).
    pub fn marginal_pdf(&self, l: usize, x: f64) -> f64 {
        if x < self.support.0 || x > self.support.1 {
            return 0.0;
        }
        self.x_marg[l].ln_pdf(x).exp()
    }

    pub fn marginal_cdf(&self, l: usize, x: f64) -> f64 {
        self.x_marg[l].cdf_sf(x).0
    }

    /// Joint intake density; zero outside the support box or on its boundary.
    pub fn joint_pdf(&self, x: &[f64]) -> f64 {
        self.joint_ln_pdf(x).exp()
    }

    pub fn joint_ln_pdf(&self, x: &[f64]) -> f64 {
        if x.iter().any(|&v| v <= self.support.0 || v >= self.support.1) {
            return f64::NEG_INFINITY;
        }
        let mut total = 0.0;
        let mut scores = Vec::with_capacity(self.d);
        for (l, &v) in x.iter().enumerate() {
            total += self.x_marg[l].ln_pdf(v);
            scores.push(self.x_marg[l].score(v));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return f64::NEG_INFINITY;
        }
        total + copula_factor_from_scores(&self.rx, &scores)
    }

    /// Bivariate intake density of components `(a, b)` from the Gaussian
    /// copula's two-dimensional margin.
    pub fn bivariate_pdf(&self, a: usize, b: usize, xa: f64, xb: f64) -> f64 {
        let inside = |v: f64| v > self.support.0 && v < self.support.1;
        if !inside(xa) || !inside(xb) {
            return 0.0;
        }
        let rho = self.rx.get(a, b);
        let (ya, yb) = (self.x_marg[a].score(xa), self.x_marg[b].score(xb));
        if !ya.is_finite() || !yb.is_finite() {
            return 0.0;
        }
        let one = 1.0 - rho * rho;
        let ln_c = -0.5 * one.ln() - (rho * rho * (ya * ya + yb * yb) - 2.0 * rho * ya * yb) / (2.0 * one);
        (ln_c + self.x_marg[a].ln_pdf(xa) + self.x_marg[b].ln_pdf(xb)).exp()
    }

    /// Density of the scaled errors of amount coordinate `k` (0-based among
    /// the `q + p` amounts).
    pub fn error_pdf(&self, k: usize, e: f64) -> f64 {
        self.err[k].ln_pdf(e).exp()
    }

    pub fn error_cdf(&self, k: usize, e: f64) -> f64 {
        self.err[k].cdf(e)
    }

    /// `s²_k(x̃)` with clamping beyond the variance-basis range.
    pub fn variance(&self, k: usize, x_tilde: f64) -> f64 {
        self.var_basis.combine_clamped(x_tilde, &self.var_coefs[k])
    }

    /// Consumption probability `P_l(x)` of episodic component `l`.
    pub fn probability(&self, l: usize, x: f64) -> f64 {
        norm_cdf(self.linear_predictor(l, x))
    }

    pub(crate) fn linear_predictor(&self, l: usize, x: f64) -> f64 {
        self.basis.combine_clamped(x, &self.beta[l])
    }

    /// `X̃ = (h(X), X / P(X), X_regular)` with `P` floored.
    pub fn x_tilde(&self, x: &[f64]) -> Vec<f64> {
        let q = self.q;
        let mut out = Vec::with_capacity(q + self.d);
        for (l, &xl) in x.iter().enumerate().take(q) {
            out.push(self.linear_predictor(l, xl));
        }
        for (l, &xl) in x.iter().enumerate() {
            if l < q {
                out.push(xl / norm_cdf(out[l]).max(PROB_FLOOR));
            } else {
                out.push(xl);
            }
        }
        out
    }

    /// Log density of one occasion's surrogates given `X̃`: probit
    /// indicators, heteroscedastic amounts and the error copula factor.
    pub(crate) fn occasion_ln_lik(&self, w: &[f64], xt: &[f64], scores: &mut Vec<f64>) -> f64 {
        let q = self.q;
        let mut total = 0.0;
        for l in 0..q {
            total += normal_ln_pdf(w[l], xt[l], 1.0);
        }
        scores.clear();
        for k in 0..self.d {
            let l = q + k;
            let s = self.variance(k, xt[l]).sqrt();
            let e = (w[l] - xt[l]) / s;
            total += self.err[k].ln_pdf(e) - s.ln();
            scores.push(self.err[k].score(e));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        total + copula_factor_from_scores(&self.re, scores)
    }

    /// Full-conditional kernel of one subject's intakes: intake copula and
    /// marginals plus every occasion's surrogate likelihood.
    pub(crate) fn subject_ln_lik(&self, x: &[f64], occasions: &[Vec<f64>], scores: &mut Vec<f64>) -> f64 {
        let mut total = 0.0;
        let mut xs = Vec::with_capacity(self.d);
        for (l, &v) in x.iter().enumerate() {
            total += self.x_marg[l].ln_pdf(v);
            xs.push(self.x_marg[l].score(v));
        }
        if !total.is_finite() || xs.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        total += copula_factor_from_scores(&self.rx, &xs);
        let xt = self.x_tilde(x);
        for w in occasions {
            total += self.occasion_ln_lik(w, &xt, scores);
            if !total.is_finite() {
                return f64::NEG_INFINITY;
            }
        }
        total
    }
}
