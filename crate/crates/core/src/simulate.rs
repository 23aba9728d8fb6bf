//! Synthetic recall data with known intake densities.
//!
//! Two designs: a copula of truncated-normal mixtures observed through
//! heteroscedastic errors (`main`), and a multivariate lognormal model whose
//! episodic marginals need importance sampling (`lognormal`).

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::copula::{CopulaError, GaussianCopula, SphericalCorrelation};
use crate::densities::{
    DensityError, ErrorMixture, RestrictedErrorKernel, ScaledLaplaceMixture, TruncNormMixture, Univariate,
};
use crate::latent::{LatentError, RecallDataset};
use crate::linalg::{cholesky, forward_solve, inverse_from_cholesky};
use crate::special::norm_cdf;

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("invalid scenario: {0}")]
    Spec(String),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Copula(#[from] CopulaError),
    #[error(transparent)]
    Data(#[from] LatentError),
    #[error("malformed truth sidecar: {0}")]
    Sidecar(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fourth-order Taylor expansion of `ln x` about one.
pub fn newlog(x: f64) -> f64 {
    let t = x - 1.0;
    t - t * t / 2.0 + t.powi(3) / 3.0 - t.powi(4) / 4.0
}

fn power_matrix(rho: f64, d: usize) -> Vec<Vec<f64>> {
    (0..d)
        .map(|i| (0..d).map(|j| rho.powi((i as i32 - j as i32).abs())).collect())
        .collect()
}

/// Copula-of-mixtures design with `W = X + (X/3) ε` amounts and probit
/// consumption indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MainScenario {
    pub q: usize,
    pub p: usize,
    pub n: usize,
    pub occasions: usize,
    pub names: Option<Vec<String>>,
    pub x_correlation: Vec<Vec<f64>>,
    pub x_weights: Vec<f64>,
    /// One row of atom means per component.
    pub x_means: Vec<Vec<f64>>,
    pub x_variance: f64,
    pub support: (f64, f64),
    pub eps_correlation: Vec<Vec<f64>>,
    pub eps_weights: Vec<f64>,
    /// `(p, μ̃, σ₁², σ₂²)` atoms for every amount but the last.
    pub eps_kernels: Vec<Vec<[f64; 4]>>,
    /// `(location, scale)` Laplace atoms for the last amount.
    pub eps_laplace: Vec<[f64; 2]>,
    pub gamma0: Vec<f64>,
    pub gamma1: Vec<f64>,
}

impl Default for MainScenario {
    fn default() -> Self {
        let kern = [0.4, 2.0, 2.0, 1.0];
        Self {
            q: 2,
            p: 1,
            n: 1000,
            occasions: 3,
            names: None,
            x_correlation: power_matrix(0.7, 3),
            x_weights: vec![0.25, 0.5, 0.25],
            x_means: vec![vec![-0.5, 0.75, 2.0], vec![0.0, 3.0, 0.0], vec![2.0, 2.0, 2.0]],
            x_variance: 0.75 * 0.75,
            support: (0.0, 6.0),
            eps_correlation: power_matrix(0.5, 3),
            eps_weights: vec![0.25, 0.5, 0.25],
            eps_kernels: vec![
                vec![kern; 3],
                vec![[0.5, 0.0, 0.25, 0.25], [0.5, 0.0, 0.25, 0.25], [0.5, 0.0, 5.0, 5.0]],
            ],
            eps_laplace: vec![[0.0, 2.0]; 3],
            gamma0: vec![1.5, 1.0, 1.0],
            gamma1: vec![1.0, 1.0, 1.0],
        }
    }
}

/// Lognormal design: transformed intakes and errors are multivariate normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LognormalScenario {
    pub q: usize,
    pub p: usize,
    pub n: usize,
    pub occasions: usize,
    pub names: Option<Vec<String>>,
    /// Means of the `2q + p` transformed coordinates.
    pub mu: Vec<f64>,
    pub x_variances: Vec<f64>,
    /// Correlation `ρ^|ℓ-ℓ'|` between transformed intake coordinates.
    pub x_rho: f64,
    pub u_variances: Vec<f64>,
    pub u_rho: f64,
    /// Importance-sampling size for truth densities.
    pub is_samples: usize,
    pub is_seed: u64,
}

impl Default for LognormalScenario {
    fn default() -> Self {
        Self {
            q: 2,
            p: 1,
            n: 1000,
            occasions: 3,
            names: None,
            mu: vec![0.75, 1.0, 0.15, 0.15, 1.0],
            x_variances: vec![0.25, 0.15, 0.25, 0.25, 0.05],
            x_rho: 0.7,
            u_variances: vec![1.0, 1.0, 0.125, 0.125, 0.125],
            u_rho: 0.5,
            is_samples: 100_000,
            is_seed: 20_190_101,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScenarioSpec {
    Main(MainScenario),
    Lognormal(LognormalScenario),
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self::Main(MainScenario::default())
    }
}

impl ScenarioSpec {
    pub fn q(&self) -> usize {
        match self {
            Self::Main(s) => s.q,
            Self::Lognormal(s) => s.q,
        }
    }
    pub fn p(&self) -> usize {
        match self {
            Self::Main(s) => s.p,
            Self::Lognormal(s) => s.p,
        }
    }
    pub fn label(&self) -> &'static str {
        match self {
            Self::Main(_) => "main",
            Self::Lognormal(_) => "lognormal",
        }
    }

    pub fn names(&self) -> Vec<String> {
        let (given, q, p) = match self {
            Self::Main(s) => (&s.names, s.q, s.p),
            Self::Lognormal(s) => (&s.names, s.q, s.p),
        };
        given.clone().unwrap_or_else(|| {
            (0..q)
                .map(|l| format!("episodic{}", l + 1))
                .chain((0..p).map(|l| format!("regular{}", l + 1)))
                .collect()
        })
    }

    pub fn validate(&self) -> Result<(), SimulateError> {
        let bad = |m: String| Err(SimulateError::Spec(m));
        let d = self.q() + self.p();
        if d == 0 {
            return bad("no components".into());
        }
        if self.names().len() != d {
            return bad(format!("{} names for {d} components", self.names().len()));
        }
        match self {
            Self::Main(s) => {
                if s.n == 0 || s.occasions == 0 {
                    return bad("n and occasions must be positive".into());
                }
                if s.x_means.len() != d || s.x_means.iter().any(|r| r.len() != s.x_weights.len()) {
                    return bad("x_means must have one row per component and one entry per weight".into());
                }
                if s.eps_kernels.len() + 1 != d || s.eps_kernels.iter().any(|r| r.len() != s.eps_weights.len()) {
                    return bad("eps_kernels needs one row per amount except the last".into());
                }
                if s.eps_laplace.len() != s.eps_weights.len() {
                    return bad("eps_laplace needs one atom per error weight".into());
                }
                if s.gamma0.len() < s.q || s.gamma1.len() < s.q {
                    return bad("gamma0 and gamma1 need an entry per episodic component".into());
                }
                correlation(&s.x_correlation, d)?;
                correlation(&s.eps_correlation, d)?;
            }
            Self::Lognormal(s) => {
                let e = 2 * s.q + s.p;
                if s.n == 0 || s.occasions == 0 || s.is_samples == 0 {
                    return bad("n, occasions and is_samples must be positive".into());
                }
                if s.mu.len() != e || s.x_variances.len() != e || s.u_variances.len() != e {
                    return bad(format!("mu and variances need {e} entries"));
                }
                covariance(&s.x_variances, s.x_rho)?;
                covariance(&s.u_variances, s.u_rho)?;
            }
        }
        Ok(())
    }
}

fn correlation(rows: &[Vec<f64>], d: usize) -> Result<SphericalCorrelation, SimulateError> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(SimulateError::Spec(format!("correlation matrix must be {d}×{d}")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(SphericalCorrelation::from_matrix(&flat, d)?)
}

/// Covariance with the given variances and `ρ^|ℓ-ℓ'|` correlations.
fn covariance(var: &[f64], rho: f64) -> Result<Vec<f64>, SimulateError> {
    let e = var.len();
    if var.iter().any(|v| !(*v > 0.0)) {
        return Err(SimulateError::Spec("variances must be positive".into()));
    }
    let mut s = vec![0.0; e * e];
    for i in 0..e {
        for j in 0..e {
            s[i * e + j] = rho.powi((i as i32 - j as i32).abs()) * (var[i] * var[j]).sqrt();
        }
    }
    if cholesky(&s, e).is_none() {
        return Err(SimulateError::Spec("covariance is not positive definite".into()));
    }
    Ok(s)
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn subject_stream(seed: u64, i: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add((i as u64 + 1).wrapping_mul(GOLDEN)))
}

/// Simulated data and the intakes that produced it (raw units).
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub spec: ScenarioSpec,
    pub seed: u64,
    pub x: Vec<Vec<f64>>,
    pub data: RecallDataset,
}

impl GroundTruth {
    pub fn sidecar(&self) -> TruthSidecar {
        TruthSidecar {
            version: 1,
            seed: self.seed,
            spec: self.spec.clone(),
            names: self.data.names().to_vec(),
            subject_ids: self.data.subject_ids().to_vec(),
            x: self.x.clone(),
        }
    }
}

/// JSON companion of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub version: u32,
    pub seed: u64,
    pub spec: ScenarioSpec,
    pub names: Vec<String>,
    pub subject_ids: Vec<String>,
    pub x: Vec<Vec<f64>>,
}

impl TruthSidecar {
    pub fn write<W: Write>(&self, w: W) -> Result<(), SimulateError> {
        serde_json::to_writer_pretty(w, self).map_err(|e| SimulateError::Sidecar(e.to_string()))
    }
    pub fn read<R: Read>(r: R) -> Result<Self, SimulateError> {
        let s: Self = serde_json::from_reader(r).map_err(|e| SimulateError::Sidecar(e.to_string()))?;
        if s.x.len() != s.subject_ids.len() || s.x.iter().any(|x| x.len() != s.names.len()) {
            return Err(SimulateError::Sidecar(
                "intake table does not match names and subjects".into(),
            ));
        }
        Ok(s)
    }
}

/// Draws a dataset from `spec`; subjects use independent seeded streams.
pub fn simulate(spec: &ScenarioSpec, seed: u64) -> Result<GroundTruth, SimulateError> {
    spec.validate()?;
    match spec {
        ScenarioSpec::Main(s) => generate_main(s, seed),
        ScenarioSpec::Lognormal(s) => generate_lognormal(s, seed),
    }
}

fn assemble(spec: ScenarioSpec, seed: u64, rows: Vec<(Vec<f64>, Vec<Vec<f64>>)>) -> Result<GroundTruth, SimulateError> {
    let names = spec.names();
    let q = spec.q();
    let ids: Vec<String> = (1..=rows.len()).map(|i| i.to_string()).collect();
    let (x, recalls): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let data = RecallDataset::new(names, q, ids, recalls)?;
    Ok(GroundTruth { spec, seed, x, data })
}

/// Standardized error marginals of the main design.
enum ErrorLaw {
    Kernels(ErrorMixture, f64),
    Laplace(ScaledLaplaceMixture),
}

impl ErrorLaw {
    fn quantile(&self, u: f64) -> Result<f64, DensityError> {
        match self {
            Self::Kernels(m, sd) => Ok(m.quantile(u)? / sd),
            Self::Laplace(m) => m.quantile(u),
        }
    }
    fn pdf(&self, e: f64) -> f64 {
        match self {
            Self::Kernels(m, sd) => sd * m.pdf(sd * e),
            Self::Laplace(m) => m.pdf(e),
        }
    }
}

fn error_laws(s: &MainScenario) -> Result<Vec<ErrorLaw>, SimulateError> {
    let mut laws = Vec::with_capacity(s.eps_kernels.len() + 1);
    for row in &s.eps_kernels {
        let kernels = row
            .iter()
            .map(|k| RestrictedErrorKernel::new(k[0], k[1], k[2], k[3]))
            .collect::<Result<Vec<_>, _>>()?;
        let m = ErrorMixture::new(s.eps_weights.clone(), kernels)?;
        let sd = m.variance().sqrt();
        laws.push(ErrorLaw::Kernels(m, sd));
    }
    let (loc, scale): (Vec<f64>, Vec<f64>) = s.eps_laplace.iter().map(|a| (a[0], a[1])).unzip();
    laws.push(ErrorLaw::Laplace(ScaledLaplaceMixture::new(
        s.eps_weights.clone(),
        loc,
        scale,
    )?));
    Ok(laws)
}

fn main_copula(s: &MainScenario) -> Result<GaussianCopula<f64, TruncNormMixture>, SimulateError> {
    let d = s.q + s.p;
    let marginals = s
        .x_means
        .iter()
        .map(|mu| {
            TruncNormMixture::new(
                s.x_weights.clone(),
                mu.clone(),
                vec![s.x_variance; mu.len()],
                s.support.0,
                s.support.1,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GaussianCopula::new(correlation(&s.x_correlation, d)?, marginals)?)
}

const MAX_REDRAWS: usize = 10_000;

pub fn generate_main(s: &MainScenario, seed: u64) -> Result<GroundTruth, SimulateError> {
    let spec = ScenarioSpec::Main(s.clone());
    spec.validate()?;
    let (q, d) = (s.q, s.q + s.p);
    let copula = main_copula(s)?;
    let eps_r = correlation(&s.eps_correlation, d)?;
    let laws = error_laws(s)?;
    let rows = (0..s.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = subject_stream(seed, i);
            let x = copula.sample(1, &mut rng)?.remove(0);
            let mut recalls = Vec::with_capacity(s.occasions);
            for _ in 0..s.occasions {
                // redraw the error vector until every amount is positive
                let mut amounts = None;
                for _ in 0..MAX_REDRAWS {
                    let y = eps_r.sample_scores(&mut rng);
                    let w = (0..d)
                        .map(|l| {
                            let u = norm_cdf(y[l]).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
                            laws[l].quantile(u).map(|e| x[l] + x[l] / 3.0 * e)
                        })
                        .collect::<Result<Vec<f64>, _>>()?;
                    if w.iter().all(|&v| v > 0.0) {
                        amounts = Some(w);
                        break;
                    }
                }
                let mut w = amounts.ok_or_else(|| SimulateError::Spec("errors never yield positive amounts".into()))?;
                for l in 0..q {
                    let z: f64 = rng.sample(StandardNormal);
                    if s.gamma0[l] + s.gamma1[l] * newlog(x[l]) + z <= 0.0 {
                        w[l] = 0.0;
                    }
                }
                recalls.push(w);
            }
            Ok((x, recalls))
        })
        .collect::<Result<Vec<_>, SimulateError>>()?;
    assemble(spec, seed, rows)
}

fn mvn_draw<R: Rng + ?Sized>(rng: &mut R, mean: &[f64], chol: &[f64]) -> Vec<f64> {
    let e = mean.len();
    let z: Vec<f64> = (0..e).map(|_| rng.sample(StandardNormal)).collect();
    (0..e)
        .map(|i| mean[i] + (0..=i).map(|k| chol[i * e + k] * z[k]).sum::<f64>())
        .collect()
}

pub fn generate_lognormal(s: &LognormalScenario, seed: u64) -> Result<GroundTruth, SimulateError> {
    let spec = ScenarioSpec::Lognormal(s.clone());
    spec.validate()?;
    let (q, p) = (s.q, s.p);
    let e = 2 * q + p;
    let lx = cholesky(&covariance(&s.x_variances, s.x_rho)?, e).expect("validated");
    let lu = cholesky(&covariance(&s.u_variances, s.u_rho)?, e).expect("validated");
    let zero = vec![0.0; e];
    let rows = (0..s.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = subject_stream(seed, i);
            let xt = mvn_draw(&mut rng, &s.mu, &lx);
            let x: Vec<f64> = (0..q + p)
                .map(|l| {
                    let amount = xt[q + l].exp();
                    if l < q {
                        norm_cdf(xt[l]) * amount
                    } else {
                        amount
                    }
                })
                .collect();
            let recalls = (0..s.occasions)
                .map(|_| {
                    let u = mvn_draw(&mut rng, &zero, &lu);
                    (0..q + p)
                        .map(|l| {
                            let k = q + l;
                            let amount = (xt[k] + u[k] - s.u_variances[k] / 2.0).exp();
                            if l < q && xt[l] + u[l] <= 0.0 {
                                0.0
                            } else {
                                amount
                            }
                        })
                        .collect()
                })
                .collect();
            (x, recalls)
        })
        .collect();
    assemble(spec, seed, rows)
}

/// A truth density value with its Monte Carlo uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthValue {
    pub value: f64,
    /// Standard error; zero for closed forms.
    pub se: f64,
    /// Effective sample size of the importance weights; infinite for closed forms.
    pub ess: f64,
}

impl TruthValue {
    fn exact(value: f64) -> Self {
        Self {
            value,
            se: 0.0,
            ess: f64::INFINITY,
        }
    }
    /// Importance sampling with fewer than 100 effective draws.
    pub fn degenerate(&self) -> bool {
        self.ess < 100.0
    }
}

/// Normal law of coordinates `b` given coordinates `a`.
#[derive(Debug, Clone)]
struct GaussianConditional {
    a: Vec<usize>,
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    // |b| × |a| regression coefficients
    coef: Vec<f64>,
    chol: Vec<f64>,
    ln_norm: f64,
}

impl GaussianConditional {
    fn new(mu: &[f64], cov: &[f64], a: &[usize], b: &[usize]) -> Self {
        let e = mu.len();
        let (na, nb) = (a.len(), b.len());
        let sub = |r: &[usize], c: &[usize]| -> Vec<f64> {
            r.iter().flat_map(|&i| c.iter().map(move |&j| cov[i * e + j])).collect()
        };
        let s_aa = sub(a, a);
        let s_ba = sub(b, a);
        let mut s_bb = sub(b, b);
        let inv_aa = if na > 0 {
            inverse_from_cholesky(&cholesky(&s_aa, na).expect("positive definite"), na)
        } else {
            Vec::new()
        };
        let mut coef = vec![0.0; nb * na];
        for i in 0..nb {
            for j in 0..na {
                coef[i * na + j] = (0..na).map(|k| s_ba[i * na + k] * inv_aa[k * na + j]).sum();
            }
        }
        for i in 0..nb {
            for j in 0..nb {
                s_bb[i * nb + j] -= (0..na).map(|k| coef[i * na + k] * s_ba[j * na + k]).sum::<f64>();
            }
        }
        let chol = cholesky(&s_bb, nb).expect("positive definite");
        let ln_det: f64 = (0..nb).map(|i| 2.0 * chol[i * nb + i].ln()).sum();
        Self {
            a: a.to_vec(),
            mu_a: a.iter().map(|&i| mu[i]).collect(),
            mu_b: b.iter().map(|&i| mu[i]).collect(),
            coef,
            chol,
            ln_norm: -0.5 * (nb as f64 * (2.0 * std::f64::consts::PI).ln() + ln_det),
        }
    }

    fn ln_pdf(&self, za: &[f64], tb: &[f64], resid: &mut Vec<f64>) -> f64 {
        let (na, nb) = (self.a.len(), self.mu_b.len());
        resid.clear();
        for i in 0..nb {
            let m = self.mu_b[i]
                + (0..na)
                    .map(|k| self.coef[i * na + k] * (za[k] - self.mu_a[k]))
                    .sum::<f64>();
            resid.push(tb[i] - m);
        }
        forward_solve(&self.chol, nb, resid);
        self.ln_norm - 0.5 * resid.iter().map(|r| r * r).sum::<f64>()
    }
}

/// Truth densities of the lognormal design.
#[derive(Debug, Clone)]
pub struct LognormalTruth {
    q: usize,
    p: usize,
    mu: Vec<f64>,
    cov: Vec<f64>,
    /// Standard normal draws reused at every evaluation point.
    base: Vec<Vec<f64>>,
}

impl LognormalTruth {
    pub fn new(s: &LognormalScenario) -> Result<Self, SimulateError> {
        ScenarioSpec::Lognormal(s.clone()).validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(s.is_seed);
        let base = (0..s.is_samples)
            .map(|_| (0..s.q).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        Ok(Self {
            q: s.q,
            p: s.p,
            mu: s.mu.clone(),
            cov: covariance(&s.x_variances, s.x_rho)?,
            base,
        })
    }

    fn var(&self, i: usize) -> f64 {
        self.cov[i * self.mu.len() + i]
    }

    /// Closed-form lognormal marginal of a regular component.
    pub fn regular_marginal_exact(&self, l: usize, x: f64) -> f64 {
        assert!(l >= self.q, "component {l} is episodic");
        if x <= 0.0 {
            return 0.0;
        }
        let k = self.q + l;
        let v = self.var(k);
        (-(x.ln() - self.mu[k]).powi(2) / (2.0 * v)).exp() / (x * (2.0 * std::f64::consts::PI * v).sqrt())
    }

    /// Importance-sampling estimate of `∫ f(z_a, t(x, z)) / g(z_a) dz_a`, with
    /// `g` the exact normal marginal of the conditioning coordinates `a`.
    fn importance(&self, a: &[usize], targets: &[usize], x: &[f64]) -> TruthValue {
        if x.iter().any(|&v| !(v > 0.0)) {
            return TruthValue::exact(0.0);
        }
        let b: Vec<usize> = targets.iter().map(|&l| self.q + l).collect();
        let cond = GaussianConditional::new(&self.mu, &self.cov, a, &b);
        let na = a.len();
        let e = self.mu.len();
        let sub: Vec<f64> = a
            .iter()
            .flat_map(|&i| a.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.cov[i * e + j])
            .collect();
        let chol = cholesky(&sub, na).unwrap_or_default();
        let ln_jac: f64 = x.iter().map(|v| v.ln()).sum();
        let (mut s1, mut s2) = (0.0, 0.0);
        let mut za = vec![0.0; na];
        let mut t = vec![0.0; b.len()];
        let mut resid = Vec::with_capacity(b.len());
        let m = if na == 0 { 1 } else { self.base.len() };
        for draw in self.base.iter().take(m) {
            for i in 0..na {
                za[i] = self.mu[a[i]] + (0..=i).map(|k| chol[i * na + k] * draw[k]).sum::<f64>();
            }
            for (j, &l) in targets.iter().enumerate() {
                t[j] = if l < self.q {
                    let pos = a
                        .iter()
                        .position(|&i| i == l)
                        .expect("episodic target conditions on its indicator");
                    (x[j] / norm_cdf(za[pos])).ln()
                } else {
                    x[j].ln()
                };
            }
            let w = (cond.ln_pdf(&za, &t, &mut resid) - ln_jac).exp();
            s1 += w;
            s2 += w * w;
        }
        let mf = m as f64;
        let mean = s1 / mf;
        let var = (s2 / mf - mean * mean).max(0.0);
        TruthValue {
            value: mean,
            se: if na == 0 { 0.0 } else { (var / mf).sqrt() },
            ess: if na == 0 || s2 == 0.0 {
                f64::INFINITY
            } else {
                s1 * s1 / s2
            },
        }
    }

    /// Marginal density; episodic components condition on their own indicator
    /// coordinate, regular ones on every indicator coordinate.
    pub fn marginal(&self, l: usize, x: f64) -> TruthValue {
        let a: Vec<usize> = if l < self.q { vec![l] } else { (0..self.q).collect() };
        self.importance(&a, &[l], &[x])
    }

    pub fn joint(&self, x: &[f64]) -> TruthValue {
        let a: Vec<usize> = (0..self.q).collect();
        let targets: Vec<usize> = (0..self.q + self.p).collect();
        self.importance(&a, &targets, x)
    }

    /// Joint density of a pair of components.
    pub fn bivariate(&self, l1: usize, l2: usize, x1: f64, x2: f64) -> TruthValue {
        let a: Vec<usize> = [l1, l2].into_iter().filter(|&l| l < self.q).collect();
        self.importance(&a, &[l1, l2], &[x1, x2])
    }
}

/// Truth densities of the main design.
#[derive(Debug, Clone)]
pub struct MainTruth {
    copula: GaussianCopula<f64, TruncNormMixture>,
}

impl MainTruth {
    pub fn new(s: &MainScenario) -> Result<Self, SimulateError> {
        ScenarioSpec::Main(s.clone()).validate()?;
        Ok(Self {
            copula: main_copula(s)?,
        })
    }
    pub fn marginal(&self, l: usize, x: f64) -> f64 {
        self.copula.marginals()[l].pdf(x)
    }
    pub fn joint(&self, x: &[f64]) -> f64 {
        self.copula.ln_pdf(x).map(f64::exp).unwrap_or(0.0)
    }
    pub fn bivariate(&self, a: usize, b: usize, xa: f64, xb: f64) -> f64 {
        let m = self.copula.marginals();
        let (ma, mb) = (&m[a], &m[b]);
        let rho = self.copula.correlation().get(a, b);
        let ya = crate::densities::normal_score(ma.cdf(xa), ma.sf(xa));
        let yb = crate::densities::normal_score(mb.cdf(xb), mb.sf(xb));
        if !ya.is_finite() || !yb.is_finite() {
            return 0.0;
        }
        let one = 1.0 - rho * rho;
        let ln_c = -0.5 * one.ln() - (rho * rho * (ya * ya + yb * yb) - 2.0 * rho * ya * yb) / (2.0 * one);
        ln_c.exp() * ma.pdf(xa) * mb.pdf(xb)
    }
    pub fn correlation(&self) -> &SphericalCorrelation {
        self.copula.correlation()
    }
}

/// Standardized error density of amount coordinate `k` under the main design.
pub fn main_error_pdf(s: &MainScenario, k: usize, e: f64) -> Result<f64, SimulateError> {
    Ok(error_laws(s)?[k].pdf(e))
}

/// Consumption probability `P(W > 0 | X = x)` of episodic component `l` under
/// the main design.
pub fn main_probability(s: &MainScenario, l: usize, x: f64) -> f64 {
    norm_cdf(s.gamma0[l] + s.gamma1[l] * newlog(x))
}

/// Truth densities of either design.
#[derive(Debug, Clone)]
pub enum TruthModel {
    Main(MainTruth),
    Lognormal(LognormalTruth),
}

impl TruthModel {
    pub fn new(spec: &ScenarioSpec) -> Result<Self, SimulateError> {
        Ok(match spec {
            ScenarioSpec::Main(s) => Self::Main(MainTruth::new(s)?),
            ScenarioSpec::Lognormal(s) => Self::Lognormal(LognormalTruth::new(s)?),
        })
    }
    pub fn marginal(&self, l: usize, x: f64) -> TruthValue {
        match self {
            Self::Main(t) => TruthValue::exact(t.marginal(l, x)),
            Self::Lognormal(t) => t.marginal(l, x),
        }
    }
    pub fn joint(&self, x: &[f64]) -> TruthValue {
        match self {
            Self::Main(t) => TruthValue::exact(t.joint(x)),
            Self::Lognormal(t) => t.joint(x),
        }
    }
    pub fn bivariate(&self, a: usize, b: usize, xa: f64, xb: f64) -> TruthValue {
        match self {
            Self::Main(t) => TruthValue::exact(t.bivariate(a, b, xa, xb)),
            Self::Lognormal(t) => t.bivariate(a, b, xa, xb),
        }
    }
}
