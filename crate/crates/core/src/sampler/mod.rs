//! Markov chain Monte Carlo for the copula deconvolution model.
//!
//! The marginal parameters are refreshed under a pseudo-likelihood that
//! ignores the copulas; the intakes and the two correlation matrices are then
//! updated against the full likelihood. One [`SamplerState::sweep`] runs the
//! seven blocks in a fixed order.

mod draws;
mod estimate;
mod init;
mod model;
mod steps;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latent::LatentError;
use crate::splines::{PenaltyMatrix, SplineBasis};

pub use draws::{AcceptanceSummary, DrawFormat, DrawLayout, PosteriorDraws};
pub use estimate::{estimate_densities, BivariateTable, GridSpec, PosteriorDensity};
pub use model::{Dims, FittedModel, Parameters};
pub use steps::{accept, dirichlet, gaussian_from_precision, grid_move, inverse_gamma, sample_log_weights};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid hyperparameter: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] LatentError),
    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },
    #[error("malformed draws: {0}")]
    Format(String),
    #[error("no posterior draws")]
    EmptyDraws,
    #[error("grid point {value} outside [{lower}, {upper}]")]
    GridOutOfRange { value: f64, lower: f64, upper: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Prior hyperparameters, proposal scales and the chain schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    /// Number of B-spline bases for densities, probabilities and variances.
    pub num_bases: usize,
    pub support_lower: f64,
    pub support_upper: f64,
    /// Upper end of the variance-function basis; beyond it `s²` is constant.
    pub variance_upper: f64,
    /// Shared atoms for the regular intake densities; `None` gives `max(5(q+p), 20)`.
    pub x_atoms: Option<usize>,
    pub eps_atoms: Option<usize>,
    pub alpha_x: f64,
    pub alpha_eps: f64,
    pub a_xi: f64,
    pub b_xi: f64,
    pub a_beta: f64,
    pub b_beta: f64,
    pub a_vartheta: f64,
    pub b_vartheta: f64,
    pub mu_x0: f64,
    pub var_x0: f64,
    pub a_var_x0: f64,
    pub b_var_x0: f64,
    pub var_mu_tilde: f64,
    pub a_eps: f64,
    pub b_eps: f64,
    pub beta_prior_mean: f64,
    pub beta_prior_var: f64,
    pub initial_smoothing_var: f64,
    pub xi_step: f64,
    pub vartheta_step: f64,
    pub x_step: f64,
    pub atom_mu_step: f64,
    pub atom_var_step: f64,
    pub eps_p_step: f64,
    pub eps_mu_step: f64,
    pub eps_var_step: f64,
    /// Points in each copula parameter grid.
    pub grid_size: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Conditional sweeps that warm up the shared atoms before the chain.
    pub warm_sweeps: usize,
    pub adapt_interval: usize,
    pub adapt_low: f64,
    pub adapt_high: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            num_bases: 12,
            support_lower: 0.0,
            support_upper: 10.0,
            variance_upper: 20.0,
            x_atoms: None,
            eps_atoms: None,
            alpha_x: 1.0,
            alpha_eps: 1.0,
            a_xi: 10.0,
            b_xi: 1.0,
            a_beta: 10.0,
            b_beta: 1.0,
            a_vartheta: 10.0,
            b_vartheta: 1.0,
            mu_x0: 5.0,
            var_x0: 25.0,
            a_var_x0: 1.0,
            b_var_x0: 1.0,
            var_mu_tilde: 4.0,
            a_eps: 3.0,
            b_eps: 2.0,
            beta_prior_mean: 0.0,
            beta_prior_var: 10.0,
            initial_smoothing_var: 0.1,
            xi_step: 0.05,
            vartheta_step: 0.05,
            x_step: 0.25,
            atom_mu_step: 0.3,
            atom_var_step: 0.3,
            eps_p_step: 0.1,
            eps_mu_step: 0.3,
            eps_var_step: 0.3,
            grid_size: 41,
            iterations: 5000,
            burn_in: 3000,
            thin: 5,
            warm_sweeps: 100,
            adapt_interval: 50,
            adapt_low: 0.15,
            adapt_high: 0.40,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let positive = [
            ("alpha_x", self.alpha_x),
            ("alpha_eps", self.alpha_eps),
            ("a_xi", self.a_xi),
            ("b_xi", self.b_xi),
            ("a_beta", self.a_beta),
            ("b_beta", self.b_beta),
            ("a_vartheta", self.a_vartheta),
            ("b_vartheta", self.b_vartheta),
            ("var_x0", self.var_x0),
            ("a_var_x0", self.a_var_x0),
            ("b_var_x0", self.b_var_x0),
            ("var_mu_tilde", self.var_mu_tilde),
            ("a_eps", self.a_eps),
            ("b_eps", self.b_eps),
            ("beta_prior_var", self.beta_prior_var),
            ("initial_smoothing_var", self.initial_smoothing_var),
            ("xi_step", self.xi_step),
            ("vartheta_step", self.vartheta_step),
            ("x_step", self.x_step),
            ("atom_mu_step", self.atom_mu_step),
            ("atom_var_step", self.atom_var_step),
            ("eps_p_step", self.eps_p_step),
            ("eps_mu_step", self.eps_mu_step),
            ("eps_var_step", self.eps_var_step),
            ("variance_upper", self.variance_upper),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SamplerError::Config(format!("`{name}` must be positive, got {v}")));
            }
        }
        if !(self.support_upper > self.support_lower) {
            return Err(SamplerError::Config("support_upper must exceed support_lower".into()));
        }
        if self.num_bases < 3 {
            return Err(SamplerError::Config("num_bases must be at least 3".into()));
        }
        if self.x_atoms == Some(0) || self.eps_atoms == Some(0) {
            return Err(SamplerError::Config("atom counts must be at least 1".into()));
        }
        if self.grid_size < 3 || self.grid_size.is_multiple_of(2) {
            return Err(SamplerError::Config("grid_size must be odd and at least 3".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(SamplerError::Config(format!(
                "burn_in {} must be below iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 || self.adapt_interval == 0 {
            return Err(SamplerError::Config("thin and adapt_interval must be positive".into()));
        }
        if !(self.adapt_low > 0.0 && self.adapt_low < self.adapt_high && self.adapt_high < 1.0) {
            return Err(SamplerError::Config("need 0 < adapt_low < adapt_high < 1".into()));
        }
        Ok(())
    }

    /// Atom counts for `d` components.
    pub fn atoms(&self, d: usize) -> (usize, usize) {
        let default = (5 * d).max(20);
        (self.x_atoms.unwrap_or(default), self.eps_atoms.unwrap_or(default))
    }

    /// Number of retained snapshots.
    pub fn num_draws(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Latent quantities of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectState {
    /// Long-term intakes (q + p).
    pub x: Vec<f64>,
    /// Surrogates per occasion (2q + p), imputed where latent.
    pub w: Vec<Vec<f64>>,
    /// Consumption indicators per occasion (q).
    pub consumed: Vec<Vec<bool>>,
    /// Atom labels of the regular intakes (p).
    pub x_labels: Vec<usize>,
    /// Error atom labels per occasion and amount coordinate.
    pub eps_labels: Vec<Vec<usize>>,
    /// Kernel branch within the error atom (0 or 1).
    pub eps_branch: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Counter {
    pub accepted: u64,
    pub proposed: u64,
    pub window_accepted: u64,
    pub window_proposed: u64,
}

impl Counter {
    pub(crate) fn record(&mut self, accepted: bool, keep: bool) {
        self.window_proposed += 1;
        self.window_accepted += accepted as u64;
        if keep {
            self.proposed += 1;
            self.accepted += accepted as u64;
        }
    }
    pub(crate) fn merge(&mut self, other: &Counter) {
        self.accepted += other.accepted;
        self.proposed += other.proposed;
        self.window_accepted += other.window_accepted;
        self.window_proposed += other.window_proposed;
    }
    pub(crate) fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Acceptance counters per Metropolis–Hastings block.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Acceptance {
    pub xi: Vec<Counter>,
    pub vartheta: Vec<Counter>,
    pub x: Vec<Counter>,
    pub x_atom_mu: Counter,
    pub x_atom_var: Counter,
    pub eps_atom: Counter,
    pub rx: Counter,
    pub re: Counter,
}

/// Full sampler state.
#[derive(Debug, Clone)]
pub struct SamplerState {
    pub dims: Dims,
    pub hp: Hyperparameters,
    pub names: Vec<String>,
    pub subjects: Vec<SubjectState>,
    pub params: Parameters,
    pub var_xi: Vec<f64>,
    pub var_vartheta: Vec<f64>,
    pub var_beta: Vec<f64>,
    /// Grid indices of the copula parameters: `(b, θ)` for intakes and errors.
    pub(crate) rx_idx: (Vec<usize>, Vec<usize>),
    pub(crate) re_idx: (Vec<usize>, Vec<usize>),
    pub(crate) scale_xi: Vec<f64>,
    pub(crate) scale_vartheta: Vec<f64>,
    pub(crate) scale_x: Vec<f64>,
    pub(crate) acceptance: Acceptance,
    pub iteration: usize,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) penalty: PenaltyMatrix,
    pub(crate) basis: SplineBasis,
    pub(crate) var_basis: SplineBasis,
}

/// Multiplier that spreads per-subject stream seeds.
const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub(crate) fn subject_rng(key: u64, i: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key.wrapping_add((i as u64).wrapping_mul(GOLDEN)))
}

/// Value of grid point `m` (0-based) on `[-edge, edge]`.
pub(crate) fn grid_value(edge: f64, m: usize, size: usize) -> f64 {
    -edge + 2.0 * edge * m as f64 / (size - 1) as f64
}

pub(crate) const B_EDGE: f64 = 0.99;
// the grid stops just short of ±π
#[allow(clippy::approx_constant)]
pub(crate) const THETA_EDGE: f64 = 3.14;

impl SamplerState {
    /// Posterior acceptance rates accumulated after burn-in.
    pub fn acceptance_summary(&self) -> AcceptanceSummary {
        let a = &self.acceptance;
        let mut rates = std::collections::BTreeMap::new();
        for (l, c) in a.xi.iter().enumerate() {
            rates.insert(format!("xi.{}", self.names[l]), c.rate());
        }
        for (k, c) in a.vartheta.iter().enumerate() {
            rates.insert(format!("vartheta.{}", self.names[k]), c.rate());
        }
        for (l, c) in a.x.iter().enumerate() {
            rates.insert(format!("x.{}", self.names[l]), c.rate());
        }
        if self.dims.p > 0 {
            rates.insert("x_atom_mu".into(), a.x_atom_mu.rate());
            rates.insert("x_atom_var".into(), a.x_atom_var.rate());
        }
        rates.insert("eps_atom".into(), a.eps_atom.rate());
        if self.dims.components() > 1 {
            rates.insert("copula_x".into(), a.rx.rate());
            rates.insert("copula_eps".into(), a.re.rate());
        }
        AcceptanceSummary { rates }
    }

    /// Current model implied by the parameters.
    pub fn model(&self) -> Result<FittedModel, SamplerError> {
        FittedModel::new(&self.dims, &self.params)
    }
}

/// Initializes and runs a chain, keeping thinned snapshots after burn-in.
pub fn run_chain(
    data: &crate::latent::RecallDataset,
    hp: &Hyperparameters,
    seed: u64,
) -> Result<PosteriorDraws, SamplerError> {
    let mut state = SamplerState::initialize(data, hp, seed)?;
    let names = Parameters::field_names(&state.dims, &state.names);
    let mut rows = Vec::with_capacity(hp.num_draws());
    let mut iterations = Vec::with_capacity(hp.num_draws());
    let n = state.subjects.len();
    let d = state.dims.components();
    let mut x_sum = vec![vec![0.0; d]; n];
    for t in 1..=hp.iterations {
        state.sweep()?;
        if t > hp.burn_in && (t - hp.burn_in).is_multiple_of(hp.thin) {
            rows.push(state.params.to_row());
            iterations.push(t);
            for (acc, s) in x_sum.iter_mut().zip(&state.subjects) {
                acc.iter_mut().zip(&s.x).for_each(|(a, v)| *a += v);
            }
        }
    }
    let kept = rows.len().max(1) as f64;
    let layout = DrawLayout {
        version: 1,
        names: state.names.clone(),
        subject_ids: data.subject_ids().to_vec(),
        dims: state.dims.clone(),
        scale_factors: data.scale_factors().to_vec(),
        iterations: hp.iterations,
        burn_in: hp.burn_in,
        thin: hp.thin,
        seed,
        acceptance: state.acceptance_summary(),
        posterior_mean_x: x_sum
            .into_iter()
            .map(|v| v.into_iter().map(|s| s / kept).collect())
            .collect(),
        fields: names,
    };
    PosteriorDraws::new(layout, iterations, rows)
}
