//! Bayesian copula density deconvolution for replicate measurements that are
//! zero-inflated, heteroscedastic and observed with non-Gaussian error.
//!
//! The numerical building blocks (splines, densities, correlation
//! parametrization, linear algebra) are generic over [`scalar::Real`]; the
//! sampler and everything built on it run in `f64`. The aliases below name the
//! `f64` instantiations.

// NaN-rejecting comparisons are written as negated orderings on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod copula;
pub mod densities;
pub mod evaluate;
pub mod latent;
pub mod linalg;
pub mod optim;
pub mod quadrature;
pub mod sampler;
pub mod scalar;
pub mod simulate;
pub mod special;
pub mod splines;

pub use scalar::Real;

pub type SplineBasis = splines::SplineBasis<f64>;
pub type PenaltyMatrix = splines::PenaltyMatrix<f64>;
pub type BsplineDensity = densities::BsplineDensity<f64>;
pub type TruncNormMixture = densities::TruncNormMixture<f64>;
pub type RestrictedErrorKernel = densities::RestrictedErrorKernel<f64>;
pub type ErrorMixture = densities::ErrorMixture<f64>;
pub type ScaledLaplaceMixture = densities::ScaledLaplaceMixture<f64>;
pub type AnyDensity = densities::AnyDensity<f64>;
pub type SphericalCorrelation = copula::SphericalCorrelation<f64>;
pub type GaussianCopula<M> = copula::GaussianCopula<f64, M>;

pub use evaluate::{DensityGrid, GridKind, IseReport};
pub use latent::RecallDataset;
pub use sampler::{run_chain, GridSpec, Hyperparameters, PosteriorDensity, PosteriorDraws, SamplerError};
pub use simulate::{simulate, GroundTruth, ScenarioSpec, TruthModel};
