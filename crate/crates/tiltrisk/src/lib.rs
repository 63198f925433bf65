//! Minimax statistical decision-making under joint prior ambiguity and
//! likelihood misspecification.
//!
//! Misspecification enters as an exponential tilt of the loss function,
//! ambiguity as a search for the least favorable prior. The crate provides:
//!
//! - [`numeric`]: special functions, Gauss-Hermite quadrature, bounded 1-D
//!   optimization, and reproducible random streams.
//! - [`tilt`]: the variational decision criterion (Donsker-Varadhan risk,
//!   phi-divergence conjugates, smooth-ambiguity evaluation, geometric
//!   mixture likelihoods).
//! - [`limit_exp`]: closed-form optimal rules and minimax values in the
//!   Gaussian limit experiment (estimation, treatment assignment, linex).
//! - [`game`]: a double-oracle solver for the statistician-vs-nature game
//!   over finitely supported priors, with saddle-point verification.
//! - [`finite_sample`]: finite-sample experiment models, estimators, and a
//!   common-random-numbers Monte Carlo harness that checks convergence of
//!   plug-in rules to the limit-experiment values.

pub mod finite_sample;
pub mod game;
pub mod limit_exp;
pub mod numeric;
pub mod tilt;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite integrand at node {node}")]
    NonFiniteIntegrand { node: f64 },
    #[error("bracket failure: grid maximum at {at} lies on the boundary [{lo}, {hi}]")]
    BracketFailure { at: f64, lo: f64, hi: f64 },
    #[error("overflow guard: exponent {0} exceeds 700")]
    OverflowGuard(f64),
    #[error("no interior maximum below delta_max = {0}")]
    NoInteriorMaximum(f64),
    #[error("did not converge: gap {gap} after {iters} iterations")]
    DidNotConverge { gap: f64, iters: usize },
    #[error("singular weighting matrix")]
    SingularWeighting,
    #[error("singular omega matrix")]
    SingularOmega,
    #[error("empty zero set: no grid point with |mu(theta)| within tolerance")]
    EmptyZeroSet,
    #[error("degenerate information: {0}")]
    DegenerateInformation(String),
    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),
    #[error("not symmetric positive definite: {0}")]
    NotSpd(String),
    #[error("unknown identifier: {0}")]
    UnknownName(String),
}

pub type Result<T> = std::result::Result<T, Error>;
