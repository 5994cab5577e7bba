//! Numerical verification of mutual-information / MMSE identities on K-user
//! Gaussian multiple-access channels.
//!
//! The model is y = Σ_k √snr·H_k·P_k·x_k + n with circularly-symmetric
//! complex noise of identity covariance. For discrete inputs the crate
//! computes exact enumeration posteriors and Monte Carlo estimates of the
//! joint, marginal and SIC-conditional mutual informations together with
//! per-user MMSE matrices and the interference covariance term psi, and
//! checks dI/dsnr = mmse + psi against paired finite differences. For
//! Gaussian inputs everything is closed form (log-det informations, exact
//! derivatives) and doubles as an oracle.
//!
//! Modules:
//! * [`model`] — channel, scenario and validation types;
//! * [`inputs`] — constellations, enumeration, seeded sampling;
//! * [`bayes`] — posteriors, MMSE/psi estimation, the aggregate oracle;
//! * [`mi`] — Monte Carlo mutual-information estimators;
//! * [`gaussian`] — closed forms for Gaussian inputs;
//! * [`identities`] — the verification harness;
//! * [`sweep`] / [`presets`] — grid evaluation and bundled scenarios.
//!
//! Everything numeric is generic over [`Scalar`] (f32 or f64); the aliases
//! below pin the f64 instantiations used by the CLI.

pub mod bayes;
mod error;
pub mod gaussian;
pub mod identities;
pub mod inputs;
pub mod linalg;
mod mc;
pub mod mi;
pub mod model;
pub mod presets;
pub mod scalar;
pub mod sweep;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Complex double-precision scalar.
pub type C64 = num_complex::Complex<f64>;
/// Double-precision complex matrix.
pub type Matrix64 = linalg::ComplexMatrix<f64>;
/// Double-precision system model.
pub type SystemModel64 = model::SystemModel<f64>;
/// Double-precision scenario.
pub type Scenario64 = model::Scenario<f64>;
