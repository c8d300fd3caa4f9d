//! Tamed unadjusted Langevin sampling for potentials with super-linearly
//! growing gradients.
//!
//! The crate is organised around six pieces:
//!
//! * [`potential`]: potentials `u` with gradient, Hessian and regularity constants,
//! * [`taming`]: the tamed drift `h_λ`, its Jacobian and the step cap `λ_max`,
//! * [`sampler`]: kTULA and ULA chains with reproducible seeding,
//! * [`bounds`]: the analytic constants and `(λ, n, β)` prescriptions,
//! * [`diagnostics`]: moments, Wasserstein and KL proxies, rate fitting,
//! * [`reference`]: quadrature and grid-search oracles.
//!
//! The [`cli`] module wires these into the `ktula` binary.

pub mod error;
pub mod format;
pub mod linalg;
pub mod margin;
pub mod potential;
pub mod taming;
pub mod sampler;
pub mod bounds;
pub mod cli;
pub mod diagnostics;
pub mod reference;

pub use error::{KtulaError, Result};
