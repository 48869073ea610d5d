//! Numerical laboratory for generalised reflected Brownian motion (GRBM)
//! in polyhedral domains.
//!
//! The crate validates skew-symmetry conditions on reflection data, evaluates
//! closed-form product invariant densities, certifies the basic adjoint
//! relations numerically, and cross-checks everything against Monte Carlo
//! simulation of the diffusions: TASEP-like particle systems, Pitman-type
//! path transforms and the one-dimensional Dufresne construction.

pub mod adjoint;
pub mod config;
pub mod density;
pub mod domain;
pub mod dufresne;
pub mod particles;
pub mod pitman;
pub mod potential;
pub mod presets;
pub mod quad;
pub mod sde;
pub mod stats;

pub use domain::{DomainKind, ReflectionData};
pub use potential::Potential;
