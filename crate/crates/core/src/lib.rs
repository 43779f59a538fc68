//! Irreversible two-phase accretive growth coupled to finite-strain
//! viscoelasticity in two dimensions.
//!
//! The deformation is advanced by incremental energy minimization for a
//! frozen time-of-attachment field `θ` ([`mechanics`]), `θ` is recomputed
//! from the deformation by fast marching ([`eikonal`]), and the two are
//! alternated to a fixed point ([`coupling`]). [`audit`] checks the
//! resulting trajectory against the energy balance.

pub mod audit;
pub mod cli;
pub mod config;
pub mod contour;
pub mod coupling;
pub mod eikonal;
pub mod error;
pub mod fields;
pub mod gradcheck;
pub mod io;
pub mod lbfgs;
pub mod material;
pub mod mechanics;
pub mod precond;
pub mod tensor;

pub use error::{Error, Result};
