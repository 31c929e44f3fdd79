//! Variational denoising of multi-channel images with convex regularizers of linear
//! growth.
//!
//! The crate provides
//!
//! * scalar densities `ψ` (`Φ_μ`, its normalized form, pseudo-Huber, linear) with
//!   derivative and structural-constant checks ([`density`]),
//! * discrete image fields with the forward-difference gradient and its adjoint
//!   ([`field`]),
//! * isotropic `ψ(|∇u|)` and spectral `Σψ(λ_i(∇u))` energies ([`energy`], [`spectral`]),
//! * convex sets in channel space with their nearest-point projections ([`constraints`]),
//! * a gradient-descent solver for the smooth energies ([`solver`]),
//! * a primal-dual reference solver for isotropic and nuclear-norm TV ([`tv`]),
//! * image I/O, a property-verification suite and the CLI ([`io`], [`verify`], [`cli`]).

pub mod cli;
pub mod constraints;
pub mod density;
pub mod energy;
pub mod error;
pub mod field;
pub mod io;
pub mod solver;
pub mod spectral;
pub mod tv;
pub mod verify;

pub use density::ScalarDensity;
pub use energy::{EnergyModel, Fidelity, Regularizer};
pub use error::{Error, Result};
pub use field::{ImageField, JacobianField};
