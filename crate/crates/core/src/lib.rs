//! Geodesic-flow toolkit for nonlocal geometric kernels on closed
//! Riemannian manifolds.

pub mod cli;
pub mod config;
pub mod conjugacy;
pub mod error;
pub mod generator;
pub mod geodesic;
pub mod levy;
pub mod manifold;
pub mod symplectic;

pub use error::{GeoError, Result};
