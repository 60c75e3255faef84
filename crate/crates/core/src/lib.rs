//! Solver toolkit for second-order elliptic problems with high-contrast,
//! multiscale coefficients on general polygonal meshes.
//!
//! The pipeline discretizes `-div(kappa grad u) = f` on the unit square with
//! virtual elements of degree 1 or 2, decomposes the mesh into (possibly
//! irregular) subdomains, builds a partition of unity on the subdomain
//! skeleton, enriches the coarse space with eigenfunctions of local
//! generalized eigenproblems, and solves the resulting system with a
//! preconditioned conjugate gradient iteration wrapped around one- and
//! two-level additive Schwarz preconditioners.

pub mod coarse;
pub mod decomposition;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod mesh;
pub mod pu;
pub mod schwarz;
pub mod vem;

pub use error::{Error, Result};
