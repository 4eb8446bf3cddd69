//! Neural-network surrogates for FEM-discretized parametric Stokes and
//! Navier-Stokes flow, trained on a Cholesky/Schur preconditioned residual.
//!
//! The pipeline: [`mesh`] builds or reads a triangulation, [`fem`] assembles
//! Taylor-Hood systems, [`precond`] factors them, [`nn`] and [`optim`]
//! provide the network and L-BFGS, [`train`] ties these into a loss,
//! [`reference`] computes classical solutions and [`inverse`] samples the
//! angle-of-attack posterior through a trained surrogate.

pub mod checkpoint;
pub mod error;
pub mod fem;
pub mod inverse;
pub mod linalg;
pub mod mesh;
pub mod nn;
pub mod optim;
pub mod precond;
pub mod reference;
pub mod train;

pub use error::{Error, Result};
