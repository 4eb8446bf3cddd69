//! Taylor-Hood (P2 velocity, P1 pressure) discretization of the Stokes and
//! stationary Navier-Stokes equations.

pub mod assembly;
pub mod basis;
pub mod convection;
pub mod navier_stokes;
pub mod quadrature;
pub mod space;

pub use assembly::{assemble_stokes, residual_stokes, to_matrix_market, StokesOperator, StokesSystem};
pub use convection::ConvectionTensor;
pub use navier_stokes::{
    convection_term, ns_jacobian_action, ns_jacobian_matrix, ns_jacobian_transpose_action, residual_navier_stokes,
};
pub use space::{inflow_velocity, DirichletDof, TaylorHoodSpace};

/// Builds the discrete space; errors are those of mesh validation.
pub fn build_space(mesh: crate::mesh::Mesh) -> crate::Result<TaylorHoodSpace> {
    TaylorHoodSpace::new(mesh)
}

/// Precomputes the convection tensor.
pub fn assemble_convection(space: &TaylorHoodSpace) -> ConvectionTensor {
    ConvectionTensor::assemble(space)
}
