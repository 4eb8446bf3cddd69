//! Stationary Navier-Stokes residual on top of an eliminated Stokes system.
//!
//! The convection block is contracted from the masked velocity `u^` (the
//! iterate with boundary values imposed) and its Dirichlet rows are zeroed,
//! so Dirichlet rows of the residual stay `u_i - u_bc(x_i)`.

use super::assembly::{residual_stokes, StokesSystem};
use super::convection::ConvectionTensor;
use crate::error::{check_len, Result};
use crate::linalg::{csr_from_triplets, spmv_add, spmv_t_add, CsrMatrix};

fn zero_dirichlet(sys: &StokesSystem, v: &mut [f64]) {
    for &(dof, _) in &sys.bc_values {
        v[dof] = 0.0;
    }
}

/// Row-masked convection term `C(u^) u`.
pub fn convection_term(sys: &StokesSystem, ct: &ConvectionTensor, u: &[f64]) -> Vec<f64> {
    let w = sys.mask(u);
    let mut c = ct.apply(&w, u);
    zero_dirichlet(sys, &mut c);
    c
}

/// Derivative of [`convection_term`] at `u` in direction `du`.
pub fn convection_jacobian_action(sys: &StokesSystem, ct: &ConvectionTensor, u: &[f64], du: &[f64]) -> Vec<f64> {
    let w = sys.mask(u);
    let mut dw = du.to_vec();
    zero_dirichlet(sys, &mut dw);
    let mut out = ct.apply(&w, du);
    let second = ct.apply(&dw, u);
    out.iter_mut().zip(&second).for_each(|(o, s)| *o += s);
    zero_dirichlet(sys, &mut out);
    out
}

/// Transposed derivative of [`convection_term`] applied to `r`.
pub fn convection_jacobian_transpose(sys: &StokesSystem, ct: &ConvectionTensor, u: &[f64], r: &[f64]) -> Vec<f64> {
    let w = sys.mask(u);
    let mut rm = r.to_vec();
    zero_dirichlet(sys, &mut rm);
    let mut out = ct.apply_transpose(&w, &rm);
    let mut kg = ct.k_gradient(&rm, u);
    zero_dirichlet(sys, &mut kg);
    out.iter_mut().zip(&kg).for_each(|(o, k)| *o += k);
    out
}

/// `(A u + C(u^) u + B^T p - f, B u - g)` with Dirichlet rows of the
/// convection term removed. The angle is the one `sys` was built for.
pub fn residual_navier_stokes(
    sys: &StokesSystem,
    ct: &ConvectionTensor,
    u: &[f64],
    p: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut ru, rp) = residual_stokes(sys, u, p)?;
    check_len("residual_navier_stokes tensor", sys.n_u(), ct.n_u())?;
    let c = convection_term(sys, ct, u);
    ru.iter_mut().zip(&c).for_each(|(r, c)| *r += c);
    Ok((ru, rp))
}

/// Directional derivative of [`residual_navier_stokes`] at `u` along
/// `(du, dp)`.
pub fn ns_jacobian_action(
    sys: &StokesSystem,
    ct: &ConvectionTensor,
    u: &[f64],
    du: &[f64],
    dp: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("ns_jacobian_action u", sys.n_u(), u.len())?;
    check_len("ns_jacobian_action du", sys.n_u(), du.len())?;
    check_len("ns_jacobian_action dp", sys.n_p(), dp.len())?;
    let mut ru = if ct.is_empty() {
        vec![0.0; sys.n_u()]
    } else {
        convection_jacobian_action(sys, ct, u, du)
    };
    spmv_add(sys.a(), du, &mut ru);
    spmv_t_add(sys.b(), dp, &mut ru);
    let mut rp = vec![0.0; sys.n_p()];
    spmv_add(sys.b(), du, &mut rp);
    Ok((ru, rp))
}

/// Transposed Jacobian applied to `(ru, rp)`.
pub fn ns_jacobian_transpose_action(
    sys: &StokesSystem,
    ct: &ConvectionTensor,
    u: &[f64],
    ru: &[f64],
    rp: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("ns_jacobian_transpose_action u", sys.n_u(), u.len())?;
    check_len("ns_jacobian_transpose_action ru", sys.n_u(), ru.len())?;
    check_len("ns_jacobian_transpose_action rp", sys.n_p(), rp.len())?;
    let mut gu = if ct.is_empty() {
        vec![0.0; sys.n_u()]
    } else {
        convection_jacobian_transpose(sys, ct, u, ru)
    };
    // A is symmetric.
    spmv_add(sys.a(), ru, &mut gu);
    spmv_t_add(sys.b(), rp, &mut gu);
    let mut gp = vec![0.0; sys.n_p()];
    spmv_add(sys.b(), ru, &mut gp);
    Ok((gu, gp))
}

/// Velocity-velocity block of the Jacobian, `A + rowmask(C(u^) + K(u) colmask)`.
pub fn ns_jacobian_matrix(sys: &StokesSystem, ct: &ConvectionTensor, u: &[f64]) -> CsrMatrix {
    let bc = &sys.operator.dirichlet;
    let mut trip = Vec::new();
    for (i, row) in sys.a().row_iter().enumerate() {
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            trip.push((i, j, v));
        }
    }
    if !ct.is_empty() {
        let w = sys.mask(u);
        for (i, row) in ct.matrix(&w).row_iter().enumerate() {
            if bc[i] {
                continue;
            }
            for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                trip.push((i, j, v));
            }
        }
        for (i, row) in ct.k_matrix(u).row_iter().enumerate() {
            if bc[i] {
                continue;
            }
            for (&k, &v) in row.col_indices().iter().zip(row.values()) {
                if !bc[k] {
                    trip.push((i, k, v));
                }
            }
        }
    }
    csr_from_triplets(sys.n_u(), sys.n_u(), &trip)
}
