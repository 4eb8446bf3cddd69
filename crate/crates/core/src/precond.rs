//! Block-diagonal Cholesky / Schur-complement preconditioner.
//!
//! With `A = L L^T` and `-S = B A^{-1} B^T = M M^T`, the preconditioned
//! unknowns are `u~ = L^T u`, `p~ = M^T p` and the left preconditioner is
//! `diag(L^{-1}, M^{-1})`. The preconditioned Stokes operator becomes
//!
//! ```text
//! [ I              X M^{-T} ]      X = L^{-1} B^T
//! [ M^{-1} X^T     0        ]
//! ```
//!
//! `X` is kept in dense form: it is needed anyway to form the Schur
//! complement, and applying it is cheaper than two triangular solves.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fem::navier_stokes::{convection_jacobian_transpose, convection_term};
use crate::fem::{ConvectionTensor, StokesOperator, StokesSystem};
use crate::linalg::{csr_to_dense, gemv, gemv_t, solve_lower, solve_lower_transpose};

/// Default size limit `N_u + N_p` for the dense spectral check.
pub const SPECTRAL_SIZE_LIMIT: usize = 4000;

#[derive(Debug, Clone)]
pub struct Preconditioner {
    l: DMatrix<f64>,
    m: DMatrix<f64>,
    x: DMatrix<f64>,
}

fn cholesky_factor(a: DMatrix<f64>, block: &'static str) -> Result<DMatrix<f64>> {
    let l = Cholesky::new(a).ok_or(Error::CholeskyBreakdown { block })?.unpack();
    if l.diagonal().iter().all(|d| *d > 0.0 && d.is_finite()) {
        Ok(l)
    } else {
        Err(Error::CholeskyBreakdown { block })
    }
}

impl Preconditioner {
    /// Factors `A` and the Schur complement of a (dense) block pair.
    pub fn from_blocks(a: DMatrix<f64>, b: &DMatrix<f64>) -> Result<Self> {
        check_len("Preconditioner B columns", a.nrows(), b.ncols())?;
        let l = cholesky_factor(a, "A")?;
        let mut x = b.transpose();
        if !l.solve_lower_triangular_mut(&mut x) {
            return Err(Error::CholeskyBreakdown { block: "A" });
        }
        let m = cholesky_factor(x.tr_mul(&x), "Schur")?;
        Ok(Preconditioner { l, m, x })
    }

    pub fn from_operator(op: &StokesOperator) -> Result<Self> {
        Self::from_blocks(csr_to_dense(&op.a), &csr_to_dense(&op.b))
    }

    pub fn n_u(&self) -> usize {
        self.l.nrows()
    }

    pub fn n_p(&self) -> usize {
        self.m.nrows()
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// The coupling `X = L^{-1} B^T`.
    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn solve_l(&self, b: &mut [f64]) {
        solve_lower(&self.l, b)
    }

    pub fn solve_lt(&self, b: &mut [f64]) {
        solve_lower_transpose(&self.l, b)
    }

    pub fn solve_m(&self, b: &mut [f64]) {
        solve_lower(&self.m, b)
    }

    pub fn solve_mt(&self, b: &mut [f64]) {
        solve_lower_transpose(&self.m, b)
    }

    /// `(L^{-1} f, M^{-1} g)`.
    pub fn rhs(&self, sys: &StokesSystem) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("Preconditioner::rhs f", self.n_u(), sys.f.len())?;
        check_len("Preconditioner::rhs g", self.n_p(), sys.g.len())?;
        let mut lf = sys.f.clone();
        self.solve_l(&mut lf);
        let mut mg = sys.g.clone();
        self.solve_m(&mut mg);
        Ok((lf, mg))
    }

    /// The preconditioned Stokes operator applied to `(u~, p~)`. The
    /// operator is symmetric, so this is also its transpose action.
    pub fn apply_block(&self, ut: &[f64], pt: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut q = pt.to_vec();
        self.solve_mt(&mut q);
        let mut ru = gemv(&self.x, &q);
        ru.iter_mut().zip(ut).for_each(|(r, u)| *r += u);
        let mut rp = gemv_t(&self.x, ut);
        self.solve_m(&mut rp);
        (ru, rp)
    }

    pub fn to_preconditioned(&self, u: &[f64], p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (gemv_t(&self.l, u), gemv_t(&self.m, p))
    }
}

pub fn build_preconditioner(sys: &StokesSystem) -> Result<Preconditioner> {
    Preconditioner::from_operator(&sys.operator)
}

fn check_dims(pre: &Preconditioner, sys: &StokesSystem, ut: &[f64], pt: &[f64]) -> Result<()> {
    check_len("preconditioned residual: system velocity", pre.n_u(), sys.n_u())?;
    check_len("preconditioned residual: system pressure", pre.n_p(), sys.n_p())?;
    check_len("preconditioned residual: u~", pre.n_u(), ut.len())?;
    check_len("preconditioned residual: p~", pre.n_p(), pt.len())
}

/// Preconditioned Stokes residual given cached `(L^{-1} f, M^{-1} g)`.
pub fn preconditioned_stokes_with_rhs(
    pre: &Preconditioner,
    ut: &[f64],
    pt: &[f64],
    lf: &[f64],
    mg: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (mut ru, mut rp) = pre.apply_block(ut, pt);
    ru.iter_mut().zip(lf).for_each(|(r, b)| *r -= b);
    rp.iter_mut().zip(mg).for_each(|(r, b)| *r -= b);
    (ru, rp)
}

pub fn preconditioned_residual_stokes(
    pre: &Preconditioner,
    sys: &StokesSystem,
    ut: &[f64],
    pt: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dims(pre, sys, ut, pt)?;
    let (lf, mg) = pre.rhs(sys)?;
    Ok(preconditioned_stokes_with_rhs(pre, ut, pt, &lf, &mg))
}

/// Preconditioned Navier-Stokes residual given cached right-hand sides;
/// also returns the physical velocity `L^{-T} u~`.
pub fn preconditioned_ns_with_rhs(
    pre: &Preconditioner,
    sys: &StokesSystem,
    ct: &ConvectionTensor,
    ut: &[f64],
    pt: &[f64],
    lf: &[f64],
    mg: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (mut ru, rp) = preconditioned_stokes_with_rhs(pre, ut, pt, lf, mg);
    let mut u = ut.to_vec();
    pre.solve_lt(&mut u);
    let mut c = convection_term(sys, ct, &u);
    pre.solve_l(&mut c);
    ru.iter_mut().zip(&c).for_each(|(r, c)| *r += c);
    (ru, rp, u)
}

pub fn preconditioned_residual_ns(
    pre: &Preconditioner,
    sys: &StokesSystem,
    ct: &ConvectionTensor,
    ut: &[f64],
    pt: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dims(pre, sys, ut, pt)?;
    check_len("preconditioned_residual_ns tensor", pre.n_u(), ct.n_u())?;
    let (lf, mg) = pre.rhs(sys)?;
    let (ru, rp, _) = preconditioned_ns_with_rhs(pre, sys, ct, ut, pt, &lf, &mg);
    Ok((ru, rp))
}

/// Transposed Jacobian of the preconditioned Navier-Stokes residual at
/// physical velocity `u`, applied to `(ru, rp)`.
pub fn preconditioned_ns_jacobian_transpose(
    pre: &Preconditioner,
    sys: &StokesSystem,
    ct: &ConvectionTensor,
    u: &[f64],
    ru: &[f64],
    rp: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (mut gu, gp) = pre.apply_block(ru, rp);
    let mut w = ru.to_vec();
    pre.solve_lt(&mut w);
    let mut c = convection_jacobian_transpose(sys, ct, u, &w);
    pre.solve_l(&mut c);
    gu.iter_mut().zip(&c).for_each(|(g, c)| *g += c);
    (gu, gp)
}

/// `(L^{-T} u~, M^{-T} p~)`.
pub fn recover_physical(pre: &Preconditioner, ut: &[f64], pt: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("recover_physical u~", pre.n_u(), ut.len())?;
    check_len("recover_physical p~", pre.n_p(), pt.len())?;
    let mut u = ut.to_vec();
    pre.solve_lt(&mut u);
    let mut p = pt.to_vec();
    pre.solve_mt(&mut p);
    Ok((u, p))
}

/// Eigenvalue report for `Y = Z^2`, `Z = [[I, C^T], [C, 0]]`,
/// `C = M^{-1} B L^{-T}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralReport {
    pub n_u: usize,
    pub n_p: usize,
    pub targets: [f64; 3],
    /// Eigenvalues of `Y`, ascending.
    pub eigenvalues: Vec<f64>,
    /// Number of eigenvalues nearest to each target.
    pub cluster_counts: [usize; 3],
    pub max_distance: f64,
    /// `||(Y - I)((Y - 3/2 I)^2 - 5/4 I)||_F`.
    pub polynomial_norm: f64,
    /// `||Y||_F^3`, the scale the polynomial norm is compared against.
    pub y_norm_cubed: f64,
    /// `||C C^T - I||_F`.
    pub cct_error: f64,
    /// `||P^2 - P||_F / ||P||_F` for `P = C^T C`.
    pub projection_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn spectral_targets() -> [f64; 3] {
    let r = 5.0f64.sqrt() / 2.0;
    [1.5 - r, 1.0, 1.5 + r]
}

/// Spectral check from an explicit coupling block `C` (`N_p x N_u`).
pub fn spectral_check_coupling(c: &DMatrix<f64>, limit: usize) -> Result<SpectralReport> {
    let (n_p, n_u) = c.shape();
    let n = n_u + n_p;
    if n > limit {
        return Err(Error::TooLarge { size: n, limit });
    }
    let ctc = c.tr_mul(c);
    let cct = c * c.transpose();
    let mut y = DMatrix::<f64>::zeros(n, n);
    y.view_mut((0, 0), (n_u, n_u)).copy_from(&ctc);
    for i in 0..n_u {
        y[(i, i)] += 1.0;
    }
    y.view_mut((0, n_u), (n_u, n_p)).copy_from(&c.transpose());
    y.view_mut((n_u, 0), (n_p, n_u)).copy_from(c);
    y.view_mut((n_u, n_u), (n_p, n_p)).copy_from(&cct);

    let y_norm = y.norm();
    let mut w = y.clone();
    for i in 0..n {
        w[(i, i)] -= 1.5;
    }
    let mut q = &w * &w;
    for i in 0..n {
        q[(i, i)] -= 1.25;
    }
    let mut y_minus_i = y.clone();
    for i in 0..n {
        y_minus_i[(i, i)] -= 1.0;
    }
    let polynomial_norm = (&y_minus_i * &q).norm();

    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(y).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|a, b| a.total_cmp(b));
    let targets = spectral_targets();
    let mut cluster_counts = [0usize; 3];
    let mut max_distance = 0.0f64;
    for &ev in &eigenvalues {
        let (k, d) = targets
            .iter()
            .map(|t| (ev - t).abs())
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("three targets");
        cluster_counts[k] += 1;
        max_distance = max_distance.max(d);
    }

    let mut cct_err = cct;
    for i in 0..n_p {
        cct_err[(i, i)] -= 1.0;
    }
    let p_norm = ctc.norm();
    let projection_error = if p_norm > 0.0 {
        (&ctc * &ctc - &ctc).norm() / p_norm
    } else {
        0.0
    };

    let tolerance = 1e-8;
    let y_norm_cubed = y_norm.powi(3);
    let cct_error = cct_err.norm();
    let passed = max_distance <= tolerance
        && polynomial_norm <= tolerance * y_norm_cubed
        && cct_error <= tolerance
        && projection_error <= tolerance;
    Ok(SpectralReport {
        n_u,
        n_p,
        targets,
        eigenvalues,
        cluster_counts,
        max_distance,
        polynomial_norm,
        y_norm_cubed,
        cct_error,
        projection_error,
        tolerance,
        passed,
    })
}

/// Dense verification that the preconditioned Stokes operator squares to a
/// matrix with spectrum `{1, 3/2 +- sqrt(5)/2}`.
pub fn spectral_check(pre: &Preconditioner, limit: usize) -> Result<SpectralReport> {
    let n = pre.n_u() + pre.n_p();
    if n > limit {
        return Err(Error::TooLarge { size: n, limit });
    }
    // C = M^{-1} B L^{-T} = M^{-1} X^T
    let mut c = pre.x.transpose();
    pre.m.solve_lower_triangular_mut(&mut c);
    spectral_check_coupling(&c, limit)
}
