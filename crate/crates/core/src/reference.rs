//! Classical solvers for ground-truth discrete solutions.
//!
//! Stokes is solved by Schur reduction with the preconditioner factors;
//! Navier-Stokes by damped Newton with the assembled Jacobian and a dense LU
//! of the full saddle-point matrix (adequate at desk scale).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::error::{check_len, Error, Result};
use crate::fem::{
    ns_jacobian_matrix, residual_navier_stokes, residual_stokes, ConvectionTensor, StokesOperator, StokesSystem,
    TaylorHoodSpace,
};
use crate::linalg::{gemv, gemv_t, norm2_sq};
use crate::precond::Preconditioner;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub lambda_deg: f64,
    pub eta: f64,
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    /// Euclidean norm of the full residual at `(u, p)`.
    pub residual_norm: f64,
    /// Zero for Stokes.
    pub newton_iterations: usize,
}

fn full_norm(ru: &[f64], rp: &[f64]) -> f64 {
    (norm2_sq(ru) + norm2_sq(rp)).sqrt()
}

/// Saddle-point solve `[A B^T; B 0] (u, p) = (f, g)` through the factors.
fn schur_solve(pre: &Preconditioner, f: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut lf = f.to_vec();
    pre.solve_l(&mut lf);
    // M M^T p = X^T L^{-1} f - g
    let mut p = gemv_t(pre.coupling(), &lf);
    p.iter_mut().zip(g).for_each(|(v, g)| *v -= g);
    pre.solve_m(&mut p);
    pre.solve_mt(&mut p);
    // u = L^{-T} (L^{-1} f - X p)
    let xp = gemv(pre.coupling(), &p);
    let mut u: Vec<f64> = lf.iter().zip(&xp).map(|(a, b)| a - b).collect();
    pre.solve_lt(&mut u);
    (u, p)
}

/// Direct Stokes solve reusing existing preconditioner factors.
pub fn solve_stokes_with(sys: &StokesSystem, pre: &Preconditioner) -> Result<ReferenceSolution> {
    check_len("solve_stokes velocity", sys.n_u(), pre.n_u())?;
    check_len("solve_stokes pressure", sys.n_p(), pre.n_p())?;
    let (mut u, mut p) = schur_solve(pre, &sys.f, &sys.g);
    // One step of iterative refinement.
    let (ru, rp) = residual_stokes(sys, &u, &p)?;
    let (du, dp) = schur_solve(pre, &ru, &rp);
    u.iter_mut().zip(&du).for_each(|(a, b)| *a -= b);
    p.iter_mut().zip(&dp).for_each(|(a, b)| *a -= b);
    let (ru, rp) = residual_stokes(sys, &u, &p)?;
    let residual_norm = full_norm(&ru, &rp);
    let tol = 1e-10 * (1.0 + norm2_sq(&sys.f).sqrt());
    if !(residual_norm <= tol) {
        return Err(Error::Solver(format!(
            "Stokes direct solve residual {residual_norm:e} exceeds {tol:e}"
        )));
    }
    Ok(ReferenceSolution {
        lambda_deg: sys.lambda_deg,
        eta: sys.eta(),
        u,
        p,
        residual_norm,
        newton_iterations: 0,
    })
}

/// Direct Stokes solve; factors the blocks of `sys` first.
pub fn solve_stokes_direct(sys: &StokesSystem) -> Result<ReferenceSolution> {
    let pre = Preconditioner::from_operator(&sys.operator)?;
    solve_stokes_with(sys, &pre)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-11,
            max_iter: 50,
        }
    }
}

fn saddle_matrix(sys: &StokesSystem, ct: &ConvectionTensor, u: &[f64]) -> DMatrix<f64> {
    let (n_u, n_p) = (sys.n_u(), sys.n_p());
    let mut k = DMatrix::zeros(n_u + n_p, n_u + n_p);
    for (i, row) in ns_jacobian_matrix(sys, ct, u).row_iter().enumerate() {
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            k[(i, j)] += v;
        }
    }
    for (q, row) in sys.b().row_iter().enumerate() {
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            k[(n_u + q, j)] += v;
            k[(j, n_u + q)] += v;
        }
    }
    k
}

/// Damped Newton for the stationary Navier-Stokes residual starting at
/// `(u0, p0)`. Records the residual history in `history` when given.
pub fn solve_ns_newton_from(
    sys: &StokesSystem,
    ct: &ConvectionTensor,
    u0: &[f64],
    p0: &[f64],
    opts: NewtonOptions,
    mut history: Option<&mut Vec<f64>>,
) -> Result<ReferenceSolution> {
    check_len("solve_ns_newton u0", sys.n_u(), u0.len())?;
    check_len("solve_ns_newton p0", sys.n_p(), p0.len())?;
    let n_u = sys.n_u();
    let (mut u, mut p) = (u0.to_vec(), p0.to_vec());
    let (mut ru, mut rp) = residual_navier_stokes(sys, ct, &u, &p)?;
    let mut r = full_norm(&ru, &rp);
    let initial = r;
    if let Some(h) = history.as_deref_mut() {
        h.push(r);
    }
    let mut iterations = 0;
    while r > opts.tol {
        if iterations >= opts.max_iter {
            return Err(Error::Solver(format!(
                "Newton did not reach {:e} in {} iterations (residual {r:e})",
                opts.tol, opts.max_iter
            )));
        }
        let k = saddle_matrix(sys, ct, &u);
        let rhs = DVector::from_iterator(n_u + sys.n_p(), ru.iter().chain(&rp).map(|v| -v));
        let delta = k
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Solver("singular Newton Jacobian".into()))?;
        let mut alpha = 1.0;
        let (next_u, next_p, next_ru, next_rp, next_r) = loop {
            let nu: Vec<f64> = u.iter().zip(&delta.as_slice()[..n_u]).map(|(a, d)| a + alpha * d).collect();
            let np: Vec<f64> = p.iter().zip(&delta.as_slice()[n_u..]).map(|(a, d)| a + alpha * d).collect();
            let (nru, nrp) = residual_navier_stokes(sys, ct, &nu, &np)?;
            let nr = full_norm(&nru, &nrp);
            if nr < r || alpha < 1.0 / 1024.0 {
                break (nu, np, nru, nrp, nr);
            }
            alpha *= 0.5;
        };
        iterations += 1;
        if !next_r.is_finite() || next_r > 10.0 * initial {
            return Err(Error::Divergence {
                residual: next_r,
                initial,
            });
        }
        (u, p, ru, rp, r) = (next_u, next_p, next_ru, next_rp, next_r);
        if let Some(h) = history.as_deref_mut() {
            h.push(r);
        }
    }
    Ok(ReferenceSolution {
        lambda_deg: sys.lambda_deg,
        eta: sys.eta(),
        u,
        p,
        residual_norm: r,
        newton_iterations: iterations,
    })
}

/// Newton started from the Stokes solution of `sys`.
pub fn solve_ns_newton(
    sys: &StokesSystem,
    ct: &ConvectionTensor,
    pre: &Preconditioner,
    opts: NewtonOptions,
) -> Result<ReferenceSolution> {
    let stokes = solve_stokes_with(sys, pre)?;
    solve_ns_newton_from(sys, ct, &stokes.u, &stokes.p, opts, None)
}

/// Viscosities visited by continuation from `eta = 1` down to `target`,
/// shrinking by at most a factor of ten per stage. The last entry is
/// `target`; for `target >= 1` this is just `[target]`.
pub fn continuation_schedule(target: f64) -> Result<Vec<f64>> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::Config(format!("eta must be positive, got {target}")));
    }
    if target >= 1.0 {
        return Ok(vec![target]);
    }
    let n = (-target.log10() - 1e-12).ceil().max(1.0) as i32;
    let mut out = vec![1.0];
    out.extend((1..=n).map(|k| if k == n { target } else { target.powf(k as f64 / n as f64) }));
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ContinuationResult {
    pub solution: ReferenceSolution,
    pub stages: Vec<f64>,
    /// Newton iterations per stage.
    pub stage_iterations: Vec<usize>,
}

/// Navier-Stokes reference at viscosity `eta` via continuation from `eta = 1`.
pub fn solve_ns_continuation(
    space: &TaylorHoodSpace,
    ct: &ConvectionTensor,
    eta: f64,
    lambda_deg: f64,
    opts: NewtonOptions,
) -> Result<ContinuationResult> {
    let stages = continuation_schedule(eta)?;
    let mut guess: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut stage_iterations = Vec::with_capacity(stages.len());
    let mut last = None;
    for &e in &stages {
        let op = Arc::new(StokesOperator::assemble(space, e)?);
        let sys = StokesSystem::new(space, op, lambda_deg)?;
        let sol = match &guess {
            Some((u, p)) => solve_ns_newton_from(&sys, ct, u, p, opts, None)?,
            None => {
                let pre = Preconditioner::from_operator(&sys.operator)?;
                solve_ns_newton(&sys, ct, &pre, opts)?
            }
        };
        stage_iterations.push(sol.newton_iterations);
        guess = Some((sol.u.clone(), sol.p.clone()));
        last = Some(sol);
    }
    Ok(ContinuationResult {
        solution: last.expect("at least one stage"),
        stages,
        stage_iterations,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ReferenceHeader {
    kind: String,
    lambda: f64,
    eta: f64,
    residual_norm: f64,
    n_u: usize,
    n_p: usize,
    newton_iterations: usize,
}

impl ReferenceSolution {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let header = ReferenceHeader {
            kind: "reference".into(),
            lambda: self.lambda_deg,
            eta: self.eta,
            residual_norm: self.residual_norm,
            n_u: self.u.len(),
            n_p: self.p.len(),
            newton_iterations: self.newton_iterations,
        };
        let mut blob = self.u.clone();
        blob.extend_from_slice(&self.p);
        Ok(Checkpoint {
            header: serde_json::to_value(header)?,
            blob,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind() != Some("reference") {
            return Err(Error::Checkpoint(format!("expected a reference checkpoint, found {:?}", ck.kind())));
        }
        let h: ReferenceHeader = serde_json::from_value(ck.header.clone())?;
        if ck.blob.len() != h.n_u + h.n_p {
            return Err(Error::Checkpoint(format!(
                "reference payload has {} values, header says {} + {}",
                ck.blob.len(),
                h.n_u,
                h.n_p
            )));
        }
        Ok(ReferenceSolution {
            lambda_deg: h.lambda,
            eta: h.eta,
            u: ck.blob[..h.n_u].to_vec(),
            p: ck.blob[h.n_u..].to_vec(),
            residual_norm: h.residual_norm,
            newton_iterations: h.newton_iterations,
        })
    }

    /// Summary for manifests; omits the coefficient vectors.
    pub fn summary(&self) -> serde_json::Value {
        json!({
            "lambda": self.lambda_deg,
            "eta": self.eta,
            "residual_norm": self.residual_norm,
            "newton_iterations": self.newton_iterations,
            "n_u": self.u.len(),
            "n_p": self.p.len(),
        })
    }
}

/// Looks up the reference for `lambda_deg` (exact match up to 1e-9).
pub fn find_reference(refs: &[ReferenceSolution], lambda_deg: f64) -> Result<&ReferenceSolution> {
    refs.iter()
        .find(|r| (r.lambda_deg - lambda_deg).abs() <= 1e-9)
        .ok_or(Error::MissingReference(lambda_deg))
}
