//! Stokes operator assembly with Dirichlet elimination.
//!
//! The bilinear forms are `a(u, v) = eta * int grad u : grad v` and
//! `b(v, q) = -int q div v`. Elimination keeps `A` symmetric: Dirichlet rows
//! and columns of `A` become unit vectors, Dirichlet columns of `B` are
//! zeroed, and the removed column contributions are moved to `f` and `g`.
//! Outflow edges need no treatment; the do-nothing condition is natural.

use std::fmt::Write as _;
use std::sync::Arc;

use super::basis::ElementGeometry;
use super::quadrature::TriangleRule;
use super::space::TaylorHoodSpace;
use crate::error::{check_len, Error, Result};
use crate::linalg::{csr_from_triplets, spmv, spmv_add, spmv_t_add, CsrMatrix};

/// Per-element P2 stiffness `int grad phi_a . grad phi_b`.
pub fn p2_element_stiffness(geo: &ElementGeometry, rule: &TriangleRule) -> [[f64; 6]; 6] {
    let mut k = [[0.0; 6]; 6];
    for (l, w) in rule.points.iter().zip(&rule.weights) {
        let g = geo.p2_gradients(*l);
        let jw = 2.0 * geo.area * w;
        for a in 0..6 {
            for b in 0..6 {
                k[a][b] += jw * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
            }
        }
    }
    k
}

/// Per-element divergence coupling `-int psi_q d_c phi_a`, indexed `[c][q][a]`.
pub fn element_divergence(geo: &ElementGeometry, rule: &TriangleRule) -> [[[f64; 6]; 3]; 2] {
    let mut d = [[[0.0; 6]; 3]; 2];
    for (l, w) in rule.points.iter().zip(&rule.weights) {
        let g = geo.p2_gradients(*l);
        let jw = 2.0 * geo.area * w;
        for (c, dc) in d.iter_mut().enumerate() {
            for q in 0..3 {
                for a in 0..6 {
                    dc[q][a] -= jw * l[q] * g[a][c];
                }
            }
        }
    }
    d
}

/// The lambda-independent part of an assembled Stokes system.
#[derive(Debug, Clone)]
pub struct StokesOperator {
    pub eta: f64,
    /// `eta * K` with unit Dirichlet rows and columns.
    pub a: CsrMatrix,
    /// Divergence block with Dirichlet columns zeroed.
    pub b: CsrMatrix,
    /// Entries of `eta * K` in free rows and Dirichlet columns.
    pub a_lift: CsrMatrix,
    /// Entries of the divergence block in Dirichlet columns.
    pub b_lift: CsrMatrix,
    pub dirichlet: Vec<bool>,
}

impl StokesOperator {
    pub fn assemble(space: &TaylorHoodSpace, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Config(format!("viscosity must be positive, got {eta}")));
        }
        let rule = TriangleRule::exact_for(4);
        let n_nodes = space.num_nodes();
        let (n_u, n_p) = (space.n_u(), space.n_p());
        let bc = space.is_dirichlet();

        let mut a_trip = Vec::new();
        let mut lift_trip = Vec::new();
        let mut b_trip = Vec::new();
        let mut blift_trip = Vec::new();
        for (ti, (nodes, geo)) in space.element_nodes().iter().zip(space.geometry()).enumerate() {
            if !(geo.area > 0.0) {
                return Err(Error::DegenerateElement(ti));
            }
            let k = p2_element_stiffness(geo, &rule);
            let d = element_divergence(geo, &rule);
            for c in 0..2 {
                for a in 0..6 {
                    let i = c * n_nodes + nodes[a];
                    for bb in 0..6 {
                        let j = c * n_nodes + nodes[bb];
                        let v = eta * k[a][bb];
                        match (bc[i], bc[j]) {
                            (false, false) => a_trip.push((i, j, v)),
                            (false, true) => lift_trip.push((i, j, v)),
                            _ => {}
                        }
                    }
                }
                for q in 0..3 {
                    for a in 0..6 {
                        let j = c * n_nodes + nodes[a];
                        let entry = (nodes[q], j, d[c][q][a]);
                        if bc[j] {
                            blift_trip.push(entry);
                        } else {
                            b_trip.push(entry);
                        }
                    }
                }
            }
        }
        for d in space.dirichlet_dofs() {
            a_trip.push((d.dof, d.dof, 1.0));
        }
        Ok(StokesOperator {
            eta,
            a: csr_from_triplets(n_u, n_u, &a_trip),
            b: csr_from_triplets(n_p, n_u, &b_trip),
            a_lift: csr_from_triplets(n_u, n_u, &lift_trip),
            b_lift: csr_from_triplets(n_p, n_u, &blift_trip),
            dirichlet: bc.to_vec(),
        })
    }

    pub fn n_u(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_p(&self) -> usize {
        self.b.nrows()
    }

    /// `max |A - A^T| / max |A|`.
    pub fn symmetry_defect(&self) -> f64 {
        let at = self.a.transpose();
        let mut defect = 0.0f64;
        let mut scale = 0.0f64;
        for (row, row_t) in self.a.row_iter().zip(at.row_iter()) {
            let mut it = row_t.col_indices().iter().zip(row_t.values()).peekable();
            for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                scale = scale.max(v.abs());
                let mut vt = 0.0;
                while let Some((&jt, &x)) = it.peek() {
                    if jt < j {
                        defect = defect.max(x.abs());
                        it.next();
                    } else {
                        if jt == j {
                            vt = x;
                            it.next();
                        }
                        break;
                    }
                }
                defect = defect.max((v - vt).abs());
            }
            for (_, &x) in it {
                defect = defect.max(x.abs());
            }
        }
        defect / scale
    }
}

/// Stokes system for one angle of attack.
#[derive(Debug, Clone)]
pub struct StokesSystem {
    pub operator: Arc<StokesOperator>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub lambda_deg: f64,
    /// Prescribed value for every Dirichlet DOF, in increasing DOF order.
    pub bc_values: Vec<(usize, f64)>,
}

impl StokesSystem {
    /// Builds the right-hand side for `lambda_deg` on a shared operator.
    pub fn new(space: &TaylorHoodSpace, operator: Arc<StokesOperator>, lambda_deg: f64) -> Result<Self> {
        check_len("StokesSystem::new", space.n_u(), operator.n_u())?;
        Self::with_boundary_values(operator, lambda_deg, space.boundary_values(lambda_deg))
    }

    /// Builds the right-hand side from explicit `(dof, value)` boundary data.
    pub fn with_boundary_values(
        operator: Arc<StokesOperator>,
        lambda_deg: f64,
        bc_values: Vec<(usize, f64)>,
    ) -> Result<Self> {
        for &(dof, _) in &bc_values {
            if dof >= operator.n_u() || !operator.dirichlet[dof] {
                return Err(Error::Config(format!("DOF {dof} is not a Dirichlet DOF")));
            }
        }
        let mut ubc = vec![0.0; operator.n_u()];
        for &(dof, v) in &bc_values {
            ubc[dof] = v;
        }
        let mut f = spmv(&operator.a_lift, &ubc);
        f.iter_mut().for_each(|x| *x = -*x);
        for &(dof, v) in &bc_values {
            f[dof] = v;
        }
        let mut g = spmv(&operator.b_lift, &ubc);
        g.iter_mut().for_each(|x| *x = -*x);
        Ok(StokesSystem {
            operator,
            f,
            g,
            lambda_deg,
            bc_values,
        })
    }

    pub fn a(&self) -> &CsrMatrix {
        &self.operator.a
    }

    pub fn b(&self) -> &CsrMatrix {
        &self.operator.b
    }

    pub fn eta(&self) -> f64 {
        self.operator.eta
    }

    pub fn n_u(&self) -> usize {
        self.operator.n_u()
    }

    pub fn n_p(&self) -> usize {
        self.operator.n_p()
    }

    /// `u` with Dirichlet entries replaced by the boundary data.
    pub fn mask(&self, u: &[f64]) -> Vec<f64> {
        let mut out = u.to_vec();
        for &(dof, v) in &self.bc_values {
            out[dof] = v;
        }
        out
    }
}

pub fn assemble_stokes(space: &TaylorHoodSpace, eta: f64, lambda_deg: f64) -> Result<StokesSystem> {
    let op = Arc::new(StokesOperator::assemble(space, eta)?);
    StokesSystem::new(space, op, lambda_deg)
}

/// `(A u + B^T p - f, B u - g)`.
pub fn residual_stokes(sys: &StokesSystem, u: &[f64], p: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("residual_stokes u", sys.n_u(), u.len())?;
    check_len("residual_stokes p", sys.n_p(), p.len())?;
    let mut ru: Vec<f64> = sys.f.iter().map(|x| -x).collect();
    spmv_add(sys.a(), u, &mut ru);
    spmv_t_add(sys.b(), p, &mut ru);
    let mut rp: Vec<f64> = sys.g.iter().map(|x| -x).collect();
    spmv_add(sys.b(), u, &mut rp);
    Ok((ru, rp))
}

/// MatrixMarket coordinate dump, for debugging with external tools.
pub fn to_matrix_market(m: &CsrMatrix) -> String {
    let mut s = String::from("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(s, "{} {} {}", m.nrows(), m.ncols(), m.nnz());
    for (i, row) in m.row_iter().enumerate() {
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            let _ = writeln!(s, "{} {} {:e}", i + 1, j + 1, v);
        }
    }
    s
}
