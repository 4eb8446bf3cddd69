//! The trilinear convection form as a precomputed sparse 3-tensor.
//!
//! For vector basis functions `v^i = phi_a e_c`, `v^j = phi_b e_c'` and
//! `v^k = phi_e e_d` the entry `int (v^k . grad v^j) . v^i` vanishes unless
//! `c == c'`, and then equals the scalar integral
//! `T[e, d, a, b] = int phi_e d_d(phi_b) phi_a`. Only `T` is stored; the
//! component delta is applied on the fly.

use super::basis::p2_values;
use super::quadrature::TriangleRule;
use super::space::TaylorHoodSpace;
use crate::linalg::{csr_from_triplets, CsrMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvectionEntry {
    /// Component `d` of the advecting basis function `v^k`.
    pub k_comp: usize,
    /// Scalar node `e` of `v^k`.
    pub k_node: usize,
    /// Scalar node `a` of the test function `v^i`.
    pub i_node: usize,
    /// Scalar node `b` of the advected function `v^j`.
    pub j_node: usize,
    pub value: f64,
}

impl ConvectionEntry {
    fn key(&self) -> (usize, usize, usize, usize) {
        (self.k_comp, self.k_node, self.i_node, self.j_node)
    }
}

/// Sparse convection tensor, entries sorted by `(k_comp, k_node, i, j)` so
/// they are grouped by the advecting DOF `k`.
#[derive(Debug, Clone, Default)]
pub struct ConvectionTensor {
    n_nodes: usize,
    entries: Vec<ConvectionEntry>,
}

/// Per-element `T[e][b][a][d]` for the local P2 basis.
pub fn element_convection(geo: &super::basis::ElementGeometry, rule: &TriangleRule) -> [[[[f64; 2]; 6]; 6]; 6] {
    let mut t = [[[[0.0; 2]; 6]; 6]; 6];
    for (l, w) in rule.points.iter().zip(&rule.weights) {
        let phi = p2_values(*l);
        let g = geo.p2_gradients(*l);
        let jw = 2.0 * geo.area * w;
        for e in 0..6 {
            for b in 0..6 {
                for a in 0..6 {
                    let s = jw * phi[e] * phi[a];
                    t[e][b][a][0] += s * g[b][0];
                    t[e][b][a][1] += s * g[b][1];
                }
            }
        }
    }
    t
}

impl ConvectionTensor {
    /// Tensor with no entries; contracts to the zero matrix.
    pub fn empty(n_nodes: usize) -> Self {
        ConvectionTensor {
            n_nodes,
            entries: Vec::new(),
        }
    }

    pub fn assemble(space: &TaylorHoodSpace) -> Self {
        let rule = TriangleRule::exact_for(6);
        let mut raw = Vec::with_capacity(432 * space.element_nodes().len());
        for (nodes, geo) in space.element_nodes().iter().zip(space.geometry()) {
            let t = element_convection(geo, &rule);
            for e in 0..6 {
                for b in 0..6 {
                    for a in 0..6 {
                        for d in 0..2 {
                            raw.push(ConvectionEntry {
                                k_comp: d,
                                k_node: nodes[e],
                                i_node: nodes[a],
                                j_node: nodes[b],
                                value: t[e][b][a][d],
                            });
                        }
                    }
                }
            }
        }
        // Stable sort keeps the per-key summation order fixed.
        raw.sort_by_key(|e| e.key());
        let mut entries: Vec<ConvectionEntry> = Vec::with_capacity(raw.len() / 3);
        for e in raw {
            match entries.last_mut() {
                Some(last) if last.key() == e.key() => last.value += e.value,
                _ => entries.push(e),
            }
        }
        entries.retain(|e| e.value != 0.0);
        ConvectionTensor {
            n_nodes: space.num_nodes(),
            entries,
        }
    }

    pub fn entries(&self) -> &[ConvectionEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_u(&self) -> usize {
        2 * self.n_nodes
    }

    /// `C~[i, j, k]` for global velocity DOFs.
    pub fn entry(&self, i: usize, j: usize, k: usize) -> f64 {
        let n = self.n_nodes;
        let (ci, a) = (i / n, i % n);
        let (cj, b) = (j / n, j % n);
        if ci != cj {
            return 0.0;
        }
        let key = (k / n, k % n, a, b);
        match self.entries.binary_search_by(|e| e.key().cmp(&key)) {
            Ok(pos) => self.entries[pos].value,
            Err(_) => 0.0,
        }
    }

    /// `C(w) u`, i.e. `sum_{j,k} C~[i,j,k] w_k u_j`.
    pub fn apply(&self, w: &[f64], u: &[f64]) -> Vec<f64> {
        let n = self.n_nodes;
        let mut out = vec![0.0; 2 * n];
        for e in &self.entries {
            let wk = w[e.k_comp * n + e.k_node];
            if wk == 0.0 {
                continue;
            }
            let s = e.value * wk;
            out[e.i_node] += s * u[e.j_node];
            out[n + e.i_node] += s * u[n + e.j_node];
        }
        out
    }

    /// `C(w)^T r`.
    pub fn apply_transpose(&self, w: &[f64], r: &[f64]) -> Vec<f64> {
        let n = self.n_nodes;
        let mut out = vec![0.0; 2 * n];
        for e in &self.entries {
            let wk = w[e.k_comp * n + e.k_node];
            if wk == 0.0 {
                continue;
            }
            let s = e.value * wk;
            out[e.j_node] += s * r[e.i_node];
            out[n + e.j_node] += s * r[n + e.i_node];
        }
        out
    }

    /// Gradient of `r^T C(w) u` with respect to `w`.
    pub fn k_gradient(&self, r: &[f64], u: &[f64]) -> Vec<f64> {
        let n = self.n_nodes;
        let mut out = vec![0.0; 2 * n];
        for e in &self.entries {
            out[e.k_comp * n + e.k_node] +=
                e.value * (r[e.i_node] * u[e.j_node] + r[n + e.i_node] * u[n + e.j_node]);
        }
        out
    }

    /// Assembled `C(w)`.
    pub fn matrix(&self, w: &[f64]) -> CsrMatrix {
        let n = self.n_nodes;
        let mut trip = Vec::with_capacity(2 * self.entries.len());
        for e in &self.entries {
            let s = e.value * w[e.k_comp * n + e.k_node];
            if s != 0.0 {
                trip.push((e.i_node, e.j_node, s));
                trip.push((n + e.i_node, n + e.j_node, s));
            }
        }
        csr_from_triplets(2 * n, 2 * n, &trip)
    }

    /// The matrix `K(u)` with `K(u) w = C(w) u`.
    pub fn k_matrix(&self, u: &[f64]) -> CsrMatrix {
        let n = self.n_nodes;
        let mut trip = Vec::with_capacity(2 * self.entries.len());
        for e in &self.entries {
            let k = e.k_comp * n + e.k_node;
            trip.push((e.i_node, k, e.value * u[e.j_node]));
            trip.push((n + e.i_node, k, e.value * u[n + e.j_node]));
        }
        csr_from_triplets(2 * n, 2 * n, &trip)
    }
}
