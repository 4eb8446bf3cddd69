//! Independent reference implementations used as test oracles.

use std::collections::HashMap;

use pfnn::fem::TaylorHoodSpace;

// Seven-point rule exact for degree 5, weights normalized to unit area.
const RULE: [([f64; 3], f64); 7] = {
    const A1: f64 = 0.059715871789770;
    const B1: f64 = 0.470142064105115;
    const A2: f64 = 0.797426985353087;
    const B2: f64 = 0.101286507323456;
    const W1: f64 = 0.132394152788506;
    const W2: f64 = 0.125939180544827;
    [
        ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 0.225),
        ([A1, B1, B1], W1),
        ([B1, A1, B1], W1),
        ([B1, B1, A1], W1),
        ([A2, B2, B2], W2),
        ([B2, A2, B2], W2),
        ([B2, B2, A2], W2),
    ]
};

/// Quadratic Lagrange basis on a triangle evaluated at barycentric `l`,
/// with gradients from the inverse of the affine Jacobian.
fn local_basis(p: [[f64; 2]; 3], l: [f64; 3]) -> ([f64; 6], [[f64; 2]; 6], f64) {
    let j = [[p[1][0] - p[0][0], p[2][0] - p[0][0]], [p[1][1] - p[0][1], p[2][1] - p[0][1]]];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    // Gradients of l1 and l2 are the rows of J^{-1}.
    let g1 = [j[1][1] / det, -j[0][1] / det];
    let g2 = [-j[1][0] / det, j[0][0] / det];
    let g0 = [-g1[0] - g2[0], -g1[1] - g2[1]];
    let g = [g0, g1, g2];
    let mut phi = [0.0; 6];
    let mut grad = [[0.0; 2]; 6];
    for i in 0..3 {
        phi[i] = l[i] * (2.0 * l[i] - 1.0);
        grad[i] = [(4.0 * l[i] - 1.0) * g[i][0], (4.0 * l[i] - 1.0) * g[i][1]];
    }
    for (k, (a, b)) in [(0, 1), (1, 2), (2, 0)].into_iter().enumerate() {
        phi[3 + k] = 4.0 * l[a] * l[b];
        grad[3 + k] = [4.0 * (l[a] * g[b][0] + l[b] * g[a][0]), 4.0 * (l[a] * g[b][1] + l[b] * g[a][1])];
    }
    (phi, grad, 0.5 * det)
}

/// Dense-map assembly of `int (v^k . grad v^j) . v^i` over global vector DOFs.
pub fn brute_force_convection(space: &TaylorHoodSpace) -> HashMap<(usize, usize, usize), f64> {
    let n = space.num_nodes();
    let verts = &space.mesh().vertices;
    let mut out = HashMap::new();
    for (t, nodes) in space.mesh().triangles.iter().zip(space.element_nodes()) {
        let p = [verts[t[0]], verts[t[1]], verts[t[2]]];
        for (l, w) in RULE {
            let (phi, grad, area) = local_basis(p, l);
            for c in 0..2 {
                for d in 0..2 {
                    for a in 0..6 {
                        for b in 0..6 {
                            for e in 0..6 {
                                let v = area * w * phi[e] * grad[b][d] * phi[a];
                                let key = (c * n + nodes[a], c * n + nodes[b], d * n + nodes[e]);
                                *out.entry(key).or_insert(0.0) += v;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}


/// Largest entry-wise gap between the assembled tensor and the dense map,
/// relative to the largest entry. Also fails on stored entries the map
/// does not know about.
pub fn convection_defect(space: &TaylorHoodSpace) -> f64 {
    let ct = pfnn::fem::assemble_convection(space);
    let dense = brute_force_convection(space);
    let scale = dense.values().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut defect = dense
        .iter()
        .map(|(&(i, j, k), &v)| (ct.entry(i, j, k) - v).abs())
        .fold(0.0f64, f64::max);
    let n = space.num_nodes();
    for e in ct.entries() {
        if !dense.contains_key(&(e.i_node, e.j_node, e.k_comp * n + e.k_node)) {
            defect = f64::INFINITY;
        }
    }
    defect / scale
}

/// Preconditioned loss evaluated the long way: recover physical
/// coefficients, form the physical residual, then apply `L^{-1}` and
/// `M^{-1}` to its blocks.
pub fn preconditioned_loss_via_physical(problem: &pfnn::train::FlowProblem, params: &pfnn::nn::MlpParams) -> f64 {
    use pfnn::fem::{residual_navier_stokes, residual_stokes};
    use pfnn::train::ProblemKind;
    let pre = &problem.pre;
    let mut total = 0.0;
    for s in &problem.samples {
        let (mut u, mut p) = params.forward_split(&[s.sys.lambda_deg], problem.n_u()).unwrap();
        pre.solve_lt(&mut u);
        pre.solve_mt(&mut p);
        let (mut ru, mut rp) = match problem.kind {
            ProblemKind::Stokes => residual_stokes(&s.sys, &u, &p).unwrap(),
            ProblemKind::NavierStokes => residual_navier_stokes(&s.sys, &problem.ct, &u, &p).unwrap(),
        };
        pre.solve_l(&mut ru);
        pre.solve_m(&mut rp);
        total += ru.iter().chain(&rp).map(|v| v * v).sum::<f64>();
    }
    total / problem.samples.len() as f64
}
