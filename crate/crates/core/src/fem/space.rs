use std::collections::{BTreeMap, HashMap};

use super::basis::{p1_values, p2_values, ElementGeometry, P2_EDGES};
use super::quadrature::TriangleRule;
use crate::error::{check_len, Error, Result};
use crate::linalg::{csr_from_triplets, CsrMatrix};
use crate::mesh::{BoundaryTag, Mesh, Point};

/// Velocity prescribed on the inflow boundary for angle of attack
/// `lambda_deg` (degrees).
pub fn inflow_velocity(lambda_deg: f64) -> [f64; 2] {
    let rad = lambda_deg * std::f64::consts::PI / 180.0;
    [rad.cos(), rad.sin()]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirichletDof {
    pub dof: usize,
    pub node: usize,
    pub component: usize,
    pub point: Point,
    pub tag: BoundaryTag,
}

impl DirichletDof {
    pub fn value(&self, lambda_deg: f64) -> f64 {
        match self.tag {
            BoundaryTag::Inflow => inflow_velocity(lambda_deg)[self.component],
            _ => 0.0,
        }
    }
}

/// P2 velocity / P1 pressure discretization over a mesh.
///
/// Scalar P2 nodes are numbered vertices first, then edges in sorted
/// `(min, max)` order. Velocity DOF `c * n_nodes + node` holds component
/// `c` (x before y). Pressure DOFs coincide with vertices.
#[derive(Debug, Clone)]
pub struct TaylorHoodSpace {
    mesh: Mesh,
    edges: Vec<[usize; 2]>,
    element_nodes: Vec<[usize; 6]>,
    geometry: Vec<ElementGeometry>,
    node_coords: Vec<Point>,
    dirichlet: Vec<DirichletDof>,
    is_dirichlet: Vec<bool>,
}

impl TaylorHoodSpace {
    pub fn new(mesh: Mesh) -> Result<Self> {
        mesh.validate()?;
        let nv = mesh.num_vertices();
        let edges = mesh.edges();
        let edge_index: HashMap<(usize, usize), usize> =
            edges.iter().enumerate().map(|(i, e)| ((e[0], e[1]), i)).collect();
        let edge_node = |a: usize, b: usize| nv + edge_index[&(a.min(b), a.max(b))];

        let mut element_nodes = Vec::with_capacity(mesh.num_triangles());
        let mut geometry = Vec::with_capacity(mesh.num_triangles());
        for (ti, t) in mesh.triangles.iter().enumerate() {
            let mut nodes = [t[0], t[1], t[2], 0, 0, 0];
            for (k, [a, b]) in P2_EDGES.iter().copied().enumerate() {
                nodes[3 + k] = edge_node(t[a], t[b]);
            }
            element_nodes.push(nodes);
            let geo = ElementGeometry::new([mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]]);
            if !(geo.area > 0.0) {
                return Err(Error::DegenerateElement(ti));
            }
            geometry.push(geo);
        }

        let mut node_coords = mesh.vertices.clone();
        for e in &edges {
            let (a, b) = (mesh.vertices[e[0]], mesh.vertices[e[1]]);
            node_coords.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
        }
        let n_nodes = node_coords.len();

        // Inflow wins over obstacle where a node touches both.
        let mut bc_nodes: BTreeMap<usize, BoundaryTag> = BTreeMap::new();
        for e in mesh.boundary_edges.iter().filter(|e| e.tag.is_dirichlet()) {
            let [a, b] = e.vertices;
            for node in [a, b, edge_node(a, b)] {
                bc_nodes
                    .entry(node)
                    .and_modify(|t| {
                        if e.tag == BoundaryTag::Inflow {
                            *t = BoundaryTag::Inflow
                        }
                    })
                    .or_insert(e.tag);
            }
        }
        let mut dirichlet = Vec::with_capacity(2 * bc_nodes.len());
        for component in 0..2 {
            for (&node, &tag) in &bc_nodes {
                dirichlet.push(DirichletDof {
                    dof: component * n_nodes + node,
                    node,
                    component,
                    point: node_coords[node],
                    tag,
                });
            }
        }
        let mut is_dirichlet = vec![false; 2 * n_nodes];
        for d in &dirichlet {
            is_dirichlet[d.dof] = true;
        }

        Ok(TaylorHoodSpace {
            mesh,
            edges,
            element_nodes,
            geometry,
            node_coords,
            dirichlet,
            is_dirichlet,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn num_nodes(&self) -> usize {
        self.node_coords.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Velocity DOF count `N_u`.
    pub fn n_u(&self) -> usize {
        2 * self.node_coords.len()
    }

    /// Pressure DOF count `N_p`.
    pub fn n_p(&self) -> usize {
        self.mesh.num_vertices()
    }

    pub fn velocity_dof(&self, node: usize, component: usize) -> usize {
        component * self.node_coords.len() + node
    }

    pub fn node_coords(&self) -> &[Point] {
        &self.node_coords
    }

    pub fn element_nodes(&self) -> &[[usize; 6]] {
        &self.element_nodes
    }

    pub fn geometry(&self) -> &[ElementGeometry] {
        &self.geometry
    }

    /// Dirichlet velocity DOFs in increasing DOF order.
    pub fn dirichlet_dofs(&self) -> &[DirichletDof] {
        &self.dirichlet
    }

    pub fn is_dirichlet(&self) -> &[bool] {
        &self.is_dirichlet
    }

    /// `(dof, value)` pairs for the boundary data at angle `lambda_deg`.
    pub fn boundary_values(&self, lambda_deg: f64) -> Vec<(usize, f64)> {
        self.dirichlet.iter().map(|d| (d.dof, d.value(lambda_deg))).collect()
    }

    /// Replaces the Dirichlet entries of `u` by their prescribed values.
    pub fn mask_dirichlet(&self, u: &[f64], lambda_deg: f64) -> Result<Vec<f64>> {
        check_len("mask_dirichlet", self.n_u(), u.len())?;
        let mut out = u.to_vec();
        for d in &self.dirichlet {
            out[d.dof] = d.value(lambda_deg);
        }
        Ok(out)
    }

    /// Scalar P2 mass matrix over the `num_nodes()` nodes.
    pub fn p2_mass(&self) -> CsrMatrix {
        let rule = TriangleRule::exact_for(4);
        let mut trip = Vec::with_capacity(36 * self.element_nodes.len());
        for (nodes, geo) in self.element_nodes.iter().zip(&self.geometry) {
            let mut local = [[0.0; 6]; 6];
            for (l, w) in rule.points.iter().zip(&rule.weights) {
                let phi = p2_values(*l);
                let jw = 2.0 * geo.area * w;
                for a in 0..6 {
                    for b in 0..6 {
                        local[a][b] += jw * phi[a] * phi[b];
                    }
                }
            }
            for a in 0..6 {
                for b in 0..6 {
                    trip.push((nodes[a], nodes[b], local[a][b]));
                }
            }
        }
        csr_from_triplets(self.num_nodes(), self.num_nodes(), &trip)
    }

    /// P1 mass matrix over the vertices.
    pub fn p1_mass(&self) -> CsrMatrix {
        let rule = TriangleRule::exact_for(2);
        let mut trip = Vec::with_capacity(9 * self.element_nodes.len());
        for (nodes, geo) in self.element_nodes.iter().zip(&self.geometry) {
            for (l, w) in rule.points.iter().zip(&rule.weights) {
                let psi = p1_values(*l);
                let jw = 2.0 * geo.area * w;
                for a in 0..3 {
                    for b in 0..3 {
                        trip.push((nodes[a], nodes[b], jw * psi[a] * psi[b]));
                    }
                }
            }
        }
        csr_from_triplets(self.n_p(), self.n_p(), &trip)
    }

    /// Evaluates a P1 pressure field at a point given by triangle index and
    /// barycentric coordinates.
    pub fn eval_pressure(&self, p: &[f64], triangle: usize, bary: [f64; 3]) -> f64 {
        let t = self.mesh.triangles[triangle];
        (0..3).map(|k| bary[k] * p[t[k]]).sum()
    }

    /// Evaluates a P2 velocity field at a point given by triangle index and
    /// barycentric coordinates.
    pub fn eval_velocity(&self, u: &[f64], triangle: usize, bary: [f64; 3]) -> [f64; 2] {
        let nodes = self.element_nodes[triangle];
        let phi = p2_values(bary);
        let mut out = [0.0; 2];
        for (c, o) in out.iter_mut().enumerate() {
            *o = (0..6).map(|a| phi[a] * u[self.velocity_dof(nodes[a], c)]).sum();
        }
        out
    }
}
