//! Triangular meshes with tagged boundaries.
//!
//! Meshes come either from the built-in structured generator (a rectangle,
//! optionally with a rectangular hole) or from a Gmsh 2.2 ASCII file.
//! Boundary edges carry one of three tags: inflow (Dirichlet, angle
//! dependent), outflow (natural condition) and obstacle (no-slip).

mod gmsh;

pub use gmsh::{parse_gmsh, write_gmsh};

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryTag {
    Inflow,
    Outflow,
    Obstacle,
}

impl BoundaryTag {
    /// Gmsh physical tag used for this boundary class.
    pub fn physical_id(self) -> i64 {
        match self {
            BoundaryTag::Inflow => 1,
            BoundaryTag::Outflow => 2,
            BoundaryTag::Obstacle => 3,
        }
    }

    pub fn from_physical_id(id: i64) -> Option<Self> {
        match id {
            1 => Some(BoundaryTag::Inflow),
            2 => Some(BoundaryTag::Outflow),
            3 => Some(BoundaryTag::Obstacle),
            _ => None,
        }
    }

    /// Velocity is prescribed on inflow and obstacle boundaries.
    pub fn is_dirichlet(self) -> bool {
        !matches!(self, BoundaryTag::Outflow)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub tag: BoundaryTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    /// Counterclockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub obstacle: Option<Rect>,
    /// Cells per unit length.
    pub resolution: usize,
}

impl Default for DomainSpec {
    fn default() -> Self {
        DomainSpec {
            width: 5.0,
            height: 5.0,
            obstacle: Some(Rect::new(2.0, 2.0, 3.0, 3.0)),
            resolution: 2,
        }
    }
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0) || !self.width.is_finite() || !self.height.is_finite() {
            return Err(Error::InvalidDomain(format!(
                "width and height must be positive, got {} x {}",
                self.width, self.height
            )));
        }
        if self.resolution < 1 {
            return Err(Error::InvalidDomain("resolution must be at least 1".into()));
        }
        if let Some(r) = self.obstacle {
            if !(r.x0 < r.x1 && r.y0 < r.y1) {
                return Err(Error::InvalidDomain(format!("obstacle {r:?} is empty")));
            }
            if !(r.x0 > 0.0 && r.y0 > 0.0 && r.x1 < self.width && r.y1 < self.height) {
                return Err(Error::InvalidDomain(format!(
                    "obstacle {r:?} must lie strictly inside the domain"
                )));
            }
        }
        Ok(())
    }

    fn cell_counts(&self) -> (usize, usize) {
        let nx = (self.width * self.resolution as f64).round().max(1.0) as usize;
        let ny = (self.height * self.resolution as f64).round().max(1.0) as usize;
        (nx, ny)
    }
}

/// Builds the structured triangulation of `spec`.
///
/// Each grid cell is split along its lower-left/upper-right diagonal. Cells
/// whose interior overlaps the obstacle are removed.
pub fn generate_structured(spec: &DomainSpec) -> Result<Mesh> {
    spec.validate()?;
    let (nx, ny) = spec.cell_counts();
    let hx = spec.width / nx as f64;
    let hy = spec.height / ny as f64;

    let removed = |i: usize, j: usize| -> bool {
        match spec.obstacle {
            None => false,
            Some(r) => {
                let (cx0, cx1) = (i as f64 * hx, (i + 1) as f64 * hx);
                let (cy0, cy1) = (j as f64 * hy, (j + 1) as f64 * hy);
                let ox = cx1.min(r.x1) - cx0.max(r.x0);
                let oy = cy1.min(r.y1) - cy0.max(r.y0);
                ox > 1e-12 * hx && oy > 1e-12 * hy
            }
        }
    };

    let grid_id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut used = vec![false; (nx + 1) * (ny + 1)];
    let mut cells = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if removed(i, j) {
                continue;
            }
            cells.push((i, j));
            for (a, b) in [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)] {
                used[grid_id(a, b)] = true;
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::InvalidDomain("obstacle removes every cell".into()));
    }

    let mut renumber = vec![usize::MAX; used.len()];
    let mut vertices = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            let g = grid_id(i, j);
            if used[g] {
                renumber[g] = vertices.len();
                let x = if i == nx { spec.width } else { i as f64 * hx };
                let y = if j == ny { spec.height } else { j as f64 * hy };
                vertices.push([x, y]);
            }
        }
    }

    let mut triangles = Vec::with_capacity(2 * cells.len());
    for &(i, j) in &cells {
        let v00 = renumber[grid_id(i, j)];
        let v10 = renumber[grid_id(i + 1, j)];
        let v01 = renumber[grid_id(i, j + 1)];
        let v11 = renumber[grid_id(i + 1, j + 1)];
        triangles.push([v00, v10, v11]);
        triangles.push([v00, v11, v01]);
    }

    let (w, h) = (spec.width, spec.height);
    let on = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + b.abs());
    let boundary_edges = boundary_edge_list(&triangles)
        .into_iter()
        .map(|[a, b]| {
            let (pa, pb) = (vertices[a], vertices[b]);
            let tag = if (on(pa[0], 0.0) && on(pb[0], 0.0)) || (on(pa[1], 0.0) && on(pb[1], 0.0)) {
                BoundaryTag::Inflow
            } else if (on(pa[0], w) && on(pb[0], w)) || (on(pa[1], h) && on(pb[1], h)) {
                BoundaryTag::Outflow
            } else {
                BoundaryTag::Obstacle
            };
            BoundaryEdge { vertices: [a, b], tag }
        })
        .collect();

    let mesh = Mesh {
        vertices,
        triangles,
        boundary_edges,
    };
    if !mesh.is_connected() {
        return Err(Error::InvalidDomain(
            "obstacle removal disconnects the domain".into(),
        ));
    }
    Ok(mesh)
}

/// Edges with exactly one incident triangle, oriented as in that triangle,
/// in triangle order.
fn boundary_edge_list(triangles: &[[usize; 3]]) -> Vec<[usize; 2]> {
    let mut count: HashMap<(usize, usize), usize> = HashMap::new();
    for t in triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            *count.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    let mut out = Vec::new();
    for t in triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            if count[&(a.min(b), a.max(b))] == 1 {
                out.push([a, b]);
            }
        }
    }
    out
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl Mesh {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Sorted list of unique undirected edges `(min, max)`.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut edges: Vec<[usize; 2]> = self
            .triangles
            .iter()
            .flat_map(|t| (0..3).map(move |k| (t[k], t[(k + 1) % 3])))
            .map(|(a, b)| [a.min(b), a.max(b)])
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    fn is_connected(&self) -> bool {
        if self.triangles.is_empty() {
            return false;
        }
        let mut by_edge: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (ti, t) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                by_edge.entry((a.min(b), a.max(b))).or_default().push(ti);
            }
        }
        let mut seen = vec![false; self.triangles.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(ti) = queue.pop_front() {
            let t = self.triangles[ti];
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                for &n in &by_edge[&(a.min(b), a.max(b))] {
                    if !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Checks every structural invariant of the mesh.
    pub fn validate(&self) -> Result<()> {
        let nv = self.vertices.len();
        if self.triangles.is_empty() {
            return Err(Error::InvalidMesh("mesh has no triangles".into()));
        }
        for (i, v) in self.vertices.iter().enumerate() {
            if !v[0].is_finite() || !v[1].is_finite() {
                return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
            }
        }
        for (ti, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= nv) {
                return Err(Error::InvalidMesh(format!("triangle {ti} has an out-of-range vertex")));
            }
            if self.triangle_area(ti) <= 0.0 {
                return Err(Error::DegenerateElement(ti));
            }
        }

        let mut incidence: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *incidence.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        if let Some((e, _)) = incidence.iter().find(|(_, &c)| c > 2) {
            return Err(Error::InvalidMesh(format!("edge {e:?} shared by more than two triangles")));
        }

        let mut tagged: BTreeMap<(usize, usize), BoundaryTag> = BTreeMap::new();
        for e in &self.boundary_edges {
            let [a, b] = e.vertices;
            if a >= nv || b >= nv {
                return Err(Error::InvalidMesh(format!("boundary edge {a}-{b} out of range")));
            }
            let key = (a.min(b), a.max(b));
            match incidence.get(&key) {
                Some(1) => {}
                Some(_) => {
                    return Err(Error::InvalidMesh(format!("boundary edge {a}-{b} is an interior edge")))
                }
                None => return Err(Error::InvalidMesh(format!("boundary edge {a}-{b} is not a mesh edge"))),
            }
            if tagged.insert(key, e.tag).is_some() {
                return Err(Error::InvalidMesh(format!("boundary edge {a}-{b} tagged twice")));
            }
        }
        let untagged = incidence.iter().filter(|(_, &c)| c == 1).count();
        if untagged != tagged.len() {
            return Err(Error::InvalidMesh(format!(
                "{} boundary edges but {} tagged edges",
                untagged,
                tagged.len()
            )));
        }
        Ok(())
    }

    /// Finds a triangle containing `x` and the barycentric coordinates of
    /// `x` with respect to it.
    pub fn locate_point(&self, x: Point) -> Result<(usize, [f64; 3])> {
        const TOL: f64 = 1e-10;
        for (ti, t) in self.triangles.iter().enumerate() {
            let [a, b, c] = [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]];
            let area = signed_area(a, b, c);
            let l1 = signed_area(x, c, a) / area;
            let l2 = signed_area(x, a, b) / area;
            let l0 = 1.0 - l1 - l2;
            if l0 >= -TOL && l1 >= -TOL && l2 >= -TOL {
                return Ok((ti, [l0, l1, l2]));
            }
        }
        Err(Error::PointNotFound { x: x[0], y: x[1] })
    }

    pub fn summary(&self) -> MeshSummary {
        let mut tags = BTreeMap::new();
        for tag in [BoundaryTag::Inflow, BoundaryTag::Outflow, BoundaryTag::Obstacle] {
            tags.insert(tag, 0);
        }
        for e in &self.boundary_edges {
            *tags.get_mut(&e.tag).unwrap() += 1;
        }
        MeshSummary {
            vertices: self.vertices.len(),
            triangles: self.triangles.len(),
            boundary_edges: self.boundary_edges.len(),
            tags,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeshSummary {
    pub vertices: usize,
    pub triangles: usize,
    pub boundary_edges: usize,
    pub tags: BTreeMap<BoundaryTag, usize>,
}
