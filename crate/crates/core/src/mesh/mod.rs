//! Conforming triangle meshes with newest-vertex bisection.
//!
//! A [`TriMesh`] is an immutable snapshot: a list of active leaves of a shared
//! bisection [`Forest`] plus the materialized vertex and triangle arrays used
//! by assembly. `refine`, `coarsen` and `common_refinement` return new meshes
//! on the same forest.

mod forest;
mod io;
mod refine;

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::Point;

pub use forest::{Forest, NodeId, VertexId};
pub use refine::{CoarsenReport, Overlay};

use forest::{edge_key, ForestData, Node};

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub const UNIT: Rect = Rect {
        x0: 0.0,
        x1: 1.0,
        y0: 0.0,
        y1: 1.0,
    };

    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }
}

/// Per-element geometry.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeom {
    pub area: f64,
    /// Gradients of the three barycentric coordinates.
    pub grad_bary: [[f64; 2]; 3],
    pub centroid: Point,
    /// Longest edge length.
    pub diameter: f64,
    /// Diameter of the inscribed circle.
    pub inball: f64,
}

impl ElementGeom {
    pub fn new(p: [Point; 3]) -> Self {
        let d1 = [p[1][0] - p[0][0], p[1][1] - p[0][1]];
        let d2 = [p[2][0] - p[0][0], p[2][1] - p[0][1]];
        let det = d1[0] * d2[1] - d1[1] * d2[0];
        let area = 0.5 * det.abs();
        // grad λ_i = rot(p_{i+2} - p_{i+1}) / det
        let mut grad_bary = [[0.0; 2]; 3];
        for (i, g) in grad_bary.iter_mut().enumerate() {
            let a = p[(i + 1) % 3];
            let b = p[(i + 2) % 3];
            *g = [(a[1] - b[1]) / det, (b[0] - a[0]) / det];
        }
        let len = |a: Point, b: Point| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let edges = [len(p[1], p[2]), len(p[2], p[0]), len(p[0], p[1])];
        let perimeter = edges[0] + edges[1] + edges[2];
        Self {
            area,
            grad_bary,
            centroid: [
                (p[0][0] + p[1][0] + p[2][0]) / 3.0,
                (p[0][1] + p[1][1] + p[2][1]) / 3.0,
            ],
            diameter: edges[0].max(edges[1]).max(edges[2]),
            inball: 4.0 * area / perimeter,
        }
    }

    /// Barycentric coordinates of a physical point.
    pub fn barycentric(&self, x: Point) -> [f64; 3] {
        let dx = [x[0] - self.centroid[0], x[1] - self.centroid[1]];
        let l = |g: [f64; 2]| 1.0 / 3.0 + g[0] * dx[0] + g[1] * dx[1];
        [l(self.grad_bary[0]), l(self.grad_bary[1]), l(self.grad_bary[2])]
    }
}

/// An interior edge with its two neighbours; the normal points from
/// `elems[0]` (lower index) into `elems[1]`.
#[derive(Debug, Clone, Copy)]
pub struct Face {
    pub verts: [usize; 2],
    pub elems: [usize; 2],
    pub normal: [f64; 2],
    pub length: f64,
}

#[derive(Debug, Clone, Default)]
pub struct FaceSet {
    pub faces: Vec<Face>,
}

impl FaceSet {
    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshMetrics {
    /// max h_K / ρ_K
    pub shape: f64,
    pub h_max: f64,
    pub h_min: f64,
    pub area: f64,
}

pub struct TriMesh {
    forest: Arc<Forest>,
    leaves: Vec<NodeId>,
    vertex_ids: Vec<VertexId>,
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    refedge: Vec<u8>,
    boundary: Vec<bool>,
    levels: Vec<u16>,
    geom: Vec<ElementGeom>,
}

impl std::fmt::Debug for TriMesh {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TriMesh")
            .field("vertices", &self.vertices.len())
            .field("triangles", &self.triangles.len())
            .finish()
    }
}

impl TriMesh {
    /// Build an initial mesh (a fresh forest root set). Without `refedge` the
    /// refinement edge is the longest edge, ties going to the edge with the
    /// lexicographically smallest vertex pair.
    pub fn from_raw(vertices: Vec<Point>, triangles: Vec<[usize; 3]>, refedge: Option<Vec<u8>>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::Mesh("no triangles".into()));
        }
        let nv = vertices.len();
        let mut used = vec![false; nv];
        for (k, t) in triangles.iter().enumerate() {
            for &v in t {
                if v >= nv {
                    return Err(Error::Mesh(format!("triangle {k} references vertex {v} >= {nv}")));
                }
                used[v] = true;
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::Mesh(format!("triangle {k} repeats a vertex")));
            }
        }
        if let Some(v) = used.iter().position(|u| !u) {
            return Err(Error::Mesh(format!("vertex {v} is not used by any triangle")));
        }
        let refedge = match refedge {
            Some(r) => {
                if r.len() != triangles.len() || r.iter().any(|&e| e > 2) {
                    return Err(Error::Mesh("refinement edge markers must be 0, 1 or 2".into()));
                }
                r
            }
            None => triangles.iter().map(|t| longest_edge(&vertices, t)).collect(),
        };
        let mut nodes = Vec::with_capacity(triangles.len());
        let mut root_area = 0.0;
        for (t, &r) in triangles.iter().zip(&refedge) {
            let g = ElementGeom::new([vertices[t[0]], vertices[t[1]], vertices[t[2]]]);
            if !(g.area > 0.0) {
                return Err(Error::Mesh(format!("degenerate triangle {t:?}")));
            }
            root_area += g.area;
            nodes.push(Node {
                verts: [t[0] as VertexId, t[1] as VertexId, t[2] as VertexId],
                refedge: r,
                parent: None,
                children: None,
                level: 0,
            });
        }
        let data = ForestData {
            coords: vertices,
            midpoints: HashMap::new(),
            nodes,
            n_roots: triangles.len(),
            root_area,
        };
        let forest = Forest::new(data);
        let leaves = (0..triangles.len() as NodeId).collect();
        let mesh = Self::materialize(forest, leaves);
        mesh.check_conformity()?;
        mesh.check_hanging_geometric()?;
        Ok(mesh)
    }

    /// Structured mesh: each of the n×n cells is split by one diagonal, the
    /// diagonal direction alternating in a checkerboard pattern.
    pub fn structured(rect: Rect, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("structured mesh needs n >= 1".into()));
        }
        if !(rect.x1 > rect.x0 && rect.y1 > rect.y0) {
            return Err(Error::InvalidArgument("empty rectangle".into()));
        }
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                let x = rect.x0 + (rect.x1 - rect.x0) * i as f64 / n as f64;
                let y = rect.y0 + (rect.y1 - rect.y0) * j as f64 / n as f64;
                vertices.push([x, y]);
            }
        }
        let id = |i: usize, j: usize| j * (n + 1) + i;
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (v00, v10, v11, v01) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                if (i + j) % 2 == 0 {
                    triangles.push([v00, v10, v11]);
                    triangles.push([v00, v11, v01]);
                } else {
                    triangles.push([v00, v10, v01]);
                    triangles.push([v10, v11, v01]);
                }
            }
        }
        Self::from_raw(vertices, triangles, None)
    }

    pub fn unit_square(n: usize) -> Result<Self> {
        Self::structured(Rect::UNIT, n)
    }

    /// Assemble the snapshot for a set of leaves.
    pub(crate) fn materialize(forest: Arc<Forest>, mut leaves: Vec<NodeId>) -> Self {
        leaves.sort_unstable();
        leaves.dedup();
        let data = forest.read();
        let mut vertex_ids: Vec<VertexId> = leaves.iter().flat_map(|&l| data.node(l).verts).collect();
        vertex_ids.sort_unstable();
        vertex_ids.dedup();
        let local: HashMap<VertexId, usize> = vertex_ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let vertices: Vec<Point> = vertex_ids.iter().map(|&v| data.coords[v as usize]).collect();
        let mut triangles = Vec::with_capacity(leaves.len());
        let mut refedge = Vec::with_capacity(leaves.len());
        let mut levels = Vec::with_capacity(leaves.len());
        for &l in &leaves {
            let node = data.node(l);
            triangles.push(node.verts.map(|v| local[&v]));
            refedge.push(node.refedge);
            levels.push(node.level);
        }
        drop(data);
        let geom = triangles
            .iter()
            .map(|t| ElementGeom::new([vertices[t[0]], vertices[t[1]], vertices[t[2]]]))
            .collect();
        let boundary = topological_boundary(vertices.len(), &triangles);
        Self {
            forest,
            leaves,
            vertex_ids,
            vertices,
            triangles,
            refedge,
            boundary,
            levels,
            geom,
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> Point {
        self.vertices[i]
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle(&self, k: usize) -> [usize; 3] {
        self.triangles[k]
    }

    pub fn triangle_points(&self, k: usize) -> [Point; 3] {
        self.triangles[k].map(|v| self.vertices[v])
    }

    /// Index of the vertex opposite the refinement edge, per triangle.
    pub fn refinement_edges(&self) -> &[u8] {
        &self.refedge
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn geom(&self, k: usize) -> &ElementGeom {
        &self.geom[k]
    }

    pub fn geometry(&self) -> &[ElementGeom] {
        &self.geom
    }

    pub fn diameter(&self, k: usize) -> f64 {
        self.geom[k].diameter
    }

    /// Bisection depth of each element below its initial ancestor.
    pub fn levels(&self) -> &[u16] {
        &self.levels
    }

    pub fn forest(&self) -> &Arc<Forest> {
        &self.forest
    }

    pub fn same_forest(&self, other: &TriMesh) -> bool {
        Arc::ptr_eq(&self.forest, &other.forest)
    }

    /// Forest node of each element.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn vertex_ids(&self) -> &[VertexId] {
        &self.vertex_ids
    }

    /// Parent element node in the bisection forest, `None` for initial elements.
    pub fn parent_of(&self, k: usize) -> Option<NodeId> {
        self.forest.read().node(self.leaves[k]).parent
    }

    pub fn total_area(&self) -> f64 {
        self.geom.iter().map(|g| g.area).sum()
    }

    /// Area of the initial mesh this one descends from.
    pub fn domain_area(&self) -> f64 {
        self.forest.read().root_area
    }

    pub fn metrics(&self) -> MeshMetrics {
        let mut m = MeshMetrics {
            shape: 0.0,
            h_max: 0.0,
            h_min: f64::INFINITY,
            area: 0.0,
        };
        for g in &self.geom {
            m.shape = m.shape.max(g.diameter / g.inball);
            m.h_max = m.h_max.max(g.diameter);
            m.h_min = m.h_min.min(g.diameter);
            m.area += g.area;
        }
        m
    }

    /// Largest distance between two vertices, i.e. diam(Ω) for a polygon.
    pub fn domain_diameter(&self) -> f64 {
        let pts: Vec<Point> = self
            .vertices
            .iter()
            .zip(&self.boundary)
            .filter(|(_, &b)| b)
            .map(|(p, _)| *p)
            .collect();
        let mut d2: f64 = 0.0;
        for (i, a) in pts.iter().enumerate() {
            for b in &pts[i + 1..] {
                d2 = d2.max((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2));
            }
        }
        d2.sqrt()
    }

    /// Number of triangles with no vertex strictly inside Ω.
    pub fn elements_without_interior_vertex(&self) -> usize {
        self.triangles
            .iter()
            .filter(|t| t.iter().all(|&v| self.boundary[v]))
            .count()
    }

    /// Interior edges sorted by their vertex pair.
    pub fn interior_faces(&self) -> FaceSet {
        let mut edges: Vec<((usize, usize), usize)> = Vec::with_capacity(3 * self.triangles.len());
        for (k, t) in self.triangles.iter().enumerate() {
            for e in 0..3 {
                let (a, b) = (t[(e + 1) % 3], t[(e + 2) % 3]);
                edges.push(((a.min(b), a.max(b)), k));
            }
        }
        edges.sort_unstable();
        let mut faces = Vec::new();
        let mut i = 0;
        while i < edges.len() {
            let mut j = i + 1;
            while j < edges.len() && edges[j].0 == edges[i].0 {
                j += 1;
            }
            if j - i == 2 {
                let (a, b) = edges[i].0;
                let lo = edges[i].1.min(edges[i + 1].1);
                let hi = edges[i].1.max(edges[i + 1].1);
                let pa = self.vertices[a];
                let pb = self.vertices[b];
                let tx = pb[0] - pa[0];
                let ty = pb[1] - pa[1];
                let length = (tx * tx + ty * ty).sqrt();
                let mut normal = [ty / length, -tx / length];
                let c_lo = self.geom[lo].centroid;
                let c_hi = self.geom[hi].centroid;
                if normal[0] * (c_hi[0] - c_lo[0]) + normal[1] * (c_hi[1] - c_lo[1]) < 0.0 {
                    normal = [-normal[0], -normal[1]];
                }
                faces.push(Face {
                    verts: [a, b],
                    elems: [lo, hi],
                    normal,
                    length,
                });
            }
            i = j;
        }
        FaceSet { faces }
    }

    /// Edge hashing check: every edge is shared by at most two triangles, no
    /// edge with a single neighbour has been bisected by the other side, and
    /// the triangles tile the initial domain.
    pub fn check_conformity(&self) -> Result<()> {
        let mut edges: Vec<(VertexId, VertexId)> = Vec::with_capacity(3 * self.triangles.len());
        for t in &self.triangles {
            for e in 0..3 {
                edges.push(edge_key(
                    self.vertex_ids[t[(e + 1) % 3]],
                    self.vertex_ids[t[(e + 2) % 3]],
                ));
            }
        }
        edges.sort_unstable();
        let data = self.forest.read();
        let mut i = 0;
        while i < edges.len() {
            let mut j = i + 1;
            while j < edges.len() && edges[j] == edges[i] {
                j += 1;
            }
            if j - i > 2 {
                return Err(Error::Mesh(format!("edge {:?} shared by {} triangles", edges[i], j - i)));
            }
            if j - i == 1 {
                if let Some(m) = data.midpoints.get(&edges[i]) {
                    if self.vertex_ids.binary_search(m).is_ok() {
                        return Err(Error::Mesh(format!("hanging vertex on edge {:?}", edges[i])));
                    }
                }
            }
            i = j;
        }
        let area = self.total_area();
        if (area - data.root_area).abs() > 1e-12 * data.root_area {
            return Err(Error::Mesh(format!("area {area} differs from domain area {}", data.root_area)));
        }
        Ok(())
    }

    /// Brute-force check that no vertex lies inside a single-neighbour edge.
    pub(crate) fn check_hanging_geometric(&self) -> Result<()> {
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                let (a, b) = (t[(e + 1) % 3], t[(e + 2) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut outer: Vec<(usize, usize)> = count.into_iter().filter(|(_, c)| *c == 1).map(|(e, _)| e).collect();
        outer.sort_unstable();
        for &(a, b) in &outer {
            let pa = self.vertices[a];
            let pb = self.vertices[b];
            let len2 = (pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2);
            for (v, p) in self.vertices.iter().enumerate() {
                if v == a || v == b {
                    continue;
                }
                let cross = (pb[0] - pa[0]) * (p[1] - pa[1]) - (pb[1] - pa[1]) * (p[0] - pa[0]);
                if cross.abs() > 1e-12 * len2 {
                    continue;
                }
                let s = ((p[0] - pa[0]) * (pb[0] - pa[0]) + (p[1] - pa[1]) * (pb[1] - pa[1])) / len2;
                if s > 1e-12 && s < 1.0 - 1e-12 {
                    return Err(Error::Mesh(format!("vertex {v} hangs on edge ({a}, {b})")));
                }
            }
        }
        Ok(())
    }

    /// Element containing each forest node of `other` (ancestor-or-self),
    /// `None` when `other`'s element is coarser than this mesh there.
    pub(crate) fn leaf_index(&self) -> HashMap<NodeId, usize> {
        self.leaves.iter().enumerate().map(|(i, &l)| (l, i)).collect()
    }

    pub fn refine_uniform(&self) -> TriMesh {
        let all: Vec<usize> = (0..self.n_triangles()).collect();
        self.refine(&all)
    }

    /// `k` rounds of uniform bisection.
    pub fn refine_uniform_times(&self, k: usize) -> TriMesh {
        let mut m = self.clone();
        for _ in 0..k {
            m = m.refine_uniform();
        }
        m
    }
}

impl Clone for TriMesh {
    fn clone(&self) -> Self {
        Self {
            forest: Arc::clone(&self.forest),
            leaves: self.leaves.clone(),
            vertex_ids: self.vertex_ids.clone(),
            vertices: self.vertices.clone(),
            triangles: self.triangles.clone(),
            refedge: self.refedge.clone(),
            boundary: self.boundary.clone(),
            levels: self.levels.clone(),
            geom: self.geom.clone(),
        }
    }
}

fn longest_edge(vertices: &[Point], t: &[usize; 3]) -> u8 {
    let mut best = 0usize;
    let mut best_len = -1.0;
    let mut best_key = (usize::MAX, usize::MAX);
    for e in 0..3 {
        let (a, b) = (t[(e + 1) % 3], t[(e + 2) % 3]);
        let pa = vertices[a];
        let pb = vertices[b];
        let len = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
        let key = (a.min(b), a.max(b));
        let tie = (len - best_len).abs() <= 1e-12 * len.max(best_len);
        if (!tie && len > best_len) || (tie && key < best_key) {
            best = e;
            best_len = len;
            best_key = key;
        }
    }
    best as u8
}

fn topological_boundary(nv: usize, triangles: &[[usize; 3]]) -> Vec<bool> {
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(3 * triangles.len());
    for t in triangles {
        for e in 0..3 {
            let (a, b) = (t[(e + 1) % 3], t[(e + 2) % 3]);
            edges.push((a.min(b), a.max(b)));
        }
    }
    edges.sort_unstable();
    let mut flags = vec![false; nv];
    let mut i = 0;
    while i < edges.len() {
        let mut j = i + 1;
        while j < edges.len() && edges[j] == edges[i] {
            j += 1;
        }
        if j - i == 1 {
            flags[edges[i].0] = true;
            flags[edges[i].1] = true;
        }
        i = j;
    }
    flags
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structured_counts() {
        let m = TriMesh::unit_square(1).unwrap();
        assert_eq!((m.n_triangles(), m.n_vertices()), (2, 4));
        let m = TriMesh::unit_square(2).unwrap();
        assert_eq!((m.n_triangles(), m.n_vertices()), (8, 9));
        for n in 1..=8 {
            let m = TriMesh::unit_square(n).unwrap();
            assert_eq!(m.n_triangles(), 2 * n * n);
            assert_eq!(m.n_vertices(), (n + 1) * (n + 1));
            m.check_conformity().unwrap();
            m.check_hanging_geometric().unwrap();
        }
        assert!(TriMesh::unit_square(0).is_err());
    }

    #[test]
    fn refinement_edge_is_longest() {
        let m = TriMesh::structured(Rect::new(0.0, 2.0, 0.0, 1.0), 3).unwrap();
        for k in 0..m.n_triangles() {
            let t = m.triangle(k);
            let r = m.refinement_edges()[k] as usize;
            let a = m.vertex(t[(r + 1) % 3]);
            let b = m.vertex(t[(r + 2) % 3]);
            let len = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            assert!((len - m.diameter(k)).abs() < 1e-14);
        }
    }

    #[test]
    fn interior_face_counts() {
        assert_eq!(TriMesh::unit_square(1).unwrap().interior_faces().len(), 1);
        assert_eq!(TriMesh::unit_square(2).unwrap().interior_faces().len(), 8);
        let m = TriMesh::unit_square(3).unwrap();
        for f in &m.interior_faces().faces {
            let a = m.triangle(f.elems[0]);
            let b = m.triangle(f.elems[1]);
            let shared: Vec<usize> = a.iter().filter(|v| b.contains(v)).copied().collect();
            assert_eq!(shared.len(), 2);
            assert!(shared.contains(&f.verts[0]) && shared.contains(&f.verts[1]));
            assert!(f.elems[0] < f.elems[1]);
            let (clo, chi) = (m.geom(f.elems[0]).centroid, m.geom(f.elems[1]).centroid);
            assert!(f.normal[0] * (chi[0] - clo[0]) + f.normal[1] * (chi[1] - clo[1]) > 0.0);
        }
    }

    #[test]
    fn shape_and_diameter() {
        let m = TriMesh::unit_square(4).unwrap();
        let metrics = m.metrics();
        // right isosceles triangles: h/ρ = 1 + √2
        assert!((metrics.shape - (1.0 + 2f64.sqrt())).abs() < 1e-12);
        assert!(metrics.shape >= 3f64.sqrt());
        assert!((m.domain_diameter() - 2f64.sqrt()).abs() < 1e-15);
        let r = TriMesh::structured(Rect::new(0.0, 2.0, 0.0, 1.0), 2).unwrap();
        assert!((r.domain_diameter() - 5f64.sqrt()).abs() < 1e-15);
        assert_eq!(TriMesh::unit_square(1).unwrap().elements_without_interior_vertex(), 2);
        assert_eq!(TriMesh::unit_square(2).unwrap().elements_without_interior_vertex(), 0);
    }

    #[test]
    fn equilateral_shape_lower_bound() {
        let h = 3f64.sqrt() / 2.0;
        let m = TriMesh::from_raw(vec![[0.0, 0.0], [1.0, 0.0], [0.5, h]], vec![[0, 1, 2]], None).unwrap();
        assert!((m.metrics().shape - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn barycentric_roundtrip() {
        let g = ElementGeom::new([[0.1, 0.2], [1.3, 0.4], [0.5, 1.7]]);
        let l = g.barycentric([0.1, 0.2]);
        assert!((l[0] - 1.0).abs() < 1e-14 && l[1].abs() < 1e-14 && l[2].abs() < 1e-14);
        let l = g.barycentric([0.5, 1.7]);
        assert!((l[2] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_hanging_nodes_and_bad_input() {
        // square split into a triangle on top and two at the bottom sharing a midpoint of the diagonal
        let v = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]];
        let t = vec![[0, 1, 4], [1, 2, 4], [0, 2, 3]];
        assert!(TriMesh::from_raw(v, t, None).is_err());
        assert!(TriMesh::from_raw(vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], vec![[0, 1, 2]], None).is_err());
        assert!(TriMesh::from_raw(vec![[0.0, 0.0], [1.0, 0.0]], vec![[0, 1, 2]], None).is_err());
    }
}
