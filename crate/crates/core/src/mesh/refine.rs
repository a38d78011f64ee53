//! Refinement, coarsening and overlays of meshes sharing a forest.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;

use super::forest::{NodeId, VertexId};
use super::TriMesh;
use crate::error::{Error, Result};

/// Outcome of a coarsening request.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoarsenReport {
    pub requested: usize,
    /// Vertices removed (one per merged patch).
    pub removed_vertices: usize,
    pub merged_elements: usize,
    /// Requested elements that were left alone.
    pub skipped: Vec<usize>,
}

/// Common refinement of two meshes with element maps into both.
#[derive(Debug, Clone)]
pub struct Overlay {
    pub mesh: TriMesh,
    /// Element of the first (new) mesh containing each overlay element.
    pub to_new: Vec<usize>,
    /// Element of the second (old) mesh containing each overlay element.
    pub to_old: Vec<usize>,
    /// max h(K_new) / h(K̃).
    pub transition: f64,
    /// max h(K_old) / h(K̃).
    pub transition_old: f64,
}

impl Overlay {
    /// Overlay of a mesh with itself.
    pub fn identity(mesh: &TriMesh) -> Self {
        let map: Vec<usize> = (0..mesh.n_triangles()).collect();
        Self {
            mesh: mesh.clone(),
            to_new: map.clone(),
            to_old: map,
            transition: 1.0,
            transition_old: 1.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.to_new.iter().enumerate().all(|(i, &k)| i == k) && self.to_old.iter().enumerate().all(|(i, &k)| i == k)
    }
}

impl TriMesh {
    /// Newest-vertex bisection of the marked elements followed by the
    /// conformity closure.
    pub fn refine(&self, marked: &[usize]) -> TriMesh {
        if marked.is_empty() {
            return self.clone();
        }
        let nt = self.n_triangles();
        let data = self.forest.read();
        let nodes: Vec<_> = self.leaves.iter().map(|&l| data.node(l).clone()).collect();
        drop(data);

        let mut edge_elems: HashMap<(VertexId, VertexId), Vec<usize>> = HashMap::with_capacity(3 * nt / 2 + 4);
        for (k, n) in nodes.iter().enumerate() {
            for e in n.edges() {
                edge_elems.entry(e).or_default().push(k);
            }
        }
        let mut marked_edges: HashSet<(VertexId, VertexId)> = HashSet::new();
        let mut queue: VecDeque<usize> = VecDeque::new();
        for &k in marked {
            assert!(k < nt, "marked element {k} out of range");
            let e = nodes[k].refinement_edge();
            if marked_edges.insert(e) {
                queue.extend(edge_elems[&e].iter().copied());
            }
        }
        // closure: an element with any marked edge must bisect its refinement edge
        let bound = 10 * nt + marked.len();
        let mut pops = 0usize;
        while let Some(k) = queue.pop_front() {
            pops += 1;
            assert!(pops <= bound * 3, "refinement closure exceeded its iteration bound");
            let e = nodes[k].refinement_edge();
            if marked_edges.contains(&e) {
                continue;
            }
            if nodes[k].edges().iter().any(|x| marked_edges.contains(x)) {
                marked_edges.insert(e);
                queue.extend(edge_elems[&e].iter().copied());
            }
        }

        let mut data = self.forest.write();
        let mut leaves = Vec::with_capacity(nt + 2 * marked_edges.len());
        let mut work: Vec<NodeId> = Vec::new();
        for &l in &self.leaves {
            work.push(l);
            while let Some(id) = work.pop() {
                let re = data.node(id).refinement_edge();
                if marked_edges.contains(&re) {
                    let ch = data.bisect(id);
                    work.extend(ch);
                } else {
                    leaves.push(id);
                }
            }
        }
        drop(data);
        TriMesh::materialize(Arc::clone(&self.forest), leaves)
    }

    /// Merge sibling pairs among the marked elements, one level. A newest
    /// vertex is removed only when every element around it is marked and
    /// was created by bisecting through it; other requests are skipped.
    pub fn coarsen(&self, marked: &[usize]) -> (TriMesh, CoarsenReport) {
        let mut report = CoarsenReport {
            requested: marked.len(),
            ..Default::default()
        };
        if marked.is_empty() {
            return (self.clone(), report);
        }
        let is_marked: HashSet<usize> = marked.iter().copied().collect();
        let data = self.forest.read();
        // patches keyed by the newest vertex
        let mut patch: HashMap<VertexId, Vec<usize>> = HashMap::new();
        for (k, t) in self.triangles.iter().enumerate() {
            for &v in t {
                patch.entry(self.vertex_ids[v]).or_default().push(k);
            }
        }
        let mut removable: Vec<VertexId> = Vec::new();
        let mut candidates: Vec<VertexId> = is_marked
            .iter()
            .map(|&k| data.node(self.leaves[k]).newest_vertex())
            .collect();
        candidates.sort_unstable();
        candidates.dedup();
        for m in candidates {
            let elems = &patch[&m];
            let ok = (elems.len() == 2 || elems.len() == 4)
                && elems.iter().all(|&k| {
                    let node = data.node(self.leaves[k]);
                    is_marked.contains(&k)
                        && node.newest_vertex() == m
                        && node.parent.is_some_and(|p| {
                            let pn = data.node(p);
                            let (a, b) = pn.refinement_edge();
                            data.midpoints.get(&(a, b)) == Some(&m)
                                && pn.children.is_some_and(|ch| {
                                    ch.iter().all(|c| self.leaves.binary_search(c).is_ok())
                                })
                        })
                });
            if ok {
                removable.push(m);
            }
        }
        let mut merged: HashSet<usize> = HashSet::new();
        for m in &removable {
            merged.extend(patch[m].iter().copied());
        }
        report.removed_vertices = removable.len();
        report.merged_elements = merged.len();
        let mut skipped: Vec<usize> = is_marked.iter().copied().filter(|k| !merged.contains(k)).collect();
        skipped.sort_unstable();
        report.skipped = skipped;
        if merged.is_empty() {
            drop(data);
            return (self.clone(), report);
        }
        let mut leaves = Vec::with_capacity(self.leaves.len());
        for (k, &l) in self.leaves.iter().enumerate() {
            if merged.contains(&k) {
                leaves.push(data.node(l).parent.expect("merged element has a parent"));
            } else {
                leaves.push(l);
            }
        }
        drop(data);
        (TriMesh::materialize(Arc::clone(&self.forest), leaves), report)
    }

    /// Finest common descendants of `self` (new) and `old` within the forest.
    pub fn common_refinement(&self, old: &TriMesh) -> Result<Overlay> {
        if !self.same_forest(old) {
            return Err(Error::ForestMismatch);
        }
        if self.leaves == old.leaves {
            return Ok(Overlay::identity(self));
        }
        let data = self.forest.read();
        let ancestors = |m: &TriMesh| -> HashSet<NodeId> {
            let mut s = HashSet::new();
            for &l in &m.leaves {
                for a in data.lineage(l).skip(1) {
                    if !s.insert(a) {
                        break;
                    }
                }
            }
            s
        };
        let anc_new = ancestors(self);
        let anc_old = ancestors(old);
        let mut leaves: Vec<NodeId> = self
            .leaves
            .iter()
            .filter(|l| !anc_old.contains(l))
            .chain(old.leaves.iter().filter(|l| !anc_new.contains(l)))
            .copied()
            .collect();
        leaves.sort_unstable();
        leaves.dedup();
        drop(data);
        let mesh = TriMesh::materialize(Arc::clone(&self.forest), leaves);
        let idx_new = self.leaf_index();
        let idx_old = old.leaf_index();
        let data = self.forest.read();
        let find = |idx: &HashMap<NodeId, usize>, l: NodeId| -> Result<usize> {
            data.lineage(l)
                .find_map(|a| idx.get(&a).copied())
                .ok_or_else(|| Error::Mesh("overlay element not covered".into()))
        };
        let mut to_new = Vec::with_capacity(mesh.n_triangles());
        let mut to_old = Vec::with_capacity(mesh.n_triangles());
        for &l in &mesh.leaves {
            to_new.push(find(&idx_new, l)?);
            to_old.push(find(&idx_old, l)?);
        }
        drop(data);
        let ratio = |m: &TriMesh, map: &[usize]| {
            map.iter()
                .enumerate()
                .map(|(k, &p)| m.diameter(p) / mesh.diameter(k))
                .fold(1.0f64, f64::max)
        };
        let transition = ratio(self, &to_new);
        let transition_old = ratio(old, &to_old);
        Ok(Overlay {
            mesh,
            to_new,
            to_old,
            transition,
            transition_old,
        })
    }

    /// Transition constant between `self` and `other` (against `self`).
    pub fn transition_to(&self, other: &TriMesh) -> Result<f64> {
        Ok(self.common_refinement(other)?.transition)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Rect;

    fn inside(p: [f64; 2], t: [[f64; 2]; 3]) -> bool {
        let g = crate::mesh::ElementGeom::new(t);
        g.barycentric(p).iter().all(|&l| l > -1e-12)
    }

    #[test]
    fn empty_marking_is_noop() {
        let m = TriMesh::unit_square(3).unwrap();
        let r = m.refine(&[]);
        assert_eq!(r.leaves(), m.leaves());
        let (c, rep) = m.coarsen(&[]);
        assert_eq!(c.leaves(), m.leaves());
        assert!(rep.skipped.is_empty());
    }

    #[test]
    fn one_marked_on_two_triangles_gives_four() {
        let m = TriMesh::unit_square(1).unwrap();
        let r = m.refine(&[0]);
        assert_eq!(r.n_triangles(), 4);
        assert_eq!(r.n_vertices(), 5);
        r.check_conformity().unwrap();
        r.check_hanging_geometric().unwrap();
    }

    #[test]
    fn local_refinement_stays_conforming() {
        let mut m = TriMesh::structured(Rect::new(0.0, 2.0, 0.0, 1.0), 3).unwrap();
        for round in 0..6 {
            let marked: Vec<usize> = (0..m.n_triangles()).filter(|&k| (k * 7 + round) % 5 == 0).collect();
            let area = m.total_area();
            m = m.refine(&marked);
            m.check_conformity().unwrap();
            m.check_hanging_geometric().unwrap();
            assert!((m.total_area() - area).abs() <= 1e-12 * area);
        }
    }

    #[test]
    fn uniform_shape_bound() {
        let m0 = TriMesh::unit_square(2).unwrap();
        let s0 = m0.metrics().shape;
        let m = m0.refine_uniform_times(10);
        assert_eq!(m.n_triangles(), 8 * 1024);
        assert!(m.metrics().shape <= 2.0 * s0);
    }

    #[test]
    fn refine_then_coarsen_restores() {
        let m = TriMesh::unit_square(4).unwrap();
        let r = m.refine(&[3, 10, 17]);
        let new: Vec<usize> = (0..r.n_triangles()).filter(|&k| r.levels()[k] > 0).collect();
        let (c, rep) = r.coarsen(&new);
        assert!(rep.skipped.is_empty(), "{rep:?}");
        assert_eq!(c.leaves(), m.leaves());
        assert_eq!(c.vertices(), m.vertices());
        assert_eq!(c.triangles(), m.triangles());
        assert!(r.transition_to(&c).unwrap() <= 1.0 + 1e-14);
        assert!(c.transition_to(&r).unwrap() <= 2.0);
    }

    #[test]
    fn coarsen_initial_mesh_is_noop() {
        let m = TriMesh::unit_square(2).unwrap();
        let all: Vec<usize> = (0..m.n_triangles()).collect();
        let (c, rep) = m.coarsen(&all);
        assert_eq!(c.leaves(), m.leaves());
        assert_eq!(rep.skipped.len(), all.len());
        assert_eq!(rep.removed_vertices, 0);
    }

    #[test]
    fn partial_coarsen_request_is_skipped() {
        let m = TriMesh::unit_square(1).unwrap();
        let r = m.refine(&[0]);
        let (c, rep) = r.coarsen(&[0]);
        assert_eq!(c.leaves(), r.leaves());
        assert_eq!(rep.skipped, vec![0]);
        c.check_conformity().unwrap();
    }

    #[test]
    fn hierarchy_containment() {
        let m = TriMesh::unit_square(2).unwrap().refine(&[0, 5]).refine(&[1, 2, 9]);
        let data = m.forest().read();
        for &l in m.leaves() {
            let node = data.node(l);
            if let Some(p) = node.parent {
                let pv = data.node(p).verts.map(|v| data.coords[v as usize]);
                for v in node.verts {
                    assert!(inside(data.coords[v as usize], pv));
                }
            }
        }
    }

    #[test]
    fn overlay_of_equal_and_nested_meshes() {
        let m = TriMesh::unit_square(3).unwrap();
        let o = m.common_refinement(&m).unwrap();
        assert!(o.is_identity());
        assert_eq!(o.transition, 1.0);

        let f2 = m.refine_uniform_times(2);
        let o = m.common_refinement(&f2).unwrap();
        assert_eq!(o.mesh.leaves(), f2.leaves());
        assert!((o.transition - 2.0).abs() < 1e-12);
        assert!((o.transition_old - 1.0).abs() < 1e-12);
        let f1 = m.refine_uniform();
        assert!((m.transition_to(&f1).unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn overlay_of_disjoint_refinements() {
        let m = TriMesh::unit_square(4).unwrap();
        let a = m.refine(&[0, 1, 2]);
        let b = m.refine(&[20, 25, 30]);
        let o = a.common_refinement(&b).unwrap();
        assert!(o.mesh.n_triangles() >= a.n_triangles().max(b.n_triangles()));
        o.mesh.check_conformity().unwrap();
        for k in 0..o.mesh.n_triangles() {
            let c = o.mesh.geom(k).centroid;
            for p in o.mesh.triangle_points(k) {
                assert!(inside(p, a.triangle_points(o.to_new[k])));
                assert!(inside(p, b.triangle_points(o.to_old[k])));
            }
            assert!(inside(c, a.triangle_points(o.to_new[k])));
        }
    }

    #[test]
    fn forest_mismatch() {
        let a = TriMesh::unit_square(2).unwrap();
        let b = TriMesh::unit_square(2).unwrap();
        assert!(matches!(a.common_refinement(&b), Err(Error::ForestMismatch)));
    }
}
