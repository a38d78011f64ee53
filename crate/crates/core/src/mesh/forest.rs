//! Bisection forest shared by every mesh derived from one initial mesh.
//!
//! Nodes are append-only: bisecting a node always yields the same two
//! children, so meshes derived along different refine/coarsen histories still
//! agree on element and vertex identity.

use std::collections::HashMap;
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use crate::field::Point;

pub type NodeId = u32;
pub type VertexId = u32;

#[derive(Debug, Clone)]
pub(crate) struct Node {
    /// Vertices in stored order; the refinement edge is opposite `refedge`.
    pub verts: [VertexId; 3],
    pub refedge: u8,
    pub parent: Option<NodeId>,
    pub children: Option<[NodeId; 2]>,
    pub level: u16,
}

impl Node {
    /// Rotation with the newest vertex first; the refinement edge is then
    /// `verts[1]`–`verts[2]`.
    pub fn canonical(&self) -> [VertexId; 3] {
        let r = self.refedge as usize;
        [self.verts[r], self.verts[(r + 1) % 3], self.verts[(r + 2) % 3]]
    }

    pub fn newest_vertex(&self) -> VertexId {
        self.verts[self.refedge as usize]
    }

    pub fn refinement_edge(&self) -> (VertexId, VertexId) {
        let c = self.canonical();
        edge_key(c[1], c[2])
    }

    pub fn edges(&self) -> [(VertexId, VertexId); 3] {
        let v = self.verts;
        [edge_key(v[1], v[2]), edge_key(v[2], v[0]), edge_key(v[0], v[1])]
    }
}

pub(crate) fn edge_key(a: VertexId, b: VertexId) -> (VertexId, VertexId) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Default)]
pub(crate) struct ForestData {
    pub coords: Vec<Point>,
    pub midpoints: HashMap<(VertexId, VertexId), VertexId>,
    pub nodes: Vec<Node>,
    pub n_roots: usize,
    pub root_area: f64,
}

impl ForestData {
    pub fn midpoint(&mut self, a: VertexId, b: VertexId) -> VertexId {
        let key = edge_key(a, b);
        if let Some(&m) = self.midpoints.get(&key) {
            return m;
        }
        let pa = self.coords[key.0 as usize];
        let pb = self.coords[key.1 as usize];
        let id = self.coords.len() as VertexId;
        self.coords.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
        self.midpoints.insert(key, id);
        id
    }

    /// Newest-vertex bisection of `id`; reuses existing children.
    pub fn bisect(&mut self, id: NodeId) -> [NodeId; 2] {
        if let Some(ch) = self.nodes[id as usize].children {
            return ch;
        }
        let node = &self.nodes[id as usize];
        let [p0, p1, p2] = node.canonical();
        let level = node.level + 1;
        let m = self.midpoint(p1, p2);
        let first = self.nodes.len() as NodeId;
        self.nodes.push(Node {
            verts: [m, p0, p1],
            refedge: 0,
            parent: Some(id),
            children: None,
            level,
        });
        self.nodes.push(Node {
            verts: [m, p2, p0],
            refedge: 0,
            parent: Some(id),
            children: None,
            level,
        });
        let ch = [first, first + 1];
        self.nodes[id as usize].children = Some(ch);
        ch
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id as usize]
    }

    /// `id` followed by its ancestors up to the root.
    pub fn lineage(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        std::iter::successors(Some(id), move |&n| self.nodes[n as usize].parent)
    }
}

#[derive(Debug)]
pub struct Forest {
    data: RwLock<ForestData>,
}

impl Forest {
    pub(crate) fn new(data: ForestData) -> Arc<Self> {
        Arc::new(Self {
            data: RwLock::new(data),
        })
    }

    pub(crate) fn read(&self) -> RwLockReadGuard<'_, ForestData> {
        self.data.read().expect("forest lock poisoned")
    }

    pub(crate) fn write(&self) -> RwLockWriteGuard<'_, ForestData> {
        self.data.write().expect("forest lock poisoned")
    }

    pub fn n_nodes(&self) -> usize {
        self.read().nodes.len()
    }

    pub fn n_roots(&self) -> usize {
        self.read().n_roots
    }
}
