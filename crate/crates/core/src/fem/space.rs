//! Continuous Lagrange spaces of degree 1 and 2 with homogeneous Dirichlet
//! conditions on the whole boundary.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::Point;
use crate::mesh::{ElementGeom, TriMesh};

/// Values and gradients of the local basis at one point.
#[derive(Debug, Clone, Copy)]
pub struct Basis {
    pub n: usize,
    pub phi: [f64; 6],
    pub grad: [[f64; 2]; 6],
}

impl Basis {
    pub fn eval(degree: usize, lambda: [f64; 3], geom: &ElementGeom) -> Self {
        let g = &geom.grad_bary;
        let mut b = Basis {
            n: if degree == 1 { 3 } else { 6 },
            phi: [0.0; 6],
            grad: [[0.0; 2]; 6],
        };
        if degree == 1 {
            b.phi[..3].copy_from_slice(&lambda);
            b.grad[..3].copy_from_slice(g);
        } else {
            for i in 0..3 {
                let l = lambda[i];
                b.phi[i] = l * (2.0 * l - 1.0);
                let s = 4.0 * l - 1.0;
                b.grad[i] = [s * g[i][0], s * g[i][1]];
                // edge opposite vertex i
                let (j, k) = ((i + 1) % 3, (i + 2) % 3);
                b.phi[3 + i] = 4.0 * lambda[j] * lambda[k];
                b.grad[3 + i] = [
                    4.0 * (lambda[j] * g[k][0] + lambda[k] * g[j][0]),
                    4.0 * (lambda[j] * g[k][1] + lambda[k] * g[j][1]),
                ];
            }
        }
        b
    }

    pub fn value(&self, coeffs: &[f64]) -> f64 {
        (0..self.n).map(|i| self.phi[i] * coeffs[i]).sum()
    }

    pub fn gradient(&self, coeffs: &[f64]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for i in 0..self.n {
            g[0] += self.grad[i][0] * coeffs[i];
            g[1] += self.grad[i][1] * coeffs[i];
        }
        g
    }
}

#[derive(Debug, Clone)]
pub struct FeSpace {
    mesh: TriMesh,
    degree: usize,
    n_local: usize,
    dof_map: Vec<usize>,
    n_dofs: usize,
    dirichlet: Vec<bool>,
    dof_points: Vec<Point>,
}

impl FeSpace {
    pub fn new(mesh: TriMesh, degree: usize) -> Result<Self> {
        if degree != 1 && degree != 2 {
            return Err(Error::InvalidArgument(format!("unsupported degree {degree}; use 1 or 2")));
        }
        let nv = mesh.n_vertices();
        let nt = mesh.n_triangles();
        let n_local = if degree == 1 { 3 } else { 6 };
        let mut dof_map = Vec::with_capacity(nt * n_local);
        let mut dirichlet = mesh.boundary_flags().to_vec();
        let mut dof_points = mesh.vertices().to_vec();
        let n_dofs;
        if degree == 1 {
            for t in mesh.triangles() {
                dof_map.extend_from_slice(t);
            }
            n_dofs = nv;
        } else {
            let mut edges: Vec<((usize, usize), usize, usize)> = Vec::with_capacity(3 * nt);
            for (k, t) in mesh.triangles().iter().enumerate() {
                for e in 0..3 {
                    let (a, b) = (t[(e + 1) % 3], t[(e + 2) % 3]);
                    edges.push(((a.min(b), a.max(b)), k, e));
                }
            }
            edges.sort_unstable();
            let mut edge_dof = vec![[0usize; 3]; nt];
            let mut next = nv;
            let mut i = 0;
            while i < edges.len() {
                let mut j = i + 1;
                while j < edges.len() && edges[j].0 == edges[i].0 {
                    j += 1;
                }
                let (a, b) = edges[i].0;
                let pa = mesh.vertex(a);
                let pb = mesh.vertex(b);
                dof_points.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                dirichlet.push(j - i == 1);
                for &(_, k, e) in &edges[i..j] {
                    edge_dof[k][e] = next;
                }
                next += 1;
                i = j;
            }
            for (t, e) in mesh.triangles().iter().zip(&edge_dof) {
                dof_map.extend_from_slice(t);
                dof_map.extend_from_slice(e);
            }
            n_dofs = next;
        }
        Ok(Self {
            mesh,
            degree,
            n_local,
            dof_map,
            n_dofs,
            dirichlet,
            dof_points,
        })
    }

    pub fn p1(mesh: TriMesh) -> Arc<Self> {
        Arc::new(Self::new(mesh, 1).expect("degree 1 is supported"))
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn n_local(&self) -> usize {
        self.n_local
    }

    pub fn element_dofs(&self, k: usize) -> &[usize] {
        &self.dof_map[k * self.n_local..(k + 1) * self.n_local]
    }

    pub fn dirichlet(&self) -> &[bool] {
        &self.dirichlet
    }

    pub fn is_dirichlet(&self, i: usize) -> bool {
        self.dirichlet[i]
    }

    pub fn n_free(&self) -> usize {
        self.dirichlet.iter().filter(|d| !**d).count()
    }

    /// Lagrange nodes: vertices, then edge midpoints for degree 2.
    pub fn dof_points(&self) -> &[Point] {
        &self.dof_points
    }

    /// Polynomial degree of |∇u|², used to pick quadrature rules.
    pub fn quad_degree(&self) -> usize {
        if self.degree == 1 {
            4
        } else {
            6
        }
    }

    pub fn basis(&self, k: usize, lambda: [f64; 3]) -> Basis {
        Basis::eval(self.degree, lambda, self.mesh.geom(k))
    }

    pub fn basis_at(&self, k: usize, x: Point) -> Basis {
        self.basis(k, self.mesh.geom(k).barycentric(x))
    }

    pub fn local_coeffs(&self, k: usize, u: &[f64]) -> [f64; 6] {
        let mut c = [0.0; 6];
        for (ci, &d) in c.iter_mut().zip(self.element_dofs(k)) {
            *ci = u[d];
        }
        c
    }

    /// Nodal interpolant of `f`; Dirichlet entries are zeroed.
    pub fn interpolate(&self, f: impl Fn(Point) -> f64) -> Vec<f64> {
        self.dof_points
            .iter()
            .zip(&self.dirichlet)
            .map(|(&p, &d)| if d { 0.0 } else { f(p) })
            .collect()
    }

    /// Nodal interpolant without touching Dirichlet entries.
    pub fn interpolate_all(&self, f: impl Fn(Point) -> f64) -> Vec<f64> {
        self.dof_points.iter().map(|&p| f(p)).collect()
    }

    pub fn zero_dirichlet(&self, u: &mut [f64]) {
        for (x, &d) in u.iter_mut().zip(&self.dirichlet) {
            if d {
                *x = 0.0;
            }
        }
    }
}
