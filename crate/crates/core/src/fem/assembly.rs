//! Element and face assembly.
//!
//! Local contributions are computed in parallel and merged in element order,
//! so assembled operators are independent of the thread count.

use crate::field::{Phi, Point};
use crate::mesh::FaceSet;
use crate::par;

use super::quadrature::{LineRule, QuadratureRule};
use super::space::{Basis, FeSpace};
use super::sparse::CsrMatrix;

pub type LocalMatrix = [[f64; 6]; 6];
pub type LocalFaceMatrix = [[f64; 12]; 12];

/// One quadrature point on an element: physical location, physical weight
/// and the local basis.
#[derive(Debug, Clone, Copy)]
pub struct Qp {
    pub x: Point,
    pub w: f64,
    pub basis: Basis,
}

pub fn element_qps(space: &FeSpace, k: usize, rule: &QuadratureRule) -> Vec<Qp> {
    let p = space.mesh().triangle_points(k);
    let two_area = 2.0 * space.mesh().geom(k).area;
    (0..rule.len())
        .map(|q| {
            let l = rule.barycentric(q);
            Qp {
                x: [
                    l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
                    l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
                ],
                w: rule.weights[q] * two_area,
                basis: space.basis(k, l),
            }
        })
        .collect()
}

/// Sum of `kernel` over elements and quadrature points; `loc[i][j]` is the
/// contribution of trial function `j` tested with `i`.
pub fn assemble_matrix<F>(space: &FeSpace, rule: &QuadratureRule, kernel: F) -> CsrMatrix
where
    F: Fn(usize, &Qp, &mut LocalMatrix) + Sync,
{
    let nl = space.n_local();
    let locals = par::map_indexed(space.mesh().n_triangles(), |k| {
        let mut loc = [[0.0; 6]; 6];
        for qp in element_qps(space, k, rule) {
            kernel(k, &qp, &mut loc);
        }
        loc
    });
    let mut trip = Vec::with_capacity(locals.len() * nl * nl);
    for (k, loc) in locals.iter().enumerate() {
        let dofs = space.element_dofs(k);
        for i in 0..nl {
            for j in 0..nl {
                if loc[i][j] != 0.0 {
                    trip.push((dofs[i], dofs[j], loc[i][j]));
                }
            }
        }
    }
    CsrMatrix::from_triplets(space.n_dofs(), space.n_dofs(), trip)
}

pub fn assemble_vector<F>(space: &FeSpace, rule: &QuadratureRule, kernel: F) -> Vec<f64>
where
    F: Fn(usize, &Qp, &mut [f64; 6]) + Sync,
{
    let locals = par::map_indexed(space.mesh().n_triangles(), |k| {
        let mut loc = [0.0; 6];
        for qp in element_qps(space, k, rule) {
            kernel(k, &qp, &mut loc);
        }
        loc
    });
    let mut out = vec![0.0; space.n_dofs()];
    for (k, loc) in locals.iter().enumerate() {
        for (i, &d) in space.element_dofs(k).iter().enumerate() {
            out[d] += loc[i];
        }
    }
    out
}

/// Per-element scalar reduction (e.g. squared norms); returned per element.
pub fn integrate_elements<F>(space: &FeSpace, rule: &QuadratureRule, f: F) -> Vec<f64>
where
    F: Fn(usize, &Qp) -> f64 + Sync,
{
    par::map_indexed(space.mesh().n_triangles(), |k| {
        element_qps(space, k, rule).iter().map(|qp| qp.w * f(k, qp)).sum()
    })
}

/// A quadrature point on an interior face with the bases of both neighbours.
#[derive(Debug, Clone, Copy)]
pub struct FaceQp {
    pub x: Point,
    pub w: f64,
    pub lo: Basis,
    pub hi: Basis,
}

/// Points of a 2-point Gauss rule on each face.
pub fn face_qps(space: &FeSpace, faces: &FaceSet, f: usize, rule: &LineRule) -> Vec<FaceQp> {
    let face = &faces.faces[f];
    let a = space.mesh().vertex(face.verts[0]);
    let b = space.mesh().vertex(face.verts[1]);
    (0..rule.len())
        .map(|q| {
            let s = rule.points[q];
            let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
            FaceQp {
                x,
                w: rule.weights[q] * face.length,
                lo: space.basis_at(face.elems[0], x),
                hi: space.basis_at(face.elems[1], x),
            }
        })
        .collect()
}

/// Face assembly; local indices `0..n` belong to `elems[0]` and `n..2n` to
/// `elems[1]`.
pub fn assemble_face_matrix<F>(space: &FeSpace, faces: &FaceSet, kernel: F) -> CsrMatrix
where
    F: Fn(usize, &FaceQp, &mut LocalFaceMatrix) + Sync,
{
    let nl = space.n_local();
    let rule = LineRule::gauss(if space.degree() == 1 { 2 } else { 3 });
    let locals = par::map_indexed(faces.len(), |f| {
        let mut loc = [[0.0; 12]; 12];
        for qp in face_qps(space, faces, f, &rule) {
            kernel(f, &qp, &mut loc);
        }
        loc
    });
    let mut trip = Vec::new();
    for (f, loc) in locals.iter().enumerate() {
        let face = &faces.faces[f];
        let mut dofs = [0usize; 12];
        dofs[..nl].copy_from_slice(space.element_dofs(face.elems[0]));
        dofs[nl..2 * nl].copy_from_slice(space.element_dofs(face.elems[1]));
        for i in 0..2 * nl {
            for j in 0..2 * nl {
                if loc[i][j] != 0.0 {
                    trip.push((dofs[i], dofs[j], loc[i][j]));
                }
            }
        }
    }
    CsrMatrix::from_triplets(space.n_dofs(), space.n_dofs(), trip)
}

/// Basis values of the face pair as one 12-vector: `lo` then `hi`.
pub fn stacked(nl: usize, lo: &[f64], hi: &[f64]) -> [f64; 12] {
    let mut s = [0.0; 12];
    s[..nl].copy_from_slice(&lo[..nl]);
    s[nl..2 * nl].copy_from_slice(&hi[..nl]);
    s
}

pub fn mass_matrix(space: &FeSpace) -> CsrMatrix {
    let rule = QuadratureRule::for_degree(2 * space.degree());
    let nl = space.n_local();
    assemble_matrix(space, &rule, |_, qp, loc| {
        for i in 0..nl {
            for j in 0..nl {
                loc[i][j] += qp.w * qp.basis.phi[i] * qp.basis.phi[j];
            }
        }
    })
}

pub fn stiffness_matrix(space: &FeSpace) -> CsrMatrix {
    let rule = QuadratureRule::for_degree(2 * space.degree() - 2);
    let nl = space.n_local();
    assemble_matrix(space, &rule, |_, qp, loc| {
        for i in 0..nl {
            for j in 0..nl {
                let gi = qp.basis.grad[i];
                let gj = qp.basis.grad[j];
                loc[i][j] += qp.w * (gi[0] * gj[0] + gi[1] * gj[1]);
            }
        }
    })
}

/// `ε(∇u,∇v) + β(u,v)`
pub fn energy_matrix(space: &FeSpace, eps: f64, beta: f64) -> CsrMatrix {
    stiffness_matrix(space).add(eps, &mass_matrix(space), beta)
}

/// Matrix of `B(u, v) = ∫ ε∇u·∇v + (a·∇u) v + b u v` with coefficients
/// given at points, without boundary elimination.
pub fn assemble_b_raw(
    space: &FeSpace,
    eps: f64,
    a: &(dyn Fn(Point) -> [f64; 2] + Sync),
    b: &(dyn Fn(Point) -> f64 + Sync),
) -> CsrMatrix {
    let rule = QuadratureRule::for_degree(space.quad_degree());
    let nl = space.n_local();
    assemble_matrix(space, &rule, |_, qp, loc| {
        let av = a(qp.x);
        let bv = b(qp.x);
        let bs = &qp.basis;
        for i in 0..nl {
            for j in 0..nl {
                let gi = bs.grad[i];
                let gj = bs.grad[j];
                let diff = eps * (gi[0] * gj[0] + gi[1] * gj[1]);
                let conv = (av[0] * gj[0] + av[1] * gj[1]) * bs.phi[i];
                loc[i][j] += qp.w * (diff + conv + bv * bs.phi[j] * bs.phi[i]);
            }
        }
    })
}

/// `B` with Dirichlet rows and columns replaced by the identity.
pub fn assemble_b(
    space: &FeSpace,
    eps: f64,
    a: &(dyn Fn(Point) -> [f64; 2] + Sync),
    b: &(dyn Fn(Point) -> f64 + Sync),
) -> CsrMatrix {
    assemble_b_raw(space, eps, a, b).eliminate(space.dirichlet())
}

/// `F_i = ∫ ν φ(U) g φ_i`
pub fn assemble_n(
    space: &FeSpace,
    nu: f64,
    phi: &Phi,
    g: &(dyn Fn(Point) -> f64 + Sync),
    u: &[f64],
) -> Vec<f64> {
    if nu == 0.0 {
        return vec![0.0; space.n_dofs()];
    }
    let rule = QuadratureRule::for_degree(space.quad_degree());
    let nl = space.n_local();
    assemble_vector(space, &rule, |k, qp, loc| {
        let c = space.local_coeffs(k, u);
        let s = nu * phi.eval(qp.basis.value(&c)) * g(qp.x);
        for i in 0..nl {
            loc[i] += qp.w * s * qp.basis.phi[i];
        }
    })
}

/// `F_i = ∫ f φ_i`
pub fn load_vector(space: &FeSpace, f: &(dyn Fn(Point) -> f64 + Sync)) -> Vec<f64> {
    let rule = QuadratureRule::for_degree(space.quad_degree());
    let nl = space.n_local();
    assemble_vector(space, &rule, |_, qp, loc| {
        let v = f(qp.x);
        for i in 0..nl {
            loc[i] += qp.w * v * qp.basis.phi[i];
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::TriMesh;

    fn reference_space() -> FeSpace {
        let m = TriMesh::from_raw(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]], None).unwrap();
        FeSpace::new(m, 1).unwrap()
    }

    #[test]
    fn reference_stiffness_and_mass() {
        let s = reference_space();
        let k = assemble_b_raw(&s, 1.0, &|_| [0.0, 0.0], &|_| 0.0);
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((k.get(i, j) - expect[i][j]).abs() < 1e-14);
            }
        }
        let m = assemble_b_raw(&s, 0.0, &|_| [0.0, 0.0], &|_| 1.0);
        let area: f64 = 0.5;
        for i in 0..3 {
            for j in 0..3 {
                let e = area / 12.0 * if i == j { 2.0 } else { 1.0 };
                assert!((m.get(i, j) - e).abs() < 1e-15);
                assert!((mass_matrix(&s).get(i, j) - e).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn symmetric_without_convection() {
        let m = TriMesh::unit_square(4).unwrap();
        for deg in [1, 2] {
            let s = FeSpace::new(m.clone(), deg).unwrap();
            let b = assemble_b(&s, 0.3, &|_| [0.0, 0.0], &|x| 1.0 + x[0]);
            assert!(b.asymmetry() <= 1e-13);
        }
    }

    #[test]
    fn noise_term() {
        let s = FeSpace::new(TriMesh::unit_square(3).unwrap(), 1).unwrap();
        let u0 = vec![0.0; s.n_dofs()];
        assert!(assemble_n(&s, 0.0, &Phi::OnePlusAbs, &|_| 1.0, &u0).iter().all(|v| *v == 0.0));
        let f = assemble_n(&s, 1.0, &Phi::OnePlusAbs, &|_| 1.0, &u0);
        let rows = mass_matrix(&s).row_sums();
        for (a, b) in f.iter().zip(&rows) {
            assert!((a - b).abs() < 1e-15);
        }
        let u: Vec<f64> = (0..s.n_dofs()).map(|i| (i as f64 * 0.7).sin()).collect();
        let g = |x: Point| 1.0 + x[0] * x[1];
        let f1 = assemble_n(&s, 0.5, &Phi::SqrtOnePlusSq, &g, &u);
        let f2 = assemble_n(&s, 0.5, &Phi::SqrtOnePlusSq, &|x| 2.0 * g(x), &u);
        for (a, b) in f1.iter().zip(&f2) {
            assert!((2.0 * a - b).abs() < 1e-14);
        }
    }
}
