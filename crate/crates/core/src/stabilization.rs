//! Streamline diffusion and continuous interior penalty terms.
//!
//! Both are assembled on whatever space is passed in. When a step runs on a
//! common refinement the caller supplies the element parameters of the
//! coarser computational mesh, mapped onto the finer one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::assembly::{assemble_face_matrix, assemble_matrix, assemble_vector, stacked};
use crate::fem::quadrature::QuadratureRule;
use crate::fem::{CsrMatrix, FeSpace};
use crate::field::Point;
use crate::mesh::{FaceSet, Overlay, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StabKind {
    #[default]
    None,
    Sd,
    Cip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilizationSpec {
    pub kind: StabKind,
    pub c_s: f64,
}

impl Default for StabilizationSpec {
    fn default() -> Self {
        Self {
            kind: StabKind::None,
            c_s: 0.5,
        }
    }
}

impl StabilizationSpec {
    pub fn new(kind: StabKind, c_s: f64) -> Result<Self> {
        let s = Self { kind, c_s };
        s.check()?;
        Ok(s)
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn check(&self) -> Result<()> {
        if !(self.c_s > 0.0) || !self.c_s.is_finite() {
            return Err(Error::Validation(format!("c_s must be positive, got {}", self.c_s)));
        }
        Ok(())
    }

    /// 1 for CIP, 0 otherwise.
    pub fn sigma_cip(&self) -> f64 {
        if self.kind == StabKind::Cip {
            1.0
        } else {
            0.0
        }
    }
}

pub type VecFn<'a> = &'a (dyn Fn(Point) -> [f64; 2] + Sync);
pub type ScalFn<'a> = &'a (dyn Fn(Point) -> f64 + Sync);

/// Sampled `‖a‖_{L∞(K)}`: vertices, centroid and the degree-4 points.
pub fn max_norm_on(mesh: &TriMesh, k: usize, a: VecFn) -> f64 {
    let p = mesh.triangle_points(k);
    let rule = QuadratureRule::degree4();
    let norm = |x: Point| {
        let v = a(x);
        (v[0] * v[0] + v[1] * v[1]).sqrt()
    };
    let mut m = norm(mesh.geom(k).centroid);
    for v in &p {
        m = m.max(norm(*v));
    }
    for q in 0..rule.len() {
        let l = rule.barycentric(q);
        m = m.max(norm([
            l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
            l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
        ]));
    }
    m
}

/// `δ_K = c_s h_K / ‖a‖_{L∞(K)}`, zero where `a` vanishes on `K`.
pub fn sd_parameters(mesh: &TriMesh, a: VecFn, c_s: f64) -> Vec<f64> {
    (0..mesh.n_triangles())
        .map(|k| {
            let m = max_norm_on(mesh, k, a);
            if m == 0.0 {
                0.0
            } else {
                let d = c_s * mesh.diameter(k) / m;
                debug_assert!(d * m <= c_s * mesh.diameter(k) * (1.0 + 1e-15));
                d
            }
        })
        .collect()
}

/// Elementwise Laplacians of the local basis (constant on each element).
pub fn basis_laplacians(space: &FeSpace, k: usize) -> [f64; 6] {
    let mut out = [0.0; 6];
    if space.degree() == 1 {
        return out;
    }
    let g = &space.mesh().geom(k).grad_bary;
    let dot = |i: usize, j: usize| g[i][0] * g[j][0] + g[i][1] * g[j][1];
    for i in 0..3 {
        out[i] = 4.0 * dot(i, i);
        out[3 + i] = 8.0 * dot((i + 1) % 3, (i + 2) % 3);
    }
    out
}

/// Matrix of `Σ_K δ_K ∫_K (−εΔu + a·∇u + b u)(a·∇v)`, `delta` per element of
/// `space`'s mesh. Not eliminated.
pub fn assemble_sd_matrix(space: &FeSpace, delta: &[f64], eps: f64, a: VecFn, b: ScalFn) -> CsrMatrix {
    assert_eq!(delta.len(), space.mesh().n_triangles());
    let rule = QuadratureRule::for_degree(space.quad_degree());
    let nl = space.n_local();
    assemble_matrix(space, &rule, |k, qp, loc| {
        let d = delta[k];
        if d == 0.0 {
            return;
        }
        let lap = basis_laplacians(space, k);
        let av = a(qp.x);
        let bv = b(qp.x);
        let bs = &qp.basis;
        let mut conv = [0.0; 6];
        for i in 0..nl {
            conv[i] = av[0] * bs.grad[i][0] + av[1] * bs.grad[i][1];
        }
        for i in 0..nl {
            for j in 0..nl {
                let strong = -eps * lap[j] + conv[j] + bv * bs.phi[j];
                loc[i][j] += qp.w * d * strong * conv[i];
            }
        }
    })
}

/// `F_i = Σ_K δ_K ∫_K w(x, U(x)) a·∇φ_i` for the coefficient vector `u`.
pub fn assemble_sd_vector(
    space: &FeSpace,
    delta: &[f64],
    a: VecFn,
    w: &(dyn Fn(Point, f64) -> f64 + Sync),
    u: &[f64],
) -> Vec<f64> {
    let rule = QuadratureRule::for_degree(space.quad_degree());
    let nl = space.n_local();
    assemble_vector(space, &rule, |k, qp, loc| {
        let d = delta[k];
        if d == 0.0 {
            return;
        }
        let c = space.local_coeffs(k, u);
        let s = d * w(qp.x, qp.basis.value(&c));
        if s == 0.0 {
            return;
        }
        let av = a(qp.x);
        for i in 0..nl {
            loc[i] += qp.w * s * (av[0] * qp.basis.grad[i][0] + av[1] * qp.basis.grad[i][1]);
        }
    })
}

/// Faces of the overlay lying on edges of the computational mesh, with the
/// length of the containing edge.
pub fn cip_faces(overlay: &Overlay, mesh: &TriMesh) -> (FaceSet, Vec<f64>) {
    let all = overlay.mesh.interior_faces();
    let mut faces = Vec::new();
    let mut h = Vec::new();
    for f in all.faces {
        let (kl, kh) = (overlay.to_new[f.elems[0]], overlay.to_new[f.elems[1]]);
        if kl == kh {
            continue;
        }
        let a = overlay.mesh.vertex(f.verts[0]);
        let b = overlay.mesh.vertex(f.verts[1]);
        let m = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        h.push(containing_edge_length(mesh, kl, m));
        faces.push(f);
    }
    (FaceSet { faces }, h)
}

fn containing_edge_length(mesh: &TriMesh, k: usize, x: Point) -> f64 {
    let p = mesh.triangle_points(k);
    let mut best = (f64::INFINITY, 0.0);
    for e in 0..3 {
        let (a, b) = (p[(e + 1) % 3], p[(e + 2) % 3]);
        let t = [b[0] - a[0], b[1] - a[1]];
        let len = (t[0] * t[0] + t[1] * t[1]).sqrt();
        let dist = ((x[0] - a[0]) * t[1] - (x[1] - a[1]) * t[0]).abs() / len;
        if dist < best.0 {
            best = (dist, len);
        }
    }
    best.1
}

/// `Σ_E δ_E ∫_E ⟦a·∇u⟧⟦a·∇v⟧` with `δ_E = c_s h_E²`; `h` holds one length
/// per face.
pub fn assemble_cip(space: &FeSpace, faces: &FaceSet, h: &[f64], a: VecFn, c_s: f64) -> CsrMatrix {
    assert_eq!(h.len(), faces.len());
    let nl = space.n_local();
    assemble_face_matrix(space, faces, |f, qp, loc| {
        let d = c_s * h[f] * h[f];
        let av = a(qp.x);
        let mut lo = [0.0; 6];
        let mut hi = [0.0; 6];
        for i in 0..nl {
            lo[i] = av[0] * qp.lo.grad[i][0] + av[1] * qp.lo.grad[i][1];
            hi[i] = -(av[0] * qp.hi.grad[i][0] + av[1] * qp.hi.grad[i][1]);
        }
        let j = stacked(nl, &lo, &hi);
        for r in 0..2 * nl {
            if j[r] == 0.0 {
                continue;
            }
            for c in 0..2 * nl {
                loc[r][c] += qp.w * d * j[r] * j[c];
            }
        }
    })
}

/// CIP on a single mesh: every interior face with its own length.
pub fn assemble_cip_on(space: &FeSpace, a: VecFn, c_s: f64) -> CsrMatrix {
    let faces = space.mesh().interior_faces();
    let h: Vec<f64> = faces.faces.iter().map(|f| f.length).collect();
    assemble_cip(space, &faces, &h, a, c_s)
}
