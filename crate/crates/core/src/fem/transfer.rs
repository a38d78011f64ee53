//! Moving finite element functions between meshes of one forest.

use crate::error::{Error, Result};
use crate::mesh::{Overlay, TriMesh};
use crate::solver::{solve, SolverOptions};

use super::assembly::mass_matrix;
use super::space::FeSpace;
use super::sparse::CsrMatrix;

/// Interpolation matrix from `coarse` into `fine` (rows: fine dofs) given the
/// element map of `fine` into `coarse`.
pub fn prolongation_with(coarse: &FeSpace, fine: &FeSpace, to_coarse: &[usize]) -> CsrMatrix {
    let nf = fine.n_dofs();
    let mut owner = vec![usize::MAX; nf];
    for k in 0..fine.mesh().n_triangles() {
        for &d in fine.element_dofs(k) {
            if owner[d] == usize::MAX {
                owner[d] = k;
            }
        }
    }
    let pts = fine.dof_points();
    let mut trip = Vec::with_capacity(nf * coarse.n_local());
    for d in 0..nf {
        if fine.is_dirichlet(d) {
            continue;
        }
        let kc = to_coarse[owner[d]];
        let b = coarse.basis_at(kc, pts[d]);
        for (i, &cd) in coarse.element_dofs(kc).iter().enumerate() {
            let v = b.phi[i];
            if v.abs() > 1e-14 && !coarse.is_dirichlet(cd) {
                trip.push((d, cd, v));
            }
        }
    }
    CsrMatrix::from_triplets(nf, coarse.n_dofs(), trip)
}

fn nested_map(coarse: &TriMesh, fine: &TriMesh) -> Result<Vec<usize>> {
    let o = fine.common_refinement(coarse)?;
    if o.mesh.leaves() != fine.leaves() {
        return Err(Error::InvalidArgument("target mesh does not refine the source mesh".into()));
    }
    Ok(o.to_old)
}

/// Interpolation matrix from `coarse` into `fine`; `fine` must refine `coarse`.
pub fn prolongation(coarse: &FeSpace, fine: &FeSpace) -> Result<CsrMatrix> {
    if fine.degree() < coarse.degree() {
        return Err(Error::InvalidArgument("prolongation to a lower degree".into()));
    }
    Ok(prolongation_with(coarse, fine, &nested_map(coarse.mesh(), fine.mesh())?))
}

/// Spaces on an overlay with the prolongations of both parents.
pub struct OverlaySpaces {
    pub overlay: Overlay,
    pub space: FeSpace,
    /// From the new space.
    pub p_new: CsrMatrix,
    /// From the old space.
    pub p_old: CsrMatrix,
}

impl OverlaySpaces {
    pub fn new(new: &FeSpace, old: &FeSpace) -> Result<Self> {
        let overlay = new.mesh().common_refinement(old.mesh())?;
        let degree = new.degree().max(old.degree());
        let space = FeSpace::new(overlay.mesh.clone(), degree)?;
        let p_new = prolongation_with(new, &space, &overlay.to_new);
        let p_old = prolongation_with(old, &space, &overlay.to_old);
        Ok(Self {
            overlay,
            space,
            p_new,
            p_old,
        })
    }

    pub fn lift_new(&self, u: &[f64]) -> Vec<f64> {
        self.p_new.matvec(u)
    }

    pub fn lift_old(&self, u: &[f64]) -> Vec<f64> {
        self.p_old.matvec(u)
    }
}

/// Transfer `u` from `from` to `to`: interpolation when `to` refines `from`,
/// L² projection through the common refinement otherwise.
pub fn transfer(u: &[f64], from: &FeSpace, to: &FeSpace) -> Result<Vec<f64>> {
    if !from.mesh().same_forest(to.mesh()) {
        return Err(Error::ForestMismatch);
    }
    if from.mesh().leaves() == to.mesh().leaves() && from.degree() == to.degree() {
        return Ok(u.to_vec());
    }
    let ov = OverlaySpaces::new(to, from)?;
    if ov.overlay.mesh.leaves() == to.mesh().leaves() && to.degree() >= from.degree() {
        return Ok(ov.lift_old(u));
    }
    let m_ov = mass_matrix(&ov.space);
    let rhs = ov.p_new.transpose().matvec(&m_ov.matvec(&ov.lift_old(u)));
    let m = mass_matrix(to).eliminate(to.dirichlet());
    let mut rhs = rhs;
    to.zero_dirichlet(&mut rhs);
    solve(&m, &rhs, &SolverOptions::default())
}
