//! Norms of discrete functions.

use crate::error::Result;
use crate::field::Point;
use crate::solver::{solve, SolverOptions};

use super::assembly::{integrate_elements, load_vector, mass_matrix};
use super::quadrature::QuadratureRule;
use super::space::FeSpace;

/// Squared energy norm `ε‖∇u‖² + β‖u‖²` per element.
pub fn energy_norm_sq_elements(space: &FeSpace, u: &[f64], eps: f64, beta: f64) -> Vec<f64> {
    let rule = QuadratureRule::for_degree(2 * space.degree());
    integrate_elements(space, &rule, |k, qp| {
        let c = space.local_coeffs(k, u);
        let g = qp.basis.gradient(&c);
        let v = qp.basis.value(&c);
        eps * (g[0] * g[0] + g[1] * g[1]) + beta * v * v
    })
}

pub fn energy_norm(space: &FeSpace, u: &[f64], eps: f64, beta: f64) -> f64 {
    energy_norm_sq_elements(space, u, eps, beta).iter().sum::<f64>().sqrt()
}

/// Energy inner product `ε(∇u,∇v) + β(u,v)`.
pub fn energy_inner(space: &FeSpace, u: &[f64], v: &[f64], eps: f64, beta: f64) -> f64 {
    let rule = QuadratureRule::for_degree(2 * space.degree());
    integrate_elements(space, &rule, |k, qp| {
        let cu = space.local_coeffs(k, u);
        let cv = space.local_coeffs(k, v);
        let gu = qp.basis.gradient(&cu);
        let gv = qp.basis.gradient(&cv);
        eps * (gu[0] * gv[0] + gu[1] * gv[1]) + beta * qp.basis.value(&cu) * qp.basis.value(&cv)
    })
    .iter()
    .sum()
}

pub fn l2_norm(space: &FeSpace, u: &[f64]) -> f64 {
    energy_norm(space, u, 0.0, 1.0)
}

/// `‖u − f‖_{L²}` with a degree-6 rule.
pub fn l2_error(space: &FeSpace, u: &[f64], f: &(dyn Fn(Point) -> f64 + Sync)) -> f64 {
    let rule = QuadratureRule::degree6();
    integrate_elements(space, &rule, |k, qp| {
        let d = qp.basis.value(&space.local_coeffs(k, u)) - f(qp.x);
        d * d
    })
    .iter()
    .sum::<f64>()
    .sqrt()
}

/// L² projection of `f` onto the space (with zero boundary values).
pub fn l2_project(space: &FeSpace, f: &(dyn Fn(Point) -> f64 + Sync)) -> Result<Vec<f64>> {
    let mut rhs = load_vector(space, f);
    space.zero_dirichlet(&mut rhs);
    let m = mass_matrix(space).eliminate(space.dirichlet());
    solve(&m, &rhs, &SolverOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assembly::{assemble_b_raw, mass_matrix};
    use crate::mesh::TriMesh;
    use std::f64::consts::PI;

    #[test]
    fn energy_norm_matches_matrices() {
        let s = FeSpace::new(TriMesh::unit_square(2).unwrap(), 1).unwrap();
        assert_eq!(energy_norm(&s, &vec![0.0; s.n_dofs()], 1.0, 1.0), 0.0);
        // the single interior hat on the n = 2 mesh
        let mut u = vec![0.0; s.n_dofs()];
        u[4] = 1.0;
        let k = assemble_b_raw(&s, 1.0, &|_| [0.0, 0.0], &|_| 0.0);
        assert!((energy_norm(&s, &u, 1.0, 0.0) - k.inner(&u, &u).sqrt()).abs() < 1e-14);
        // hat with the criss-cross pattern around the centre: |∇φ|² integrates to 4
        assert!((k.inner(&u, &u) - 4.0).abs() < 1e-13);
        let m = mass_matrix(&s);
        let w: Vec<f64> = (0..s.n_dofs()).map(|i| (i as f64).cos()).collect();
        assert!((energy_norm(&s, &w, 0.0, 1.0) - m.inner(&w, &w).sqrt()).abs() < 1e-13);
    }

    #[test]
    fn projection_properties() {
        let s = FeSpace::new(TriMesh::unit_square(4).unwrap(), 1).unwrap();
        assert!(l2_project(&s, &|_| 0.0).unwrap().iter().all(|v| *v == 0.0));
        let u = s.interpolate(|p| (p[0] * p[1]).sin());
        let coeffs = u.clone();
        let f = |p: Point| {
            let k = (0..s.mesh().n_triangles())
                .find(|&k| s.mesh().geom(k).barycentric(p).iter().all(|l| *l > -1e-12))
                .unwrap();
            s.basis_at(k, p).value(&s.local_coeffs(k, &coeffs))
        };
        let pu = l2_project(&s, &f).unwrap();
        for (a, b) in pu.iter().zip(&u) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_converges_quadratically() {
        let f = |p: Point| (PI * p[0]).sin() * (PI * p[1]).sin();
        let mut errs = Vec::new();
        for n in [4, 8, 16] {
            let s = FeSpace::new(TriMesh::unit_square(n).unwrap(), 1).unwrap();
            let u = l2_project(&s, &f).unwrap();
            errs.push(l2_error(&s, &u, &f));
        }
        for w in errs.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!(rate > 1.8 && rate < 2.2, "rate {rate}");
        }
    }
}
