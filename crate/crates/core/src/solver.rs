//! Sparse linear solvers: direct LU (faer) and ILU(0)-preconditioned BiCGStab.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::sparse::{dot, norm2, CsrMatrix};

/// Dof count above which `Auto` switches to the iterative solver.
pub const DIRECT_LIMIT: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    #[default]
    Auto,
    Lu,
    Bicgstab,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub kind: SolverKind,
    /// Relative residual target of the iterative solver.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            kind: SolverKind::Auto,
            tol: 1e-12,
            max_iter: 5000,
        }
    }
}

/// A factorized (or preconditioned) operator that can be applied repeatedly.
pub enum LinearSolver {
    Lu { a: CsrMatrix, lu: Box<Lu<usize, f64>> },
    Iterative { a: CsrMatrix, ilu: Ilu0, tol: f64, max_iter: usize },
}

impl LinearSolver {
    pub fn new(a: &CsrMatrix, opts: &SolverOptions) -> Result<Self> {
        let n = a.nrows();
        a.check_square(n)?;
        let direct = match opts.kind {
            SolverKind::Auto => n <= DIRECT_LIMIT,
            SolverKind::Lu => true,
            SolverKind::Bicgstab => false,
        };
        if direct {
            let trip: Vec<Triplet<usize, usize, f64>> =
                a.triplets().into_iter().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
            let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip)
                .map_err(|e| Error::Solver(format!("matrix construction failed: {e:?}")))?;
            let lu = m.sp_lu().map_err(|e| Error::Solver(format!("LU factorization failed: {e:?}")))?;
            Ok(LinearSolver::Lu {
                a: a.clone(),
                lu: Box::new(lu),
            })
        } else {
            Ok(LinearSolver::Iterative {
                a: a.clone(),
                ilu: Ilu0::new(a)?,
                tol: opts.tol.max(1e-14),
                max_iter: opts.max_iter,
            })
        }
    }

    pub fn matrix(&self) -> &CsrMatrix {
        match self {
            LinearSolver::Lu { a, .. } | LinearSolver::Iterative { a, .. } => a,
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let a = self.matrix();
        if rhs.len() != a.nrows() {
            return Err(Error::Solver(format!(
                "right-hand side has length {}, expected {}",
                rhs.len(),
                a.nrows()
            )));
        }
        let bnorm = norm2(rhs);
        if bnorm == 0.0 {
            return Ok(vec![0.0; rhs.len()]);
        }
        match self {
            LinearSolver::Lu { lu, .. } => {
                let apply = |b: &[f64]| -> Vec<f64> {
                    let col = faer::Col::<f64>::from_fn(b.len(), |i| b[i]);
                    let x = lu.solve(&col);
                    (0..b.len()).map(|i| x[i]).collect()
                };
                let mut x = apply(rhs);
                // a few rounds of iterative refinement
                for _ in 0..3 {
                    if x.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Solver("singular matrix".into()));
                    }
                    let r = residual(a, &x, rhs);
                    if norm2(&r) <= 1e-13 * bnorm {
                        break;
                    }
                    let d = apply(&r);
                    for (xi, di) in x.iter_mut().zip(&d) {
                        *xi += di;
                    }
                }
                let rel = norm2(&residual(a, &x, rhs)) / bnorm;
                if !rel.is_finite() || rel > 1e-8 {
                    return Err(Error::Solver(format!("direct solve left relative residual {rel:e}")));
                }
                Ok(x)
            }
            LinearSolver::Iterative { ilu, tol, max_iter, .. } => bicgstab(a, rhs, ilu, *tol, *max_iter),
        }
    }
}

pub fn solve(a: &CsrMatrix, rhs: &[f64], opts: &SolverOptions) -> Result<Vec<f64>> {
    LinearSolver::new(a, opts)?.solve(rhs)
}

pub fn residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    let ax = a.matvec(x);
    b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect()
}

/// Incomplete LU with the sparsity of the matrix.
pub struct Ilu0 {
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows();
        let indptr = a.indptr().to_vec();
        let indices = a.indices().to_vec();
        let mut values = a.values().to_vec();
        let mut diag = vec![usize::MAX; n];
        for i in 0..n {
            for p in indptr[i]..indptr[i + 1] {
                if indices[p] == i {
                    diag[i] = p;
                }
            }
            if diag[i] == usize::MAX {
                return Err(Error::Solver(format!("ILU(0): missing diagonal in row {i}")));
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            for p in indptr[i]..indptr[i + 1] {
                pos[indices[p]] = p;
            }
            for p in indptr[i]..indptr[i + 1] {
                let k = indices[p];
                if k >= i {
                    break;
                }
                let pivot = values[diag[k]];
                if pivot == 0.0 {
                    return Err(Error::Solver(format!("ILU(0): zero pivot in row {k}")));
                }
                let l = values[p] / pivot;
                values[p] = l;
                for q in diag[k] + 1..indptr[k + 1] {
                    let j = indices[q];
                    if pos[j] != usize::MAX && pos[j] >= indptr[i] && pos[j] < indptr[i + 1] {
                        values[pos[j]] -= l * values[q];
                    }
                }
            }
            for p in indptr[i]..indptr[i + 1] {
                pos[indices[p]] = usize::MAX;
            }
        }
        Ok(Self {
            indptr,
            indices,
            values,
            diag,
        })
    }

    pub fn apply(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for p in self.indptr[i]..self.diag[i] {
                s -= self.values[p] * y[self.indices[p]];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for p in self.diag[i] + 1..self.indptr[i + 1] {
                s -= self.values[p] * y[self.indices[p]];
            }
            y[i] = s / self.values[self.diag[i]];
        }
        y
    }
}

/// Right-preconditioned BiCGStab.
pub fn bicgstab(a: &CsrMatrix, b: &[f64], m: &Ilu0, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for _ in 0..max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new.abs() < 1e-300 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let ph = m.apply(&p);
        v = a.matvec(&ph);
        alpha = rho / dot(&r0, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        if norm2(&s) <= tol * bnorm {
            for i in 0..n {
                x[i] += alpha * ph[i];
            }
            return Ok(x);
        }
        let sh = m.apply(&s);
        let t = a.matvec(&sh);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * ph[i] + omega * sh[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm2(&r) <= tol * bnorm {
            return Ok(x);
        }
        if omega == 0.0 || !omega.is_finite() {
            break;
        }
    }
    let rel = norm2(&residual(a, &x, b)) / bnorm;
    if rel <= tol {
        Ok(x)
    } else {
        Err(Error::Solver(format!("BiCGStab stopped at relative residual {rel:e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assembly::{assemble_b, mass_matrix};
    use crate::fem::space::FeSpace;
    use crate::mesh::TriMesh;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
        norm2(&residual(a, x, b)) / norm2(b)
    }

    #[test]
    fn identity_returns_rhs() {
        let a = CsrMatrix::identity(5);
        let b = vec![1.0, -2.0, 3.0, 0.5, 7.0];
        assert_eq!(solve(&a, &b, &SolverOptions::default()).unwrap(), b);
    }

    #[test]
    fn mass_matrix_matches_dense() {
        let s = FeSpace::new(TriMesh::unit_square(6).unwrap(), 1).unwrap();
        let m = mass_matrix(&s);
        assert!(m.nrows() <= 100);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b: Vec<f64> = (0..m.nrows()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = solve(&m, &b, &SolverOptions::default()).unwrap();
        let d = m.to_dense();
        let dm = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| d[i][j]);
        let xd = dm.cholesky().unwrap().solve(&DVector::from_vec(b.clone()));
        for i in 0..x.len() {
            assert!((x[i] - xd[i]).abs() <= 1e-12 * xd.amax().max(1.0) * 1e3, "{} vs {}", x[i], xd[i]);
        }
        assert!(rel_residual(&m, &x, &b) <= 1e-12);
    }

    #[test]
    fn consistency_for_both_solvers() {
        let s = FeSpace::new(TriMesh::unit_square(10).unwrap(), 1).unwrap();
        let a = assemble_b(&s, 0.05, &|_| [1.0, 0.5], &|_| 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y: Vec<f64> = (0..a.nrows()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = a.matvec(&y);
        for kind in [SolverKind::Lu, SolverKind::Bicgstab] {
            let opts = SolverOptions {
                kind,
                tol: 1e-13,
                ..Default::default()
            };
            let x = solve(&a, &b, &opts).unwrap();
            let err = x.iter().zip(&y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err <= 1e-11, "{kind:?}: {err:e}");
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        assert!(solve(&a, &[1.0, 2.0], &SolverOptions::default()).is_err());
    }
}
