//! Compressed sparse row matrices.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Duplicates are summed in input order, so the result does not depend
    /// on how the triplets were produced as long as their order is fixed.
    pub fn from_triplets(nrows: usize, ncols: usize, mut trip: Vec<(usize, usize, f64)>) -> Self {
        trip.sort_by_key(|&(i, j, _)| (i, j));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(trip.len());
        let mut values: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in trip {
            debug_assert!(i < nrows && j < ncols);
            if last == Some((i, j)) {
                *values.last_mut().expect("entry exists") += v;
            } else {
                indices.push(j);
                values.push(v);
                indptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.indptr[i]..self.indptr[i + 1];
        match self.indices[r.clone()].binary_search(&j) {
            Ok(p) => self.values[r.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            t.extend(self.row(i).map(|(j, v)| (i, j, v)));
        }
        t
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    /// `xᵀ A y`
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.matvec(y);
        x.iter().zip(&ay).map(|(a, b)| a * b).sum()
    }

    pub fn transpose(&self) -> Self {
        let mut count = vec![0usize; self.ncols + 1];
        for &j in &self.indices {
            count[j + 1] += 1;
        }
        for j in 0..self.ncols {
            count[j + 1] += count[j];
        }
        let mut pos = count.clone();
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                indices[pos[j]] = i;
                values[pos[j]] = v;
                pos[j] += 1;
            }
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr: count,
            indices,
            values,
        }
    }

    /// Sparse product `self · other`.
    pub fn matmul(&self, other: &CsrMatrix) -> Self {
        assert_eq!(self.ncols, other.nrows);
        let mut acc = vec![0.0; other.ncols];
        let mut mark = vec![usize::MAX; other.ncols];
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut cols: Vec<usize> = Vec::new();
        for i in 0..self.nrows {
            cols.clear();
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = 0.0;
                        cols.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            cols.sort_unstable();
            for &j in &cols {
                indices.push(j);
                values.push(acc[j]);
            }
            indptr[i + 1] = indices.len();
        }
        Self {
            nrows: self.nrows,
            ncols: other.ncols,
            indptr,
            indices,
            values,
        }
    }

    /// `Pᵀ A Q`
    pub fn galerkin(&self, p: &CsrMatrix, q: &CsrMatrix) -> Self {
        p.transpose().matmul(&self.matmul(q))
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v *= s);
        m
    }

    /// `α·self + β·other`
    pub fn add(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.nnz().max(other.nnz()));
        let mut values = Vec::with_capacity(self.nnz().max(other.nnz()));
        for i in 0..self.nrows {
            let mut a = self.row(i).peekable();
            let mut b = other.row(i).peekable();
            loop {
                match (a.peek().copied(), b.peek().copied()) {
                    (Some((ja, va)), Some((jb, vb))) if ja == jb => {
                        indices.push(ja);
                        values.push(alpha * va + beta * vb);
                        a.next();
                        b.next();
                    }
                    (Some((ja, va)), Some((jb, _))) if ja < jb => {
                        indices.push(ja);
                        values.push(alpha * va);
                        a.next();
                    }
                    (Some(_), Some((jb, vb))) => {
                        indices.push(jb);
                        values.push(beta * vb);
                        b.next();
                    }
                    (Some((ja, va)), None) => {
                        indices.push(ja);
                        values.push(alpha * va);
                        a.next();
                    }
                    (None, Some((jb, vb))) => {
                        indices.push(jb);
                        values.push(beta * vb);
                        b.next();
                    }
                    (None, None) => break,
                }
            }
            indptr[i + 1] = indices.len();
        }
        Self {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr,
            indices,
            values,
        }
    }

    /// Zero the rows and columns of constrained dofs and put 1 on their diagonal.
    pub fn eliminate(&self, fixed: &[bool]) -> Self {
        assert_eq!(self.nrows, self.ncols);
        let mut trip = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            if fixed[i] {
                trip.push((i, i, 1.0));
                continue;
            }
            for (j, v) in self.row(i) {
                if !fixed[j] {
                    trip.push((i, j, v));
                }
            }
        }
        Self::from_triplets(self.nrows, self.ncols, trip)
    }

    /// Drop rows and columns of constrained dofs without adding a diagonal.
    pub fn restrict_zero(&self, row_fixed: &[bool], col_fixed: &[bool]) -> Self {
        let mut trip = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            if row_fixed[i] {
                continue;
            }
            for (j, v) in self.row(i) {
                if !col_fixed[j] {
                    trip.push((i, j, v));
                }
            }
        }
        Self::from_triplets(self.nrows, self.ncols, trip)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    /// Largest |a_ij − a_ji|.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        let d = self.add(1.0, &t, -1.0);
        d.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }

    pub fn check_square(&self, n: usize) -> Result<()> {
        if self.nrows != n || self.ncols != n {
            return Err(Error::Solver(format!(
                "matrix is {}x{}, expected {n}x{n}",
                self.nrows, self.ncols
            )));
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += α x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn lincomb(alpha: f64, x: &[f64], beta: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| alpha * a + beta * b).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CsrMatrix {
        CsrMatrix::from_triplets(
            3,
            3,
            vec![(0, 0, 2.0), (0, 2, 1.0), (1, 1, 3.0), (2, 0, 4.0), (0, 0, 1.0), (2, 2, -1.0)],
        )
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = sample();
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.nnz(), 5);
        assert_eq!(a.matvec(&[1.0, 1.0, 1.0]), vec![4.0, 3.0, 3.0]);
    }

    #[test]
    fn transpose_matmul_add() {
        let a = sample();
        let t = a.transpose();
        assert_eq!(t.get(2, 0), 1.0);
        assert_eq!(t.get(0, 2), 4.0);
        let p = a.matmul(&CsrMatrix::identity(3));
        assert_eq!(p, a);
        let aa = a.matmul(&a);
        let d = a.to_dense();
        for i in 0..3 {
            for j in 0..3 {
                let e: f64 = (0..3).map(|k| d[i][k] * d[k][j]).sum();
                assert_eq!(aa.get(i, j), e);
            }
        }
        let s = a.add(1.0, &t, -1.0);
        assert_eq!(s.get(0, 2), -3.0);
        assert_eq!(a.asymmetry(), 3.0);
    }

    #[test]
    fn elimination() {
        let a = sample().eliminate(&[false, true, false]);
        assert_eq!(a.get(1, 1), 1.0);
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.row(1).count(), 1);
    }
}
