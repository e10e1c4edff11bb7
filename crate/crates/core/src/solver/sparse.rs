//! Compressed sparse row storage, assembly and a direct solver backed by faer.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

/// Accumulates `(row, col, value)` entries; duplicates are summed in insertion
/// order so the result is bit-reproducible.
#[derive(Debug, Clone)]
pub struct SparseBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseBuilder {
    pub fn new(n: usize) -> Self {
        SparseBuilder { n, entries: Vec::new() }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            self.entries.push((i, j, v));
        }
    }

    /// Adds a dense row-major block, skipping removed (None) indices.
    pub fn add_block(&mut self, rows: &[Option<usize>], cols: &[Option<usize>], block: &[f64]) {
        let nc = cols.len();
        for (a, r) in rows.iter().enumerate() {
            let Some(i) = r else { continue };
            for (b, c) in cols.iter().enumerate() {
                if let Some(j) = c {
                    self.push(*i, *j, block[a * nc + b]);
                }
            }
        }
    }

    pub fn build(mut self) -> SparseMatrix {
        // stable sort keeps insertion order among duplicates
        self.entries.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0; self.n + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in self.entries {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..self.n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseMatrix {
            nrows: self.n,
            ncols: self.n,
            row_ptr,
            col_idx,
            values,
        }
    }
}

impl SparseMatrix {
    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .map(|k| self.values[k] * x[self.col_idx[k]])
                    .sum()
            })
            .collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        (self.row_ptr[i]..self.row_ptr[i + 1])
            .find(|&k| self.col_idx[k] == j)
            .map_or(0.0, |k| self.values[k])
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: f64, other: &SparseMatrix) -> SparseMatrix {
        let mut b = SparseBuilder::new(self.nrows);
        for (m, s) in [(self, 1.0), (other, alpha)] {
            for i in 0..m.nrows {
                for k in m.row_ptr[i]..m.row_ptr[i + 1] {
                    b.entries.push((i, m.col_idx[k], s * m.values[k]));
                }
            }
        }
        b.build()
    }

    /// Coordinate text format `i j value`, one entry per line.
    pub fn to_triplet_text(&self) -> String {
        let mut s = format!("% {} {} {}\n", self.nrows, self.ncols, self.nnz());
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s.push_str(&format!("{} {} {:.17e}\n", i, self.col_idx[k], self.values[k]));
            }
        }
        s
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let mut trips = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                trips.push(Triplet::new(i, self.col_idx[k], self.values[k]));
            }
        }
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &trips)
            .map_err(|e| Error::LinearSolve(format!("{e:?}")))
    }

    pub fn factorize(&self) -> Result<Factorization> {
        if self.nrows != self.ncols {
            return Err(Error::LinearSolve(format!(
                "matrix is {}x{}, not square",
                self.nrows, self.ncols
            )));
        }
        let lu = self
            .to_faer()?
            .sp_lu()
            .map_err(|e| Error::LinearSolve(format!("factorization failed: {e:?}")))?;
        Ok(Factorization {
            lu,
            matrix: self.clone(),
        })
    }
}

pub struct Factorization {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    matrix: SparseMatrix,
}

impl Factorization {
    /// Solves and checks `|Ax - b| <= 1e-11 |b|` after at most two refinement steps.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = rhs.len();
        let bnorm = norm(rhs);
        if bnorm == 0.0 {
            return Ok(vec![0.0; n]);
        }
        let mut x = self.raw_solve(rhs);
        let mut res = residual(&self.matrix, &x, rhs);
        for _ in 0..2 {
            if norm(&res) <= 1e-11 * bnorm {
                break;
            }
            let dx = self.raw_solve(&res);
            x.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
            res = residual(&self.matrix, &x, rhs);
        }
        let rel = norm(&res) / bnorm;
        if !rel.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::LinearSolve("matrix is singular (non-finite solution)".into()));
        }
        if rel > 1e-11 {
            return Err(Error::LinearSolve(format!(
                "relative residual {rel:.3e} exceeds 1e-11; matrix is ill-conditioned"
            )));
        }
        Ok(x)
    }

    fn raw_solve(&self, rhs: &[f64]) -> Vec<f64> {
        let b = Col::<f64>::from_fn(rhs.len(), |i| rhs[i]);
        let x = self.lu.solve(&b);
        (0..rhs.len()).map(|i| x[i]).collect()
    }
}

fn residual(a: &SparseMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    a.mul_vec(x).iter().zip(b).map(|(ax, bi)| bi - ax).collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Direct sparse solve of `A x = b`.
pub fn linear_solve(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    a.factorize()?.solve(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_solve() {
        let b = vec![1.0, -2.0, 3.5];
        assert_eq!(linear_solve(&SparseMatrix::identity(3), &b).unwrap(), b);
    }

    #[test]
    fn singular_is_error() {
        let mut b = SparseBuilder::new(2);
        b.push(0, 0, 1.0);
        b.push(0, 1, 1.0);
        b.push(1, 0, 1.0);
        b.push(1, 1, 1.0);
        assert!(linear_solve(&b.build(), &[1.0, 2.0]).is_err());
    }

    #[test]
    fn duplicates_are_summed() {
        let mut b = SparseBuilder::new(2);
        b.push(0, 0, 2.0);
        b.push(1, 1, 4.0);
        b.push(0, 1, 1.0);
        b.push(0, 0, 1.0);
        let m = b.build();
        assert_eq!(m.get(0, 0), 3.0);
        let x = linear_solve(&m, &[1.0, 2.0]).unwrap();
        assert!((x[0] - 1.0 / 6.0).abs() < 1e-15 && (x[1] - 0.5).abs() < 1e-15);
    }
}
