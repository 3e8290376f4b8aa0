//! Dense row-major matrices and Cholesky-based solves.
//!
//! Everything here is sized for exact GP regression on a few hundred points,
//! so the routines are plain loops over contiguous rows rather than blocked
//! kernels.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Jitter values tried, in order, after a factorization with the requested
/// jitter fails.
const JITTER_LADDER: [f64; 5] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "DenseMatrix::from_vec",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "DenseMatrix::from_rows",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(DenseMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    /// A single column vector.
    pub fn column_vector(values: &[f64]) -> Self {
        DenseMatrix {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Appends the rows of `other` below `self`.
    pub fn vstack(&self, other: &DenseMatrix) -> Result<Self> {
        if self.rows == 0 {
            return Ok(other.clone());
        }
        if other.rows == 0 {
            return Ok(self.clone());
        }
        if self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                context: "DenseMatrix::vstack",
                expected: self.cols,
                got: other.cols,
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(DenseMatrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        DenseMatrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                context: "DenseMatrix::matmul",
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.cols != v.len() {
            return Err(Error::DimensionMismatch {
                context: "DenseMatrix::matvec",
                expected: self.cols,
                got: v.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn add_diagonal(&mut self, value: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += value;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Pairwise squared Euclidean distances between the rows of `a` and `b`.
pub fn squared_distances(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch {
            context: "squared_distances",
            expected: a.cols(),
            got: b.cols(),
        });
    }
    Ok(DenseMatrix::from_fn(a.rows(), b.rows(), |i, j| {
        squared_distance(a.row(i), b.row(j))
    }))
}

/// Lower-triangular factor `L` with `A + jitter·I = L·Lᵀ`.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    lower: DenseMatrix,
    jitter: f64,
}

/// Factors `a + jitter·I`.
///
/// Only the lower triangle of `a` is read. If the factorization breaks down,
/// progressively larger jitter values from 1e-6 up to 1e-2 are tried before
/// giving up with [`Error::NotPositiveDefinite`].
pub fn cholesky(a: &DenseMatrix, jitter: f64) -> Result<CholeskyFactor> {
    if a.rows() != a.cols() {
        return Err(Error::DimensionMismatch {
            context: "cholesky (square matrix)",
            expected: a.rows(),
            got: a.cols(),
        });
    }
    let mut last_pivot = 0;
    let ladder = std::iter::once(jitter).chain(JITTER_LADDER.into_iter().filter(|&j| j > jitter));
    for j in ladder {
        match factor_once(a, j) {
            Ok(lower) => return Ok(CholeskyFactor { lower, jitter: j }),
            Err(pivot) => last_pivot = pivot,
        }
    }
    Err(Error::NotPositiveDefinite {
        pivot: last_pivot,
        jitter: JITTER_LADDER[JITTER_LADDER.len() - 1].max(jitter),
    })
}

fn factor_once(a: &DenseMatrix, jitter: f64) -> std::result::Result<DenseMatrix, usize> {
    let n = a.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let s = {
                let (li, lj) = (&l.data[i * n..i * n + j], &l.data[j * n..j * n + j]);
                dot(li, lj)
            };
            if i == j {
                let d = a[(i, i)] + jitter - s;
                if !(d > 0.0) || !d.is_finite() {
                    return Err(i);
                }
                l[(i, i)] = d.sqrt();
            } else {
                l[(i, j)] = (a[(i, j)] - s) / l[(j, j)];
            }
        }
    }
    Ok(l)
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    pub fn lower(&self) -> &DenseMatrix {
        &self.lower
    }

    /// Jitter that was actually added to the diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `ln det(A + jitter·I)`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    fn check_rows(&self, b: &DenseMatrix, context: &'static str) -> Result<()> {
        if b.rows() != self.dim() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.dim(),
                got: b.rows(),
            });
        }
        Ok(())
    }

    /// Solves `L·X = B` by forward substitution.
    pub fn solve_lower(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_rows(b, "solve_lower")?;
        let n = self.dim();
        let m = b.cols();
        let mut x = b.clone();
        for i in 0..n {
            let (done, rest) = x.data.split_at_mut(i * m);
            let xi = &mut rest[..m];
            for k in 0..i {
                let lik = self.lower[(i, k)];
                if lik != 0.0 {
                    for (v, &u) in xi.iter_mut().zip(&done[k * m..(k + 1) * m]) {
                        *v -= lik * u;
                    }
                }
            }
            let inv = 1.0 / self.lower[(i, i)];
            xi.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(x)
    }

    /// Solves `Lᵀ·X = B` by back substitution.
    pub fn solve_upper(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_rows(b, "solve_upper")?;
        let n = self.dim();
        let m = b.cols();
        let mut x = b.clone();
        for i in (0..n).rev() {
            let (head, tail) = x.data.split_at_mut((i + 1) * m);
            let xi = &mut head[i * m..];
            for k in i + 1..n {
                let lki = self.lower[(k, i)];
                if lki != 0.0 {
                    let off = (k - i - 1) * m;
                    for (v, &u) in xi.iter_mut().zip(&tail[off..off + m]) {
                        *v -= lki * u;
                    }
                }
            }
            let inv = 1.0 / self.lower[(i, i)];
            xi.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(x)
    }

    /// Solves `(A + jitter·I)·X = B`.
    pub fn solve(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        self.solve_upper(&self.solve_lower(b)?)
    }

    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        Ok(self.solve(&DenseMatrix::column_vector(b))?.into_data())
    }

    /// Explicit `(A + jitter·I)⁻¹`.
    pub fn inverse(&self) -> DenseMatrix {
        let n = self.dim();
        let linv = self
            .solve_lower(&DenseMatrix::identity(n))
            .expect("identity has matching rows");
        // A⁻¹ = L⁻ᵀ L⁻¹; L⁻¹ is lower triangular.
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = 0.0;
                for k in i..n {
                    s += linv[(k, i)] * linv[(k, j)];
                }
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }

    /// `L·Lᵀ`, the matrix that was actually factored.
    pub fn reconstruct(&self) -> DenseMatrix {
        self.lower
            .matmul(&self.lower.transpose())
            .expect("square factor")
    }
}

/// Forward substitution `L·X = B` against a factor.
pub fn solve_lower(factor: &CholeskyFactor, b: &DenseMatrix) -> Result<DenseMatrix> {
    factor.solve_lower(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn identity_factors_to_identity() {
        let f = cholesky(&DenseMatrix::identity(3), 0.0).unwrap();
        assert_eq!(f.lower(), &DenseMatrix::identity(3));
        assert_eq!(f.jitter(), 0.0);
    }

    #[test]
    fn two_by_two_hand_factor() {
        let a = DenseMatrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]).unwrap();
        let f = cholesky(&a, 0.0).unwrap();
        let l = f.lower();
        assert!(close(l[(0, 0)], 2.0, 1e-15));
        assert!(close(l[(1, 0)], 1.0, 1e-15));
        assert!(close(l[(1, 1)], 2f64.sqrt(), 1e-15));
        assert_eq!(l[(0, 1)], 0.0);
    }

    #[test]
    fn indefinite_fails_after_escalation() {
        let a = DenseMatrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        match cholesky(&a, 0.0) {
            Err(Error::NotPositiveDefinite { jitter, .. }) => assert_eq!(jitter, 1e-2),
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn escalation_rescues_singular_psd() {
        let a = DenseMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let f = cholesky(&a, 0.0).unwrap();
        assert!(f.jitter() >= 1e-6);
        let mut shifted = a.clone();
        shifted.add_diagonal(f.jitter());
        assert!(f.reconstruct().max_abs_diff(&shifted) < 1e-12);
    }

    #[test]
    fn forward_substitution_cases() {
        let b = DenseMatrix::from_rows(&[[3.0, -1.0], [0.5, 7.0]]).unwrap();
        let id = cholesky(&DenseMatrix::identity(2), 0.0).unwrap();
        assert_eq!(solve_lower(&id, &b).unwrap(), b);

        let a = DenseMatrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]).unwrap();
        let f = cholesky(&a, 0.0).unwrap();
        let rhs = DenseMatrix::column_vector(&[2.0, 1.0 + 2f64.sqrt()]);
        let x = solve_lower(&f, &rhs).unwrap();
        assert!(close(x[(0, 0)], 1.0, 1e-14));
        assert!(close(x[(1, 0)], 1.0, 1e-14));

        let bad = DenseMatrix::zeros(3, 1);
        assert!(matches!(
            solve_lower(&f, &bad),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn solve_and_inverse_agree() {
        let a = DenseMatrix::from_rows(&[[5.0, 1.0, 0.5], [1.0, 4.0, 1.0], [0.5, 1.0, 3.0]]).unwrap();
        let f = cholesky(&a, 0.0).unwrap();
        let b = [1.0, -2.0, 0.25];
        let x = f.solve_vec(&b).unwrap();
        let back = a.matvec(&x).unwrap();
        for (u, v) in back.iter().zip(&b) {
            assert!(close(*u, *v, 1e-12));
        }
        let prod = a.matmul(&f.inverse()).unwrap();
        assert!(prod.max_abs_diff(&DenseMatrix::identity(3)) < 1e-12);
        let det: f64 = 5.0 * (12.0 - 1.0) - 1.0 * (3.0 - 0.5) + 0.5 * (1.0 - 2.0);
        assert!(close(f.log_det(), det.ln(), 1e-12));
    }

    #[test]
    fn non_square_is_rejected() {
        assert!(matches!(
            cholesky(&DenseMatrix::zeros(2, 3), 0.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
