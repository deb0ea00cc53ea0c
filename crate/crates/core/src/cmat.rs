//! Dense complex matrices in row-major order.
//!
//! Everything downstream (operator-space levels, Choi matrices, SDP blocks)
//! is realized as a [`CMat`]. Matrices are immutable values; operations
//! allocate fresh results.

use num_complex::Complex64 as C64;
use std::fmt;

use crate::error::{OsError, Result};

/// Complex scalar shorthand used throughout the crate.
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Real scalar lifted to a complex one.
pub fn cr(re: f64) -> C64 {
    C64::new(re, 0.0)
}

#[derive(Clone, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl fmt::Debug for CMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, "{:+.4}{:+.4}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl std::ops::Index<(usize, usize)> for CMat {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat { rows, cols, data: vec![C64::ZERO; rows * cols] }
    }

    pub fn eye(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = cr(1.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Build from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |v| v.len());
        if rows.iter().any(|v| v.len() != c) {
            return Err(OsError::Shape("ragged rows in matrix literal".into()));
        }
        Ok(CMat { rows: r, cols: c, data: rows.iter().flatten().copied().collect() })
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let lifted: Vec<Vec<C64>> = rows.iter().map(|v| v.iter().map(|&x| cr(x)).collect()).collect();
        Self::from_rows(&lifted)
    }

    /// Matrix unit E_{ij} in an r x c space.
    pub fn unit(rows: usize, cols: usize, i: usize, j: usize) -> Self {
        let mut m = Self::zeros(rows, cols);
        m[(i, j)] = cr(1.0);
        m
    }

    pub fn diag(entries: &[C64]) -> Self {
        let n = entries.len();
        let mut m = Self::zeros(n, n);
        for (i, &z) in entries.iter().enumerate() {
            m[(i, i)] = z;
        }
        m
    }

    /// Column vector.
    pub fn col(entries: &[C64]) -> Self {
        CMat { rows: entries.len(), cols: 1, data: entries.to_vec() }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn conj(&self) -> Self {
        CMat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z.conj()).collect() }
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn add(&self, other: &CMat) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch in add");
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &CMat) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch in sub");
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        CMat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn axpy_inplace(&mut self, alpha: C64, other: &CMat) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch in axpy");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn matmul(&self, other: &CMat) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimension mismatch in matmul");
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = CMat::zeros(m, n);
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == C64::ZERO {
                    continue;
                }
                let orow = &other.data[p * n..(p + 1) * n];
                let dst = &mut out.data[i * n..(i + 1) * n];
                for j in 0..n {
                    dst[j] += a * orow[j];
                }
            }
        }
        out
    }

    /// A * v for a column vector v.
    pub fn matvec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, v.len(), "dimension mismatch in matvec");
        let mut out = vec![C64::ZERO; self.rows];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut acc = C64::ZERO;
            for (a, b) in row.iter().zip(v) {
                acc += a * b;
            }
            out[i] = acc;
        }
        out
    }

    pub fn trace(&self) -> C64 {
        assert!(self.is_square(), "trace of non-square matrix");
        (0..self.rows).map(|i| self[(i, i)]).sum()
    }

    pub fn fro_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Hilbert-Schmidt pairing Tr(A^* B).
    pub fn hs_dot(&self, other: &CMat) -> C64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch in hs_dot");
        self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum()
    }

    /// Real part of the Hilbert-Schmidt pairing; the canonical real-linear
    /// functional used by the SDP layer.
    pub fn re_dot(&self, other: &CMat) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a.conj() * b).re).sum()
    }

    /// Hermitian deviation max_{ij} |A_ij - conj(A_ji)|.
    pub fn herm_deviation(&self) -> f64 {
        assert!(self.is_square(), "hermitian deviation of non-square matrix");
        let mut dev: f64 = 0.0;
        for i in 0..self.rows {
            for j in i..self.cols {
                dev = dev.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        dev
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.is_square() && self.herm_deviation() <= tol
    }

    /// (A + A^*)/2.
    pub fn hermitian_part(&self) -> Self {
        assert!(self.is_square(), "hermitian part of non-square matrix");
        Self::from_fn(self.rows, self.cols, |i, j| (self[(i, j)] + self[(j, i)].conj()) * cr(0.5))
    }

    pub fn kron(&self, other: &CMat) -> Self {
        let (ar, ac) = (self.rows, self.cols);
        let (br, bc) = (other.rows, other.cols);
        let mut out = CMat::zeros(ar * br, ac * bc);
        for i in 0..ar {
            for j in 0..ac {
                let a = self[(i, j)];
                if a == C64::ZERO {
                    continue;
                }
                for k in 0..br {
                    for l in 0..bc {
                        out[(i * br + k, j * bc + l)] = a * other[(k, l)];
                    }
                }
            }
        }
        out
    }

    /// Partial trace of a square matrix on C^{d1} (x) C^{d2}.
    /// `over_first = true` traces out the first factor (result d2 x d2).
    pub fn partial_trace(&self, d1: usize, d2: usize, over_first: bool) -> Result<Self> {
        if self.rows != d1 * d2 || !self.is_square() {
            return Err(OsError::Shape(format!(
                "partial_trace: matrix is {}x{}, expected square of size {}",
                self.rows,
                self.cols,
                d1 * d2
            )));
        }
        if over_first {
            let mut out = CMat::zeros(d2, d2);
            for k in 0..d2 {
                for l in 0..d2 {
                    let mut acc = C64::ZERO;
                    for i in 0..d1 {
                        acc += self[(i * d2 + k, i * d2 + l)];
                    }
                    out[(k, l)] = acc;
                }
            }
            Ok(out)
        } else {
            let mut out = CMat::zeros(d1, d1);
            for i in 0..d1 {
                for j in 0..d1 {
                    let mut acc = C64::ZERO;
                    for k in 0..d2 {
                        acc += self[(i * d2 + k, j * d2 + k)];
                    }
                    out[(i, j)] = acc;
                }
            }
            Ok(out)
        }
    }

    /// Extract the sub-matrix with the given row/column ranges.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols, "block out of range");
        Self::from_fn(rows, cols, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, m: &CMat) {
        assert!(r0 + m.rows <= self.rows && c0 + m.cols <= self.cols, "block out of range");
        for i in 0..m.rows {
            for j in 0..m.cols {
                self[(r0 + i, c0 + j)] = m[(i, j)];
            }
        }
    }

    /// Block-diagonal direct sum.
    pub fn direct_sum(&self, other: &CMat) -> Self {
        let mut out = CMat::zeros(self.rows + other.rows, self.cols + other.cols);
        out.set_block(0, 0, self);
        out.set_block(self.rows, self.cols, other);
        out
    }
}

/// Euclidean norm of a complex vector.
pub fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Inner product <a, b> = sum conj(a_i) b_i.
pub fn vec_dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn vec_normalize(v: &mut [C64]) {
    let n = vec_norm(v);
    if n > 0.0 {
        for z in v.iter_mut() {
            *z /= n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kron_identity() {
        let i2 = CMat::eye(2);
        assert_eq!(i2.kron(&i2), CMat::eye(4));
    }

    #[test]
    fn partial_trace_of_kron_with_identity() {
        // tracing the identity factor recovers n * A
        let a = CMat::from_rows(&[vec![c(1.0, 2.0), c(0.5, 0.0)], vec![c(0.0, -1.0), c(3.0, 0.0)]])
            .unwrap();
        let n = 3;
        let big = a.kron(&CMat::eye(n));
        let back = big.partial_trace(2, n, false).unwrap();
        let expect = a.scale(cr(n as f64));
        assert!(back.sub(&expect).max_abs() < 1e-12);
    }

    #[test]
    fn trace_preserved_by_partial_trace() {
        let mut rng = crate::util::rng(7);
        let a = crate::util::random_cmat(&mut rng, 6, 6);
        let t1 = a.partial_trace(2, 3, true).unwrap().trace();
        let t2 = a.partial_trace(2, 3, false).unwrap().trace();
        let t = a.trace();
        assert!((t1 - t).norm() < 1e-12 && (t2 - t).norm() < 1e-12);
    }

    #[test]
    fn hs_pairing_matches_trace() {
        let mut rng = crate::util::rng(3);
        let a = crate::util::random_cmat(&mut rng, 4, 4);
        let b = crate::util::random_cmat(&mut rng, 4, 4);
        let via_trace = a.adjoint().matmul(&b).trace();
        assert!((a.hs_dot(&b) - via_trace).norm() < 1e-12);
    }
}
