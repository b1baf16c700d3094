//! Small dense linear algebra: row-major matrices, column-pivoted Householder
//! QR for least squares, and Cholesky for the symmetric positive definite
//! blocks of the Laplace approximation.

use std::ops::{Index, IndexMut};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { rows: rows.len(), cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `A x`
    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `Aᵀ y`
    pub fn tr_mul_vec(&self, y: &[T]) -> Vec<T> {
        assert_eq!(y.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (i, &yi) in y.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o = *o + a * yi;
            }
        }
        out
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn max_abs<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Householder QR with column pivoting of an `m x n` matrix, `m >= n`.
#[derive(Debug, Clone)]
pub struct PivotedQr<T> {
    qr: Matrix<T>,
    tau: Vec<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> PivotedQr<T> {
    pub fn new(a: &Matrix<T>) -> Self {
        let (m, n) = (a.rows(), a.cols());
        assert!(m >= n, "QR needs at least as many rows as columns");
        let mut qr = a.clone();
        let mut tau = vec![T::zero(); n];
        let mut perm: Vec<usize> = (0..n).collect();
        let mut norms: Vec<T> = (0..n)
            .map(|j| (0..m).fold(T::zero(), |s, i| s + qr[(i, j)] * qr[(i, j)]))
            .collect();

        for k in 0..n {
            // pivot on the largest remaining column norm
            let p = (k..n).fold(k, |best, j| if norms[j] > norms[best] { j } else { best });
            if p != k {
                for i in 0..m {
                    let t = qr[(i, k)];
                    qr[(i, k)] = qr[(i, p)];
                    qr[(i, p)] = t;
                }
                norms.swap(k, p);
                perm.swap(k, p);
            }

            let alpha_sq = (k..m).fold(T::zero(), |s, i| s + qr[(i, k)] * qr[(i, k)]);
            let alpha = alpha_sq.sqrt();
            if alpha == T::zero() {
                tau[k] = T::zero();
                continue;
            }
            let x0 = qr[(k, k)];
            let beta = if x0 >= T::zero() { -alpha } else { alpha };
            let v0 = x0 - beta;
            for i in (k + 1)..m {
                qr[(i, k)] = qr[(i, k)] / v0;
            }
            tau[k] = (beta - x0) / beta;
            qr[(k, k)] = beta;

            for j in (k + 1)..n {
                let mut s = qr[(k, j)];
                for i in (k + 1)..m {
                    s = s + qr[(i, k)] * qr[(i, j)];
                }
                s = s * tau[k];
                qr[(k, j)] = qr[(k, j)] - s;
                for i in (k + 1)..m {
                    qr[(i, j)] = qr[(i, j)] - s * qr[(i, k)];
                }
                // recompute rather than downdate; matrices here are small
                norms[j] = ((k + 1)..m).fold(T::zero(), |acc, i| acc + qr[(i, j)] * qr[(i, j)]);
            }
        }
        Self { qr, tau, perm }
    }

    /// Ratio of the largest to the smallest diagonal magnitude of `R`.
    pub fn condition_estimate(&self) -> T {
        let n = self.qr.cols();
        if n == 0 {
            return T::one();
        }
        let first = self.qr[(0, 0)].abs();
        let last = self.qr[(n - 1, n - 1)].abs();
        if last == T::zero() {
            T::infinity()
        } else {
            first / last
        }
    }

    /// Numerical rank at relative threshold `rtol` on the `R` diagonal.
    pub fn rank(&self, rtol: T) -> usize {
        let n = self.qr.cols();
        if n == 0 {
            return 0;
        }
        let cut = self.qr[(0, 0)].abs() * rtol;
        (0..n).take_while(|&k| self.qr[(k, k)].abs() > cut).count()
    }

    /// Basic least-squares solution of `A x ≈ b`; components beyond the
    /// numerical rank are set to zero.
    pub fn solve_least_squares(&self, b: &[T], rtol: T) -> Vec<T> {
        let (m, n) = (self.qr.rows(), self.qr.cols());
        assert_eq!(b.len(), m);
        let mut y = b.to_vec();
        for k in 0..n {
            if self.tau[k] == T::zero() {
                continue;
            }
            let mut s = y[k];
            for i in (k + 1)..m {
                s = s + self.qr[(i, k)] * y[i];
            }
            s = s * self.tau[k];
            y[k] = y[k] - s;
            for i in (k + 1)..m {
                y[i] = y[i] - s * self.qr[(i, k)];
            }
        }
        let r = self.rank(rtol);
        let mut z = vec![T::zero(); n];
        for k in (0..r).rev() {
            let mut s = y[k];
            for j in (k + 1)..r {
                s = s - self.qr[(k, j)] * z[j];
            }
            z[k] = s / self.qr[(k, k)];
        }
        let mut x = vec![T::zero(); n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = z[k];
        }
        x
    }
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: Matrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// `None` when the matrix is not numerically positive definite.
    pub fn new(a: &Matrix<T>) -> Option<Self> {
        let n = a.rows();
        assert_eq!(n, a.cols());
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d = d - l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return None;
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s = s - l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Some(Self { l })
    }

    pub fn log_det(&self) -> T {
        let n = self.l.rows();
        (0..n).fold(T::zero(), |s, i| s + self.l[(i, i)].ln())
            * T::lit(2.0)
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.l.rows();
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s = s - self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s = s - self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    pub fn inverse(&self) -> Matrix<T> {
        let n = self.l.rows();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = T::zero());
            e[j] = T::one();
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}
