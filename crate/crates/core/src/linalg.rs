//! Minimal dense linear algebra: row-major matrices, Gram-Schmidt
//! orthonormalization, and a cyclic Jacobi symmetric eigensolver.

use crate::error::{Error, Result};
use crate::scalar::{cast, Real};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    nrows: usize,
    ncols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Matrix {
            nrows,
            ncols,
            data: vec![T::zero(); nrows * ncols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, T::one());
        }
        m
    }

    pub fn from_vec(nrows: usize, ncols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(Error::DimensionMismatch(format!(
                "matrix data has {} entries, expected {}x{}",
                data.len(),
                nrows,
                ncols
            )));
        }
        Ok(Matrix { nrows, ncols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != ncols {
                return Err(Error::DimensionMismatch(format!(
                    "row {} has {} entries, expected {}",
                    i,
                    r.len(),
                    ncols
                )));
            }
        }
        Ok(Matrix {
            nrows,
            ncols,
            data: rows.concat(),
        })
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.ncols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.ncols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.nrows).map(|i| self.get(i, j)).collect()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// `A v`.
    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.ncols);
        (0..self.nrows)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// `Aᵀ v`.
    pub fn tr_mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.nrows);
        let mut out = vec![T::zero(); self.ncols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    /// `Aᵀ B`.
    pub fn tr_mul(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        if self.nrows != other.nrows {
            return Err(Error::DimensionMismatch(format!(
                "tr_mul: {} rows vs {}",
                self.nrows, other.nrows
            )));
        }
        let mut out = Matrix::zeros(self.ncols, other.ncols);
        for r in 0..self.nrows {
            for i in 0..self.ncols {
                let a = self.get(r, i);
                for j in 0..other.ncols {
                    let v = out.get(i, j) + a * other.get(r, j);
                    out.set(i, j, v);
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix<T> {
        let mut out = Matrix::zeros(self.ncols, self.nrows);
        for i in 0..self.nrows {
            for j in 0..self.ncols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn frob_norm(&self) -> T {
        self.data
            .iter()
            .map(|&v| v * v)
            .fold(T::zero(), |a, b| a + b)
            .sqrt()
    }
}

/// Largest entry of `|QᵀQ − I|`; zero for perfectly orthonormal columns.
pub fn orthonormality_defect<T: Real>(q: &Matrix<T>) -> T {
    let mut worst = T::zero();
    for a in 0..q.ncols() {
        for b in a..q.ncols() {
            let dot: T = (0..q.nrows()).map(|r| q.get(r, a) * q.get(r, b)).sum();
            let target = if a == b { T::one() } else { T::zero() };
            let dev = (dot - target).abs();
            if dev > worst {
                worst = dev;
            }
        }
    }
    worst
}

/// Orthonormalizes the columns of `m` in place by modified Gram-Schmidt
/// with one reorthogonalization pass.
pub fn orthonormalize_columns<T: Real>(m: &mut Matrix<T>) -> Result<()> {
    let (n, k) = (m.nrows(), m.ncols());
    if k > n {
        return Err(Error::DimensionMismatch(format!(
            "cannot orthonormalize {} columns in dimension {}",
            k, n
        )));
    }
    for j in 0..k {
        let mut col = m.column(j);
        for _ in 0..2 {
            for p in 0..j {
                let dot: T = (0..n).map(|r| m.get(r, p) * col[r]).sum();
                for (r, c) in col.iter_mut().enumerate() {
                    *c -= dot * m.get(r, p);
                }
            }
        }
        let norm: T = col.iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm <= T::epsilon().sqrt() {
            return Err(Error::Degenerate(format!(
                "column {} is numerically dependent on earlier columns",
                j
            )));
        }
        for (r, c) in col.iter().enumerate() {
            m.set(r, j, *c / norm);
        }
    }
    Ok(())
}

const JACOBI_MAX_SWEEPS: usize = 50;

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
///
/// Returns `(v, d)` with eigenvectors in the columns of `v` and
/// unsorted eigenvalues `d`, satisfying `a vᵢ = dᵢ vᵢ` to near machine
/// precision. Input symmetry is the caller's responsibility; only the
/// upper triangle is read.
pub fn jacobi_eigen<T: Real>(a: &Matrix<T>) -> Result<(Matrix<T>, Vec<T>)> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "jacobi_eigen needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let mut d: Vec<T> = (0..n).map(|i| m.get(i, i)).collect();
    let mut b = d.clone();
    let mut z = vec![T::zero(); n];

    for sweep in 0..JACOBI_MAX_SWEEPS {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += m.get(p, q).abs();
            }
        }
        if off == T::zero() {
            return Ok((v, d));
        }
        let thresh = if sweep < 3 {
            cast::<T>(0.2) * off / cast::<T>((n * n) as f64)
        } else {
            T::zero()
        };
        for p in 0..n {
            for q in (p + 1)..n {
                let g = cast::<T>(100.0) * m.get(p, q).abs();
                // small rotations are skipped once they no longer move d
                if sweep > 3 && d[p].abs() + g == d[p].abs() && d[q].abs() + g == d[q].abs() {
                    m.set(p, q, T::zero());
                } else if m.get(p, q).abs() > thresh {
                    let mut h = d[q] - d[p];
                    let t = if h.abs() + g == h.abs() {
                        m.get(p, q) / h
                    } else {
                        let theta = cast::<T>(0.5) * h / m.get(p, q);
                        let mut t = T::one() / (theta.abs() + (T::one() + theta * theta).sqrt());
                        if theta < T::zero() {
                            t = -t;
                        }
                        t
                    };
                    let c = T::one() / (T::one() + t * t).sqrt();
                    let s = t * c;
                    let tau = s / (T::one() + c);
                    h = t * m.get(p, q);
                    z[p] -= h;
                    z[q] += h;
                    d[p] -= h;
                    d[q] += h;
                    m.set(p, q, T::zero());
                    let rot = |m: &mut Matrix<T>, i: usize, j: usize, k: usize, l: usize| {
                        let gv = m.get(i, j);
                        let hv = m.get(k, l);
                        m.set(i, j, gv - s * (hv + gv * tau));
                        m.set(k, l, hv + s * (gv - hv * tau));
                    };
                    for j in 0..p {
                        rot(&mut m, j, p, j, q);
                    }
                    for j in (p + 1)..q {
                        rot(&mut m, p, j, j, q);
                    }
                    for j in (q + 1)..n {
                        rot(&mut m, p, j, q, j);
                    }
                    for j in 0..n {
                        rot(&mut v, j, p, j, q);
                    }
                }
            }
        }
        for i in 0..n {
            b[i] += z[i];
            d[i] = b[i];
            z[i] = T::zero();
        }
    }
    Err(Error::Degenerate(format!(
        "jacobi eigensolver did not converge in {} sweeps",
        JACOBI_MAX_SWEEPS
    )))
}
