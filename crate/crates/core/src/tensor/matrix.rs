use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::config(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::config(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics; a zero-column matrix still has `rows` empty rows.
        let cols = self.cols;
        (0..self.rows).map(move |r| &self.data[r * cols..(r + 1) * cols])
    }

    /// Gathers the given rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stacks rows of `self` on top of rows of `other`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols && self.rows > 0 && other.rows > 0 {
            return Err(Error::config(format!(
                "vstack column mismatch: {} vs {}",
                self.cols, other.cols
            )));
        }
        let cols = if self.rows > 0 { self.cols } else { other.cols };
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols,
            data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · wᵀ` for `self: n×k`, `w: m×k`.
    pub fn matmul_t(&self, w: &Matrix) -> Result<Matrix> {
        if self.cols != w.cols {
            return Err(Error::config(format!(
                "matmul_t: input has {} columns, weight expects {}",
                self.cols, w.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, w.rows);
        gemm_nt(self, w, &mut out, 0.0);
        Ok(out)
    }

    /// Adds `b` to every row.
    pub fn add_row_broadcast(&mut self, b: &[f64]) -> Result<()> {
        if b.len() != self.cols {
            return Err(Error::config(format!(
                "bias length {} does not match {} columns",
                b.len(),
                self.cols
            )));
        }
        if self.cols == 0 {
            return Ok(());
        }
        for row in self.data.chunks_exact_mut(self.cols) {
            for (v, bi) in row.iter_mut().zip(b) {
                *v += bi;
            }
        }
        Ok(())
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }

    /// Affine map `W z + b` of a single vector.
    pub fn affine(&self, b: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.cols || b.len() != self.rows {
            return Err(Error::config(format!(
                "affine: W is {}x{}, b has {}, z has {}",
                self.rows,
                self.cols,
                b.len(),
                z.len()
            )));
        }
        Ok(self
            .row_iter()
            .zip(b)
            .map(|(w, bi)| w.iter().zip(z).map(|(a, x)| a * x).sum::<f64>() + bi)
            .collect())
    }
}

/// `W z + b`; dimension mismatch is a configuration error.
pub fn linear(w: &Matrix, b: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    w.affine(b, z)
}

/// Raw strided GEMM: `c = alpha·a·b + beta·c`, `a: m×k`, `b: k×n`, `c: m×n`.
#[allow(clippy::too_many_arguments)]
fn gemm_raw(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
    rsc: isize,
    csc: isize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.iter_mut().for_each(|v| *v = 0.0);
        } else {
            c.iter_mut().for_each(|v| *v *= beta);
        }
        return;
    }
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: strides describe dense row/column-major views that lie fully
    // inside the slices, checked by the callers' shape bookkeeping above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

/// `out = x · wᵀ + beta·out` for `x: n×k`, `w: m×k`, `out: n×m`.
pub(crate) fn gemm_nt(x: &Matrix, w: &Matrix, out: &mut Matrix, beta: f64) {
    let (n, k, m) = (x.rows, x.cols, w.rows);
    assert_eq!(w.cols, k);
    assert_eq!(out.shape(), (n, m));
    gemm_raw(
        n,
        k,
        m,
        1.0,
        &x.data,
        k as isize,
        1,
        &w.data,
        1,
        k as isize,
        beta,
        &mut out.data,
        m as isize,
        1,
    );
}

/// `out = g · w + beta·out` for `g: n×m`, `w: m×k`, `out: n×k`.
pub(crate) fn gemm_nn(g: &Matrix, w: &Matrix, out: &mut Matrix, beta: f64) {
    let (n, m, k) = (g.rows, g.cols, w.cols);
    assert_eq!(w.rows, m);
    assert_eq!(out.shape(), (n, k));
    gemm_raw(
        n,
        m,
        k,
        1.0,
        &g.data,
        m as isize,
        1,
        &w.data,
        k as isize,
        1,
        beta,
        &mut out.data,
        k as isize,
        1,
    );
}

/// `out = gᵀ · x + beta·out` for `g: n×m`, `x: n×k`, `out: m×k`.
pub(crate) fn gemm_tn(g: &Matrix, x: &Matrix, out: &mut Matrix, beta: f64) {
    let (n, m, k) = (g.rows, g.cols, x.cols);
    assert_eq!(x.rows, n);
    assert_eq!(out.shape(), (m, k));
    gemm_raw(
        m,
        n,
        k,
        1.0,
        &g.data,
        1,
        m as isize,
        &x.data,
        k as isize,
        1,
        beta,
        &mut out.data,
        k as isize,
        1,
    );
}
