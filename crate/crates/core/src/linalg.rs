//! Dense vectors and matrices, and SPD solves via Cholesky.
//!
//! Vectors are plain `[f64]` slices; [`Matrix`] is row-major. All loops run
//! in a fixed order so results are bit-identical from run to run.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Block size for the blocked Cholesky factorization and the Gram kernel.
const BLOCK: usize = 64;

/// Number of jitter levels tried by [`Cholesky::factor`]: `1e-12 * 10^k`, `k = 0..JITTER_LEVELS`.
pub const JITTER_LEVELS: i32 = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix from {} values",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![1.0; n])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
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

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diag().iter().sum()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// Returns `self + scale * diag(d)`.
    pub fn add_diag(&self, d: &[f64], scale: f64) -> Result<Matrix> {
        if !self.is_square() || d.len() != self.rows {
            return Err(Error::DimensionMismatch(format!(
                "diagonal of length {} added to {}x{}",
                d.len(),
                self.rows,
                self.cols
            )));
        }
        let mut out = self.clone();
        for (i, &di) in d.iter().enumerate() {
            out[(i, i)] += scale * di;
        }
        Ok(out)
    }

    pub fn scale_in_place(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// True when `|a_ij - a_ji| <= rel_tol * max|a|` for all entries.
    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let tol = rel_tol * self.max_abs();
        (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// Copies the upper triangle onto the lower one.
    pub fn symmetrize_from_upper(&mut self) {
        let n = self.rows;
        for i in 0..n {
            for j in 0..i {
                self.data[i * n + j] = self.data[j * n + i];
            }
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Dot product with four fixed-order partial sums.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scaled(alpha: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| alpha * v).collect()
}

pub fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

pub fn matvec(a: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    if a.cols != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} matrix times vector of length {}",
            a.rows,
            a.cols,
            x.len()
        )));
    }
    Ok((0..a.rows).map(|i| dot(a.row(i), x)).collect())
}

/// `Aᵀ x`
pub fn matvec_transpose(a: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    if a.rows != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "transpose of {}x{} matrix times vector of length {}",
            a.rows,
            a.cols,
            x.len()
        )));
    }
    let mut out = vec![0.0; a.cols];
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            axpy(xi, a.row(i), &mut out);
        }
    }
    Ok(out)
}

/// `JᵀJ`, exactly symmetric.
pub fn gram(j: &Matrix) -> Matrix {
    let n = j.cols;
    let cols = j.transpose();
    let mut g = Matrix::zeros(n, n);
    for a0 in (0..n).step_by(BLOCK) {
        let a1 = (a0 + BLOCK).min(n);
        for b0 in (a0..n).step_by(BLOCK) {
            let b1 = (b0 + BLOCK).min(n);
            for a in a0..a1 {
                let ca = cols.row(a);
                for b in b0.max(a)..b1 {
                    g.data[a * n + b] = dot(ca, cols.row(b));
                }
            }
        }
    }
    g.symmetrize_from_upper();
    g
}

/// `H += w * g gᵀ`
pub fn outer_add(h: &mut Matrix, g: &[f64], w: f64) -> Result<()> {
    if !h.is_square() || h.rows != g.len() {
        return Err(Error::DimensionMismatch(format!(
            "outer product of length {} into {}x{}",
            g.len(),
            h.rows,
            h.cols
        )));
    }
    for (i, &gi) in g.iter().enumerate() {
        if gi != 0.0 {
            axpy(w * gi, g, h.row_mut(i));
        }
    }
    Ok(())
}

/// Lower-triangular Cholesky factor of `A + jitter * I`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    /// Row-major; only the lower triangle is meaningful.
    l: Vec<f64>,
    jitter: f64,
}

impl Cholesky {
    /// Factors a symmetric matrix, retrying with diagonal jitter `1e-12 * 10^k`
    /// (`k = 0..=6`) when the plain factorization breaks down.
    pub fn factor(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "cholesky of a {}x{} matrix",
                a.rows, a.cols
            )));
        }
        if !a.is_finite() {
            return Err(Error::NonFinite("matrix"));
        }
        if !a.is_symmetric(1e-10) {
            return Err(Error::NonSpd);
        }
        let n = a.rows;
        let mut work = a.data.clone();
        if factor_in_place(&mut work, n) {
            return Ok(Self {
                n,
                l: work,
                jitter: 0.0,
            });
        }
        for k in 0..JITTER_LEVELS {
            let jitter = 1e-12 * 10f64.powi(k);
            work.copy_from_slice(&a.data);
            for i in 0..n {
                work[i * n + i] += jitter;
            }
            if factor_in_place(&mut work, n) {
                return Ok(Self { n, l: work, jitter });
            }
        }
        Err(Error::NonSpd)
    }

    /// Diagonal jitter that was added to make the factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if b.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "rhs of length {} for a {n}x{n} system",
                b.len()
            )));
        }
        if !all_finite(b) {
            return Err(Error::NonFinite("right-hand side"));
        }
        let l = &self.l;
        // L y = b
        let mut y = b.to_vec();
        for i in 0..n {
            let s = dot(&l[i * n..i * n + i], &y[..i]);
            y[i] = (y[i] - s) / l[i * n + i];
        }
        // Lᵀ x = y, column-oriented so that L is read by rows
        let mut x = y;
        for i in (0..n).rev() {
            x[i] /= l[i * n + i];
            let xi = x[i];
            let row = &l[i * n..i * n + i];
            for (xk, lk) in x[..i].iter_mut().zip(row) {
                *xk -= lk * xi;
            }
        }
        if !all_finite(&x) {
            return Err(Error::NonFinite("solution"));
        }
        Ok(x)
    }
}

/// Blocked right-looking Cholesky on a row-major buffer. Writes `L` into the
/// lower triangle and returns false on a non-positive pivot.
fn factor_in_place(a: &mut [f64], n: usize) -> bool {
    for k0 in (0..n).step_by(BLOCK) {
        let k1 = (k0 + BLOCK).min(n);
        // diagonal block
        for j in k0..k1 {
            let rj = j * n;
            let d = a[rj + j] - dot(&a[rj + k0..rj + j], &a[rj + k0..rj + j]);
            if !(d > 0.0 && d.is_finite()) {
                return false;
            }
            let ljj = d.sqrt();
            a[rj + j] = ljj;
            for i in j + 1..k1 {
                let ri = i * n;
                let s = dot(&a[ri + k0..ri + j], &a[rj + k0..rj + j]);
                a[ri + j] = (a[ri + j] - s) / ljj;
            }
        }
        // panel below the diagonal block
        for i in k1..n {
            let ri = i * n;
            for j in k0..k1 {
                let rj = j * n;
                let s = dot(&a[ri + k0..ri + j], &a[rj + k0..rj + j]);
                a[ri + j] = (a[ri + j] - s) / a[rj + j];
            }
        }
        // trailing update of the lower triangle
        for i in k1..n {
            let ri = i * n;
            for j in k1..=i {
                let rj = j * n;
                let s = dot(&a[ri + k0..ri + k1], &a[rj + k0..rj + k1]);
                a[ri + j] -= s;
            }
        }
    }
    true
}

/// Solves `A x = b` for symmetric positive definite `A`.
pub fn spd_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if a.rows != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} system with rhs of length {}",
            a.rows,
            a.cols,
            b.len()
        )));
    }
    Cholesky::factor(a)?.solve(b)
}
