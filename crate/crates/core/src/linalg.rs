//! Dense real linear algebra.
//!
//! Matrices are stored row-major in a flat `Vec<f64>`; vectors are plain
//! slices. Everything here is small-dimension code (N ≤ 64) and favours
//! clarity over blocking or SIMD.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{check_dim, Error, Result};

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
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

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("Matrix::from_vec", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn set_column(&mut self, c: usize, values: &[f64]) {
        for (r, &v) in values.iter().enumerate() {
            self[(r, c)] = v;
        }
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        check_dim("matmul", self.cols, other.rows)?;
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        check_dim(op, self.rows, other.rows)?;
        check_dim(op, self.cols, other.cols)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, s: f64, other: &Matrix) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `‖MᵀM − I‖_F`, the orthogonality defect.
    pub fn orthogonality_defect(&self) -> f64 {
        let gram = self.transpose().matmul(self).expect("square product");
        gram.sub(&Matrix::identity(self.cols)).expect("same shape").frobenius_norm()
    }

    /// `‖M + Mᵀ‖_F`; zero iff `M` is skew-symmetric.
    pub fn skew_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        self.add(&self.transpose()).expect("square").frobenius_norm()
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn matvec(a: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    check_dim("matvec", a.cols, x.len())?;
    Ok((0..a.rows).map(|r| dot(a.row(r), x)).collect())
}

/// `Aᵀ x` without forming the transpose.
pub fn matvec_t(a: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    check_dim("matvec_t", a.rows, x.len())?;
    let mut out = vec![0.0; a.cols];
    for (r, &xr) in x.iter().enumerate() {
        axpy(xr, a.row(r), &mut out);
    }
    Ok(out)
}

const TAYLOR_DEGREE: usize = 18;

/// Matrix exponential by scaling and squaring around a truncated Taylor
/// series. The scaling count is chosen so that `‖A‖_F / 2^s < 0.5`, where a
/// degree-18 Taylor core is accurate to well below double precision.
pub fn matexp(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::Contract(format!(
            "matexp needs a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    let n = a.rows;
    let norm = a.frobenius_norm();
    let mut squarings = 0u32;
    let mut scaled_norm = norm;
    while scaled_norm >= 0.5 {
        scaled_norm *= 0.5;
        squarings += 1;
    }
    let scaled = a.scale(0.5f64.powi(squarings as i32));

    // Horner: I + A/1 (I + A/2 (I + ... (I + A/m)))
    let mut acc = Matrix::identity(n);
    for k in (1..=TAYLOR_DEGREE).rev() {
        let mut next = scaled.matmul(&acc)?.scale(1.0 / k as f64);
        for i in 0..n {
            next[(i, i)] += 1.0;
        }
        acc = next;
    }
    for _ in 0..squarings {
        acc = acc.matmul(&acc)?;
    }
    Ok(acc)
}

const POWER_MAX_ITERS: usize = 200;
const POWER_TOL: f64 = 1e-10;

fn power_start(n: usize) -> Vec<f64> {
    // Fixed, non-symmetric start so it is unlikely to be orthogonal to the
    // dominant right singular vector of structured matrices.
    let v: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.618_033_988_75 + 0.3).sin()).collect();
    let nrm = norm2(&v);
    v.into_iter().map(|x| x / nrm).collect()
}

/// Largest singular value by power iteration on `AᵀA`.
///
/// The start vector is fixed, the loop is capped at 200 iterations and stops
/// once successive unit iterates differ by less than 1e-10.
pub fn spectral_norm(a: &Matrix) -> Result<f64> {
    if a.rows == 0 || a.cols == 0 {
        return Err(Error::Contract("spectral_norm of an empty matrix".into()));
    }
    if a.max_abs() == 0.0 {
        return Ok(0.0);
    }
    let mut v = power_start(a.cols);
    let mut sigma_sq = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let av = matvec(a, &v)?;
        sigma_sq = dot(&av, &av);
        let w = matvec_t(a, &av)?;
        let nw = norm2(&w);
        if nw == 0.0 {
            break;
        }
        let next: Vec<f64> = w.iter().map(|x| x / nw).collect();
        let delta = next.iter().zip(&v).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        v = next;
        if delta < POWER_TOL {
            let av = matvec(a, &v)?;
            sigma_sq = dot(&av, &av);
            break;
        }
    }
    Ok(sigma_sq.sqrt())
}
