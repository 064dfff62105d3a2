//! Dense row-major linear algebra on `f64`, just enough for the cells,
//! the gradient machinery and the norm-based bound checks.

use std::ops::{Deref, DerefMut};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Self(vec![value; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm2(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl From<&[f64]> for Vector {
    fn from(v: &[f64]) -> Self {
        Self(v.to_vec())
    }
}

impl Deref for Vector {
    type Target = Vec<f64>;
    fn deref(&self) -> &Vec<f64> {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut Vec<f64> {
        &mut self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                op: "from_row_major",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_row_major(r, c, data)
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for (o, b) in orow.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                op: "add",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Matrix { data, ..*self })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                op: "sub",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Matrix { data, ..*self })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            data: self.data.iter().map(|a| a * s).collect(),
            ..*self
        }
    }

    /// `A^k` for square `A`.
    pub fn pow(&self, k: usize) -> Result<Matrix> {
        if self.rows != self.cols {
            return Err(Error::DimensionMismatch {
                op: "pow",
                left: self.shape(),
                right: self.shape(),
            });
        }
        let mut acc = Matrix::identity(self.rows);
        for _ in 0..k {
            acc = acc.matmul(self)?;
        }
        Ok(acc)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `m · v`.
pub fn matvec(m: &Matrix, v: &[f64]) -> Result<Vector> {
    if m.cols != v.len() {
        return Err(Error::DimensionMismatch {
            op: "matvec",
            left: m.shape(),
            right: (v.len(), 1),
        });
    }
    let mut out = vec![0.0; m.rows];
    matvec_acc(m, v, &mut out);
    Ok(out.into())
}

/// `out += m · v`. Shapes are the caller's responsibility.
#[inline]
pub(crate) fn matvec_acc(m: &Matrix, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.cols, v.len());
    debug_assert_eq!(m.rows, out.len());
    for (o, row) in out.iter_mut().zip(m.data.chunks_exact(m.cols)) {
        *o += dot(row, v);
    }
}

/// Dot product with four independent partial sums so the loop vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (a4, a_rest) = a.split_at(a.len() - a.len() % 4);
    let (b4, b_rest) = b.split_at(a4.len());
    for (x, y) in a4.chunks_exact(4).zip(b4.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in a_rest.iter().zip(b_rest) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out += mᵀ · v`.
#[inline]
pub(crate) fn matvec_t_acc(m: &Matrix, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.rows, v.len());
    debug_assert_eq!(m.cols, out.len());
    for (vi, row) in v.iter().zip(m.data.chunks_exact(m.cols)) {
        if *vi == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += vi * a;
        }
    }
}

/// `m += a · bᵀ`.
#[inline]
pub(crate) fn outer_acc(m: &mut Matrix, a: &[f64], b: &[f64]) {
    debug_assert_eq!(m.rows, a.len());
    debug_assert_eq!(m.cols, b.len());
    let cols = m.cols;
    for (ai, row) in a.iter().zip(m.data.chunks_exact_mut(cols)) {
        if *ai == 0.0 {
            continue;
        }
        for (r, bj) in row.iter_mut().zip(b) {
            *r += ai * bj;
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `tanh` through a single `exp`, about three times cheaper than
/// `f64::tanh`. Absolute error stays within a few ulps of 1; relative error
/// grows for arguments near zero, which no caller depends on.
#[inline]
pub fn tanh(x: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * x).exp() + 1.0)
}

pub fn tanh_vec(v: &[f64]) -> Vector {
    v.iter().map(|&x| tanh(x)).collect::<Vec<_>>().into()
}

pub fn sigmoid_vec(v: &[f64]) -> Vector {
    v.iter().map(|x| sigmoid(*x)).collect::<Vec<_>>().into()
}

fn check_len(op: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            op,
            left: (a.len(), 1),
            right: (b.len(), 1),
        });
    }
    Ok(())
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Result<Vector> {
    check_len("hadamard", a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>().into())
}

/// `alpha · x + y`.
pub fn axpy(alpha: f64, x: &[f64], y: &[f64]) -> Result<Vector> {
    check_len("axpy", x, y)?;
    Ok(x.iter()
        .zip(y)
        .map(|(a, b)| alpha * a + b)
        .collect::<Vec<_>>()
        .into())
}

const NORM_TOL: f64 = 1e-10;
const NORM_MAX_ITER: usize = 10_000;

/// Spectral norm (largest singular value) by power iteration on `MᵀM`.
///
/// Stops once the Rayleigh quotient changes by less than `1e-10` relative.
pub fn operator_norm(m: &Matrix) -> Result<f64> {
    let n = m.cols;
    if n == 0 || m.rows == 0 || m.data.iter().all(|x| *x == 0.0) {
        return Ok(0.0);
    }
    // Deterministic, generic start vector.
    let mut rng = crate::rng::SplitMix64::new(0x5EED_0F_0001);
    let mut v: Vec<f64> = (0..n).map(|_| rng.uniform(0.5, 1.5)).collect();
    normalize(&mut v);

    let mut mv = vec![0.0; m.rows];
    let mut lambda_prev = 0.0;
    for it in 0..NORM_MAX_ITER {
        mv.iter_mut().for_each(|x| *x = 0.0);
        matvec_acc(m, &v, &mut mv);
        // Rayleigh quotient of MᵀM at unit v.
        let lambda: f64 = mv.iter().map(|x| x * x).sum();
        let mut w = vec![0.0; n];
        matvec_t_acc(m, &mv, &mut w);
        let wn = normalize(&mut w);
        if wn == 0.0 {
            // v fell into the null space; restart from another direction.
            v = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
            normalize(&mut v);
            continue;
        }
        v = w;
        if it > 0 && (lambda - lambda_prev).abs() <= NORM_TOL * lambda.abs() {
            return Ok(lambda.sqrt());
        }
        lambda_prev = lambda;
    }
    Err(Error::NoConvergence {
        iterations: NORM_MAX_ITER,
        estimate: lambda_prev.sqrt(),
    })
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Maximum absolute row sum.
pub fn inf_norm(m: &Matrix) -> f64 {
    if m.cols == 0 {
        return 0.0;
    }
    m.data
        .chunks_exact(m.cols)
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_tanh_tracks_std() {
        for i in -4000..=4000 {
            let x = i as f64 * 0.01;
            assert!((tanh(x) - x.tanh()).abs() < 4e-16, "{x}");
        }
        assert_eq!(tanh(1e6), 1.0);
        assert_eq!(tanh(-1e6), -1.0);
        assert_eq!(tanh(0.0), 0.0);
    }

    #[test]
    fn matvec_examples() {
        let v = matvec(&Matrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(v.as_slice(), &[1.0, 2.0, 3.0]);
        let v = matvec(&Matrix::zeros(2, 3), &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(v.as_slice(), &[0.0, 0.0]);
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matvec(&m, &[1.0, 1.0]).unwrap().as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn matvec_shape_error_names_both_shapes() {
        let err = matvec(&Matrix::zeros(2, 3), &[1.0, 2.0]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)") && msg.contains("(2, 1)"), "{msg}");
    }

    #[test]
    fn elementwise() {
        assert_eq!(sigmoid_vec(&[0.0, 0.0]).as_slice(), &[0.5, 0.5]);
        assert_eq!(tanh_vec(&[0.0]).as_slice(), &[0.0]);
        assert_eq!(hadamard(&[1.0, 2.0], &[3.0, 4.0]).unwrap().as_slice(), &[3.0, 8.0]);
        assert_eq!(axpy(2.0, &[1.0, 2.0], &[1.0, 1.0]).unwrap().as_slice(), &[3.0, 5.0]);
        assert!(hadamard(&[1.0], &[1.0, 2.0]).is_err());
        assert!(axpy(1.0, &[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn norms() {
        assert!((operator_norm(&Matrix::identity(4)).unwrap() - 1.0).abs() < 1e-12);
        assert!((operator_norm(&Matrix::diag(&[3.0, -5.0])).unwrap() - 5.0).abs() < 1e-9);
        assert_eq!(operator_norm(&Matrix::zeros(3, 3)).unwrap(), 0.0);
        assert_eq!(inf_norm(&Matrix::identity(3)), 1.0);
        let m = Matrix::from_rows(&[vec![1.0, -2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(inf_norm(&m), 7.0);
        assert_eq!(inf_norm(&Matrix::zeros(2, 2)), 0.0);
    }

    #[test]
    fn rectangular_operator_norm() {
        // Rank one: [1,2,2]ᵀ[1,0] has norm 3.
        let m = Matrix::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert!((operator_norm(&m).unwrap() - 3.0).abs() < 1e-9);
    }
}
