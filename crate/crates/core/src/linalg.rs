//! Dense `f64` kernels and an unpreconditioned conjugate gradient solver.
//!
//! Every reduction runs left to right in a fixed order so that results are
//! bit-reproducible for identical inputs.

use crate::error::{invalid, Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite matrix entry at {i}")));
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

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(invalid!("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let (a, b) = (self.get(i, j), self.get(j, i));
                let scale = 1f64.max(a.abs()).max(b.abs());
                if (a - b).abs() > tol * scale {
                    return false;
                }
            }
        }
        true
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(invalid!(
                "matvec: vector length {} != {} columns",
                x.len(),
                self.cols
            ));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    /// `A + shift * I`.
    pub fn shifted(&self, shift: f64) -> Self {
        let mut m = self.clone();
        for i in 0..self.rows.min(self.cols) {
            m.data[i * self.cols + i] += shift;
        }
        m
    }
}

/// A linear map applied without materializing its matrix.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    /// Writes `A x` into `out`. Both slices have length [`dim`](Self::dim).
    fn apply(&self, x: &[f64], out: &mut [f64]);

    fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply(x, &mut out);
        out
    }
}

impl LinearOperator for DenseMatrix {
    fn dim(&self) -> usize {
        debug_assert!(self.is_square());
        self.rows
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(r), x);
        }
    }
}

/// Wraps a closure as a [`LinearOperator`].
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64])> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64])> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    /// `‖b − A x‖`, recomputed explicitly at exit.
    pub residual_norm: f64,
    pub iters_used: usize,
}

/// Solves `A x = b` for symmetric positive semi-definite `A`, starting at
/// `x = 0` and stopping after `max_iters` steps or once the recursive residual
/// satisfies `‖r‖ ≤ tol·‖b‖`.
///
/// A step with non-positive curvature `pᵀAp ≤ 0` ends the solve early; for a
/// PSD operator this only happens when the search direction lies in its null
/// space.
pub fn cg_solve<A: LinearOperator + ?Sized>(
    op: &A,
    b: &[f64],
    max_iters: usize,
    tol: f64,
) -> Result<CgSolution> {
    let n = op.dim();
    if b.len() != n {
        return Err(invalid!("cg: rhs length {} != operator dim {n}", b.len()));
    }
    if max_iters == 0 {
        return Err(invalid!("cg: max_iters must be at least 1"));
    }
    if !(tol >= 0.0) {
        return Err(invalid!("cg: tolerance must be nonnegative, got {tol}"));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("cg: non-finite right-hand side at iteration 0".into()));
    }

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rs = dot(&r, &r);
    let threshold = tol * rs.sqrt();
    let mut iters_used = 0;

    for k in 1..=max_iters {
        if rs.sqrt() <= threshold {
            break;
        }
        op.apply(&p, &mut ap);
        let curvature = dot(&p, &ap);
        if !curvature.is_finite() {
            return Err(Error::Numerical(format!(
                "cg: non-finite curvature at iteration {k}"
            )));
        }
        if curvature <= 0.0 {
            break;
        }
        let alpha = rs / curvature;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rs_next = dot(&r, &r);
        if !rs_next.is_finite() || !alpha.is_finite() {
            return Err(Error::Numerical(format!(
                "cg: non-finite residual at iteration {k}"
            )));
        }
        let beta = rs_next / rs;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rs = rs_next;
        iters_used = k;
    }

    op.apply(&x, &mut ap);
    let mut resid = 0.0;
    for (bi, ai) in b.iter().zip(&ap) {
        let d = bi - ai;
        resid += d * d;
    }
    Ok(CgSolution {
        x,
        residual_norm: resid.sqrt(),
        iters_used,
    })
}

/// Direct solve of an SPD system by Cholesky factorization.
///
/// Used as a reference for the iterative paths; cost is `O(n³)`.
pub fn dense_spd_solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    if !a.is_square() {
        return Err(invalid!("dense solve: matrix is {}x{}", a.rows(), a.cols()));
    }
    if b.len() != n {
        return Err(invalid!("dense solve: rhs length {} != {n}", b.len()));
    }
    if !a.is_symmetric(1e-10) {
        return Err(Error::Numerical("dense solve: matrix is not symmetric".into()));
    }

    // lower factor L with A = L Lᵀ
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) {
            return Err(Error::Numerical(format!(
                "dense solve: non-positive pivot {d:e} at row {j}"
            )));
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }

    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Ok(x)
}
