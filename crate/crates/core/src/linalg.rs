//! Operator abstraction, compressed-row sparse matrices and Krylov solvers.
//!
//! Every filter exposes its state transition matrix `S` only through
//! [`LinearOperator`]: forward application `S x` and adjoint application
//! `Sᵀ y`. [`materialize`] builds the dense matrix column by column and is
//! meant for small test grids.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{argument, Error, Result};

/// A square linear map with forward and adjoint application.
///
/// Implementations must be safe to call from several threads at once.
pub trait LinearOperator: Send + Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>>;
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        (**self).apply(x)
    }
    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        (**self).apply_adjoint(y)
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        (**self).apply(x)
    }
    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        (**self).apply_adjoint(y)
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for std::sync::Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        (**self).apply(x)
    }
    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        (**self).apply_adjoint(y)
    }
}

/// The system matrix seen by a Krylov solver: `y = A x`.
pub trait MatVec {
    fn dim(&self) -> usize;
    fn mat_vec(&self, x: &[f64], y: &mut [f64]) -> Result<()>;
    /// Main diagonal, if cheaply available (enables Jacobi preconditioning).
    fn diagonal(&self) -> Option<Vec<f64>> {
        None
    }
}

/// Uses the forward application of an operator as a system matrix.
pub struct Forward<'a, T: ?Sized>(pub &'a T);

impl<T: LinearOperator + ?Sized> MatVec for Forward<'_, T> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn mat_vec(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        y.copy_from_slice(&self.0.apply(x)?);
        Ok(())
    }
}

/// Uses the adjoint application of an operator as a system matrix.
pub struct Adjoint<'a, T: ?Sized>(pub &'a T);

impl<T: LinearOperator + ?Sized> MatVec for Adjoint<'_, T> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn mat_vec(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        y.copy_from_slice(&self.0.apply_adjoint(x)?);
        Ok(())
    }
}

/// Square matrix in compressed row layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    dim: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets; duplicate positions are summed.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= dim || *c >= dim) {
            return argument(format!("entry ({r}, {c}) outside {dim}x{dim} matrix"));
        }
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_offsets = vec![0usize; dim + 1];
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            row_offsets[r + 1] += 1;
            col_indices.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for r in 0..dim {
            row_offsets[r + 1] += row_offsets[r];
        }
        Ok(Self {
            dim,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds directly from per-row `(col, value)` lists, which must not
    /// contain duplicate columns.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let dim = rows.len();
        let mut row_offsets = Vec::with_capacity(dim + 1);
        row_offsets.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut col_indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for (r, mut row) in rows.into_iter().enumerate() {
            row.sort_unstable_by_key(|&(c, _)| c);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return argument(format!("duplicate entry ({r}, {})", w[0].0));
                }
            }
            for (c, v) in row {
                if c >= dim {
                    return argument(format!("entry ({r}, {c}) outside {dim}x{dim} matrix"));
                }
                col_indices.push(c);
                values.push(v);
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            dim,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            row_offsets: (0..=dim).collect(),
            col_indices: (0..dim).collect(),
            values: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        self.col_indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        match self.col_indices[span.clone()].binary_search(&c) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            *out = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_transposed_into(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                y[self.col_indices[k]] += self.values[k] * xr;
            }
        }
    }

    pub fn mul_vec_transposed(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.mul_vec_transposed_into(x, &mut y);
        y
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.dim];
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                rows[c].push((r, v));
            }
        }
        SparseMatrix::from_rows(rows).expect("transpose of a valid matrix")
    }

    /// `α I + β A`.
    pub fn shifted(&self, alpha: f64, beta: f64) -> SparseMatrix {
        let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(self.nnz() + self.dim);
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                t.push((r, c, beta * v));
            }
            t.push((r, r, alpha));
        }
        SparseMatrix::from_triplets(self.dim, t).expect("indices already validated")
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dim).map(|r| self.row(r).map(|(_, v)| v).sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.mul_vec_transposed(&vec![1.0; self.dim])
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                m[(r, c)] = v;
            }
        }
        m
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.dim).all(|r| self.row(r).all(|(c, v)| (v - self.get(c, r)).abs() <= tol))
    }
}

impl MatVec for SparseMatrix {
    fn dim(&self) -> usize {
        self.dim
    }
    fn mat_vec(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        self.mul_vec_into(x, y);
        Ok(())
    }
    fn diagonal(&self) -> Option<Vec<f64>> {
        Some((0..self.dim).map(|r| self.get(r, r)).collect())
    }
}

/// Transpose view of a sparse matrix for solvers.
pub struct TransposedSparse<'a>(pub &'a SparseMatrix);

impl MatVec for TransposedSparse<'_> {
    fn dim(&self) -> usize {
        self.0.dim
    }
    fn mat_vec(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        self.0.mul_vec_transposed_into(x, y);
        Ok(())
    }
    fn diagonal(&self) -> Option<Vec<f64>> {
        self.0.diagonal()
    }
}

impl LinearOperator for SparseMatrix {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(x, self.dim)?;
        Ok(self.mul_vec(x))
    }
    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(y, self.dim)?;
        Ok(self.mul_vec_transposed(y))
    }
}

pub(crate) fn check_len(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return argument(format!("vector length {} does not match operator dimension {dim}", x.len()));
    }
    Ok(())
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent partial sums so the loop vectorises.
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Stopping rule shared by the Krylov solvers.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverSettings {
    /// Relative residual `‖Ax − b‖ / ‖b‖` at which to stop.
    pub tol: f64,
    /// Iteration cap; `None` means `10 · dim`.
    pub max_iter: Option<usize>,
    /// Jacobi (diagonal) preconditioning when the matrix exposes its diagonal.
    pub jacobi: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: None,
            jacobi: false,
        }
    }
}

impl SolverSettings {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    fn cap(&self, dim: usize) -> usize {
        self.max_iter.unwrap_or(10 * dim.max(1))
    }
}

fn inverse_diagonal<A: MatVec + ?Sized>(a: &A, settings: &SolverSettings) -> Option<Vec<f64>> {
    if !settings.jacobi {
        return None;
    }
    let d = a.diagonal()?;
    if d.iter().any(|&v| v == 0.0 || !v.is_finite()) {
        return None;
    }
    Some(d.iter().map(|v| 1.0 / v).collect())
}

fn precondition(inv_diag: &Option<Vec<f64>>, r: &[f64], z: &mut [f64]) {
    match inv_diag {
        Some(d) => z.iter_mut().zip(r).zip(d).for_each(|((z, r), d)| *z = r * d),
        None => z.copy_from_slice(r),
    }
}

/// Conjugate gradients for symmetric positive (semi-)definite systems.
pub fn cg_solve<A: MatVec + ?Sized>(
    a: &A,
    b: &[f64],
    x0: Option<&[f64]>,
    settings: &SolverSettings,
) -> Result<Vec<f64>> {
    let n = a.dim();
    check_len(b, n)?;
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let target = settings.tol * b_norm;
    let mut x = match x0 {
        Some(x0) => {
            check_len(x0, n)?;
            x0.to_vec()
        }
        None => vec![0.0; n],
    };
    let mut ax = vec![0.0; n];
    a.mat_vec(&x, &mut ax)?;
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, ax)| b - ax).collect();
    let mut r_norm = norm(&r);
    if r_norm <= target {
        return Ok(x);
    }
    let inv_diag = inverse_diagonal(a, settings);
    let mut z = if inv_diag.is_some() { vec![0.0; n] } else { Vec::new() };
    let mut rz = if inv_diag.is_some() {
        precondition(&inv_diag, &r, &mut z);
        dot(&r, &z)
    } else {
        r_norm * r_norm
    };
    let mut p = if inv_diag.is_some() { z.clone() } else { r.clone() };
    let mut ap = vec![0.0; n];
    let cap = settings.cap(n);
    for _ in 0..cap {
        a.mat_vec(&p, &mut ap)?;
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rz / pap;
        for ((x, r), (p, ap)) in x.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&ap)) {
            *x += alpha * p;
            *r -= alpha * ap;
        }
        let rr = dot(&r, &r);
        r_norm = rr.sqrt();
        if r_norm <= target {
            return Ok(x);
        }
        let rz_next = if inv_diag.is_some() {
            precondition(&inv_diag, &r, &mut z);
            dot(&r, &z)
        } else {
            rr
        };
        let beta = rz_next / rz;
        rz = rz_next;
        let src = if inv_diag.is_some() { &z } else { &r };
        for (p, z) in p.iter_mut().zip(src) {
            *p = z + beta * *p;
        }
    }
    // The recursive residual drifts; judge by the true one before giving up.
    a.mat_vec(&x, &mut ax)?;
    let true_res = b.iter().zip(&ax).map(|(b, ax)| (b - ax) * (b - ax)).sum::<f64>().sqrt();
    if true_res <= target {
        return Ok(x);
    }
    Err(Error::Solver {
        iterations: cap,
        residual: true_res / b_norm,
    })
}

/// BiCGSTAB for general nonsingular systems.
pub fn bicgstab_solve<A: MatVec + ?Sized>(
    a: &A,
    b: &[f64],
    x0: Option<&[f64]>,
    settings: &SolverSettings,
) -> Result<Vec<f64>> {
    let n = a.dim();
    check_len(b, n)?;
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let target = settings.tol * b_norm;
    let mut x = match x0 {
        Some(x0) => {
            check_len(x0, n)?;
            x0.to_vec()
        }
        None => vec![0.0; n],
    };
    let inv_diag = inverse_diagonal(a, settings);
    let mut tmp = vec![0.0; n];
    let residual = |x: &[f64], tmp: &mut [f64]| -> Result<Vec<f64>> {
        a.mat_vec(x, tmp)?;
        Ok(b.iter().zip(tmp.iter()).map(|(b, ax)| b - ax).collect())
    };
    let mut r = residual(&x, &mut tmp)?;
    if norm(&r) <= target {
        return Ok(x);
    }
    let cap = settings.cap(n);
    let mut iterations = 0;
    let mut p_hat = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut t = vec![0.0; n];
    // Restart loop: breakdowns re-seed the shadow residual.
    'restart: while iterations < cap {
        let r_hat = r.clone();
        let mut rho = 1.0;
        let mut alpha = 1.0;
        let mut omega = 1.0;
        v.iter_mut().for_each(|e| *e = 0.0);
        let mut p = vec![0.0; n];
        while iterations < cap {
            iterations += 1;
            let rho_next = dot(&r_hat, &r);
            if rho_next.abs() < 1e-300 {
                r = residual(&x, &mut tmp)?;
                continue 'restart;
            }
            let beta = (rho_next / rho) * (alpha / omega);
            rho = rho_next;
            for k in 0..n {
                p[k] = r[k] + beta * (p[k] - omega * v[k]);
            }
            precondition(&inv_diag, &p, &mut p_hat);
            a.mat_vec(&p_hat, &mut v)?;
            let rv = dot(&r_hat, &v);
            if rv.abs() < 1e-300 {
                r = residual(&x, &mut tmp)?;
                continue 'restart;
            }
            alpha = rho / rv;
            let mut s = r.clone();
            for k in 0..n {
                s[k] -= alpha * v[k];
            }
            if norm(&s) <= target {
                for k in 0..n {
                    x[k] += alpha * p_hat[k];
                }
                break 'restart;
            }
            precondition(&inv_diag, &s, &mut s_hat);
            a.mat_vec(&s_hat, &mut t)?;
            let tt = dot(&t, &t);
            if tt == 0.0 {
                for k in 0..n {
                    x[k] += alpha * p_hat[k];
                }
                r = residual(&x, &mut tmp)?;
                continue 'restart;
            }
            omega = dot(&t, &s) / tt;
            for k in 0..n {
                x[k] += alpha * p_hat[k] + omega * s_hat[k];
                r[k] = s[k] - omega * t[k];
            }
            if norm(&r) <= target {
                break 'restart;
            }
            if omega == 0.0 {
                r = residual(&x, &mut tmp)?;
                continue 'restart;
            }
        }
    }
    let r = residual(&x, &mut tmp)?;
    let res = norm(&r);
    if res <= target {
        Ok(x)
    } else if iterations < cap && res < norm(b) {
        // The recursive residual converged but the true one did not; restart
        // from the current iterate.
        let rest = SolverSettings {
            max_iter: Some(cap - iterations),
            ..*settings
        };
        bicgstab_solve(a, b, Some(&x), &rest)
    } else {
        Err(Error::Solver {
            iterations,
            residual: res / b_norm,
        })
    }
}

/// Dense matrix whose column `i` is `apply(e_i)`. Test oracle only.
pub fn materialize(op: &(impl LinearOperator + ?Sized)) -> Result<DMatrix<f64>> {
    let n = op.dim();
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            op.apply(&e)
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(n, n, |r, c| cols[c][r]))
}

/// Dense matrix whose column `i` is `apply_adjoint(e_i)`; equals `Sᵀ`.
pub fn materialize_adjoint(op: &(impl LinearOperator + ?Sized)) -> Result<DMatrix<f64>> {
    let n = op.dim();
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            op.apply_adjoint(&e)
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(n, n, |r, c| cols[c][r]))
}

/// Wraps an operator and counts forward and adjoint applications.
pub struct CountingOperator<T> {
    inner: T,
    forward: AtomicUsize,
    adjoint: AtomicUsize,
}

impl<T: LinearOperator> CountingOperator<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            forward: AtomicUsize::new(0),
            adjoint: AtomicUsize::new(0),
        }
    }

    pub fn forward_count(&self) -> usize {
        self.forward.load(Ordering::Relaxed)
    }

    pub fn adjoint_count(&self) -> usize {
        self.adjoint.load(Ordering::Relaxed)
    }

    pub fn total(&self) -> usize {
        self.forward_count() + self.adjoint_count()
    }

    pub fn into_inner(self) -> T {
        self.inner
    }
}

impl<T: LinearOperator> LinearOperator for CountingOperator<T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward.fetch_add(1, Ordering::Relaxed);
        self.inner.apply(x)
    }
    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.adjoint.fetch_add(1, Ordering::Relaxed);
        self.inner.apply_adjoint(y)
    }
}

/// Dense matrix as an operator; handy for tests and synthetic spectra.
#[derive(Debug, Clone)]
pub struct DenseOperator(pub DMatrix<f64>);

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.0.nrows()
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(x, self.dim())?;
        let xv = nalgebra::DVector::from_column_slice(x);
        Ok((&self.0 * xv).as_slice().to_vec())
    }
    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(y, self.dim())?;
        let yv = nalgebra::DVector::from_column_slice(y);
        Ok((self.0.tr_mul(&yv)).as_slice().to_vec())
    }
}

/// The identity map of a given dimension.
#[derive(Debug, Clone, Copy)]
pub struct IdentityOperator(pub usize);

impl LinearOperator for IdentityOperator {
    fn dim(&self) -> usize {
        self.0
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(x, self.0)?;
        Ok(x.to_vec())
    }
    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.apply(y)
    }
}
