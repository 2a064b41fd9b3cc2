//! Dense linear algebra for desk-scale problems.
//!
//! Everything here works on small row-major matrices (tens of rows at most):
//! LU with partial pivoting, row reduction for kernels and rank, cyclic Jacobi
//! for symmetric eigenproblems, and the three vector norms the crate supports.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Matrix::zeros(diag.len(), diag.len());
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = *d;
        }
        m
    }

    /// Builds a matrix from row-major data.
    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!("{} entries for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Matrix { rows, cols, data: data.to_vec() })
    }

    /// Builds a matrix from a list of rows; `cols` fixes the width so that an
    /// empty row list still has a shape.
    pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::DimensionMismatch(format!("row {i} has {} entries, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix { rows: rows.len(), cols, data })
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

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
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

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * s).collect() }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect() }
    }

    /// Submatrix made of the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data }
    }

    /// Submatrix of columns `start..end`.
    pub fn column_block(&self, start: usize, end: usize) -> Matrix {
        let mut out = Matrix::zeros(self.rows, end - start);
        for i in 0..self.rows {
            for j in start..end {
                out[(i, j - start)] = self[(i, j)];
            }
        }
        out
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, other.cols);
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Matrix { rows: self.rows + other.rows, cols: self.cols, data }
    }

    /// Places `other` to the right of `self`.
    pub fn hstack(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.rows, other.rows);
        let mut out = Matrix::zeros(self.rows, self.cols + other.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(i, j)] = self[(i, j)];
            }
            for j in 0..other.cols {
                out[(i, self.cols + j)] = other[(i, j)];
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|x| *x == 0.0)
    }

    /// Largest `|M_ij - M_ji|`; `+inf` for non-square input.
    pub fn asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn symmetrized(&self) -> Matrix {
        let mut s = self.clone();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let avg = 0.5 * (self[(i, j)] + self[(j, i)]);
                s[(i, j)] = avg;
                s[(j, i)] = avg;
            }
        }
        s
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn axpy(alpha: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| alpha * a + b).collect()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// LU factorization with partial pivoting, `P M = L U`.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
    min_pivot: f64,
    max_pivot: f64,
}

impl Lu {
    pub fn factor(m: &Matrix) -> Result<Lu> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch(format!("LU needs a square matrix, got {}x{}", m.rows, m.cols)));
        }
        let n = m.rows;
        let mut lu = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut min_pivot = f64::INFINITY;
        let mut max_pivot = 0.0f64;
        for k in 0..n {
            let (p, pmax) =
                (k..n).map(|i| (i, lu[(i, k)].abs())).fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            min_pivot = min_pivot.min(pmax);
            max_pivot = max_pivot.max(pmax);
            if pmax == 0.0 {
                continue;
            }
            if p != k {
                for j in 0..n {
                    lu.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let piv = lu[(k, k)];
            for i in (k + 1)..n {
                let f = lu[(i, k)] / piv;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in (k + 1)..n {
                        lu[(i, j)] -= f * lu[(k, j)];
                    }
                }
            }
        }
        if n == 0 {
            min_pivot = 1.0;
            max_pivot = 1.0;
        }
        Ok(Lu { lu, perm, min_pivot, max_pivot })
    }

    /// `min |pivot| / max |pivot|`, zero when every pivot vanished.
    pub fn pivot_ratio(&self) -> f64 {
        if self.max_pivot == 0.0 {
            0.0
        } else {
            self.min_pivot / self.max_pivot
        }
    }

    pub fn is_nonsingular(&self, tol_pivot: f64) -> bool {
        self.pivot_ratio() >= tol_pivot
    }

    /// Forward and back substitution. Only meaningful when the factorization
    /// is nonsingular.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.lu.rows;
        debug_assert_eq!(rhs.len(), n);
        let mut y: Vec<f64> = self.perm.iter().map(|&p| rhs[p]).collect();
        for i in 0..n {
            let mut s = y[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * y[j];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in (i + 1)..n {
                s -= self.lu[(i, j)] * y[j];
            }
            y[i] = s / self.lu[(i, i)];
        }
        y
    }
}

/// Solves `M x = rhs`, or reports [`Error::Singular`] when the pivot ratio
/// falls below `tol_pivot`.
pub fn lu_solve(m: &Matrix, rhs: &[f64], tol_pivot: f64) -> Result<Vec<f64>> {
    if rhs.len() != m.rows {
        return Err(Error::DimensionMismatch(format!("rhs has length {}, matrix has {} rows", rhs.len(), m.rows)));
    }
    let lu = Lu::factor(m)?;
    if !lu.is_nonsingular(tol_pivot) {
        return Err(Error::Singular);
    }
    Ok(lu.solve(rhs))
}

pub fn is_nonsingular(m: &Matrix, tol_pivot: f64) -> bool {
    Lu::factor(m).map(|lu| lu.is_nonsingular(tol_pivot)).unwrap_or(false)
}

pub fn inverse(m: &Matrix, tol_pivot: f64) -> Result<Matrix> {
    let lu = Lu::factor(m)?;
    if !lu.is_nonsingular(tol_pivot) {
        return Err(Error::Singular);
    }
    let n = m.rows;
    let mut inv = Matrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|x| *x = 0.0);
        e[j] = 1.0;
        let col = lu.solve(&e);
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    Ok(inv)
}

/// Reduced row echelon form with partial pivoting.
///
/// A column is a pivot column when its best remaining entry exceeds
/// `tol_pivot * max|M|`. The extreme accepted and rejected ratios are kept so
/// callers can flag decisions made close to the threshold.
#[derive(Debug, Clone)]
pub struct Rref {
    pub reduced: Matrix,
    pub pivots: Vec<usize>,
    pub min_accepted_ratio: f64,
    pub max_rejected_ratio: f64,
}

impl Rref {
    pub fn rank(&self) -> usize {
        self.pivots.len()
    }

    /// True when some pivot decision was within a factor `margin` of the
    /// threshold on either side.
    pub fn near_threshold(&self, tol_pivot: f64, margin: f64) -> bool {
        self.min_accepted_ratio < tol_pivot * margin || self.max_rejected_ratio > tol_pivot / margin
    }
}

pub fn rref(m: &Matrix, tol_pivot: f64) -> Rref {
    rref_with_rhs(m, m.cols, tol_pivot)
}

/// Orthonormal basis of the null space of `m`; empty iff the kernel is trivial.
pub fn kernel_basis(m: &Matrix, tol_pivot: f64) -> Vec<Vec<f64>> {
    kernel_from_rref(&rref(m, tol_pivot), m.cols)
}

pub(crate) fn kernel_from_rref(rr: &Rref, cols: usize) -> Vec<Vec<f64>> {
    let mut is_pivot = vec![false; cols];
    for &p in &rr.pivots {
        is_pivot[p] = true;
    }
    let raw: Vec<Vec<f64>> = (0..cols)
        .filter(|&j| !is_pivot[j])
        .map(|free| {
            let mut v = vec![0.0; cols];
            v[free] = 1.0;
            for (r, &p) in rr.pivots.iter().enumerate() {
                v[p] = -rr.reduced[(r, free)];
            }
            v
        })
        .collect();
    orthonormalize(raw)
}

/// Modified Gram-Schmidt, two passes. Vectors that collapse are dropped.
pub fn orthonormalize(vectors: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for mut v in vectors {
        let start = norm2(&v);
        for _ in 0..2 {
            for q in &basis {
                let d = dot(q, &v);
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= d * qi;
                }
            }
        }
        let nv = norm2(&v);
        if nv > 1e-12 * start.max(1e-300) {
            v.iter_mut().for_each(|x| *x /= nv);
            basis.push(v);
        }
    }
    basis
}

/// A solution of a possibly singular but consistent system: the minimum-norm
/// particular solution plus an orthonormal basis of the kernel. `None` when
/// the system is inconsistent.
#[derive(Debug, Clone)]
pub struct AffineSolution {
    pub particular: Vec<f64>,
    pub kernel: Vec<Vec<f64>>,
}

pub fn solve_affine(m: &Matrix, rhs: &[f64], tol_pivot: f64, tol_resid: f64) -> Option<AffineSolution> {
    let aug = m.hstack(&Matrix::from_row_slice(rhs.len(), 1, rhs).expect("column vector"));
    let rr = rref_with_rhs(&aug, m.cols, tol_pivot);
    let kernel = kernel_from_rref(&rr, m.cols);
    let mut x = vec![0.0; m.cols];
    for (r, &p) in rr.pivots.iter().enumerate() {
        x[p] = rr.reduced[(r, m.cols)];
    }
    for q in &kernel {
        let d = dot(q, &x);
        for (xi, qi) in x.iter_mut().zip(q) {
            *xi -= d * qi;
        }
    }
    let resid = max_abs(&sub(&m.matvec(&x), rhs));
    if resid > tol_resid * (1.0 + max_abs(rhs)) * (1.0 + m.max_abs()) {
        return None;
    }
    Some(AffineSolution { particular: x, kernel })
}

/// Row reduction that only picks pivots among the first `ncoef` columns; the
/// remaining columns ride along as right-hand sides.
fn rref_with_rhs(aug: &Matrix, ncoef: usize, tol_pivot: f64) -> Rref {
    let mut r = aug.clone();
    let mut scale = 0.0f64;
    for i in 0..aug.rows {
        for j in 0..ncoef {
            scale = scale.max(aug[(i, j)].abs());
        }
    }
    let mut pivots = Vec::new();
    let mut min_acc = f64::INFINITY;
    let mut max_rej = 0.0f64;
    let mut row = 0;
    if scale > 0.0 {
        for col in 0..ncoef {
            if row == aug.rows {
                break;
            }
            let (p, pmax) =
                (row..aug.rows)
                    .map(|i| (i, r[(i, col)].abs()))
                    .fold((row, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            let ratio = pmax / scale;
            if ratio <= tol_pivot {
                max_rej = max_rej.max(ratio);
                for i in row..aug.rows {
                    r[(i, col)] = 0.0;
                }
                continue;
            }
            min_acc = min_acc.min(ratio);
            if p != row {
                for j in 0..aug.cols {
                    r.data.swap(row * aug.cols + j, p * aug.cols + j);
                }
            }
            let piv = r[(row, col)];
            for j in 0..aug.cols {
                r[(row, j)] /= piv;
            }
            for i in 0..aug.rows {
                if i == row {
                    continue;
                }
                let f = r[(i, col)];
                if f != 0.0 {
                    for j in 0..aug.cols {
                        r[(i, j)] -= f * r[(row, j)];
                    }
                }
            }
            pivots.push(col);
            row += 1;
        }
    }
    Rref { reduced: r, pivots, min_accepted_ratio: min_acc, max_rejected_ratio: max_rej }
}

/// Eigen-decomposition of a symmetric matrix: eigenvalues in descending order
/// and the matching orthonormal eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymEig {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.vectors.column(k)
    }

    pub fn reconstruct(&self) -> Matrix {
        let n = self.values.len();
        let mut out = Matrix::zeros(n, n);
        for k in 0..n {
            let lam = self.values[k];
            for i in 0..n {
                let vik = self.vectors[(i, k)] * lam;
                for j in 0..n {
                    out[(i, j)] += vik * self.vectors[(j, k)];
                }
            }
        }
        out
    }
}

/// Cyclic Jacobi eigensolver.
pub fn sym_eig(m: &Matrix, tol_sym: f64) -> Result<SymEig> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!("eigendecomposition needs a square matrix, got {}x{}", m.rows, m.cols)));
    }
    let asym = m.asymmetry();
    if asym > tol_sym * m.max_abs().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    let n = m.rows;
    let mut a = m.symmetrized();
    let mut v = Matrix::identity(n);
    let total: f64 = a.data.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        for i in 0..n {
            vectors[(i, k)] = v[(i, src)];
        }
    }
    Ok(SymEig { values, vectors })
}

/// The norms supported on the variable space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum VectorNorm {
    #[serde(rename = "l1")]
    L1,
    #[default]
    #[serde(rename = "l2")]
    L2,
    #[serde(rename = "linf")]
    Linf,
}

impl VectorNorm {
    pub fn dual(self) -> VectorNorm {
        match self {
            VectorNorm::L1 => VectorNorm::Linf,
            VectorNorm::L2 => VectorNorm::L2,
            VectorNorm::Linf => VectorNorm::L1,
        }
    }

    pub fn eval(self, v: &[f64]) -> f64 {
        match self {
            VectorNorm::L1 => v.iter().map(|x| x.abs()).sum(),
            VectorNorm::L2 => norm2(v),
            VectorNorm::Linf => max_abs(v),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            VectorNorm::L1 => "l1",
            VectorNorm::L2 => "l2",
            VectorNorm::Linf => "linf",
        }
    }
}

impl fmt::Display for VectorNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    // scaled to avoid overflow on large entries
    let m = max_abs(v);
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    m * v.iter().map(|x| (x / m) * (x / m)).sum::<f64>().sqrt()
}

pub fn norm(v: &[f64], k: VectorNorm) -> f64 {
    k.eval(v)
}

pub fn dual_norm(v: &[f64], k: VectorNorm) -> f64 {
    k.dual().eval(v)
}
