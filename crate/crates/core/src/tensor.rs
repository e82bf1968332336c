//! Dense row-major tensors and the small linear-algebra kernel built on them.
//!
//! Matrices are 2-D tensors stored row-major. `vec` stacks columns, so for
//! conformable `u`, `v`, `x`: `unvec(kron(u, v) * vec(x)) == v * x * uᵀ`.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 64 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} needs {expected} entries, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn from_matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("Tensor::from_rows", "ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Self::from_matrix(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Tensor { shape: vec![rows, cols], data }
    }

    /// Column vector `n×1`.
    pub fn column(values: Vec<T>) -> Self {
        Tensor { shape: vec![values.len(), 1], data: values }
    }

    pub fn eye(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn diag(values: &[T]) -> Self {
        let n = values.len();
        Self::from_fn(n, n, |i, j| if i == j { values[i] } else { T::zero() })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// Row count of a matrix (leading extent for other ranks).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Column count of a matrix; 1 for vectors.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", format!("{:?} -> {:?}", self.shape, shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn col(&self, j: usize) -> Vec<T> {
        let c = self.cols();
        (0..self.rows()).map(|i| self.data[i * c + j]).collect()
    }

    pub fn set_col(&mut self, j: usize, values: &[T]) {
        let c = self.cols();
        for (i, &v) in values.iter().enumerate() {
            self.data[i * c + j] = v;
        }
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![T::zero(); r * c];
        const B: usize = 32;
        for ib in (0..r).step_by(B) {
            for jb in (0..c).step_by(B) {
                for i in ib..(ib + B).min(r) {
                    for j in jb..(jb + B).min(c) {
                        out[j * r + i] = self.data[i * c + j];
                    }
                }
            }
        }
        Tensor { shape: vec![c, r], data: out }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if !self.is_matrix() || !(other.is_matrix() || other.shape.len() == 1) || k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape, other.shape),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, T::one(), &self.data, &other.data, T::zero(), &mut out);
        Ok(Tensor { shape: vec![m, n], data: out })
    }

    /// `selfᵀ · other` without materializing the transpose of large operands twice.
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        self.transpose().matmul(other)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        self.matmul(&other.transpose())
    }

    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if self.cols() != v.len() {
            return Err(Error::shape(
                "matvec",
                format!("{:?} x [{}]", self.shape, v.len()),
            ));
        }
        Ok((0..self.rows()).map(|i| dot(self.row(i), v)).collect())
    }

    /// `selfᵀ · v`.
    pub fn t_matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if self.rows() != v.len() {
            return Err(Error::shape(
                "t_matvec",
                format!("{:?}ᵀ x [{}]", self.shape, v.len()),
            ));
        }
        let mut out = vec![T::zero(); self.cols()];
        for (i, &vi) in v.iter().enumerate() {
            axpy(vi, self.row(i), &mut out);
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    fn check_same(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same(other, "sub")?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.check_same(other, "hadamard")?;
        Ok(self.zip_map(other, |a, b| a * b))
    }

    fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn scale_mut(&mut self, s: T) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// `self += alpha * other`.
    pub fn axpy_mut(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.check_same(other, "axpy")?;
        axpy(alpha, &other.data, &mut self.data);
        Ok(())
    }

    /// Adds `s` to every diagonal entry.
    pub fn add_diag_mut(&mut self, s: T) {
        let c = self.cols();
        for i in 0..self.rows().min(c) {
            self.data[i * c + i] += s;
        }
    }

    pub fn trace(&self) -> T {
        let c = self.cols();
        (0..self.rows().min(c)).map(|i| self.data[i * c + i]).sum()
    }

    pub fn norm_fro(&self) -> T {
        norm(&self.data)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute entry of `self - selfᵀ`.
    pub fn asymmetry(&self) -> T {
        let n = self.rows();
        let mut worst = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn symmetrize(&self) -> Self {
        let t = self.transpose();
        self.zip_map(&t, |a, b| (a + b) * T::lit(0.5))
    }

    /// Relative Frobenius distance `‖self − other‖ / max(‖other‖, tiny)`.
    pub fn rel_err(&self, other: &Self) -> T {
        let diff = self.zip_map(other, |a, b| a - b).norm_fro();
        let denom = other.norm_fro().max(T::min_positive_value());
        diff / denom
    }

    /// Column-stacking vectorization, returned as an `n·m × 1` column.
    pub fn vec(&self) -> Self {
        Tensor::column(self.transpose().data)
    }

    /// Inverse of [`Tensor::vec`].
    pub fn unvec(v: &[T], rows: usize, cols: usize) -> Result<Self> {
        if v.len() != rows * cols {
            return Err(Error::shape(
                "unvec",
                format!("length {} cannot form {rows}x{cols}", v.len()),
            ));
        }
        Ok(Tensor { shape: vec![cols, rows], data: v.to_vec() }.transpose())
    }

    pub fn kron(u: &Self, v: &Self) -> Self {
        let (p, q) = (u.rows(), u.cols());
        let (r, s) = (v.rows(), v.cols());
        let cols = q * s;
        let mut out = vec![T::zero(); p * r * cols];
        for i in 0..p {
            for j in 0..q {
                let uij = u.data[i * q + j];
                if uij == T::zero() {
                    continue;
                }
                for k in 0..r {
                    let dst = (i * r + k) * cols + j * s;
                    for (o, &vv) in out[dst..dst + s].iter_mut().zip(v.row(k)) {
                        *o = uij * vv;
                    }
                }
            }
        }
        Tensor { shape: vec![p * r, cols], data: out }
    }

    pub fn outer(u: &[T], v: &[T]) -> Self {
        Self::from_fn(u.len(), v.len(), |i, j| u[i] * v[j])
    }

    fn check_symmetric(&self) -> Result<()> {
        if !self.is_matrix() || self.rows() != self.cols() {
            return Err(Error::shape("symmetric input", format!("{:?}", self.shape)));
        }
        let scale = self.max_abs();
        let tol = T::lit(1e-10).max(T::epsilon() * T::lit(1e3)) * scale;
        let asym = self.asymmetry();
        if asym > tol {
            return Err(Error::NotSymmetric {
                asymmetry: asym.to_f64_lossy(),
                tolerance: tol.to_f64_lossy(),
            });
        }
        Ok(())
    }

    /// Lower Cholesky factor `L` with `L Lᵀ = self`.
    pub fn cholesky(&self) -> Result<Self> {
        self.check_symmetric()?;
        let n = self.rows();
        let mut l = vec![T::zero(); n * n];
        for j in 0..n {
            let mut d = self.data[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d.to_f64_lossy() });
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in (j + 1)..n {
                let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
                let s = self.data[i * n + j] - dot(ri, rj);
                l[i * n + j] = s / d;
            }
        }
        Ok(Tensor { shape: vec![n, n], data: l })
    }

    /// Solves `self · X = rhs` for symmetric positive definite `self`.
    pub fn solve_spd(&self, rhs: &Self) -> Result<Self> {
        let n = self.rows();
        if rhs.rows() != n {
            return Err(Error::shape(
                "solve_spd",
                format!("{:?} vs rhs {:?}", self.shape, rhs.shape),
            ));
        }
        let l = self.cholesky()?;
        let c = rhs.cols();
        let mut x = rhs.data.clone();
        // forward: L y = b
        for i in 0..n {
            for k in 0..i {
                let lik = l.data[i * n + k];
                if lik != T::zero() {
                    let (head, tail) = x.split_at_mut(i * c);
                    axpy(-lik, &head[k * c..(k + 1) * c], &mut tail[..c]);
                }
            }
            let d = l.data[i * n + i];
            x[i * c..(i + 1) * c].iter_mut().for_each(|v| *v /= d);
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let lki = l.data[k * n + i];
                if lki != T::zero() {
                    let (head, tail) = x.split_at_mut(k * c);
                    axpy(-lki, &tail[..c], &mut head[i * c..(i + 1) * c]);
                }
            }
            let d = l.data[i * n + i];
            x[i * c..(i + 1) * c].iter_mut().for_each(|v| *v /= d);
        }
        Ok(Tensor { shape: vec![n, c], data: x })
    }

    pub fn inverse_spd(&self) -> Result<Self> {
        let inv = self.solve_spd(&Self::eye(self.rows()))?;
        Ok(inv.symmetrize())
    }

    /// Symmetric eigendecomposition by Householder tridiagonalization and
    /// implicit QL with Wilkinson-style shifts.
    pub fn sym_eig(&self) -> Result<SymEig<T>> {
        self.check_symmetric()?;
        let n = self.rows();
        if n == 0 {
            return Ok(SymEig { eigenvalues: vec![], eigenvectors: Tensor::zeros(&[0, 0]) });
        }
        let mut z = self.symmetrize().data;
        let mut d = vec![T::zero(); n];
        let mut e = vec![T::zero(); n];
        tridiagonalize(&mut z, &mut d, &mut e, n);
        tql_implicit(&mut z, &mut d, &mut e, n)?;

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap_or(std::cmp::Ordering::Equal));
        let eigenvalues = order.iter().map(|&i| d[i]).collect();
        let eigenvectors = Tensor::from_fn(n, n, |i, j| z[i * n + order[j]]);
        Ok(SymEig { eigenvalues, eigenvectors })
    }
}

/// Eigenvalues (ascending) and the orthogonal matrix whose columns are the
/// matching eigenvectors.
#[derive(Clone, Debug)]
pub struct SymEig<T> {
    pub eigenvalues: Vec<T>,
    pub eigenvectors: Tensor<T>,
}

impl<T: Scalar> SymEig<T> {
    pub fn min(&self) -> T {
        self.eigenvalues.first().copied().unwrap_or(T::zero())
    }

    pub fn max(&self) -> T {
        self.eigenvalues.last().copied().unwrap_or(T::zero())
    }

    /// `Q Λ Qᵀ`.
    pub fn reconstruct(&self) -> Tensor<T> {
        let q = &self.eigenvectors;
        let n = q.rows();
        let scaled = Tensor::from_fn(n, n, |i, j| q[(i, j)] * self.eigenvalues[j]);
        scaled.matmul_t(q).expect("square factors")
    }
}

impl<T> Index<(usize, usize)> for Tensor<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.shape[1] + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Tensor<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.shape[1] + j]
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// `y += alpha * x`.
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

// Householder reduction of the symmetric matrix in `z` (row-major n×n) to
// tridiagonal form. On exit `d` holds the diagonal, `e[1..]` the
// sub-diagonal and `z` the accumulated orthogonal transform.
fn tridiagonalize<T: Scalar>(z: &mut [T], d: &mut [T], e: &mut [T], n: usize) {
    let zero = T::zero();
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = zero;
        if l > 0 {
            let scale: T = (0..i).map(|k| z[i * n + k].abs()).sum();
            if scale == zero {
                e[i] = z[i * n + l];
            } else {
                for k in 0..i {
                    z[i * n + k] /= scale;
                    h += z[i * n + k] * z[i * n + k];
                }
                let f = z[i * n + l];
                let g = if f >= zero { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                z[i * n + l] = f - g;
                let mut f = zero;
                for j in 0..i {
                    z[j * n + i] = z[i * n + j] / h;
                    let mut g = zero;
                    for k in 0..=j {
                        g += z[j * n + k] * z[i * n + k];
                    }
                    for k in (j + 1)..i {
                        g += z[k * n + j] * z[i * n + k];
                    }
                    e[j] = g / h;
                    f += e[j] * z[i * n + j];
                }
                let hh = f / (h + h);
                for j in 0..i {
                    let f = z[i * n + j];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        let delta = f * e[k] + g * z[i * n + k];
                        z[j * n + k] -= delta;
                    }
                }
            }
        } else {
            e[i] = z[i * n + l];
        }
        d[i] = h;
    }
    d[0] = zero;
    e[0] = zero;
    for i in 0..n {
        if d[i] != zero {
            for j in 0..i {
                let mut g = zero;
                for k in 0..i {
                    g += z[i * n + k] * z[k * n + j];
                }
                for k in 0..i {
                    let delta = g * z[k * n + i];
                    z[k * n + j] -= delta;
                }
            }
        }
        d[i] = z[i * n + i];
        z[i * n + i] = T::one();
        for j in 0..i {
            z[j * n + i] = zero;
            z[i * n + j] = zero;
        }
    }
}

fn tql_implicit<T: Scalar>(z: &mut [T], d: &mut [T], e: &mut [T], n: usize) -> Result<()> {
    const MAX_SWEEPS: usize = 60;
    let zero = T::zero();
    let one = T::one();
    let two = T::lit(2.0);
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = zero;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m < n - 1 {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= T::epsilon() * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > MAX_SWEEPS {
                return Err(Error::NoConvergence { iterations: MAX_SWEEPS });
            }
            let mut g = (d[l + 1] - d[l]) / (two * e[l]);
            let mut r = g.hypot(one);
            g = d[m] - d[l] + e[l] / (g + if g >= zero { r.abs() } else { -r.abs() });
            let (mut s, mut c, mut p) = (one, one, zero);
            let mut early_exit = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == zero {
                    d[i + 1] -= p;
                    e[m] = zero;
                    early_exit = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + two * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    let f = z[k * n + i + 1];
                    z[k * n + i + 1] = s * z[k * n + i] + c * f;
                    z[k * n + i] = c * z[k * n + i] - s * f;
                }
            }
            if early_exit {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = zero;
        }
    }
    Ok(())
}
