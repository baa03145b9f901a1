//! Dense row-major matrices and the symmetric positive-definite toolkit
//! (Cholesky factorization, solves, log-determinants) used by the
//! posterior and evidence code.
//!
//! Sizes in this crate stay below a couple of thousand parameters, so all
//! routines are plain unblocked loops. Diagonal covariances never come
//! through here; they are handled elementwise by their owners.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::scalar::{axpy, dot, Scalar};

/// Dense matrix stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        ensure_len("matrix storage", rows * cols, data.len())?;
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![T::one(); n])
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            ensure_len("matrix row", cols, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
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
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn diag(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn trace(&self) -> T {
        self.diag().into_iter().sum()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix<T>) -> Result<Self> {
        ensure_len("matmul inner dimension", self.cols, other.rows)?;
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a != T::zero() {
                    axpy(a, other.row(k), out_row);
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        ensure_len("matvec", self.cols, x.len())?;
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `selfᵀ · x`
    pub fn t_matvec(&self, x: &[T]) -> Result<Vec<T>> {
        ensure_len("transposed matvec", self.rows, x.len())?;
        let mut out = vec![T::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            axpy(xi, self.row(i), &mut out);
        }
        Ok(out)
    }

    pub fn add(&self, other: &Matrix<T>) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix<T>) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix<T>, f: impl Fn(T, T) -> T) -> Result<Self> {
        ensure_len("elementwise rows", self.rows, other.rows)?;
        ensure_len("elementwise cols", self.cols, other.cols)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, s: T) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&a| a * s).collect(),
        }
    }

    pub fn scale_in_place(&mut self, s: T) {
        self.data.iter_mut().for_each(|a| *a *= s);
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: T, other: &Matrix<T>) -> Result<()> {
        ensure_len("add_scaled rows", self.rows, other.rows)?;
        ensure_len("add_scaled cols", self.cols, other.cols)?;
        axpy(alpha, &other.data, &mut self.data);
        Ok(())
    }

    pub fn add_to_diag(&mut self, alpha: T) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += alpha;
        }
    }

    /// Accumulates `scale · Jᵀ Λ J` into this `P×P` matrix, where `J` is
    /// `K×P` and `Λ` is `K×K`.
    pub fn add_congruence(&mut self, jac: &Matrix<T>, lam: &Matrix<T>, scale: T) -> Result<()> {
        ensure_len("congruence target", self.rows, jac.cols)?;
        ensure_len("congruence target", self.cols, jac.cols)?;
        ensure_len("noise precision", jac.rows, lam.rows)?;
        ensure_len("noise precision", jac.rows, lam.cols)?;
        // M = Λ J, then self += scale * Jᵀ M row by row.
        let lam_j = lam.matmul(jac)?;
        for k in 0..jac.rows {
            let jk = jac.row(k);
            let mk = lam_j.row(k);
            for (a, &ja) in jk.iter().enumerate() {
                if ja != T::zero() {
                    axpy(scale * ja, mk, self.row_mut(a));
                }
            }
        }
        Ok(())
    }

    /// `A · self · Aᵀ` for `A` of shape `m×n` and this matrix `n×n`.
    pub fn congruence(&self, a: &Matrix<T>) -> Result<Self> {
        let a_self = a.matmul(self)?;
        let mut out = Self::zeros(a.rows, a.rows);
        for i in 0..a.rows {
            for j in 0..a.rows {
                out[(i, j)] = dot(a_self.row(i), a.row(j));
            }
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &a| m.max(a.abs()))
    }

    pub fn frobenius_norm(&self) -> T {
        dot(&self.data, &self.data).sqrt()
    }

    /// Largest `|a_ij − a_ji|`; zero for exactly symmetric matrices.
    pub fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// Replaces the matrix by `(A + Aᵀ)/2`.
    pub fn symmetrize(&mut self) {
        let half = T::lit(0.5);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = half * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|&a| U::lit(a.to_f64_lossy()))
                .collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ = A`.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    lower: Matrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Pivots at or below this value are rejected. It sits just above
    /// underflow so that genuinely indefinite input is distinguished from
    /// roundoff.
    pub fn pivot_floor() -> T {
        T::lit(1e-300)
    }

    /// Relative asymmetry accepted on input.
    pub fn symmetry_tolerance() -> T {
        T::lit(1e-10).max(T::epsilon() * T::lit(64.0))
    }

    pub fn new(a: &Matrix<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::dims("cholesky (square input)", a.rows, a.cols));
        }
        let scale = a.max_abs();
        let asym = a.asymmetry();
        if asym > Self::symmetry_tolerance() * scale {
            return Err(Error::NotSymmetric {
                asymmetry: (asym / scale).to_f64_lossy(),
            });
        }
        let n = a.rows;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let lj = &l.data[j * n..j * n + j];
            let pivot = a[(j, j)] - dot(lj, lj);
            if !(pivot > Self::pivot_floor()) {
                return Err(Error::NotPositiveDefinite {
                    index: j,
                    pivot: pivot.to_f64_lossy(),
                });
            }
            let d = pivot.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let s = {
                    let (li, lj) = (&l.data[i * n..i * n + j], &l.data[j * n..j * n + j]);
                    dot(li, lj)
                };
                // Read the lower triangle only.
                l[(i, j)] = (a[(i, j)] - s) / d;
            }
        }
        Ok(Cholesky { lower: l })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.lower.rows
    }

    pub fn lower(&self) -> &Matrix<T> {
        &self.lower
    }

    /// Solves `L y = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [T]) -> Result<()> {
        let n = self.dim();
        ensure_len("triangular solve", n, b.len())?;
        for i in 0..n {
            let s = dot(&self.lower.row(i)[..i], &b[..i]);
            b[i] = (b[i] - s) / self.lower[(i, i)];
        }
        Ok(())
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn solve_upper_in_place(&self, y: &mut [T]) -> Result<()> {
        let n = self.dim();
        ensure_len("triangular solve", n, y.len())?;
        for i in (0..n).rev() {
            y[i] /= self.lower[(i, i)];
            let yi = y[i];
            axpy(-yi, &self.lower.row(i)[..i], &mut y[..i]);
        }
        Ok(())
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x)?;
        self.solve_upper_in_place(&mut x)?;
        Ok(x)
    }

    /// Solves `A X = B` column by column.
    pub fn solve_matrix(&self, b: &Matrix<T>) -> Result<Matrix<T>> {
        ensure_len("matrix solve", self.dim(), b.rows)?;
        let bt = b.transpose();
        let mut out = Matrix::zeros(b.cols, b.rows);
        for c in 0..b.cols {
            out.row_mut(c).copy_from_slice(&self.solve(bt.row(c))?);
        }
        Ok(out.transpose())
    }

    /// `log det A = 2 Σ log L_ii`
    pub fn log_det(&self) -> T {
        let two = T::lit(2.0);
        (0..self.dim()).map(|i| two * self.lower[(i, i)].ln()).sum()
    }

    /// Full inverse `A⁻¹ = L⁻ᵀ L⁻¹`, symmetric by construction.
    pub fn inverse(&self) -> Matrix<T> {
        let n = self.dim();
        // Row k of L⁻¹ has support on columns 0..=k.
        let mut linv = Matrix::zeros(n, n);
        for col in 0..n {
            let mut e = vec![T::zero(); n];
            e[col] = T::one();
            for i in col..n {
                let s = dot(&self.lower.row(i)[col..i], &e[col..i]);
                e[i] = (e[i] - s) / self.lower[(i, i)];
            }
            for i in col..n {
                linv[(i, col)] = e[i];
            }
        }
        let mut inv = Matrix::zeros(n, n);
        for k in 0..n {
            let r = &linv.row(k)[..=k];
            for i in 0..=k {
                let ri = r[i];
                if ri != T::zero() {
                    axpy(ri, &r[..=i], &mut inv.data[i * n..i * n + i + 1]);
                }
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                inv[(i, j)] = inv[(j, i)];
            }
        }
        inv
    }

    /// `L · Lᵀ`
    pub fn reconstruct(&self) -> Matrix<T> {
        let n = self.dim();
        Matrix::from_fn(n, n, |i, j| {
            let m = i.min(j) + 1;
            dot(&self.lower.row(i)[..m], &self.lower.row(j)[..m])
        })
    }
}

pub fn cholesky<T: Scalar>(a: &Matrix<T>) -> Result<Cholesky<T>> {
    Cholesky::new(a)
}

pub fn solve_psd<T: Scalar>(f: &Cholesky<T>, b: &[T]) -> Result<Vec<T>> {
    f.solve(b)
}

pub fn logdet_psd<T: Scalar>(f: &Cholesky<T>) -> T {
    f.log_det()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn rel_frob(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm()
    }

    fn random_spd(n: usize, seed: u64) -> Matrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(seed);
        let b = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let mut a = b.matmul(&b.transpose()).unwrap();
        a.add_to_diag(0.5);
        a
    }

    #[test]
    fn cholesky_identity_is_identity() {
        let f = cholesky(&Matrix::<f64>::identity(3)).unwrap();
        assert_eq!(f.lower(), &Matrix::identity(3));
    }

    #[test]
    fn cholesky_reconstructs_two_by_two() {
        let a = m(&[&[4.0, 2.0], &[2.0, 3.0]]);
        let f = cholesky(&a).unwrap();
        assert!(rel_frob(&f.reconstruct(), &a) < 1e-10);
        assert_eq!(f.lower()[(0, 1)], 0.0);
        assert!(f.lower()[(0, 0)] > 0.0 && f.lower()[(1, 1)] > 0.0);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let err = cholesky(&m(&[&[1.0, 2.0], &[2.0, 1.0]])).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { index: 1, .. }));
    }

    #[test]
    fn cholesky_rejects_asymmetric_and_rectangular() {
        assert!(matches!(
            cholesky(&m(&[&[2.0, 1.0], &[0.0, 2.0]])),
            Err(Error::NotSymmetric { .. })
        ));
        assert!(matches!(
            cholesky(&Matrix::<f64>::zeros(2, 3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn solve_identity_and_residual() {
        let f = cholesky(&Matrix::<f64>::identity(2)).unwrap();
        assert_eq!(solve_psd(&f, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);

        let a = m(&[&[4.0, 2.0], &[2.0, 3.0]]);
        let f = cholesky(&a).unwrap();
        let b = [6.0, 5.0];
        let x = solve_psd(&f, &b).unwrap();
        let ax = a.matvec(&x).unwrap();
        let res = ((ax[0] - b[0]).powi(2) + (ax[1] - b[1]).powi(2)).sqrt();
        assert!(res / (b[0].hypot(b[1])) < 1e-8);
    }

    #[test]
    fn solve_dimension_mismatch() {
        let f = cholesky(&Matrix::<f64>::identity(2)).unwrap();
        assert!(matches!(
            solve_psd(&f, &[1.0, 2.0, 3.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn logdet_trivial_cases() {
        let f = cholesky(&Matrix::<f64>::identity(4)).unwrap();
        assert_eq!(logdet_psd(&f), 0.0);
        let f = cholesky(&Matrix::from_diag(&[2.0, 8.0])).unwrap();
        assert!((logdet_psd(&f) - 16f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn logdet_matches_eigenvalue_product() {
        let a = random_spd(5, 11);
        let na = nalgebra::DMatrix::from_row_slice(5, 5, a.as_slice());
        let eig = na.symmetric_eigen();
        let expected: f64 = eig.eigenvalues.iter().map(|l| l.ln()).sum();
        let got = logdet_psd(&cholesky(&a).unwrap());
        assert!((got - expected).abs() < 1e-10 * expected.abs().max(1.0));
    }

    #[test]
    fn inverse_matches_solves() {
        let a = random_spd(7, 3);
        let f = cholesky(&a).unwrap();
        let inv = f.inverse();
        let prod = a.matmul(&inv).unwrap();
        assert!(rel_frob(&prod, &Matrix::identity(7)) < 1e-10);
        assert_eq!(inv.asymmetry(), 0.0);
    }

    #[test]
    fn works_in_single_precision() {
        let a: Matrix<f32> = m(&[&[4.0, 2.0], &[2.0, 3.0]]).cast();
        let f = cholesky(&a).unwrap();
        let x = f.solve(&[6.0, 5.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-5 && (x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn congruence_helpers_agree() {
        let j = m(&[&[1.0, 2.0, 0.5], &[0.0, -1.0, 3.0]]);
        let lam = m(&[&[2.0, 0.5], &[0.5, 1.0]]);
        let mut acc = Matrix::zeros(3, 3);
        acc.add_congruence(&j, &lam, 1.0).unwrap();
        let direct = j.transpose().matmul(&lam).unwrap().matmul(&j).unwrap();
        assert!(rel_frob(&acc, &direct) < 1e-15);
        let s = random_spd(3, 5);
        let jsj = s.congruence(&j).unwrap();
        let direct = j.matmul(&s).unwrap().matmul(&j.transpose()).unwrap();
        assert!(rel_frob(&jsj, &direct) < 1e-14);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn spd_roundtrips(n in 1usize..12, seed in any::<u64>()) {
            let a = random_spd(n, seed);
            let f = cholesky(&a).unwrap();
            prop_assert!(rel_frob(&f.reconstruct(), &a) < 1e-10);

            let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
            let x = f.solve(&b).unwrap();
            let ax = a.matvec(&x).unwrap();
            let res: f64 = ax.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            let bn: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(res <= 1e-8 * bn.max(1e-300));

            // log det A + log det A⁻¹ = 0
            let inv_f = cholesky(&f.inverse()).unwrap();
            prop_assert!((f.log_det() + inv_f.log_det()).abs() < 1e-6);
        }
    }
}
