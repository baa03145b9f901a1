//! The regularized training loss `ℓ̄(w) = Σᵢ ℓ(yᵢ, f_w(xᵢ)) + ½δ‖w‖²`
//! and its per-example linearizations.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{ensure_len, Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::loss::{ggn_diagonal, LossKind};
use crate::model::{Jacobian, Model};
use crate::scalar::{axpy, dot, Scalar};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurvatureMode {
    #[default]
    Diagonal,
    Full,
}

/// A PSD curvature estimate, either its diagonal or the full `P×P` matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Curvature<T> {
    Diagonal(Vec<T>),
    Full(Matrix<T>),
}

impl<T: Scalar> Curvature<T> {
    pub fn zeros(mode: CurvatureMode, p: usize) -> Self {
        match mode {
            CurvatureMode::Diagonal => Curvature::Diagonal(vec![T::zero(); p]),
            CurvatureMode::Full => Curvature::Full(Matrix::zeros(p, p)),
        }
    }

    pub fn mode(&self) -> CurvatureMode {
        match self {
            Curvature::Diagonal(_) => CurvatureMode::Diagonal,
            Curvature::Full(_) => CurvatureMode::Full,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Curvature::Diagonal(d) => d.len(),
            Curvature::Full(m) => m.rows(),
        }
    }

    pub fn diagonal(&self) -> Vec<T> {
        match self {
            Curvature::Diagonal(d) => d.clone(),
            Curvature::Full(m) => m.diag(),
        }
    }

    /// Adds `JᵀΛJ` (diagonal mode uses `diag(Λ)` only).
    pub fn accumulate_ggn(&mut self, jac: &Matrix<T>, lam: &Matrix<T>) -> Result<()> {
        match self {
            Curvature::Diagonal(d) => ggn_diagonal(jac, lam, d),
            Curvature::Full(m) => m.add_congruence(jac, lam, T::one()),
        }
    }

    pub fn scale_in_place(&mut self, a: T) {
        match self {
            Curvature::Diagonal(d) => d.iter_mut().for_each(|v| *v *= a),
            Curvature::Full(m) => m.scale_in_place(a),
        }
    }

    /// `self += a·other`; both sides must share a mode.
    pub fn add_scaled(&mut self, a: T, other: &Curvature<T>) -> Result<()> {
        match (self, other) {
            (Curvature::Diagonal(d), Curvature::Diagonal(o)) => {
                ensure_len("curvature", d.len(), o.len())?;
                axpy(a, o, d);
                Ok(())
            }
            (Curvature::Full(m), Curvature::Full(o)) => m.add_scaled(a, o),
            _ => Err(Error::InvalidArgument("curvature modes differ".into())),
        }
    }

    /// `(1 − β)·self + β·fresh`, elementwise.
    pub fn blend(&mut self, beta: T, fresh: &Curvature<T>) -> Result<()> {
        let keep = T::one() - beta;
        match (self, fresh) {
            (Curvature::Diagonal(d), Curvature::Diagonal(o)) => {
                ensure_len("curvature", d.len(), o.len())?;
                for (s, &h) in d.iter_mut().zip(o) {
                    *s = keep * *s + beta * h;
                }
                Ok(())
            }
            (Curvature::Full(m), Curvature::Full(o)) => {
                ensure_len("curvature", m.rows(), o.rows())?;
                for (s, &h) in m.as_mut_slice().iter_mut().zip(o.as_slice()) {
                    *s = keep * *s + beta * h;
                }
                Ok(())
            }
            _ => Err(Error::InvalidArgument("curvature modes differ".into())),
        }
    }

    /// `self + δI`
    pub fn with_prior(&self, delta: T) -> Self {
        match self {
            Curvature::Diagonal(d) => Curvature::Diagonal(d.iter().map(|&v| v + delta).collect()),
            Curvature::Full(m) => {
                let mut m = m.clone();
                m.add_to_diag(delta);
                Curvature::Full(m)
            }
        }
    }

    /// Solves `self · x = b` for a positive-definite curvature.
    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        ensure_len("curvature solve", self.dim(), b.len())?;
        match self {
            Curvature::Diagonal(d) => {
                if let Some(i) = d.iter().position(|&v| !(v > T::zero())) {
                    return Err(Error::NotPositiveDefinite {
                        index: i,
                        pivot: d[i].to_f64_lossy(),
                    });
                }
                Ok(b.iter().zip(d).map(|(&x, &v)| x / v).collect())
            }
            Curvature::Full(m) => Cholesky::new(m)?.solve(b),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Curvature::Diagonal(d) => d.iter().all(|v| v.is_finite()),
            Curvature::Full(m) => m.is_finite(),
        }
    }
}

/// Per-example quantities at a fixed parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Linearization<T> {
    pub jacobian: Jacobian<T>,
    pub residual: Vec<T>,
    /// Undamped noise precision `Λᵢ`.
    pub lam: Matrix<T>,
}

/// Data-term gradient and curvature at one point.
#[derive(Clone, Debug)]
pub struct GradCurvature<T> {
    /// `Σᵢ ℓᵢ` over the rows used, without the prior term.
    pub data_loss: T,
    pub data_grad: Vec<T>,
    pub ggn: Curvature<T>,
}

/// Training problem: model, loss, data and prior precision `δ`.
pub struct Objective<'a, T, M> {
    pub model: &'a M,
    pub loss: &'a LossKind<T>,
    pub data: &'a Dataset<T>,
    pub delta: T,
}

impl<T, M> Clone for Objective<'_, T, M>
where
    T: Copy,
{
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Copy, M> Copy for Objective<'_, T, M> {}

impl<'a, T: Scalar, M: Model<T>> Objective<'a, T, M> {
    pub fn new(model: &'a M, loss: &'a LossKind<T>, data: &'a Dataset<T>, delta: T) -> Result<Self> {
        loss.validate()?;
        if !(delta >= T::zero() && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!("prior precision must be finite and >= 0, got {delta}")));
        }
        ensure_len("dataset input dimension", model.input_dim(), data.input_dim())?;
        if let Some(k) = loss.output_dim() {
            ensure_len("model output dimension", k, model.output_dim())?;
        }
        Ok(Objective {
            model,
            loss,
            data,
            delta,
        })
    }

    pub fn param_count(&self) -> usize {
        self.model.param_count()
    }

    pub fn all_rows(&self) -> Vec<usize> {
        (0..self.data.len()).collect()
    }

    fn prior_value(&self, w: &[T]) -> T {
        T::lit(0.5) * self.delta * dot(w, w)
    }

    /// `Σᵢ ℓᵢ` over the given rows.
    pub fn data_loss_on(&self, w: &[T], rows: &[usize]) -> Result<T> {
        let mut total = T::zero();
        for &i in rows {
            let f = self.model.forward(w, self.data.input(i))?;
            total += self.loss.loss_value(&self.data.target(i), &f)?;
        }
        Ok(total)
    }

    /// The regularized loss `ℓ̄(w)`.
    pub fn value(&self, w: &[T]) -> Result<T> {
        Ok(self.data_loss_on(w, &self.all_rows())? + self.prior_value(w))
    }

    /// `(Σᵢ ℓᵢ, Σᵢ ∇ℓᵢ)` over the given rows via vector-Jacobian products.
    pub fn data_loss_grad_on(&self, w: &[T], rows: &[usize]) -> Result<(T, Vec<T>)> {
        let mut grad = vec![T::zero(); self.param_count()];
        let mut total = T::zero();
        for &i in rows {
            let y = self.data.target(i);
            let mut value = T::zero();
            self.model.forward_vjp(
                w,
                self.data.input(i),
                &mut |f| {
                    value = self.loss.loss_value(&y, f)?;
                    self.loss.residual(&y, f)
                },
                &mut grad,
            )?;
            total += value;
        }
        Ok((total, grad))
    }

    /// `(ℓ̄(w), ∇ℓ̄(w))`.
    pub fn value_and_grad(&self, w: &[T]) -> Result<(T, Vec<T>)> {
        let (data, mut grad) = self.data_loss_grad_on(w, &self.all_rows())?;
        axpy(self.delta, w, &mut grad);
        Ok((data + self.prior_value(w), grad))
    }

    pub fn grad_norm(&self, w: &[T]) -> Result<T> {
        let (_, g) = self.value_and_grad(w)?;
        Ok(dot(&g, &g).sqrt())
    }

    pub fn linearize_one(&self, w: &[T], i: usize) -> Result<Linearization<T>> {
        let jacobian = self.model.jacobian(w, self.data.input(i))?;
        let residual = self.loss.residual(&self.data.target(i), &jacobian.output)?;
        let lam = self.loss.noise_precision(&jacobian.output)?;
        Ok(Linearization {
            jacobian,
            residual,
            lam,
        })
    }

    pub fn linearize(&self, w: &[T]) -> Result<Vec<Linearization<T>>> {
        (0..self.data.len()).map(|i| self.linearize_one(w, i)).collect()
    }

    /// Data-term loss, gradient `Σ Jᵢᵀrᵢ` and GGN `Σ JᵢᵀΛᵢJᵢ` over the given
    /// rows, accumulated in row order.
    pub fn grad_ggn_on(&self, w: &[T], mode: CurvatureMode, rows: &[usize]) -> Result<GradCurvature<T>> {
        let p = self.param_count();
        let mut data_grad = vec![T::zero(); p];
        let mut ggn = Curvature::zeros(mode, p);
        let mut data_loss = T::zero();
        for &i in rows {
            let lin = self.linearize_one(w, i)?;
            data_loss += self.loss.loss_value(&self.data.target(i), &lin.jacobian.output)?;
            let g = lin.jacobian.matrix.t_matvec(&lin.residual)?;
            axpy(T::one(), &g, &mut data_grad);
            ggn.accumulate_ggn(&lin.jacobian.matrix, &lin.lam)?;
        }
        Ok(GradCurvature {
            data_loss,
            data_grad,
            ggn,
        })
    }

    pub fn grad_ggn(&self, w: &[T], mode: CurvatureMode) -> Result<GradCurvature<T>> {
        self.grad_ggn_on(w, mode, &self.all_rows())
    }
}
