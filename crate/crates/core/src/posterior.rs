//! Gaussian posterior approximations over network parameters.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::model::{Model, ParamVector};
use crate::objective::{Curvature, CurvatureMode, Objective};
use crate::optim::VognState;
use crate::rng::{normal_vec, seeded};
use crate::scalar::{axpy, dot, Scalar};

/// Gradient norm above which a Laplace anchor is reported as non-stationary.
pub const STATIONARITY_WARNING: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApproxKind {
    LaplaceGgn,
    Vi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Covariance<T> {
    Full(Matrix<T>),
    Diagonal(Vec<T>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussApprox<T> {
    pub mean: ParamVector<T>,
    pub cov: Covariance<T>,
    pub kind: ApproxKind,
    pub delta: T,
}

impl<T: Scalar> GaussApprox<T> {
    /// Inverts a precision into a covariance-form approximation.
    pub fn from_precision(mean: Vec<T>, precision: &Curvature<T>, kind: ApproxKind, delta: T) -> Result<Self> {
        ensure_len("posterior precision", mean.len(), precision.dim())?;
        let cov = match precision {
            Curvature::Diagonal(d) => {
                if let Some(i) = d.iter().position(|&v| !(v > T::zero())) {
                    return Err(Error::NotPositiveDefinite {
                        index: i,
                        pivot: d[i].to_f64_lossy(),
                    });
                }
                Covariance::Diagonal(d.iter().map(|&v| T::one() / v).collect())
            }
            Curvature::Full(m) => Covariance::Full(Cholesky::new(m)?.inverse()),
        };
        Ok(GaussApprox {
            mean: ParamVector(mean),
            cov,
            kind,
            delta,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_full(&self) -> bool {
        matches!(self.cov, Covariance::Full(_))
    }

    pub fn variances(&self) -> Vec<T> {
        match &self.cov {
            Covariance::Full(m) => m.diag(),
            Covariance::Diagonal(d) => d.clone(),
        }
    }

    pub fn covariance_matrix(&self) -> Matrix<T> {
        match &self.cov {
            Covariance::Full(m) => m.clone(),
            Covariance::Diagonal(d) => Matrix::from_diag(d),
        }
    }

    /// Keeps only the marginal variances.
    pub fn diagonalized(&self) -> Self {
        GaussApprox {
            cov: Covariance::Diagonal(self.variances()),
            ..self.clone()
        }
    }

    /// `J Σ Jᵀ` for a `K×P` Jacobian; diagonal covariances give
    /// `Σⱼ Σⱼⱼ J_kj J_lj`.
    pub fn output_covariance(&self, jac: &Matrix<T>) -> Result<Matrix<T>> {
        ensure_len("jacobian columns", self.dim(), jac.cols())?;
        match &self.cov {
            Covariance::Full(m) => {
                let mut out = m.congruence(jac)?;
                out.symmetrize();
                Ok(out)
            }
            Covariance::Diagonal(d) => {
                let k = jac.rows();
                Ok(Matrix::from_fn(k, k, |a, b| {
                    jac.row(a).iter().zip(jac.row(b)).zip(d).map(|((&x, &y), &v)| x * v * y).sum()
                }))
            }
        }
    }

    /// `n` i.i.d. draws; full covariances use their Cholesky factor.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<T>>> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        let mut rng = seeded(seed);
        let p = self.dim();
        match &self.cov {
            Covariance::Diagonal(d) => {
                let sd: Vec<T> = d.iter().map(|v| v.sqrt()).collect();
                Ok((0..n)
                    .map(|_| {
                        let z: Vec<T> = normal_vec(&mut rng, p);
                        self.mean.iter().zip(&z).zip(&sd).map(|((&m, &z), &s)| m + s * z).collect()
                    })
                    .collect())
            }
            Covariance::Full(m) => {
                let chol = Cholesky::new(m)?;
                let l = chol.lower();
                Ok((0..n)
                    .map(|_| {
                        let z: Vec<T> = normal_vec(&mut rng, p);
                        let mut w = self.mean.0.clone();
                        for (i, wi) in w.iter_mut().enumerate() {
                            *wi += dot(&l.row(i)[..=i], &z[..=i]);
                        }
                        w
                    })
                    .collect())
            }
        }
    }
}

/// `Σᵢ JᵢᵀΛᵢJᵢ + δI` at `w`.
pub fn laplace_ggn_precision<T: Scalar, M: Model<T>>(
    obj: &Objective<'_, T, M>,
    w: &[T],
    mode: CurvatureMode,
) -> Result<Curvature<T>> {
    ensure_len("parameter vector", obj.param_count(), w.len())?;
    Ok(obj.grad_ggn(w, mode)?.ggn.with_prior(obj.delta))
}

/// Laplace approximation with the GGN in place of the Hessian, centred at
/// `w_star`. Logs a warning when `w_star` is visibly non-stationary.
pub fn laplace_ggn<T: Scalar, M: Model<T>>(
    obj: &Objective<'_, T, M>,
    w_star: &[T],
    mode: CurvatureMode,
) -> Result<GaussApprox<T>> {
    if !(obj.delta > T::zero()) {
        return Err(Error::InvalidArgument("Laplace approximation needs delta > 0".into()));
    }
    let gc = obj.grad_ggn(w_star, mode)?;
    let mut g = gc.data_grad;
    axpy(obj.delta, w_star, &mut g);
    let grad_norm = dot(&g, &g).sqrt();
    if grad_norm > T::lit(STATIONARITY_WARNING) {
        log::warn!("Laplace anchor is not stationary: gradient norm {:e}", grad_norm.to_f64_lossy());
    }
    GaussApprox::from_precision(w_star.to_vec(), &gc.ggn.with_prior(obj.delta), ApproxKind::LaplaceGgn, obj.delta)
}

/// `q_t = N(μ_t, (S_t + δI)⁻¹)` from a VOGN state.
pub fn vi_posterior<T: Scalar>(state: &VognState<T>) -> Result<GaussApprox<T>> {
    if !(state.delta > T::zero()) {
        return Err(Error::InvalidArgument("VI posterior needs delta > 0".into()));
    }
    GaussApprox::from_precision(state.mu.clone(), &state.s.with_prior(state.delta), ApproxKind::Vi, state.delta)
}
