//! Per-example losses `ℓ(y, f)` with their output-space derivatives:
//! the residual `r = ∇_f ℓ` and the noise precision `Λ = ∇²_ff ℓ`.
//!
//! The parameter gradient factorizes as `Jᵀr` and the generalized
//! Gauss-Newton term as `JᵀΛJ`; both helpers live here.
//!
//! Softmax precision is rank `K−1` (its null space is the all-ones
//! vector). Anything that needs `Λ⁻¹` asks for
//! [`LossKind::damped_noise_precision`], which adds [`SOFTMAX_DAMPING`] to
//! the diagonal; GGN and kernel computations use the undamped matrix.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::linalg::Matrix;
use crate::model::Jacobian;
use crate::scalar::{sigmoid, softplus, Scalar};

/// Diagonal damping added to the softmax noise precision before inversion.
pub const SOFTMAX_DAMPING: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LossKind<T> {
    /// `½σ⁻²‖y − f‖²`
    Squared { sigma2: T },
    /// Bernoulli negative log-likelihood on a scalar logit.
    Logistic,
    /// Categorical negative log-likelihood on `num_classes` logits.
    Softmax { num_classes: usize },
}

/// Supervision for one example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target<T> {
    Real(Vec<T>),
    Class(usize),
}

impl<T: Scalar> LossKind<T> {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::Squared { sigma2 } if !(sigma2 > T::zero() && sigma2.is_finite()) => Err(
                Error::InvalidArgument(format!("squared loss needs sigma2 > 0, got {sigma2}")),
            ),
            LossKind::Softmax { num_classes } if num_classes < 2 => Err(Error::InvalidArgument(
                "softmax loss needs at least two classes".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Required output dimension, if the loss fixes one.
    pub fn output_dim(&self) -> Option<usize> {
        match *self {
            LossKind::Squared { .. } => None,
            LossKind::Logistic => Some(1),
            LossKind::Softmax { num_classes } => Some(num_classes),
        }
    }

    pub fn is_classification(&self) -> bool {
        !matches!(self, LossKind::Squared { .. })
    }

    fn check_output(&self, f: &[T]) -> Result<()> {
        if let Some(k) = self.output_dim() {
            ensure_len("loss output dimension", k, f.len())?;
        }
        Ok(())
    }

    fn check_target(&self, y: &Target<T>, f: &[T]) -> Result<()> {
        self.check_output(f)?;
        match (self, y) {
            (LossKind::Squared { .. }, Target::Real(v)) => ensure_len("regression target", f.len(), v.len()),
            (LossKind::Logistic, Target::Class(c)) if *c <= 1 => Ok(()),
            (LossKind::Softmax { num_classes }, Target::Class(c)) if c < num_classes => Ok(()),
            _ => Err(Error::InvalidTarget(format!("{y:?} for {self:?}"))),
        }
    }

    pub fn loss_value(&self, y: &Target<T>, f: &[T]) -> Result<T> {
        self.check_target(y, f)?;
        Ok(match (self, y) {
            (LossKind::Squared { sigma2 }, Target::Real(v)) => {
                let sq: T = f.iter().zip(v).map(|(&a, &b)| (a - b) * (a - b)).sum();
                T::lit(0.5) * sq / *sigma2
            }
            (LossKind::Logistic, Target::Class(c)) => {
                softplus(f[0]) - if *c == 1 { f[0] } else { T::zero() }
            }
            (LossKind::Softmax { .. }, Target::Class(c)) => log_sum_exp(f) - f[*c],
            _ => unreachable!("target checked"),
        })
    }

    /// `r = ∇_f ℓ(y, f)`
    pub fn residual(&self, y: &Target<T>, f: &[T]) -> Result<Vec<T>> {
        self.check_target(y, f)?;
        Ok(match (self, y) {
            (LossKind::Squared { sigma2 }, Target::Real(v)) => {
                f.iter().zip(v).map(|(&a, &b)| (a - b) / *sigma2).collect()
            }
            (LossKind::Logistic, Target::Class(c)) => vec![sigmoid(f[0]) - T::from_count(*c)],
            (LossKind::Softmax { .. }, Target::Class(c)) => {
                let mut p = softmax(f);
                p[*c] -= T::one();
                p
            }
            _ => unreachable!("target checked"),
        })
    }

    /// `Λ = ∇²_ff ℓ`, independent of the target for all three losses.
    pub fn noise_precision(&self, f: &[T]) -> Result<Matrix<T>> {
        self.check_output(f)?;
        Ok(match *self {
            LossKind::Squared { sigma2 } => {
                let mut m = Matrix::identity(f.len());
                m.scale_in_place(T::one() / sigma2);
                m
            }
            // σ(f)σ(−f) stays positive where 1 − σ(f) would round to zero.
            LossKind::Logistic => Matrix::from_diag(&[sigmoid(f[0]) * sigmoid(-f[0])]),
            LossKind::Softmax { .. } => {
                let p = softmax(f);
                let k = p.len();
                Matrix::from_fn(k, k, |i, j| if i == j { p[i] - p[i] * p[i] } else { -p[i] * p[j] })
            }
        })
    }

    /// Noise precision safe to invert: softmax gets `ε·I` added.
    pub fn damped_noise_precision(&self, f: &[T]) -> Result<Matrix<T>> {
        let mut lam = self.noise_precision(f)?;
        if let LossKind::Softmax { .. } = self {
            lam.add_to_diag(T::lit(SOFTMAX_DAMPING));
        }
        Ok(lam)
    }

    /// Mean of `y` given the output: identity, sigmoid or softmax.
    pub fn link(&self, f: &[T]) -> Vec<T> {
        match self {
            LossKind::Squared { .. } => f.to_vec(),
            LossKind::Logistic => vec![sigmoid(f[0])],
            LossKind::Softmax { .. } => softmax(f),
        }
    }
}

pub fn log_sum_exp<T: Scalar>(f: &[T]) -> T {
    let m = f.iter().copied().fold(T::neg_infinity(), T::max);
    m + f.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

pub fn softmax<T: Scalar>(f: &[T]) -> Vec<T> {
    let m = f.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = f.iter().map(|&v| (v - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Free-function form of [`LossKind::loss_value`].
pub fn loss_value<T: Scalar>(kind: &LossKind<T>, y: &Target<T>, f: &[T]) -> Result<T> {
    kind.loss_value(y, f)
}

pub fn residual<T: Scalar>(kind: &LossKind<T>, y: &Target<T>, f: &[T]) -> Result<Vec<T>> {
    kind.residual(y, f)
}

pub fn noise_precision<T: Scalar>(kind: &LossKind<T>, f: &[T]) -> Result<Matrix<T>> {
    kind.noise_precision(f)
}

/// Parameter gradient through the factorization `∇_w ℓ = Jᵀ r`.
pub fn grad_via_identity<T: Scalar>(kind: &LossKind<T>, y: &Target<T>, jac: &Jacobian<T>) -> Result<Vec<T>> {
    let r = kind.residual(y, &jac.output)?;
    jac.matrix.t_matvec(&r)
}

/// Generalized Gauss-Newton term `JᵀΛJ`.
pub fn ggn_term<T: Scalar>(jac: &Matrix<T>, lam: &Matrix<T>) -> Result<Matrix<T>> {
    let p = jac.cols();
    let mut out = Matrix::zeros(p, p);
    out.add_congruence(jac, lam, T::one())?;
    Ok(out)
}

/// Diagonal of `JᵀΛJ` using only `diag(Λ)`: `Σ_k Λ_kk J_kj²`.
pub fn ggn_diagonal<T: Scalar>(jac: &Matrix<T>, lam: &Matrix<T>, out: &mut [T]) -> Result<()> {
    ensure_len("ggn diagonal", jac.cols(), out.len())?;
    ensure_len("noise precision", jac.rows(), lam.rows())?;
    for k in 0..jac.rows() {
        let l = lam[(k, k)];
        for (o, &j) in out.iter_mut().zip(jac.row(k)) {
            *o += l * j * j;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, Mlp, MlpConfig, Model};
    use crate::rng::{normal_vec, seeded};
    use proptest::prelude::*;

    const SQ1: LossKind<f64> = LossKind::Squared { sigma2: 1.0 };

    fn real(v: &[f64]) -> Target<f64> {
        Target::Real(v.to_vec())
    }

    #[test]
    fn loss_values() {
        assert_eq!(SQ1.loss_value(&real(&[1.0]), &[2.0]).unwrap(), 0.5);
        let l = LossKind::<f64>::Logistic.loss_value(&Target::Class(1), &[0.0]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let s = LossKind::Softmax { num_classes: 3 }
            .loss_value(&Target::Class(0), &[0.0, 0.0, 0.0])
            .unwrap();
        assert!((s - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn residuals() {
        assert_eq!(SQ1.residual(&real(&[1.0]), &[2.0]).unwrap(), vec![1.0]);
        assert_eq!(LossKind::<f64>::Logistic.residual(&Target::Class(1), &[0.0]).unwrap(), vec![-0.5]);
        assert_eq!(
            LossKind::<f64>::Softmax { num_classes: 2 }.residual(&Target::Class(0), &[0.0, 0.0]).unwrap(),
            vec![-0.5, 0.5]
        );
    }

    #[test]
    fn noise_precisions() {
        let sq = LossKind::Squared { sigma2: 4.0 };
        let lam = sq.noise_precision(&[0.3, -2.0]).unwrap();
        assert_eq!(lam, Matrix::from_diag(&[0.25, 0.25]));
        assert_eq!(LossKind::<f64>::Logistic.noise_precision(&[0.0]).unwrap()[(0, 0)], 0.25);
        let lam = LossKind::<f64>::Softmax { num_classes: 2 }.noise_precision(&[0.0, 0.0]).unwrap();
        assert_eq!(lam.as_slice(), &[0.25, -0.25, -0.25, 0.25]);
    }

    #[test]
    fn invalid_targets_and_dims() {
        assert!(matches!(
            LossKind::<f64>::Logistic.loss_value(&Target::Class(2), &[0.0]),
            Err(Error::InvalidTarget(_))
        ));
        assert!(matches!(
            LossKind::<f64>::Softmax { num_classes: 3 }.residual(&Target::Class(3), &[0.0; 3]),
            Err(Error::InvalidTarget(_))
        ));
        assert!(matches!(SQ1.residual(&Target::Class(0), &[0.0]), Err(Error::InvalidTarget(_))));
        assert!(matches!(
            LossKind::<f64>::Logistic.noise_precision(&[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(LossKind::Squared { sigma2: 0.0f64 }.validate().is_err());
        assert!(LossKind::<f64>::Softmax { num_classes: 1 }.validate().is_err());
    }

    #[test]
    fn gradient_identity_linear_and_zero_residual() {
        // f = w·x (no bias): gradient x(wx − y).
        let m = crate::model::LinearBasisModel::new(1, 1);
        let (w, x, y) = (1.5, 2.0, 0.5);
        let jac = m.jacobian(&[w], &[x]).unwrap();
        let g = grad_via_identity(&SQ1, &real(&[y]), &jac).unwrap();
        assert!((g[0] - x * (w * x - y)).abs() < 1e-15);

        let g = grad_via_identity(&SQ1, &real(&[w * x]), &jac).unwrap();
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn gradient_identity_matches_finite_differences_on_mlp() {
        let mut rng = seeded(17);
        let mlp = Mlp::new(MlpConfig::new(2, vec![5], 3, Activation::Tanh)).unwrap();
        let kind = LossKind::Softmax { num_classes: 3 };
        let y = Target::Class(2);
        let w: Vec<f64> = normal_vec(&mut rng, Model::<f64>::param_count(&mlp));
        let x = [0.3, -0.8];
        let jac = mlp.jacobian(&w, &x).unwrap();
        let g = grad_via_identity(&kind, &y, &jac).unwrap();
        let h = 1e-5;
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for j in 0..w.len() {
            let mut wp = w.clone();
            wp[j] += h;
            let lp = kind.loss_value(&y, &mlp.forward(&wp, &x).unwrap()).unwrap();
            wp[j] -= 2.0 * h;
            let lm = kind.loss_value(&y, &mlp.forward(&wp, &x).unwrap()).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-5 * gmax);
        }
    }

    #[test]
    fn ggn_identity_and_linear_exactness() {
        let j = Matrix::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.5, -1.0, 0.0]]).unwrap();
        let g = ggn_term(&j, &Matrix::identity(2)).unwrap();
        assert_eq!(g, j.transpose().matmul(&j).unwrap());

        // f = Φw with squared loss: the loss Hessian is σ⁻²ΦᵀΦ everywhere.
        let sq = LossKind::Squared { sigma2: 0.5 };
        let lam = sq.noise_precision(&[0.0, 0.0]).unwrap();
        let ggn = ggn_term(&j, &lam).unwrap();
        let exact = j.transpose().matmul(&j).unwrap().scale(2.0);
        assert!(ggn.sub(&exact).unwrap().max_abs() < 1e-15);

        let mut diag = vec![0.0; 3];
        ggn_diagonal(&j, &lam, &mut diag).unwrap();
        assert_eq!(diag, ggn.diag());
    }

    #[test]
    fn softmax_null_space_is_ones() {
        let lam = LossKind::<f64>::Softmax { num_classes: 4 }.noise_precision(&[0.3, -1.0, 2.0, 0.1]).unwrap();
        for i in 0..4 {
            assert!(lam.row(i).iter().sum::<f64>().abs() < 1e-12);
        }
        let damped = LossKind::<f64>::Softmax { num_classes: 4 }.damped_noise_precision(&[0.3, -1.0, 2.0, 0.1]).unwrap();
        assert!(crate::linalg::cholesky(&damped).is_ok());
    }

    fn arb_case() -> impl Strategy<Value = (LossKind<f64>, Target<f64>, Vec<f64>)> {
        prop_oneof![
            (0.1f64..4.0, prop::collection::vec(-3.0f64..3.0, 2), prop::collection::vec(-3.0f64..3.0, 2))
                .prop_map(|(s, y, f)| (LossKind::Squared { sigma2: s }, Target::Real(y), f)),
            (0usize..2, -6.0f64..6.0).prop_map(|(c, f)| (LossKind::Logistic, Target::Class(c), vec![f])),
            (0usize..3, prop::collection::vec(-4.0f64..4.0, 3))
                .prop_map(|(c, f)| (LossKind::Softmax { num_classes: 3 }, Target::Class(c), f)),
        ]
    }

    proptest! {
        #[test]
        fn derivatives_match_finite_differences((kind, y, f) in arb_case()) {
            let r = kind.residual(&y, &f).unwrap();
            let lam = kind.noise_precision(&f).unwrap();
            let h = 1e-6;
            for i in 0..f.len() {
                let mut fp = f.clone();
                fp[i] += h;
                let mut fm = f.clone();
                fm[i] -= h;
                let d = (kind.loss_value(&y, &fp).unwrap() - kind.loss_value(&y, &fm).unwrap()) / (2.0 * h);
                prop_assert!((d - r[i]).abs() < 1e-6);

                let h2 = 1e-5;
                let mut fp = f.clone();
                fp[i] += h2;
                let mut fm = f.clone();
                fm[i] -= h2;
                let rp = kind.residual(&y, &fp).unwrap();
                let rm = kind.residual(&y, &fm).unwrap();
                for k in 0..f.len() {
                    prop_assert!(((rp[k] - rm[k]) / (2.0 * h2) - lam[(k, i)]).abs() < 1e-5);
                }
            }
            prop_assert_eq!(lam.asymmetry(), 0.0);
            if !matches!(kind, LossKind::Softmax { .. }) {
                prop_assert!(crate::linalg::cholesky(&lam).is_ok());
            }
        }
    }
}
