//! From a Gaussian posterior over network weights to an equivalent
//! linear model and Gaussian process.
//!
//! At an anchor `w`, each datum becomes a pseudo-observation
//! `ỹᵢ = Jᵢw − Λᵢ⁻¹rᵢ` with noise precision `Λᵢ`. A linear model
//! `ỹ = J(x)w + ε` over these points reproduces the Laplace-GGN posterior
//! (and, with the prior from [`voggn_linear_prior`], one VOGGN step), and
//! its function-space form is a GP with kernel `δ⁻¹J(x)J(x′)ᵀ`.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{ensure_len, Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::loss::LossKind;
use crate::model::Model;
use crate::posterior::{Covariance, GaussApprox};
use crate::scalar::{dot, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformedSample<T> {
    pub x: Vec<T>,
    pub y_tilde: Vec<T>,
    /// Noise precision of the pseudo-observation (damped for softmax).
    pub lam: Matrix<T>,
    /// `K×P` Jacobian at the point the sample was linearized.
    pub jac: Matrix<T>,
    pub residual: Vec<T>,
}

impl<T: Scalar> TransformedSample<T> {
    /// `J·w − Λ⁻¹r` from the stored parts.
    pub fn recompute(&self, w_anchor: &[T]) -> Result<Vec<T>> {
        let jw = self.jac.matvec(w_anchor)?;
        let correction = invert_noise(&self.lam)?.solve(&self.residual)?;
        Ok(jw.iter().zip(&correction).map(|(&a, &b)| a - b).collect())
    }

    /// Multiplies the noise precision by `scale`.
    pub fn with_precision_scale(mut self, scale: T) -> Self {
        self.lam.scale_in_place(scale);
        self
    }
}

/// Whether softmax noise precisions get the loss module's diagonal damping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Damping {
    #[default]
    Default,
    None,
}

fn invert_noise<T: Scalar>(lam: &Matrix<T>) -> Result<Cholesky<T>> {
    Cholesky::new(lam).map_err(|e| match e {
        Error::NotPositiveDefinite { .. } | Error::NotSymmetric { .. } => Error::SingularNoisePrecision,
        other => other,
    })
}

fn transform_one<T: Scalar, M: Model<T>>(
    model: &M,
    loss: &LossKind<T>,
    data: &Dataset<T>,
    i: usize,
    eval_at: &[T],
    anchor: &[T],
    damping: Damping,
) -> Result<TransformedSample<T>> {
    let jac = model.jacobian(eval_at, data.input(i))?;
    let residual = loss.residual(&data.target(i), &jac.output)?;
    let lam = match damping {
        Damping::Default => loss.damped_noise_precision(&jac.output)?,
        Damping::None => loss.noise_precision(&jac.output)?,
    };
    let correction = invert_noise(&lam)?.solve(&residual)?;
    let jw = jac.matrix.matvec(anchor)?;
    let y_tilde = jw.iter().zip(&correction).map(|(&a, &b)| a - b).collect();
    Ok(TransformedSample {
        x: jac.input,
        y_tilde,
        lam,
        jac: jac.matrix,
        residual,
    })
}

/// One pseudo-observation per datum, linearized at `anchor`.
pub fn transform_dataset<T: Scalar, M: Model<T>>(
    model: &M,
    loss: &LossKind<T>,
    data: &Dataset<T>,
    anchor: &[T],
    damping: Damping,
) -> Result<Vec<TransformedSample<T>>> {
    ensure_len("anchor", model.param_count(), anchor.len())?;
    (0..data.len())
        .map(|i| transform_one(model, loss, data, i, anchor, anchor, damping))
        .collect()
}

/// Multi-sample construction for one VOGGN step: for each datum and each
/// sample `w_s`, Jacobian, residual and precision are taken at `w_s`, the
/// pseudo-output is anchored at `mean`, and the precision is scaled by
/// `β/S`. Output is datum-major.
pub fn transform_stacked<T: Scalar, M: Model<T>>(
    model: &M,
    loss: &LossKind<T>,
    data: &Dataset<T>,
    mean: &[T],
    samples: &[Vec<T>],
    beta: T,
) -> Result<Vec<TransformedSample<T>>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("stacked transform needs at least one sample".into()));
    }
    ensure_len("anchor", model.param_count(), mean.len())?;
    let scale = beta / T::from_count(samples.len());
    let mut out = Vec::with_capacity(data.len() * samples.len());
    for i in 0..data.len() {
        for w in samples {
            ensure_len("sample", mean.len(), w.len())?;
            out.push(transform_one(model, loss, data, i, w, mean, Damping::Default)?.with_precision_scale(scale));
        }
    }
    Ok(out)
}

/// `N(mean, precision⁻¹)` over weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior<T> {
    pub mean: Vec<T>,
    pub precision: Matrix<T>,
}

impl<T: Scalar> GaussianPrior<T> {
    /// `N(0, δ⁻¹I)`
    pub fn isotropic(p: usize, delta: T) -> Self {
        let mut precision = Matrix::identity(p);
        precision.scale_in_place(delta);
        GaussianPrior {
            mean: vec![T::zero(); p],
            precision,
        }
    }

    pub fn covariance(&self) -> Result<Matrix<T>> {
        Ok(Cholesky::new(&self.precision)?.inverse())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModelPosterior<T> {
    pub mean: Vec<T>,
    pub cov: Matrix<T>,
    pub precision: Matrix<T>,
    pub prior: GaussianPrior<T>,
}

impl<T: Scalar> LinearModelPosterior<T> {
    /// Predictive of `ỹ*` at a test Jacobian: mean `J*m`, epistemic
    /// `J*ΣJ*ᵀ`, aleatoric `Λ*⁻¹`.
    pub fn predictive(&self, jac: &Matrix<T>, lam: &Matrix<T>) -> Result<PredictiveDist<T>> {
        let mean = jac.matvec(&self.mean)?;
        let mut epistemic = self.cov.congruence(jac)?;
        epistemic.symmetrize();
        ensure_len("test noise precision", jac.rows(), lam.rows())?;
        let aleatoric = invert_noise(lam)?.inverse();
        PredictiveDist::new(mean, aleatoric, epistemic, PredictiveSpace::YTilde)
    }
}

/// Exact posterior of `ỹᵢ = Jᵢw + εᵢ`, `εᵢ ~ N(0, Λᵢ⁻¹)`, under `prior`.
pub fn linear_posterior<T: Scalar>(
    samples: &[TransformedSample<T>],
    prior: &GaussianPrior<T>,
) -> Result<LinearModelPosterior<T>> {
    let p = prior.mean.len();
    ensure_len("prior precision", p, prior.precision.rows())?;
    let mut precision = prior.precision.clone();
    let mut rhs = prior.precision.matvec(&prior.mean)?;
    for s in samples {
        ensure_len("sample jacobian", p, s.jac.cols())?;
        precision.add_congruence(&s.jac, &s.lam, T::one())?;
        let lam_y = s.lam.matvec(&s.y_tilde)?;
        let contrib = s.jac.t_matvec(&lam_y)?;
        for (r, c) in rhs.iter_mut().zip(contrib) {
            *r += c;
        }
    }
    let chol = Cholesky::new(&precision)?;
    let mean = chol.solve(&rhs)?;
    Ok(LinearModelPosterior {
        mean,
        cov: chol.inverse(),
        precision,
        prior: prior.clone(),
    })
}

/// Prior of the linear model matching one VOGGN step from a state with
/// mean `μ_t` and precision `Σ_t⁻¹`:
/// `V_t⁻¹ = (1−β)Σ_t⁻¹ + βδI`, `m_t = (1−β)V_tΣ_t⁻¹μ_t`.
/// Pair it with likelihood precision `βΛ`.
pub fn voggn_linear_prior_from_precision<T: Scalar>(
    mean: &[T],
    precision: &Matrix<T>,
    beta: T,
    delta: T,
) -> Result<GaussianPrior<T>> {
    if !(beta > T::zero() && beta <= T::one()) {
        return Err(Error::InvalidArgument(format!("beta must lie in (0, 1], got {beta}")));
    }
    ensure_len("state precision", mean.len(), precision.rows())?;
    let keep = T::one() - beta;
    let mut v_inv = precision.scale(keep);
    v_inv.add_to_diag(beta * delta);
    let mut rhs = precision.matvec(mean)?;
    rhs.iter_mut().for_each(|v| *v *= keep);
    let m = Cholesky::new(&v_inv)?.solve(&rhs)?;
    Ok(GaussianPrior {
        mean: m,
        precision: v_inv,
    })
}

/// [`voggn_linear_prior_from_precision`] for a covariance-form approximation.
pub fn voggn_linear_prior<T: Scalar>(q: &GaussApprox<T>, beta: T, delta: T) -> Result<GaussianPrior<T>> {
    let precision = match &q.cov {
        Covariance::Full(c) => Cholesky::new(c)?.inverse(),
        Covariance::Diagonal(d) => Matrix::from_diag(&d.iter().map(|&v| T::one() / v).collect::<Vec<_>>()),
    };
    voggn_linear_prior_from_precision(&q.mean, &precision, beta, delta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelMatrix<T> {
    pub entries: Matrix<T>,
    pub delta: T,
    pub summarized: bool,
    /// Outputs per datum `K`; block `(i, j)` is `K×K` unless summarized.
    pub outputs: usize,
}

impl<T: Scalar> KernelMatrix<T> {
    pub fn dim(&self) -> usize {
        self.entries.rows()
    }
}

/// `δ⁻¹JᵢJⱼᵀ` for every pair; summarized mode keeps `Σ_k [JᵢJⱼᵀ]_kk / δ`.
pub fn ntk_kernel<T: Scalar>(jacs: &[Matrix<T>], delta: T, summarized: bool) -> Result<KernelMatrix<T>> {
    if !(delta > T::zero()) {
        return Err(Error::InvalidArgument(format!("kernel needs delta > 0, got {delta}")));
    }
    let (k, p) = jacs.first().map_or((1, 0), |j| (j.rows(), j.cols()));
    for j in jacs {
        ensure_len("jacobian columns", p, j.cols())?;
        ensure_len("jacobian rows", k, j.rows())?;
    }
    let n = jacs.len();
    let entries = if summarized {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut s = T::zero();
                for c in 0..k {
                    s += dot(jacs[i].row(c), jacs[j].row(c)) / delta;
                }
                m[(i, j)] = s;
                m[(j, i)] = s;
            }
        }
        m
    } else {
        let mut m = Matrix::zeros(n * k, n * k);
        for i in 0..n {
            for j in i..n {
                for a in 0..k {
                    for b in 0..k {
                        let v = dot(jacs[i].row(a), jacs[j].row(b)) / delta;
                        m[(i * k + a, j * k + b)] = v;
                        m[(j * k + b, i * k + a)] = v;
                    }
                }
            }
        }
        m
    };
    Ok(KernelMatrix {
        entries,
        delta,
        summarized,
        outputs: k,
    })
}

/// Posterior mean of the GP's function values: `J·w_*`.
pub fn gp_posterior_mean<T: Scalar>(jac: &Matrix<T>, w_star: &[T]) -> Result<Vec<T>> {
    jac.matvec(w_star)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictiveSpace {
    YTilde,
    Y,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDist<T> {
    pub mean: Vec<T>,
    pub aleatoric: Matrix<T>,
    pub epistemic: Matrix<T>,
    pub space: PredictiveSpace,
}

impl<T: Scalar> PredictiveDist<T> {
    pub fn new(mean: Vec<T>, aleatoric: Matrix<T>, epistemic: Matrix<T>, space: PredictiveSpace) -> Result<Self> {
        let k = mean.len();
        for m in [&aleatoric, &epistemic] {
            ensure_len("predictive variance rows", k, m.rows())?;
            ensure_len("predictive variance cols", k, m.cols())?;
        }
        Ok(PredictiveDist {
            mean,
            aleatoric,
            epistemic,
            space,
        })
    }

    pub fn total(&self) -> Matrix<T> {
        self.aleatoric.add(&self.epistemic).expect("shapes checked at construction")
    }

    pub fn aleatoric_diag(&self) -> Vec<T> {
        self.aleatoric.diag()
    }

    pub fn epistemic_diag(&self) -> Vec<T> {
        self.epistemic.diag()
    }

    pub fn total_diag(&self) -> Vec<T> {
        self.total().diag()
    }
}

/// `y*` predictive for squared loss: mean `f(x*)`, epistemic `JΣJᵀ`,
/// aleatoric `σ²I`.
pub fn predict_regression<T: Scalar, M: Model<T>>(
    model: &M,
    sigma2: T,
    anchor: &GaussApprox<T>,
    x: &[T],
) -> Result<PredictiveDist<T>> {
    let jac = model.jacobian(&anchor.mean, x)?;
    let epistemic = anchor.output_covariance(&jac.matrix)?;
    let mut aleatoric = Matrix::identity(jac.output.len());
    aleatoric.scale_in_place(sigma2);
    PredictiveDist::new(jac.output, aleatoric, epistemic, PredictiveSpace::Y)
}

/// `y*` predictive for a logistic output: mean `σ(f)`, aleatoric
/// `λ = σ(f)(1 − σ(f))`, epistemic `λ²JΣJᵀ`.
pub fn predict_classification<T: Scalar, M: Model<T>>(
    model: &M,
    anchor: &GaussApprox<T>,
    x: &[T],
) -> Result<PredictiveDist<T>> {
    let jac = model.jacobian(&anchor.mean, x)?;
    let kind = LossKind::<T>::Logistic;
    let lam = kind.noise_precision(&jac.output)?;
    let l = lam[(0, 0)];
    let epistemic = anchor.output_covariance(&jac.matrix)?.scale(l * l);
    PredictiveDist::new(kind.link(&jac.output), lam, epistemic, PredictiveSpace::Y)
}

/// `y*` predictive for softmax outputs: mean `softmax(f)`, aleatoric `Λ`,
/// epistemic `ΛJΣJᵀΛ`.
pub fn predict_multiclass<T: Scalar, M: Model<T>>(
    model: &M,
    num_classes: usize,
    anchor: &GaussApprox<T>,
    x: &[T],
) -> Result<PredictiveDist<T>> {
    let jac = model.jacobian(&anchor.mean, x)?;
    let kind = LossKind::<T>::Softmax { num_classes };
    let lam = kind.noise_precision(&jac.output)?;
    let mut epistemic = anchor.output_covariance(&jac.matrix)?.congruence(&lam)?;
    epistemic.symmetrize();
    PredictiveDist::new(kind.link(&jac.output), lam, epistemic, PredictiveSpace::Y)
}

/// Dispatches on the loss kind.
pub fn predict<T: Scalar, M: Model<T>>(
    model: &M,
    loss: &LossKind<T>,
    anchor: &GaussApprox<T>,
    x: &[T],
) -> Result<PredictiveDist<T>> {
    match *loss {
        LossKind::Squared { sigma2 } => predict_regression(model, sigma2, anchor, x),
        LossKind::Logistic => predict_classification(model, anchor, x),
        LossKind::Softmax { num_classes } => predict_multiclass(model, num_classes, anchor, x),
    }
}

/// Averages the predictive components over several linearization points
/// sharing one covariance (VI with multiple samples).
pub fn predict_averaged<T: Scalar, M: Model<T>>(
    model: &M,
    loss: &LossKind<T>,
    anchor: &GaussApprox<T>,
    points: &[Vec<T>],
    x: &[T],
) -> Result<PredictiveDist<T>> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("need at least one linearization point".into()));
    }
    let inv = T::one() / T::from_count(points.len());
    let mut acc: Option<PredictiveDist<T>> = None;
    for w in points {
        ensure_len("linearization point", anchor.dim(), w.len())?;
        let at = GaussApprox {
            mean: w.clone().into(),
            ..anchor.clone()
        };
        let d = predict(model, loss, &at, x)?;
        match &mut acc {
            None => {
                let mut d = d;
                d.mean.iter_mut().for_each(|v| *v *= inv);
                d.aleatoric.scale_in_place(inv);
                d.epistemic.scale_in_place(inv);
                acc = Some(d);
            }
            Some(a) => {
                for (m, v) in a.mean.iter_mut().zip(&d.mean) {
                    *m += inv * *v;
                }
                a.aleatoric.add_scaled(inv, &d.aleatoric)?;
                a.epistemic.add_scaled(inv, &d.epistemic)?;
            }
        }
    }
    Ok(acc.expect("at least one point"))
}

/// Parameter draws for [`mc_predict`]: the mean itself when `n` is odd,
/// then antithetic pairs `μ ± ε`.
pub fn mc_points<T: Scalar>(anchor: &GaussApprox<T>, n: usize, seed: u64) -> Result<Vec<Vec<T>>> {
    if n == 0 {
        return Err(Error::InvalidArgument("MC prediction needs at least one sample".into()));
    }
    let mut points = Vec::with_capacity(n);
    if n % 2 == 1 {
        points.push(anchor.mean.0.clone());
    }
    if n >= 2 {
        for w in anchor.sample(n / 2, seed)? {
            let mirrored = anchor.mean.iter().zip(&w).map(|(&m, &v)| m + m - v).collect();
            points.push(w);
            points.push(mirrored);
        }
    }
    Ok(points)
}

/// Monte-Carlo predictive from weight samples: mean and covariance of the
/// link outputs, plus the average label noise (`σ²I`, or `Λ(f)` for
/// classifiers).
pub fn mc_predict_at<T: Scalar, M: Model<T>>(
    model: &M,
    loss: &LossKind<T>,
    points: &[Vec<T>],
    x: &[T],
) -> Result<PredictiveDist<T>> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("MC prediction needs at least one sample".into()));
    }
    let n = points.len();
    let inv = T::one() / T::from_count(n);
    let mut outs = Vec::with_capacity(n);
    let mut aleatoric: Option<Matrix<T>> = None;
    for w in points {
        let f = model.forward(w, x)?;
        let noise = match *loss {
            LossKind::Squared { sigma2 } => {
                let mut m = Matrix::identity(f.len());
                m.scale_in_place(sigma2);
                m
            }
            _ => loss.noise_precision(&f)?,
        };
        match &mut aleatoric {
            None => aleatoric = Some(noise.scale(inv)),
            Some(a) => a.add_scaled(inv, &noise)?,
        }
        outs.push(loss.link(&f));
    }
    // Accumulate relative to the first draw: identical draws then give
    // that draw back exactly, with zero spread.
    let k = outs[0].len();
    let origin = outs[0].clone();
    let mut shift = vec![T::zero(); k];
    for o in &outs {
        for ((m, &v), &c) in shift.iter_mut().zip(o).zip(&origin) {
            *m += inv * (v - c);
        }
    }
    let mean: Vec<T> = origin.iter().zip(&shift).map(|(&c, &d)| c + d).collect();
    let mut epistemic = Matrix::zeros(k, k);
    if n >= 2 {
        let denom = T::one() / T::from_count(n - 1);
        for o in &outs {
            let dev: Vec<T> = (0..k).map(|a| (o[a] - origin[a]) - shift[a]).collect();
            for a in 0..k {
                for b in 0..k {
                    epistemic[(a, b)] += dev[a] * dev[b] * denom;
                }
            }
        }
    }
    PredictiveDist::new(mean, aleatoric.expect("n >= 1"), epistemic, PredictiveSpace::Y)
}

/// [`mc_predict_at`] with `n` draws from `anchor`.
pub fn mc_predict<T: Scalar, M: Model<T>>(
    model: &M,
    loss: &LossKind<T>,
    anchor: &GaussApprox<T>,
    x: &[T],
    n: usize,
    seed: u64,
) -> Result<PredictiveDist<T>> {
    mc_predict_at(model, loss, &mc_points(anchor, n, seed)?, x)
}
