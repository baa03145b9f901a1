//! End-to-end experiment pipelines: uncertainty in a gap of 1-D
//! regression data, aleatoric/epistemic split on two moons, and
//! hyperparameter selection by the linearized model's evidence.

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset};
use crate::dnn2gp::{mc_predict, predict_classification, predict_regression, transform_dataset, Damping};
use crate::error::{Error, Result};
use crate::evidence::{log_marginal_likelihood, sweep, CellMetrics, SweepTable};
use crate::linalg::Matrix;
use crate::loss::LossKind;
use crate::model::{Activation, Mlp, MlpConfig, Model};
use crate::objective::{CurvatureMode, Objective};
use crate::optim::{train, Optimizer, TrainOptions};
use crate::posterior::laplace_ggn;
use crate::rng::derive_seed;

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn logspace(lo_exp: f64, hi_exp: f64, n: usize) -> Vec<f64> {
    linspace(lo_exp, hi_exp, n).into_iter().map(|e| 10f64.powf(e)).collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn train_map<M: Model<f64>>(obj: &Objective<'_, f64, M>, alpha: f64, epochs: usize, seed: u64) -> Result<Vec<f64>> {
    let report = train(obj, &Optimizer::adam(alpha), &TrainOptions::full_batch(epochs, seed))?;
    Ok(report.final_params.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SnelsonSetup {
    pub n: usize,
    pub hidden: usize,
    pub sigma2: f64,
    pub delta: f64,
    pub epochs: usize,
    pub alpha: f64,
    pub grid: usize,
    pub mc_samples: usize,
}

impl Default for SnelsonSetup {
    fn default() -> Self {
        SnelsonSetup {
            n: 200,
            hidden: 32,
            sigma2: 0.0625,
            delta: 0.01,
            epochs: 8000,
            alpha: 0.01,
            grid: 200,
            mc_samples: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnelsonOutcome {
    pub seed: u64,
    /// Mean full-Laplace epistemic variance over grid points in the gap.
    pub gap_epistemic: f64,
    /// Same over grid points inside the data range but outside the gap.
    pub support_epistemic: f64,
    /// Diagonal-Laplace MC epistemic variance over the gap.
    pub baseline_gap_epistemic: f64,
    pub ratio: f64,
}

impl SnelsonOutcome {
    pub fn ratio_holds(&self, factor: f64) -> bool {
        self.ratio >= factor
    }

    pub fn exceeds_baseline(&self) -> bool {
        self.gap_epistemic > self.baseline_gap_epistemic
    }
}

/// Trains on Snelson-like data with the gap removed, then compares
/// epistemic variance inside and outside the gap.
pub fn snelson_gap(seed: u64, setup: &SnelsonSetup) -> Result<SnelsonOutcome> {
    let data = data::apply_gap(&data::snelson_like::<f64>(derive_seed(seed, 0), setup.n)?);
    snelson_on(&data, seed, setup)
}

pub fn snelson_on(data: &Dataset<f64>, seed: u64, setup: &SnelsonSetup) -> Result<SnelsonOutcome> {
    let model = Mlp::new(MlpConfig::new(1, vec![setup.hidden], 1, Activation::Sigmoid))?;
    let loss = LossKind::Squared { sigma2: setup.sigma2 };
    let obj = Objective::new(&model, &loss, data, setup.delta)?;
    let w = train_map(&obj, setup.alpha, setup.epochs, derive_seed(seed, 1))?;
    let full = laplace_ggn(&obj, &w, CurvatureMode::Full)?;
    let diag = laplace_ggn(&obj, &w, CurvatureMode::Diagonal)?;

    let xs: Vec<f64> = (0..data.len()).map(|i| data.input(i)[0]).collect();
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut gap, mut support, mut baseline) = (Vec::new(), Vec::new(), Vec::new());
    let mc_seed = derive_seed(seed, 2);
    for x in linspace(lo, hi, setup.grid) {
        let v = predict_regression(&model, setup.sigma2, &full, &[x])?.epistemic_diag()[0];
        if data::in_snelson_gap(x) {
            gap.push(v);
            let mc = mc_predict(&model, &loss, &diag, &[x], setup.mc_samples, mc_seed)?;
            baseline.push(mc.epistemic_diag()[0]);
        } else {
            support.push(v);
        }
    }
    if gap.is_empty() || support.is_empty() {
        return Err(Error::InvalidArgument("evaluation grid misses the gap or the support".into()));
    }
    let (g, s) = (mean(&gap), mean(&support));
    Ok(SnelsonOutcome {
        seed,
        gap_epistemic: g,
        support_epistemic: s,
        baseline_gap_epistemic: mean(&baseline),
        ratio: g / s,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MoonsSetup {
    pub n: usize,
    pub noise: f64,
    pub hidden: usize,
    pub delta: f64,
    pub epochs: usize,
    pub alpha: f64,
    /// Points per axis of the evaluation grid.
    pub grid: usize,
    /// How far the grid extends past the data on every side.
    pub margin: f64,
    pub boundary_band: f64,
    pub far_distance: f64,
    pub near_distance: f64,
}

impl Default for MoonsSetup {
    fn default() -> Self {
        MoonsSetup {
            n: 100,
            noise: 0.2,
            hidden: 10,
            delta: 0.26,
            epochs: 5000,
            alpha: 0.03,
            grid: 50,
            margin: 3.0,
            boundary_band: 0.2,
            far_distance: 2.0,
            near_distance: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoonsOutcome {
    pub seed: u64,
    pub train_accuracy: f64,
    pub boundary_aleatoric: f64,
    pub elsewhere_aleatoric: f64,
    pub far_epistemic: f64,
    pub near_epistemic: f64,
    pub counts: [usize; 4],
}

impl MoonsOutcome {
    pub fn aleatoric_holds(&self) -> bool {
        self.boundary_aleatoric > self.elsewhere_aleatoric
    }

    pub fn epistemic_holds(&self) -> bool {
        self.far_epistemic > self.near_epistemic
    }
}

/// Points where the logit changes sign along grid edges, by linear
/// interpolation between the neighbouring grid nodes.
fn zero_crossings(xs: &[f64], ys: &[f64], logit: &Matrix<f64>) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    let mut edge = |a: (usize, usize), b: (usize, usize)| {
        let (fa, fb) = (logit[a], logit[b]);
        if (fa <= 0.0) != (fb <= 0.0) {
            let t = fa / (fa - fb);
            let pa = [xs[a.1], ys[a.0]];
            let pb = [xs[b.1], ys[b.0]];
            out.push([pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]);
        }
    };
    for r in 0..ys.len() {
        for c in 0..xs.len() {
            if c + 1 < xs.len() {
                edge((r, c), (r, c + 1));
            }
            if r + 1 < ys.len() {
                edge((r, c), (r + 1, c));
            }
        }
    }
    out
}

fn nearest(p: [f64; 2], set: impl Iterator<Item = [f64; 2]>) -> f64 {
    set.map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
        .fold(f64::INFINITY, f64::min)
}

/// Trains a logistic MLP on two moons and averages the predictive variance
/// terms over regions of a grid around the data.
pub fn moons_decomposition(seed: u64, setup: &MoonsSetup) -> Result<MoonsOutcome> {
    let data = data::two_moons::<f64>(derive_seed(seed, 0), setup.n, setup.noise)?;
    let model = Mlp::new(MlpConfig::new(2, vec![setup.hidden], 1, Activation::Tanh))?;
    let loss = LossKind::Logistic;
    let obj = Objective::new(&model, &loss, &data, setup.delta)?;
    let w = train_map(&obj, setup.alpha, setup.epochs, derive_seed(seed, 1))?;
    let anchor = laplace_ggn(&obj, &w, CurvatureMode::Full)?;

    let labels = data.labels().expect("classification data");
    let correct = (0..data.len())
        .filter(|&i| model.forward(&w, data.input(i)).is_ok_and(|f| (f[0] > 0.0) == (labels[i] == 1)))
        .count();

    let pts: Vec<[f64; 2]> = (0..data.len()).map(|i| [data.input(i)[0], data.input(i)[1]]).collect();
    let bound = |k: usize| {
        let lo = pts.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
        linspace(lo - setup.margin, hi + setup.margin, setup.grid)
    };
    let (xs, ys) = (bound(0), bound(1));
    let mut logit = Matrix::zeros(ys.len(), xs.len());
    let mut alea = Matrix::zeros(ys.len(), xs.len());
    let mut epi = Matrix::zeros(ys.len(), xs.len());
    for (r, &y) in ys.iter().enumerate() {
        for (c, &x) in xs.iter().enumerate() {
            let d = predict_classification(&model, &anchor, &[x, y])?;
            logit[(r, c)] = model.forward(&w, &[x, y])?[0];
            alea[(r, c)] = d.aleatoric_diag()[0];
            epi[(r, c)] = d.epistemic_diag()[0];
        }
    }
    let crossings = zero_crossings(&xs, &ys, &logit);
    if crossings.is_empty() {
        return Err(Error::InvalidArgument("decision boundary does not cross the evaluation grid".into()));
    }
    let (mut band, mut rest, mut far, mut near) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (r, &y) in ys.iter().enumerate() {
        for (c, &x) in xs.iter().enumerate() {
            let p = [x, y];
            if nearest(p, crossings.iter().copied()) <= setup.boundary_band {
                band.push(alea[(r, c)]);
            } else {
                rest.push(alea[(r, c)]);
            }
            let to_data = nearest(p, pts.iter().copied());
            if to_data > setup.far_distance {
                far.push(epi[(r, c)]);
            } else if to_data <= setup.near_distance {
                near.push(epi[(r, c)]);
            }
        }
    }
    Ok(MoonsOutcome {
        seed,
        train_accuracy: correct as f64 / data.len() as f64,
        boundary_aleatoric: mean(&band),
        elsewhere_aleatoric: mean(&rest),
        far_epistemic: mean(&far),
        near_epistemic: mean(&near),
        counts: [band.len(), rest.len(), far.len(), near.len()],
    })
}

/// Network and training settings for one regression evidence cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionSetup {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub sigma2: f64,
    pub delta: f64,
    pub epochs: usize,
    pub alpha: f64,
}

fn mse<M: Model<f64>>(model: &M, w: &[f64], data: &Dataset<f64>) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..data.len() {
        let f = model.forward(w, data.input(i))?;
        let y = match data.target(i) {
            crate::loss::Target::Real(y) => y,
            crate::loss::Target::Class(_) => return Err(Error::InvalidTarget("MSE needs real targets".into())),
        };
        total += f.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / f.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Trains a point estimate, then reports train/test MSE and the train
/// evidence of the linearized model at that estimate.
pub fn evidence_cell(train_set: &Dataset<f64>, test: &Dataset<f64>, setup: &RegressionSetup, seed: u64) -> Result<CellMetrics> {
    let outputs = match &train_set.targets {
        data::Targets::Regression(y) => y.cols(),
        data::Targets::Classes(_) => return Err(Error::InvalidTarget("evidence cells need regression data".into())),
    };
    let cfg = MlpConfig::new(train_set.input_dim(), setup.hidden.clone(), outputs, setup.activation);
    let model = Mlp::new(cfg)?;
    let loss = LossKind::Squared { sigma2: setup.sigma2 };
    let obj = Objective::new(&model, &loss, train_set, setup.delta)?;
    let w = train_map(&obj, setup.alpha, setup.epochs, seed)?;
    let samples = transform_dataset(&model, &loss, train_set, &w, Damping::Default)?;
    Ok(CellMetrics {
        train_mse: mse(&model, &w, train_set)?,
        test_mse: mse(&model, &w, test)?,
        log_ml: log_marginal_likelihood(&samples, setup.delta)?.log_ml,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TunedParam {
    Delta,
    /// Noise standard deviation; the loss uses its square.
    Sigma,
    /// Width of every hidden layer.
    Width,
}

impl TunedParam {
    pub fn name(self) -> &'static str {
        match self {
            TunedParam::Delta => "delta",
            TunedParam::Sigma => "sigma",
            TunedParam::Width => "width",
        }
    }

    pub fn apply(self, base: &RegressionSetup, value: f64) -> Result<RegressionSetup> {
        let mut s = base.clone();
        match self {
            TunedParam::Delta => s.delta = value,
            TunedParam::Sigma => s.sigma2 = value * value,
            TunedParam::Width => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(Error::InvalidArgument(format!("width must be a positive integer, got {value}")));
                }
                s.hidden.iter_mut().for_each(|h| *h = value as usize);
            }
        }
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TuningData {
    /// Fresh bimodal 1-D train and test sets for every repeat.
    Synthetic { n_train: usize, n_test: usize },
    /// One wine-like draw per repeat, randomly split.
    WineLike { n: usize, test_fraction: f64 },
}

impl TuningData {
    pub fn draw(&self, seed: u64) -> Result<(Dataset<f64>, Dataset<f64>)> {
        match *self {
            TuningData::Synthetic { n_train, n_test } => Ok((
                data::synthetic_regression(derive_seed(seed, 10), n_train)?,
                data::synthetic_regression(derive_seed(seed, 11), n_test)?,
            )),
            TuningData::WineLike { n, test_fraction } => {
                let ds = data::wine_like(derive_seed(seed, 10), n)?;
                data::split(&ds, test_fraction, derive_seed(seed, 11))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningSetup {
    pub data: TuningData,
    pub base: RegressionSetup,
    pub param: TunedParam,
    pub grid: Vec<f64>,
    pub repeats: usize,
}

impl TuningSetup {
    /// 20-unit tanh network on the bimodal 1-D data, 10-point δ grid.
    pub fn synthetic_delta() -> Self {
        TuningSetup {
            data: TuningData::Synthetic { n_train: 100, n_test: 1000 },
            base: RegressionSetup {
                hidden: vec![20],
                activation: Activation::Tanh,
                sigma2: 0.01,
                delta: 1.0,
                epochs: 15000,
                alpha: 0.01,
            },
            param: TunedParam::Delta,
            grid: logspace(-2.0, 2.5, 10),
            repeats: 10,
        }
    }

    /// Two 20-unit tanh layers on wine-like data, σ grid at δ = 3.
    pub fn wine_sigma() -> Self {
        TuningSetup {
            data: TuningData::WineLike { n: 1599, test_fraction: 0.5 },
            base: RegressionSetup {
                hidden: vec![20, 20],
                activation: Activation::Tanh,
                sigma2: 0.64 * 0.64,
                delta: 3.0,
                epochs: 12000,
                alpha: 0.01,
            },
            param: TunedParam::Sigma,
            grid: logspace(-0.8, 0.8, 10),
            repeats: 2,
        }
    }
}

/// Runs every grid value for every repeat; the data for repeat `r` are
/// shared by all grid values.
pub fn tuning_sweep(setup: &TuningSetup, master_seed: u64, jobs: usize) -> Result<SweepTable> {
    sweep(setup.param.name(), &setup.grid, setup.repeats, master_seed, jobs, |value, seed| {
        let (train_set, test) = setup.data.draw(seed)?;
        let cell = setup.param.apply(&setup.base, value)?;
        evidence_cell(&train_set, &test, &cell, derive_seed(seed, 12))
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridAgreement {
    pub argmax_log_ml: usize,
    pub argmin_test_mse: usize,
}

impl GridAgreement {
    pub fn from_table(table: &SweepTable) -> Option<Self> {
        Some(GridAgreement {
            argmax_log_ml: table.argmax_log_ml()?,
            argmin_test_mse: table.argmin_test_mse()?,
        })
    }

    pub fn within(&self, steps: usize) -> bool {
        self.argmax_log_ml.abs_diff(self.argmin_test_mse) <= steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(linspace(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
        assert_eq!(linspace(2.0, 5.0, 1), vec![2.0]);
        let g = logspace(-1.0, 1.0, 3);
        assert!((g[0] - 0.1).abs() < 1e-15 && g[1] == 1.0 && (g[2] - 10.0).abs() < 1e-13);
    }

    #[test]
    fn crossings_of_a_plane() {
        let xs = linspace(-1.0, 1.0, 5);
        let ys = linspace(-1.0, 1.0, 5);
        // logit = x − 0.1 crosses at x = 0.1 on every row
        let logit = Matrix::from_fn(5, 5, |_, c| xs[c] - 0.1);
        let pts = zero_crossings(&xs, &ys, &logit);
        assert_eq!(pts.len(), 5);
        assert!(pts.iter().all(|p| (p[0] - 0.1).abs() < 1e-15));
    }

    #[test]
    fn width_must_be_integral() {
        let base = TuningSetup::synthetic_delta().base;
        assert!(TunedParam::Width.apply(&base, 2.5).is_err());
        assert_eq!(TunedParam::Width.apply(&base, 7.0).unwrap().hidden, vec![7]);
        assert_eq!(TunedParam::Sigma.apply(&base, 0.5).unwrap().sigma2, 0.25);
    }

    #[test]
    fn small_cell_runs() {
        let setup = TuningSetup {
            data: TuningData::Synthetic { n_train: 20, n_test: 20 },
            base: RegressionSetup {
                hidden: vec![3],
                activation: Activation::Tanh,
                sigma2: 0.05,
                delta: 1.0,
                epochs: 50,
                alpha: 0.01,
            },
            param: TunedParam::Delta,
            grid: vec![0.1, 1.0],
            repeats: 2,
        };
        let t = tuning_sweep(&setup, 3, 1).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert!(t.cells.iter().all(|c| c.metrics.as_ref().is_some_and(|m| m.log_ml.is_finite())));
    }
}
