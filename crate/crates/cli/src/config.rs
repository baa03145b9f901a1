//! Run configuration: one JSON file drives train, posterior, predict,
//! kernel, evidence and sweep.

use std::path::{Path, PathBuf};

use d2g_core::data::{self, Dataset, Targets};
use d2g_core::experiments::TunedParam;
use d2g_core::loss::LossKind;
use d2g_core::model::{Activation, MlpConfig};
use d2g_core::objective::CurvatureMode;
use d2g_core::optim::Optimizer;
use d2g_core::rng::derive_seed;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Whitespace-separated `x y` file.
    SnelsonFile {
        path: PathBuf,
        #[serde(default)]
        gap: bool,
    },
    SnelsonLike {
        n: usize,
        #[serde(default)]
        gap: bool,
        #[serde(default)]
        seed: Option<u64>,
    },
    Synthetic {
        n: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    TwoMoons {
        n: usize,
        #[serde(default = "default_moons_noise")]
        noise: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    Blobs {
        n: usize,
        classes: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    WineLike {
        n: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Headered CSV with one named target column.
    Csv {
        path: PathBuf,
        target: String,
        #[serde(default)]
        standardize: bool,
    },
}

fn default_moons_noise() -> f64 {
    0.2
}

impl DatasetSpec {
    /// File the data comes from, if any.
    pub fn path(&self) -> Option<&Path> {
        match self {
            DatasetSpec::SnelsonFile { path, .. } | DatasetSpec::Csv { path, .. } => Some(path),
            _ => None,
        }
    }

    /// Generators without an explicit seed draw from `run_seed`.
    pub fn is_generated(&self) -> bool {
        self.path().is_none()
    }

    pub fn load(&self, run_seed: u64) -> d2g_core::Result<Dataset<f64>> {
        let gen_seed = |s: &Option<u64>| s.unwrap_or_else(|| derive_seed(run_seed, 20));
        let ds = match self {
            DatasetSpec::SnelsonFile { path, gap } => data::load_snelson(path, *gap)?,
            DatasetSpec::SnelsonLike { n, gap, seed } => {
                let ds = data::snelson_like(gen_seed(seed), *n)?;
                if *gap {
                    data::apply_gap(&ds)
                } else {
                    ds
                }
            }
            DatasetSpec::Synthetic { n, seed } => data::synthetic_regression(gen_seed(seed), *n)?,
            DatasetSpec::TwoMoons { n, noise, seed } => data::two_moons(gen_seed(seed), *n, *noise)?,
            DatasetSpec::Blobs { n, classes, seed } => data::blobs(gen_seed(seed), *n, *classes)?,
            DatasetSpec::WineLike { n, seed } => data::wine_like(gen_seed(seed), *n)?,
            DatasetSpec::Csv {
                path,
                target,
                standardize,
            } => data::load_csv(path, target, *standardize)?,
        };
        Ok(ds)
    }

    fn resolve(&mut self, base: &Path) {
        if let DatasetSpec::SnelsonFile { path, .. } | DatasetSpec::Csv { path, .. } = self {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosteriorMethod {
    /// Laplace-GGN at the trained weights.
    #[default]
    Laplace,
    /// The Gaussian tracked by VOGN; needs `optimizer.kind = "vogn"`.
    Vi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorSpec {
    #[serde(default)]
    pub method: PosteriorMethod,
    /// Full by default; `diagonal` keeps only the GGN diagonal.
    #[serde(default = "full_curvature")]
    pub curvature: CurvatureMode,
}

fn full_curvature() -> CurvatureMode {
    CurvatureMode::Full
}

impl Default for PosteriorSpec {
    fn default() -> Self {
        PosteriorSpec {
            method: PosteriorMethod::Laplace,
            curvature: full_curvature(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PredictMethod {
    /// Linearized closed form.
    #[default]
    Dnn2gp,
    /// Monte-Carlo over weight samples.
    Mc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictSpec {
    #[serde(default)]
    pub method: PredictMethod,
    #[serde(default = "default_mc_samples")]
    pub samples: usize,
    /// One axis per input dimension; the grid is their product with the
    /// last axis varying fastest.
    pub grid: Vec<Axis>,
}

fn default_mc_samples() -> usize {
    1000
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    /// Sum the per-output blocks into one entry per pair of examples.
    #[serde(default)]
    pub summarized: bool,
    /// Use a random subset of this many training examples.
    #[serde(default)]
    pub subsample: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub param: TunedParam,
    pub grid: Vec<f64>,
    pub repeats: usize,
    /// Held-out data; generated sets are redrawn for every repeat.
    #[serde(default)]
    pub test: Option<DatasetSpec>,
    /// Alternatively, split the training data per repeat.
    #[serde(default)]
    pub test_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub loss: LossKind<f64>,
    #[serde(default = "default_optimizer")]
    pub optimizer: Optimizer,
    pub epochs: usize,
    #[serde(default)]
    pub batch_size: Option<usize>,
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub posterior: PosteriorSpec,
    #[serde(default)]
    pub predict: Option<PredictSpec>,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    /// Output directory; `--out` overrides it.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_optimizer() -> Optimizer {
    Optimizer::adam(1e-3)
}

/// The fields that determine trained weights.
#[derive(Serialize)]
struct TrainingKey<'a> {
    dataset: &'a DatasetSpec,
    model: &'a ModelSpec,
    loss: &'a LossKind<f64>,
    optimizer: &'a Optimizer,
    epochs: usize,
    batch_size: Option<usize>,
    delta: f64,
    seed: u64,
}

impl RunConfig {
    /// Reads and validates a config; relative data paths are taken
    /// relative to the config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(path, e.to_string()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| CliError::config(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset.resolve(base);
        if let Some(t) = cfg.sweep.as_mut().and_then(|s| s.test.as_mut()) {
            t.resolve(base);
        }
        cfg.validate().map_err(|m| CliError::config(path, m))?;
        Ok(cfg)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if !(self.delta > 0.0) {
            return Err(format!("delta must be positive, got {}", self.delta));
        }
        if self.epochs == 0 {
            return Err("epochs must be at least 1".into());
        }
        if let LossKind::Squared { sigma2 } = self.loss {
            if !(sigma2 > 0.0) {
                return Err(format!("loss.sigma2 must be positive, got {sigma2}"));
            }
        }
        if self.posterior.method == PosteriorMethod::Vi && !matches!(self.optimizer, Optimizer::Vogn { .. }) {
            return Err("posterior.method = \"vi\" needs optimizer.kind = \"vogn\"".into());
        }
        if let Some(p) = &self.predict {
            if p.grid.is_empty() || p.grid.iter().any(|a| a.points == 0 || !(a.lo <= a.hi)) {
                return Err("predict.grid needs at least one axis with lo <= hi and points >= 1".into());
            }
            if p.samples == 0 {
                return Err("predict.samples must be at least 1".into());
            }
        }
        if let Some(s) = &self.sweep {
            if s.grid.is_empty() || s.repeats == 0 {
                return Err("sweep needs a non-empty grid and at least one repeat".into());
            }
            match (&s.test, s.test_fraction) {
                (Some(_), None) => {}
                (None, Some(f)) if f > 0.0 && f < 1.0 => {}
                (None, Some(f)) => return Err(format!("sweep.test_fraction must lie in (0, 1), got {f}")),
                _ => return Err("sweep needs exactly one of `test` and `test_fraction`".into()),
            }
            if !matches!(self.loss, LossKind::Squared { .. }) {
                return Err("sweep supports squared loss only".into());
            }
            if !matches!(self.optimizer, Optimizer::Adam { .. }) {
                return Err("sweep trains with Adam; set optimizer.kind = \"adam\"".into());
            }
        }
        Ok(())
    }

    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.out.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Network shape implied by the data and loss.
    pub fn mlp_config(&self, ds: &Dataset<f64>) -> Result<MlpConfig> {
        let outputs = match (&self.loss, &ds.targets) {
            (LossKind::Squared { .. }, Targets::Regression(y)) => y.cols(),
            (LossKind::Logistic, Targets::Classes(_)) => 1,
            (LossKind::Softmax { num_classes }, Targets::Classes(_)) => *num_classes,
            (loss, _) => {
                return Err(CliError::Usage(format!(
                    "loss {loss:?} does not fit the targets of dataset `{}`",
                    ds.name
                )))
            }
        };
        Ok(MlpConfig::new(
            ds.input_dim(),
            self.model.hidden.clone(),
            outputs,
            self.model.activation,
        ))
    }

    /// SHA-256 over everything that shapes the trained weights, including
    /// the bytes of any data file.
    pub fn training_hash(&self) -> Result<String> {
        let key = TrainingKey {
            dataset: &self.dataset,
            model: &self.model,
            loss: &self.loss,
            optimizer: &self.optimizer,
            epochs: self.epochs,
            batch_size: self.batch_size,
            delta: self.delta,
            seed: self.seed,
        };
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&key).expect("config serializes"));
        if let Some(p) = self.dataset.path() {
            h.update(std::fs::read(p).map_err(|e| CliError::io(p, e))?);
        }
        Ok(format!("{:x}", h.finalize()))
    }

    pub fn posterior_hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.training_hash()?);
        h.update(serde_json::to_vec(&self.posterior).expect("config serializes"));
        Ok(format!("{:x}", h.finalize()))
    }
}

/// Cartesian product of the axes, last axis fastest.
pub fn grid_points(axes: &[Axis]) -> Vec<Vec<f64>> {
    let mut points = vec![Vec::new()];
    for a in axes {
        let ticks = d2g_core::experiments::linspace(a.lo, a.hi, a.points);
        points = points
            .into_iter()
            .flat_map(|p| {
                ticks.iter().map(move |&t| {
                    let mut q = p.clone();
                    q.push(t);
                    q
                })
            })
            .collect();
    }
    points
}
