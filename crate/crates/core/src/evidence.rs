//! Marginal likelihood of the transformed data and hyperparameter sweeps.
//!
//! The evidence is that of the linear model `ỹᵢ = Jᵢw + εᵢ`,
//! `εᵢ ~ N(0, Λᵢ⁻¹)`, `w ~ N(0, δ⁻¹I)`, evaluated in weight space:
//!
//! ```text
//! log p(ỹ) = −½[Σᵢ(ỹᵢᵀΛᵢỹᵢ + log det(2πΛᵢ⁻¹)) − mᵀAm − P log δ + log det A]
//! A = δI + Σᵢ JᵢᵀΛᵢJᵢ,   m = A⁻¹ Σᵢ JᵢᵀΛᵢỹᵢ
//! ```

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dnn2gp::TransformedSample;
use crate::error::{ensure_len, Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::rng::derive_seed;
use crate::scalar::{dot, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceParts<T> {
    /// `−½(Σ ỹᵀΛỹ − mᵀAm)`
    pub data_fit: T,
    /// `−½(log det A − P log δ)`
    pub complexity: T,
    /// `−½ Σ (K log 2π − log det Λᵢ)`
    pub constant: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceResult<T> {
    pub log_ml: T,
    pub n_points: usize,
    pub delta: T,
    pub sigma2: Option<T>,
    pub decomposition: EvidenceParts<T>,
}

fn lex_cmp<T: Scalar>(a: &[T], b: &[T]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.to_f64_lossy().total_cmp(&y.to_f64_lossy()))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

/// Log evidence of the transformed data under prior precision `δ`.
///
/// Samples are summed in a canonical order (by input, then pseudo-output),
/// so permuting the dataset leaves the result bit-identical.
pub fn log_marginal_likelihood<T: Scalar>(samples: &[TransformedSample<T>], delta: T) -> Result<EvidenceResult<T>> {
    if !(delta > T::zero() && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("evidence needs finite delta > 0, got {delta}")));
    }
    let zero_parts = EvidenceParts {
        data_fit: T::zero(),
        complexity: T::zero(),
        constant: T::zero(),
    };
    let Some(first) = samples.first() else {
        return Ok(EvidenceResult {
            log_ml: T::zero(),
            n_points: 0,
            delta,
            sigma2: None,
            decomposition: zero_parts,
        });
    };
    let p = first.jac.cols();
    let mut order: Vec<&TransformedSample<T>> = samples.iter().collect();
    order.sort_by(|a, b| lex_cmp(&a.x, &b.x).then_with(|| lex_cmp(&a.y_tilde, &b.y_tilde)));

    let two_pi = T::lit(2.0 * std::f64::consts::PI);
    let mut a = Matrix::identity(p);
    a.scale_in_place(delta);
    let mut b = vec![T::zero(); p];
    let mut quad = T::zero();
    let mut constant = T::zero();
    for s in order {
        ensure_len("sample jacobian", p, s.jac.cols())?;
        let k = s.y_tilde.len();
        let lam_chol = Cholesky::new(&s.lam).map_err(|_| Error::SingularNoisePrecision)?;
        a.add_congruence(&s.jac, &s.lam, T::one())?;
        let lam_y = s.lam.matvec(&s.y_tilde)?;
        for (bi, c) in b.iter_mut().zip(s.jac.t_matvec(&lam_y)?) {
            *bi += c;
        }
        quad += dot(&s.y_tilde, &lam_y);
        constant += T::from_count(k) * two_pi.ln() - lam_chol.log_det();
    }
    let chol = Cholesky::new(&a)?;
    let m = chol.solve(&b)?;
    let half = T::lit(-0.5);
    let parts = EvidenceParts {
        data_fit: half * (quad - dot(&b, &m)),
        complexity: half * (chol.log_det() - T::from_count(p) * delta.ln()),
        constant: half * constant,
    };
    Ok(EvidenceResult {
        log_ml: parts.data_fit + parts.complexity + parts.constant,
        n_points: samples.len(),
        delta,
        sigma2: None,
        decomposition: parts,
    })
}

/// Outcome of one sweep cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub train_mse: f64,
    pub test_mse: f64,
    pub log_ml: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub param_name: String,
    pub param_value: f64,
    pub repeat: usize,
    pub seed: u64,
    pub metrics: Option<CellMetrics>,
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
}

/// Sample mean and `sd/√n` (sample standard deviation); `stderr` is 0 for
/// a single value and both are NaN for none.
pub fn mean_stderr(values: &[f64]) -> MeanStderr {
    let n = values.len();
    if n == 0 {
        return MeanStderr {
            mean: f64::NAN,
            stderr: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return MeanStderr { mean, stderr: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    MeanStderr {
        mean,
        stderr: (var / n as f64).sqrt(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param_name: String,
    pub param_value: f64,
    pub completed: usize,
    pub failed: usize,
    pub train_mse: MeanStderr,
    pub test_mse: MeanStderr,
    pub log_ml: MeanStderr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub cells: Vec<SweepCell>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Grid index of the best mean value; NaN rows never win.
    fn best_by(&self, key: impl Fn(&SweepRow) -> f64, maximize: bool) -> Option<usize> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| key(r).is_finite())
            .max_by(|(_, a), (_, b)| {
                let o = key(a).total_cmp(&key(b));
                if maximize {
                    o
                } else {
                    o.reverse()
                }
            })
            .map(|(i, _)| i)
    }

    pub fn argmax_log_ml(&self) -> Option<usize> {
        self.best_by(|r| r.log_ml.mean, true)
    }

    pub fn argmin_test_mse(&self) -> Option<usize> {
        self.best_by(|r| r.test_mse.mean, false)
    }
}

/// Runs `run(value, seed)` for every grid value and repeat, on at most
/// `jobs` threads. The seed depends only on `(master_seed, repeat)`, so
/// every grid value sees the same data and initialization within a repeat
/// and results do not depend on `jobs`. Cell failures are recorded, not
/// fatal.
pub fn sweep<F>(param_name: &str, grid: &[f64], repeats: usize, master_seed: u64, jobs: usize, run: F) -> Result<SweepTable>
where
    F: Fn(f64, u64) -> Result<CellMetrics> + Sync,
{
    if grid.is_empty() {
        return Err(Error::InvalidArgument("sweep grid is empty".into()));
    }
    if repeats == 0 {
        return Err(Error::InvalidArgument("sweep needs at least one repeat".into()));
    }
    let specs: Vec<(f64, usize, u64)> = grid
        .iter()
        .flat_map(|&v| (0..repeats).map(move |r| (v, r)))
        .map(|(v, r)| (v, r, derive_seed(master_seed, r as u64)))
        .collect();
    let total = specs.len();
    let exec = |&(value, repeat, seed): &(f64, usize, u64)| {
        let outcome = run(value, seed);
        log::info!("{param_name}={value} repeat {repeat}: {}", if outcome.is_ok() { "done" } else { "failed" });
        let (metrics, error) = match outcome {
            Ok(m) => (Some(m), None),
            Err(e) => (None, Some(e.to_string())),
        };
        SweepCell {
            param_name: param_name.to_string(),
            param_value: value,
            repeat,
            seed,
            metrics,
            error,
        }
    };
    let cells: Vec<SweepCell> = if jobs <= 1 {
        specs.iter().map(exec).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start {jobs} worker threads: {e}")))?;
        pool.install(|| specs.par_iter().map(exec).collect())
    };
    debug_assert_eq!(cells.len(), total);

    let rows = grid
        .iter()
        .enumerate()
        .map(|(g, &value)| {
            let group = &cells[g * repeats..(g + 1) * repeats];
            let ok: Vec<&CellMetrics> = group.iter().filter_map(|c| c.metrics.as_ref()).collect();
            let collect = |f: fn(&CellMetrics) -> f64| ok.iter().map(|m| f(m)).collect::<Vec<_>>();
            SweepRow {
                param_name: param_name.to_string(),
                param_value: value,
                completed: ok.len(),
                failed: group.len() - ok.len(),
                train_mse: mean_stderr(&collect(|m| m.train_mse)),
                test_mse: mean_stderr(&collect(|m| m.test_mse)),
                log_ml: mean_stderr(&collect(|m| m.log_ml)),
            }
        })
        .collect();
    Ok(SweepTable { cells, rows })
}
