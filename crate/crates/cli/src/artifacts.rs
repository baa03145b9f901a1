//! On-disk results. Every file is written to a temporary sibling and
//! renamed into place, so readers never see a partial artifact.

use std::io::Write;
use std::path::{Path, PathBuf};

use d2g_core::evidence::{EvidenceParts, SweepTable};
use d2g_core::linalg::Matrix;
use d2g_core::loss::LossKind;
use d2g_core::model::MlpConfig;
use d2g_core::objective::Curvature;
use d2g_core::posterior::{ApproxKind, Covariance, GaussApprox};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const PARAMS_FILE: &str = "params.json";
pub const POSTERIOR_FILE: &str = "posterior.json";
pub const POSTERIOR_SIDECAR: &str = "posterior.bin";
pub const PREDICTIVE_FILE: &str = "predictive.csv";
pub const KERNEL_FILE: &str = "kernel.csv";
pub const EVIDENCE_FILE: &str = "evidence.json";
pub const SWEEP_CELLS_FILE: &str = "sweep_cells.csv";
pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.csv";

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<D: DeserializeOwned>(path: &Path) -> Result<D> {
    let text = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&text).map_err(|e| {
        d2g_core::Error::Artifact {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
        .into()
    })
}

pub fn check_hash(artifact: &Path, found: &str, expected: &str, producer: &'static str) -> Result<()> {
    if found != expected {
        return Err(CliError::HashMismatch {
            artifact: artifact.to_path_buf(),
            expected: expected.to_string(),
            found: found.to_string(),
            producer,
        });
    }
    Ok(())
}

/// VOGN state needed to rebuild the variational posterior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViState {
    pub mu: Vec<f64>,
    /// `S` without the prior precision.
    pub scale: Curvature<f64>,
    pub beta: f64,
    pub num_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamsArtifact {
    pub config_hash: String,
    pub model: MlpConfig,
    pub loss: LossKind<f64>,
    pub delta: f64,
    pub params: Vec<f64>,
    pub grad_norm: f64,
    pub loss_trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vi: Option<ViState>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceLayout {
    /// Row-major `P×P`.
    Full,
    Diagonal,
}

/// Posterior metadata; the covariance lives in a little-endian f64
/// sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorArtifact {
    pub config_hash: String,
    pub posterior_hash: String,
    pub kind: ApproxKind,
    pub delta: f64,
    pub dim: usize,
    pub layout: CovarianceLayout,
    pub mean: Vec<f64>,
    pub sidecar: String,
    pub sidecar_sha256: String,
}

pub fn write_posterior(dir: &Path, config_hash: &str, posterior_hash: &str, q: &GaussApprox<f64>) -> Result<()> {
    let (layout, values): (_, &[f64]) = match &q.cov {
        Covariance::Full(m) => (CovarianceLayout::Full, m.as_slice()),
        Covariance::Diagonal(d) => (CovarianceLayout::Diagonal, d),
    };
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    let meta = PosteriorArtifact {
        config_hash: config_hash.to_string(),
        posterior_hash: posterior_hash.to_string(),
        kind: q.kind,
        delta: q.delta,
        dim: q.dim(),
        layout,
        mean: q.mean.0.clone(),
        sidecar: POSTERIOR_SIDECAR.to_string(),
        sidecar_sha256: format!("{:x}", Sha256::digest(&bytes)),
    };
    // Sidecar first: the metadata only appears once its data is in place.
    write_atomic(&dir.join(POSTERIOR_SIDECAR), &bytes)?;
    write_json(&dir.join(POSTERIOR_FILE), &meta)
}

pub fn read_posterior(dir: &Path) -> Result<(PosteriorArtifact, GaussApprox<f64>)> {
    let meta_path = dir.join(POSTERIOR_FILE);
    let meta: PosteriorArtifact = read_json(&meta_path)?;
    let bad = |message: String| -> CliError {
        d2g_core::Error::Artifact {
            path: meta_path.clone(),
            message,
        }
        .into()
    };
    let side = dir.join(&meta.sidecar);
    let bytes = std::fs::read(&side).map_err(|e| CliError::io(&side, e))?;
    if format!("{:x}", Sha256::digest(&bytes)) != meta.sidecar_sha256 {
        return Err(bad(format!("checksum of {} does not match", side.display())));
    }
    let expected = match meta.layout {
        CovarianceLayout::Full => meta.dim * meta.dim,
        CovarianceLayout::Diagonal => meta.dim,
    };
    if bytes.len() != 8 * expected || meta.mean.len() != meta.dim {
        return Err(bad(format!("expected {expected} covariance values for dimension {}", meta.dim)));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let cov = match meta.layout {
        CovarianceLayout::Full => Covariance::Full(Matrix::from_vec(meta.dim, meta.dim, values)?),
        CovarianceLayout::Diagonal => Covariance::Diagonal(values),
    };
    let q = GaussApprox {
        mean: meta.mean.clone().into(),
        cov,
        kind: meta.kind,
        delta: meta.delta,
    };
    Ok((meta, q))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceArtifact {
    pub config_hash: String,
    pub log_ml: f64,
    pub n_points: usize,
    pub delta: f64,
    pub decomposition: EvidenceParts<f64>,
}

pub fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let fail = |e: csv::Error| CliError::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.write_record(&r).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

pub fn write_sweep(dir: &Path, table: &SweepTable) -> Result<(PathBuf, PathBuf)> {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let header: Vec<String> = ["param_name", "param_value", "repeat", "seed", "train_mse", "test_mse", "log_ml", "error"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows = table.cells.iter().map(|c| {
        vec![
            c.param_name.clone(),
            c.param_value.to_string(),
            c.repeat.to_string(),
            c.seed.to_string(),
            opt(c.metrics.map(|m| m.train_mse)),
            opt(c.metrics.map(|m| m.test_mse)),
            opt(c.metrics.map(|m| m.log_ml)),
            c.error.clone().unwrap_or_default(),
        ]
    });
    let cells = dir.join(SWEEP_CELLS_FILE);
    write_csv(&cells, &header, rows)?;

    let header: Vec<String> = [
        "param_name",
        "param_value",
        "completed",
        "failed",
        "train_mse_mean",
        "train_mse_stderr",
        "test_mse_mean",
        "test_mse_stderr",
        "log_ml_mean",
        "log_ml_stderr",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let rows = table.rows.iter().map(|r| {
        vec![
            r.param_name.clone(),
            r.param_value.to_string(),
            r.completed.to_string(),
            r.failed.to_string(),
            r.train_mse.mean.to_string(),
            r.train_mse.stderr.to_string(),
            r.test_mse.mean.to_string(),
            r.test_mse.stderr.to_string(),
            r.log_ml.mean.to_string(),
            r.log_ml.stderr.to_string(),
        ]
    });
    let summary = dir.join(SWEEP_SUMMARY_FILE);
    write_csv(&summary, &header, rows)?;
    Ok((cells, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn posterior_round_trips_through_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let q = GaussApprox {
            mean: vec![1.0, -2.0].into(),
            cov: Covariance::Full(Matrix::from_vec(2, 2, vec![2.0, 0.5, 0.5, 1.0]).unwrap()),
            kind: ApproxKind::LaplaceGgn,
            delta: 0.3,
        };
        write_posterior(dir.path(), "abc", "def", &q).unwrap();
        let (meta, back) = read_posterior(dir.path()).unwrap();
        assert_eq!(meta.config_hash, "abc");
        assert_eq!(back, q);
    }

    #[test]
    fn corrupted_sidecar_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let q = GaussApprox {
            mean: vec![1.0].into(),
            cov: Covariance::Diagonal(vec![0.5]),
            kind: ApproxKind::Vi,
            delta: 1.0,
        };
        write_posterior(dir.path(), "a", "b", &q).unwrap();
        std::fs::write(dir.path().join(POSTERIOR_SIDECAR), 0.25f64.to_le_bytes()).unwrap();
        assert!(matches!(read_posterior(dir.path()), Err(CliError::Core(d2g_core::Error::Artifact { .. }))));
    }

    #[test]
    fn atomic_write_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested/x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
