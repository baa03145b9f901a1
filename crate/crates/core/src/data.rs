//! Datasets: file loaders, seeded generators and train/test splits.
//!
//! Generator recipes (all draws come from [`crate::rng::Rng`]):
//!
//! * `snelson_like`: `x ~ U(0, 6)`,
//!   `y = sin(2.2x) + 0.5·cos(4.4x)·exp(−x/4) + 0.15x + N(0, 0.25²)`.
//!   Stands in for the 200-point Snelson file, which is not redistributed.
//! * `synthetic_regression`: `x` from `0.5·N(−2, 0.6²) + 0.5·N(2, 0.6²)`
//!   truncated to `[−4, 4]` by rejection, `y = sin(2x) + 0.2x² + N(0, 0.1²)`.
//! * `two_moons`: `n/2` points per class at evenly spaced angles
//!   `t ∈ [0, π]`; class 0 on `(cos t, sin t)`, class 1 on
//!   `(1 − cos t, 0.5 − sin t)`, then isotropic Gaussian jitter.
//! * `blobs`: `K` isotropic Gaussian clusters (std 0.5) with centres evenly
//!   spaced on a circle of radius 2; labels cycle through the classes.
//! * `wine_like`: 12 correlated features `x = Lz` with `z ~ N(0, I)` and a
//!   fixed banded `L`; target from a fixed nonlinear score plus
//!   `N(0, 0.64²)` noise.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::loss::Target;
use crate::rng::{seeded, standard_normal, Rng};
use crate::scalar::Scalar;

/// Lower and upper ends of the removed Snelson interval, both exclusive.
pub const SNELSON_GAP: (f64, f64) = (1.5, 3.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Targets<T> {
    /// `N×K` real targets.
    Regression(Matrix<T>),
    /// One class index per row.
    Classes(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization<T> {
    pub means: Vec<T>,
    pub stds: Vec<T>,
}

impl<T: Scalar> Standardization<T> {
    pub fn apply(&self, x: &mut [T]) {
        for ((v, &m), &s) in x.iter_mut().zip(&self.means).zip(&self.stds) {
            *v = (*v - m) / s;
        }
    }

    pub fn invert(&self, x: &mut [T]) {
        for ((v, &m), &s) in x.iter_mut().zip(&self.means).zip(&self.stds) {
            *v = *v * s + m;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset<T> {
    pub name: String,
    /// `N×D`, one example per row.
    pub inputs: Matrix<T>,
    pub targets: Targets<T>,
    pub standardization: Option<Standardization<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(name: impl Into<String>, inputs: Matrix<T>, targets: Targets<T>) -> Result<Self> {
        let n = match &targets {
            Targets::Regression(y) => y.rows(),
            Targets::Classes(c) => c.len(),
        };
        if n != inputs.rows() {
            return Err(Error::dims("dataset targets", inputs.rows(), n));
        }
        if !inputs.is_finite() || matches!(&targets, Targets::Regression(y) if !y.is_finite()) {
            return Err(Error::InvalidArgument("dataset contains non-finite values".into()));
        }
        Ok(Dataset {
            name: name.into(),
            inputs,
            targets,
            standardization: None,
        })
    }

    pub fn regression(name: impl Into<String>, inputs: Matrix<T>, targets: Matrix<T>) -> Result<Self> {
        Self::new(name, inputs, Targets::Regression(targets))
    }

    pub fn classification(name: impl Into<String>, inputs: Matrix<T>, labels: Vec<usize>) -> Result<Self> {
        Self::new(name, inputs, Targets::Classes(labels))
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn input(&self, i: usize) -> &[T] {
        self.inputs.row(i)
    }

    pub fn target(&self, i: usize) -> Target<T> {
        match &self.targets {
            Targets::Regression(y) => Target::Real(y.row(i).to_vec()),
            Targets::Classes(c) => Target::Class(c[i]),
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes(c) => Some(c),
            Targets::Regression(_) => None,
        }
    }

    /// Rows in the given order (repeats allowed).
    pub fn subset(&self, rows: &[usize]) -> Self {
        let d = self.input_dim();
        let inputs = Matrix::from_fn(rows.len(), d, |r, c| self.inputs[(rows[r], c)]);
        let targets = match &self.targets {
            Targets::Regression(y) => {
                Targets::Regression(Matrix::from_fn(rows.len(), y.cols(), |r, c| y[(rows[r], c)]))
            }
            Targets::Classes(c) => Targets::Classes(rows.iter().map(|&r| c[r]).collect()),
        };
        Dataset {
            name: self.name.clone(),
            inputs,
            targets,
            standardization: self.standardization.clone(),
        }
    }

    /// Standardizes every input column in place and records the statistics.
    pub fn standardize(&mut self) -> Result<()> {
        if self.standardization.is_some() {
            return Ok(());
        }
        let stats = column_stats(&self.inputs, |c| format!("{}[{c}]", self.name))?;
        for i in 0..self.len() {
            stats.apply(self.inputs.row_mut(i));
        }
        self.standardization = Some(stats);
        Ok(())
    }

    /// Maps inputs back to raw coordinates and drops the record.
    pub fn unstandardize(&mut self) {
        if let Some(stats) = self.standardization.take() {
            for i in 0..self.len() {
                stats.invert(self.inputs.row_mut(i));
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        let cast_vec = |v: &[T]| v.iter().map(|x| U::lit(x.to_f64_lossy())).collect();
        Dataset {
            name: self.name.clone(),
            inputs: self.inputs.cast(),
            targets: match &self.targets {
                Targets::Regression(y) => Targets::Regression(y.cast()),
                Targets::Classes(c) => Targets::Classes(c.clone()),
            },
            standardization: self.standardization.as_ref().map(|s| Standardization {
                means: cast_vec(&s.means),
                stds: cast_vec(&s.stds),
            }),
        }
    }
}

/// Population mean and standard deviation of each column.
fn column_stats<T: Scalar>(m: &Matrix<T>, name: impl Fn(usize) -> String) -> Result<Standardization<T>> {
    let n = T::from_count(m.rows());
    let mut means = vec![T::zero(); m.cols()];
    let mut stds = vec![T::zero(); m.cols()];
    for c in 0..m.cols() {
        let mean = (0..m.rows()).map(|r| m[(r, c)]).sum::<T>() / n;
        let var = (0..m.rows()).map(|r| (m[(r, c)] - mean).powi(2)).sum::<T>() / n;
        if !(var > T::zero()) {
            return Err(Error::ConstantColumn(name(c)));
        }
        means[c] = mean;
        stds[c] = var.sqrt();
    }
    Ok(Standardization { means, stds })
}

fn parse_value<T: Scalar>(path: &Path, line: usize, tok: &str) -> Result<T> {
    match tok.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(T::lit(v)),
        _ => Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("expected a finite number, found `{tok}`"),
        }),
    }
}

pub fn in_snelson_gap(x: f64) -> bool {
    x > SNELSON_GAP.0 && x < SNELSON_GAP.1
}

/// Drops rows whose first input lies strictly inside the Snelson gap.
pub fn apply_gap<T: Scalar>(ds: &Dataset<T>) -> Dataset<T> {
    let keep: Vec<usize> = (0..ds.len())
        .filter(|&i| !in_snelson_gap(ds.inputs[(i, 0)].to_f64_lossy()))
        .collect();
    ds.subset(&keep)
}

/// Reads a two-column `x y` file (whitespace or comma separated, `#`
/// comments allowed).
pub fn load_snelson<T: Scalar>(path: &Path, gap: bool) -> Result<Dataset<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .collect();
        if toks.len() != 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("expected 2 columns, found {}", toks.len()),
            });
        }
        let x: T = parse_value(path, idx + 1, toks[0])?;
        let y: T = parse_value(path, idx + 1, toks[1])?;
        if gap && in_snelson_gap(x.to_f64_lossy()) {
            continue;
        }
        xs.push(x);
        ys.push(y);
    }
    if xs.is_empty() {
        return Err(Error::EmptyAfterFilter(path.to_path_buf()));
    }
    let n = xs.len();
    Dataset::regression("snelson", Matrix::from_vec(n, 1, xs)?, Matrix::from_vec(n, 1, ys)?)
}

/// Reads a CSV with a header row; `target` names the output column and all
/// other columns become inputs.
pub fn load_csv<T: Scalar>(path: &Path, target: &str, standardize: bool) -> Result<Dataset<T>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(1, format!("{other:?}")),
        })?;
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let t_col = headers
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| parse_err(1, format!("no column named `{target}`")))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != t_col)
        .map(|(_, h)| h.to_string())
        .collect();

    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != headers.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", headers.len(), rec.len())));
        }
        for (c, tok) in rec.iter().enumerate() {
            let v: T = parse_value(path, line, tok)?;
            if c == t_col {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    let n = ys.len();
    if n == 0 {
        return Err(Error::EmptyAfterFilter(path.to_path_buf()));
    }
    let name = path.file_stem().map_or("csv".into(), |s| s.to_string_lossy().into_owned());
    let mut ds = Dataset::regression(name, Matrix::from_vec(n, feature_names.len(), xs)?, Matrix::from_vec(n, 1, ys)?)?;
    if standardize {
        let stats = column_stats(&ds.inputs, |c| feature_names[c].clone())?;
        for i in 0..n {
            stats.apply(ds.inputs.row_mut(i));
        }
        ds.standardization = Some(stats);
    }
    Ok(ds)
}

fn normal(rng: &mut Rng, mean: f64, std: f64) -> f64 {
    mean + std * standard_normal::<f64>(rng)
}

fn regression_from_pairs<T: Scalar>(name: &str, pairs: Vec<(f64, f64)>) -> Result<Dataset<T>> {
    let n = pairs.len();
    let xs = pairs.iter().map(|p| T::lit(p.0)).collect();
    let ys = pairs.iter().map(|p| T::lit(p.1)).collect();
    Dataset::regression(name, Matrix::from_vec(n, 1, xs)?, Matrix::from_vec(n, 1, ys)?)
}

pub fn snelson_like<T: Scalar>(seed: u64, n: usize) -> Result<Dataset<T>> {
    let mut rng = seeded(seed);
    let pairs = (0..n)
        .map(|_| {
            let x: f64 = rng.random_range(0.0..6.0);
            let f = (2.2 * x).sin() + 0.5 * (4.4 * x).cos() * (-x / 4.0).exp() + 0.15 * x;
            (x, normal(&mut rng, f, 0.25))
        })
        .collect();
    regression_from_pairs("snelson-like", pairs)
}

pub fn synthetic_regression_fn(x: f64) -> f64 {
    (2.0 * x).sin() + 0.2 * x * x
}

pub fn synthetic_regression<T: Scalar>(seed: u64, n: usize) -> Result<Dataset<T>> {
    if n < 2 {
        return Err(Error::InvalidArgument("synthetic regression needs n >= 2".into()));
    }
    let mut rng = seeded(seed);
    let pairs = (0..n)
        .map(|_| {
            let x = loop {
                let centre = if rng.random_bool(0.5) { -2.0 } else { 2.0 };
                let x = normal(&mut rng, centre, 0.6);
                if (-4.0..=4.0).contains(&x) {
                    break x;
                }
            };
            (x, normal(&mut rng, synthetic_regression_fn(x), 0.1))
        })
        .collect();
    regression_from_pairs("synthetic", pairs)
}

pub fn two_moons<T: Scalar>(seed: u64, n: usize, noise_std: f64) -> Result<Dataset<T>> {
    if n < 4 || n % 2 != 0 {
        return Err(Error::InvalidArgument(format!("two moons needs an even n >= 4, got {n}")));
    }
    let mut rng = seeded(seed);
    let half = n / 2;
    let mut xs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for class in 0..2 {
        for i in 0..half {
            let t = std::f64::consts::PI * i as f64 / (half - 1) as f64;
            let (a, b) = if class == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            xs.push(T::lit(a + noise_std * standard_normal::<f64>(&mut rng)));
            xs.push(T::lit(b + noise_std * standard_normal::<f64>(&mut rng)));
            labels.push(class);
        }
    }
    Dataset::classification("two-moons", Matrix::from_vec(n, 2, xs)?, labels)
}

pub fn blobs<T: Scalar>(seed: u64, n: usize, classes: usize) -> Result<Dataset<T>> {
    if classes < 2 || n < classes {
        return Err(Error::InvalidArgument(format!("blobs needs classes >= 2 and n >= classes, got {classes}, {n}")));
    }
    let mut rng = seeded(seed);
    let mut xs = Vec::with_capacity(2 * n);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    for &c in &labels {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
        xs.push(T::lit(normal(&mut rng, 2.0 * angle.cos(), 0.5)));
        xs.push(T::lit(normal(&mut rng, 2.0 * angle.sin(), 0.5)));
    }
    Dataset::classification("blobs", Matrix::from_vec(n, 2, xs)?, labels)
}

pub const WINE_LIKE_DIM: usize = 12;
pub const WINE_LIKE_NOISE: f64 = 0.64;

/// Noise-free part of the wine-like target.
pub fn wine_like_score(x: &[f64]) -> f64 {
    5.6 + 0.45 * (x[0] - 0.6 * x[1]).tanh() - 0.35 * (x[2] + 0.5 * x[3]).tanh()
        + 0.25 * x[4]
        + 0.2 * (x[5] * x[6]).tanh()
        - 0.15 * x[7] * x[7].abs().min(2.0)
        + 0.1 * (x[8] - x[9] + 0.5 * x[10]).sin()
        + 0.05 * x[11]
}

pub fn wine_like<T: Scalar>(seed: u64, n: usize) -> Result<Dataset<T>> {
    let d = WINE_LIKE_DIM;
    let mut rng = seeded(seed);
    let mut xs = Vec::with_capacity(n * d);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..d).map(|_| standard_normal(&mut rng)).collect();
        // Banded mixing: each feature leans on its predecessor.
        let x: Vec<f64> = (0..d)
            .map(|j| if j == 0 { z[0] } else { 0.8 * z[j] + 0.6 * z[j - 1] })
            .collect();
        ys.push(T::lit(normal(&mut rng, wine_like_score(&x), WINE_LIKE_NOISE)));
        xs.extend(x.into_iter().map(T::lit));
    }
    Dataset::regression("wine-like", Matrix::from_vec(n, d, xs)?, Matrix::from_vec(n, 1, ys)?)
}

/// Seeded random partition into `(train, test)`; the test side gets
/// `round(fraction·N)` rows, clamped so neither side is empty.
pub fn split<T: Scalar>(ds: &Dataset<T>, test_fraction: f64, seed: u64) -> Result<(Dataset<T>, Dataset<T>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("test fraction must lie in (0, 1), got {test_fraction}")));
    }
    let n = ds.len();
    if n < 2 {
        return Err(Error::InvalidArgument("cannot split fewer than two rows".into()));
    }
    let (train_idx, test_idx) = split_indices(n, test_fraction, seed);
    Ok((ds.subset(&train_idx), ds.subset(&test_idx)))
}

pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded(seed));
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let test = idx.split_off(n - n_test);
    (idx, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn snelson_gap_filter() {
        let f = write_tmp("1.0 0.5\n2.0 0.1\n4.0, -0.3\n");
        let ds: Dataset<f64> = load_snelson(f.path(), true).unwrap();
        assert_eq!(ds.inputs.as_slice(), &[1.0, 4.0]);
        let all: Dataset<f64> = load_snelson(f.path(), false).unwrap();
        assert_eq!(all.len(), 3);
        // Idempotent.
        assert_eq!(apply_gap(&ds), ds);
        assert_eq!(apply_gap(&apply_gap(&all)), apply_gap(&all));
    }

    #[test]
    fn snelson_parse_error_names_line() {
        let f = write_tmp("1.0 2.0\na b\n");
        match load_snelson::<f64>(f.path(), false) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let g = write_tmp("2.0 1.0\n");
        assert!(matches!(load_snelson::<f64>(g.path(), true), Err(Error::EmptyAfterFilter(_))));
    }

    #[test]
    fn csv_two_by_two() {
        let f = write_tmp("a,b\n1,2\n3,4\n");
        let ds: Dataset<f64> = load_csv(f.path(), "b", false).unwrap();
        assert_eq!(ds.inputs.as_slice(), &[1.0, 3.0]);
        assert_eq!(ds.target(1), Target::Real(vec![4.0]));
        assert!(ds.standardization.is_none());
    }

    #[test]
    fn csv_standardize_and_roundtrip() {
        let f = write_tmp("u,v,y\n1,10,0\n2,-3,1\n7,4.5,0\n");
        let mut ds: Dataset<f64> = load_csv(f.path(), "y", true).unwrap();
        for c in 0..2 {
            let mean: f64 = (0..3).map(|r| ds.inputs[(r, c)]).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-12);
        }
        ds.unstandardize();
        let raw = [1.0, 10.0, 2.0, -3.0, 7.0, 4.5];
        for (a, b) in ds.inputs.as_slice().iter().zip(raw) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_errors() {
        let f = write_tmp("a,b\n1,2\n1,5\n");
        assert!(matches!(load_csv::<f64>(f.path(), "b", true), Err(Error::ConstantColumn(c)) if c == "a"));
        let g = write_tmp("a,b\n1,2\n3,x\n");
        assert!(matches!(load_csv::<f64>(g.path(), "b", false), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(
            load_csv::<f64>(Path::new("/nonexistent/wine.csv"), "b", false),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn synthetic_is_deterministic_and_sparse_near_origin() {
        let a: Dataset<f64> = synthetic_regression(3, 100).unwrap();
        let b: Dataset<f64> = synthetic_regression(3, 100).unwrap();
        assert_eq!(a, b);
        assert_eq!(synthetic_regression::<f64>(1, 2).unwrap().len(), 2);
        for seed in 0..100 {
            let ds: Dataset<f64> = synthetic_regression(seed, 100).unwrap();
            let near = ds.inputs.as_slice().iter().filter(|x| x.abs() < 0.5).count();
            assert!(near < 10, "seed {seed}: {near}");
            assert!(ds.inputs.as_slice().iter().all(|x| x.abs() <= 4.0));
        }
    }

    #[test]
    fn two_moons_geometry() {
        let ds: Dataset<f64> = two_moons(0, 100, 0.0).unwrap();
        let labels = ds.labels().unwrap();
        assert_eq!(labels.iter().filter(|&&c| c == 0).count(), 50);
        for i in 0..ds.len() {
            if labels[i] == 0 {
                let (a, b) = (ds.inputs[(i, 0)], ds.inputs[(i, 1)]);
                assert!((a * a + b * b - 1.0).abs() < 1e-12);
                assert!(b >= 0.0);
            }
        }
        assert_eq!(two_moons::<f64>(4, 100, 0.1).unwrap(), two_moons::<f64>(4, 100, 0.1).unwrap());
        assert!(two_moons::<f64>(0, 7, 0.1).is_err());
    }

    #[test]
    fn split_partitions() {
        let ds: Dataset<f64> = blobs(1, 10, 3).unwrap();
        let (tr, te) = split(&ds, 0.5, 9).unwrap();
        assert_eq!((tr.len(), te.len()), (5, 5));
        let (a, b) = split_indices(10, 0.5, 9);
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_indices(10, 0.5, 9), (a, b));
        assert!(split(&ds, 1.0, 0).is_err());
    }

    #[test]
    fn wine_like_shape() {
        let ds: Dataset<f64> = wine_like(0, 50).unwrap();
        assert_eq!((ds.len(), ds.input_dim()), (50, 12));
        assert_eq!(ds, wine_like(0, 50).unwrap());
    }
}
