//! One function per subcommand. Each returns the paths it wrote.

use std::path::{Path, PathBuf};

use d2g_core::data::{self, Dataset};
use d2g_core::dnn2gp::{mc_predict, ntk_kernel, predict, transform_dataset, Damping, PredictiveDist};
use d2g_core::evidence::log_marginal_likelihood;
use d2g_core::experiments::{
    self, evidence_cell, GridAgreement, MoonsSetup, RegressionSetup, SnelsonSetup, TuningSetup,
};
use d2g_core::loss::LossKind;
use d2g_core::model::{Mlp, Model};
use d2g_core::objective::Objective;
use d2g_core::optim::{train as run_training, Optimizer, TrainOptions, VognState};
use d2g_core::posterior::{laplace_ggn, vi_posterior, GaussApprox};
use d2g_core::rng::{derive_seed, seeded};
use d2g_core::verify::{run_all, SuiteSizes};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::Serialize;

use crate::artifacts::*;
use crate::config::{grid_points, PosteriorMethod, PredictMethod, RunConfig};
use crate::error::{CliError, Result};

/// Everything a subcommand needs besides its own flags.
pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub jobs: usize,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} worker threads: {e}")))
}

struct Loaded {
    data: Dataset<f64>,
    model: Mlp,
    params: ParamsArtifact,
}

fn load_trained(ctx: &Ctx) -> Result<Loaded> {
    let path = ctx.out.join(PARAMS_FILE);
    let params: ParamsArtifact = read_json(&path)?;
    check_hash(&path, &params.config_hash, &ctx.cfg.training_hash()?, "d2g train")?;
    let data = ctx.cfg.dataset.load(ctx.cfg.seed)?;
    let model = Mlp::new(params.model.clone())?;
    Ok(Loaded { data, model, params })
}

fn load_posterior(ctx: &Ctx) -> Result<GaussApprox<f64>> {
    let (meta, q) = read_posterior(&ctx.out)?;
    check_hash(
        &ctx.out.join(POSTERIOR_FILE),
        &meta.posterior_hash,
        &ctx.cfg.posterior_hash()?,
        "d2g posterior",
    )?;
    Ok(q)
}

pub fn train(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.cfg;
    let data = cfg.dataset.load(cfg.seed)?;
    let model = Mlp::new(cfg.mlp_config(&data)?)?;
    let obj = Objective::new(&model, &cfg.loss, &data, cfg.delta)?;
    let opts = TrainOptions {
        epochs: cfg.epochs,
        seed: cfg.seed,
        batch_size: cfg.batch_size,
        init: None,
    };
    log::info!(
        "training {} parameters on {} examples for {} epochs",
        d2g_core::model::param_count(model.config()),
        data.len(),
        cfg.epochs
    );
    let report = run_training(&obj, &cfg.optimizer, &opts)?;
    let vi = report.vi_state.as_ref().map(|s| ViState {
        mu: s.mu.clone(),
        scale: s.s.clone(),
        beta: s.beta,
        num_samples: s.num_samples,
    });
    let artifact = ParamsArtifact {
        config_hash: cfg.training_hash()?,
        model: model.config().clone(),
        loss: cfg.loss,
        delta: cfg.delta,
        params: report.final_params.0,
        grad_norm: report.grad_norm,
        loss_trace: report.loss_trace,
        vi,
    };
    log::info!(
        "final loss {:.6e}, gradient norm {:.3e}",
        artifact.loss_trace.last().copied().unwrap_or(f64::NAN),
        artifact.grad_norm
    );
    let path = ctx.out.join(PARAMS_FILE);
    write_json(&path, &artifact)?;
    Ok(vec![path])
}

pub fn posterior(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.cfg;
    let l = load_trained(ctx)?;
    let q = match cfg.posterior.method {
        PosteriorMethod::Laplace => {
            let obj = Objective::new(&l.model, &cfg.loss, &l.data, cfg.delta)?;
            laplace_ggn(&obj, &l.params.params, cfg.posterior.curvature)?
        }
        PosteriorMethod::Vi => {
            let vi = l.params.vi.as_ref().ok_or_else(|| {
                CliError::Usage(format!("{} holds no VOGN state; retrain with optimizer.kind = \"vogn\"", PARAMS_FILE))
            })?;
            let state = VognState::new(vi.mu.clone(), vi.scale.mode(), cfg.delta, vi.beta, vi.num_samples, cfg.seed)?
                .with_scale(vi.scale.clone())?;
            vi_posterior(&state)?
        }
    };
    write_posterior(&ctx.out, &l.params.config_hash, &cfg.posterior_hash()?, &q)?;
    Ok(vec![ctx.out.join(POSTERIOR_FILE), ctx.out.join(POSTERIOR_SIDECAR)])
}

fn predictive_header(input_dim: usize, outputs: usize) -> Vec<String> {
    let mut h: Vec<String> = if input_dim == 1 {
        vec!["x".into()]
    } else {
        (0..input_dim).map(|d| format!("x{d}")).collect()
    };
    for name in ["mean", "aleatoric", "epistemic", "total"] {
        if outputs == 1 {
            h.push(name.into());
        } else {
            h.extend((0..outputs).map(|k| format!("{name}_{k}")));
        }
    }
    h
}

fn predictive_row(x: &[f64], d: &PredictiveDist<f64>) -> Vec<String> {
    x.iter()
        .chain(&d.mean)
        .chain(&d.aleatoric_diag())
        .chain(&d.epistemic_diag())
        .chain(&d.total_diag())
        .map(f64::to_string)
        .collect()
}

pub fn predict_grid(ctx: &Ctx, method: Option<PredictMethod>, samples: Option<usize>) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.cfg;
    let spec = cfg
        .predict
        .as_ref()
        .ok_or_else(|| CliError::Usage("config has no `predict` section".into()))?;
    let method = method.unwrap_or(spec.method);
    let samples = samples.unwrap_or(spec.samples);
    if samples == 0 {
        return Err(CliError::Usage("--samples must be at least 1".into()));
    }
    let l = load_trained(ctx)?;
    let q = load_posterior(ctx)?;
    let input_dim = l.params.model.input_dim;
    if spec.grid.len() != input_dim {
        return Err(CliError::Usage(format!(
            "predict.grid has {} axes but the model takes {input_dim} inputs",
            spec.grid.len()
        )));
    }
    let points = grid_points(&spec.grid);
    // One seed for the whole grid, so MC curves are smooth in x.
    let mc_seed = derive_seed(cfg.seed, 3);
    let (model, loss) = (&l.model, &cfg.loss);
    let rows: Vec<PredictiveDist<f64>> = pool(ctx.jobs)?.install(|| {
        points
            .par_iter()
            .map(|x| match method {
                PredictMethod::Dnn2gp => predict(model, loss, &q, x),
                PredictMethod::Mc => mc_predict(model, loss, &q, x, samples, mc_seed),
            })
            .collect::<d2g_core::Result<_>>()
    })?;
    let outputs = rows.first().map_or(1, |d| d.mean.len());
    let path = ctx.out.join(PREDICTIVE_FILE);
    write_csv(
        &path,
        &predictive_header(input_dim, outputs),
        points.iter().zip(&rows).map(|(x, d)| predictive_row(x, d)),
    )?;
    Ok(vec![path])
}

pub fn kernel(ctx: &Ctx, summarized: Option<bool>, subsample: Option<usize>) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.cfg;
    let summarized = summarized.unwrap_or(cfg.kernel.summarized);
    let l = load_trained(ctx)?;
    let n = l.data.len();
    let mut rows: Vec<usize> = match subsample.or(cfg.kernel.subsample) {
        Some(m) if m > n => {
            return Err(CliError::Usage(format!("kernel subsample {m} exceeds the {n} training examples")));
        }
        Some(m) => sample(&mut seeded(derive_seed(cfg.seed, 4)), n, m).into_vec(),
        None => (0..n).collect(),
    };
    let labels = l.data.labels();
    match labels {
        Some(lab) => rows.sort_by_key(|&i| (lab[i], i)),
        None => rows.sort_unstable(),
    }
    let w = &l.params.params;
    let jacs = pool(ctx.jobs)?.install(|| {
        rows.par_iter()
            .map(|&i| l.model.jacobian(w, l.data.input(i)).map(|j| j.matrix))
            .collect::<d2g_core::Result<Vec<_>>>()
    })?;
    let km = ntk_kernel(&jacs, cfg.delta, summarized)?;
    let tag = |i: usize| labels.map_or_else(|| i.to_string(), |lab| lab[i].to_string());
    let header: Vec<String> = if summarized || km.outputs == 1 {
        rows.iter().map(|&i| tag(i)).collect()
    } else {
        rows.iter()
            .flat_map(|&i| (0..km.outputs).map(move |k| format!("{}:{k}", tag(i))))
            .collect()
    };
    let path = ctx.out.join(KERNEL_FILE);
    let dim = km.dim();
    write_csv(
        &path,
        &header,
        (0..dim).map(|r| km.entries.row(r).iter().map(f64::to_string).collect()),
    )?;
    Ok(vec![path])
}

pub fn evidence(ctx: &Ctx) -> Result<(Vec<PathBuf>, f64)> {
    let cfg = &ctx.cfg;
    let l = load_trained(ctx)?;
    let samples = transform_dataset(&l.model, &cfg.loss, &l.data, &l.params.params, Damping::Default)?;
    let ev = log_marginal_likelihood(&samples, cfg.delta)?;
    let artifact = EvidenceArtifact {
        config_hash: l.params.config_hash.clone(),
        log_ml: ev.log_ml,
        n_points: ev.n_points,
        delta: ev.delta,
        decomposition: ev.decomposition,
    };
    let path = ctx.out.join(EVIDENCE_FILE);
    write_json(&path, &artifact)?;
    Ok((vec![path], ev.log_ml))
}

pub fn sweep(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.cfg;
    let spec = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Usage("config has no `sweep` section".into()))?;
    let (LossKind::Squared { sigma2 }, Optimizer::Adam { alpha, .. }) = (cfg.loss, &cfg.optimizer) else {
        return Err(CliError::Usage("sweep needs squared loss and Adam".into()));
    };
    let base = RegressionSetup {
        hidden: cfg.model.hidden.clone(),
        activation: cfg.model.activation,
        sigma2,
        delta: cfg.delta,
        epochs: cfg.epochs,
        alpha: *alpha,
    };
    let draw = |seed: u64| -> d2g_core::Result<(Dataset<f64>, Dataset<f64>)> {
        match (&spec.test, spec.test_fraction) {
            (Some(test), _) => Ok((cfg.dataset.load(derive_seed(seed, 10))?, test.load(derive_seed(seed, 11))?)),
            (None, Some(f)) => data::split(&cfg.dataset.load(derive_seed(seed, 10))?, f, derive_seed(seed, 11)),
            (None, None) => unreachable!("validated when the config was loaded"),
        }
    };
    let table = d2g_core::evidence::sweep(spec.param.name(), &spec.grid, spec.repeats, cfg.seed, ctx.jobs, |value, seed| {
        let (train_set, test) = draw(seed)?;
        evidence_cell(&train_set, &test, &spec.param.apply(&base, value)?, derive_seed(seed, 12))
    })?;
    if let Some(a) = GridAgreement::from_table(&table) {
        log::info!(
            "best {} by evidence: {}, by test MSE: {}",
            spec.param.name(),
            spec.grid[a.argmax_log_ml],
            spec.grid[a.argmin_test_mse]
        );
    }
    let (cells, summary) = write_sweep(&ctx.out, &table)?;
    Ok(vec![cells, summary])
}

pub fn verify(seed: u64, quick: bool, out: Option<&Path>) -> Result<String> {
    let sizes = if quick {
        SuiteSizes {
            theorem1: 5,
            theorem2: 5,
            ggn_linear: 3,
            ggn_trained: 2,
            gradient: 10,
            duality: 10,
            kernel: 2,
        }
    } else {
        SuiteSizes::default()
    };
    let reports = run_all(seed, &sizes);
    let json = serde_json::to_string_pretty(&reports).expect("reports serialize");
    if let Some(dir) = out {
        write_atomic(&dir.join("verify.json"), json.as_bytes())?;
    }
    for r in &reports {
        log::info!("{}: max rel err {:.3e} (tol {:.0e}) {}", r.name, r.max_rel_err, r.tol, if r.pass { "ok" } else { "FAIL" });
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        println!("{json}");
        return Err(CliError::VerifyFailed(failed));
    }
    Ok(json)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Experiment {
    /// Epistemic variance inside a gap of 1-D regression data.
    Snelson,
    /// Aleatoric/epistemic split on two moons.
    Moons,
    /// Prior precision chosen by evidence on synthetic 1-D data.
    DeltaTuning,
    /// Noise level chosen by evidence on wine-like data.
    SigmaTuning,
}

#[derive(Serialize)]
struct SweepReport {
    table: d2g_core::evidence::SweepTable,
    agreement: Option<GridAgreement>,
}

/// Runs a packaged experiment over `seeds` consecutive seeds (tuning
/// experiments use one master seed) and writes a JSON summary.
pub fn experiment(which: Experiment, seed: u64, seeds: usize, jobs: usize, out: &Path) -> Result<PathBuf> {
    let seed_list: Vec<u64> = (0..seeds as u64).map(|i| seed + i).collect();
    let (name, json) = match which {
        Experiment::Snelson => {
            let setup = SnelsonSetup::default();
            let runs = pool(jobs)?.install(|| {
                seed_list
                    .par_iter()
                    .map(|&s| experiments::snelson_gap(s, &setup))
                    .collect::<d2g_core::Result<Vec<_>>>()
            })?;
            ("snelson", serde_json::to_value(&runs))
        }
        Experiment::Moons => {
            let setup = MoonsSetup::default();
            let runs = pool(jobs)?.install(|| {
                seed_list
                    .par_iter()
                    .map(|&s| experiments::moons_decomposition(s, &setup))
                    .collect::<d2g_core::Result<Vec<_>>>()
            })?;
            ("moons", serde_json::to_value(&runs))
        }
        Experiment::DeltaTuning | Experiment::SigmaTuning => {
            let setup = if which == Experiment::DeltaTuning {
                TuningSetup::synthetic_delta()
            } else {
                TuningSetup::wine_sigma()
            };
            let table = experiments::tuning_sweep(&setup, seed, jobs)?;
            let agreement = GridAgreement::from_table(&table);
            let name = if which == Experiment::DeltaTuning { "delta_tuning" } else { "sigma_tuning" };
            (name, serde_json::to_value(SweepReport { table, agreement }))
        }
    };
    let path = out.join(format!("experiment_{name}.json"));
    write_json(&path, &json.expect("outcomes serialize"))?;
    Ok(path)
}
