use d2g_core::data::wine_like;
use d2g_core::experiments::{tuning_sweep, RegressionSetup, TunedParam, TuningData, TuningSetup};
use d2g_core::loss::LossKind;
use d2g_core::model::{param_count, Activation, Mlp, MlpConfig};
use d2g_core::objective::{CurvatureMode, Objective};
use d2g_core::optim::{train, Optimizer, TrainOptions};
use d2g_core::posterior::laplace_ggn;

#[test]
fn strong_prior_bounds_posterior_variances() {
    let data = wine_like::<f64>(4, 1599).unwrap();
    assert_eq!(data.len(), 1599);
    let cfg = MlpConfig::new(data.input_dim(), vec![20, 20], 1, Activation::Tanh);
    assert_eq!(param_count(&cfg), 701);
    let model = Mlp::new(cfg).unwrap();
    let loss = LossKind::Squared { sigma2: 0.64 * 0.64 };
    let obj = Objective::new(&model, &loss, &data, 30.0).unwrap();
    let w = train(&obj, &Optimizer::adam(0.01), &TrainOptions::full_batch(50, 4))
        .unwrap()
        .final_params;
    // Precision ⪰ δI whether or not training has converged.
    for mode in [CurvatureMode::Full, CurvatureMode::Diagonal] {
        let q = laplace_ggn(&obj, &w, mode).unwrap();
        assert!(q.variances().iter().all(|&v| v > 0.0 && v <= 1.0 / 30.0));
    }
}

#[test]
fn width_grid_gives_finite_evidence_in_grid_order() {
    let setup = TuningSetup {
        data: TuningData::WineLike { n: 200, test_fraction: 0.5 },
        base: RegressionSetup {
            hidden: vec![20],
            activation: Activation::Tanh,
            sigma2: 0.64 * 0.64,
            delta: 3.0,
            epochs: 100,
            alpha: 0.01,
        },
        param: TunedParam::Width,
        grid: vec![5.0, 10.0, 20.0, 40.0],
        repeats: 1,
    };
    let table = tuning_sweep(&setup, 8, 1).unwrap();
    let values: Vec<f64> = table.rows.iter().map(|r| r.param_value).collect();
    assert_eq!(values, setup.grid);
    for r in &table.rows {
        assert_eq!(r.param_name, "width");
        assert_eq!((r.completed, r.failed), (1, 0));
        assert!(r.log_ml.mean.is_finite());
    }
}
