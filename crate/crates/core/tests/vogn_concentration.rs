use d2g_core::data::Dataset;
use d2g_core::loss::LossKind;
use d2g_core::model::{Activation, Mlp, MlpConfig, Model};
use d2g_core::objective::{Curvature, CurvatureMode, Objective};
use d2g_core::optim::{vogn_step, VognState};
use d2g_core::Matrix;
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

const SIGMA2: f64 = 0.5;

/// `Σᵢ σ⁻² J_ik²` summed over outputs, per parameter.
fn ggn_diag(model: &Mlp, data: &Dataset<f64>, w: &[f64]) -> Vec<f64> {
    let mut d = vec![0.0; w.len()];
    for i in 0..data.len() {
        let j = model.jacobian(w, data.input(i)).unwrap().matrix;
        for k in 0..j.rows() {
            for (acc, v) in d.iter_mut().zip(j.row(k)) {
                *acc += v * v / SIGMA2;
            }
        }
    }
    d
}

#[test]
fn sampled_ggn_diagonal_concentrates_on_reference() {
    let model = Mlp::new(MlpConfig::new(1, vec![3], 1, Activation::Tanh)).unwrap();
    let xs = Matrix::from_vec(4, 1, vec![-1.5, -0.2, 0.4, 1.3]).unwrap();
    let ys = Matrix::from_vec(4, 1, vec![0.3, -0.1, 0.5, 0.9]).unwrap();
    let data = Dataset::regression("toy", xs, ys).unwrap();
    let loss = LossKind::Squared { sigma2: SIGMA2 };
    let delta = 1.0;
    let obj = Objective::new(&model, &loss, &data, delta).unwrap();
    let p = Model::<f64>::param_count(&model);
    let mu: Vec<f64> = (0..p).map(|i| 0.4 * ((i as f64) * 1.7).sin()).collect();
    let s0 = 3.0;
    let samples = 4000;

    // β = 1 forgets the old scale, so the new one is the sample average.
    let mut st = VognState::new(mu.clone(), CurvatureMode::Diagonal, delta, 1.0, samples, 21)
        .unwrap()
        .with_scale(Curvature::Diagonal(vec![s0; p]))
        .unwrap();
    let points = vogn_step(&obj, &mut st).unwrap();
    let got = st.s.diagonal();

    let per_point: Vec<Vec<f64>> = points.iter().map(|w| ggn_diag(&model, &data, w)).collect();
    let n = samples as f64;
    let mean: Vec<f64> = (0..p).map(|c| per_point.iter().map(|d| d[c]).sum::<f64>() / n).collect();
    let se: Vec<f64> = (0..p)
        .map(|c| {
            let var = per_point.iter().map(|d| (d[c] - mean[c]).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        })
        .collect();
    for c in 0..p {
        assert!((got[c] - mean[c]).abs() <= 1e-10 * mean[c].abs().max(1.0));
    }

    // Independent reference: 10⁶ draws from N(μ, (s0 + δ)⁻¹ I).
    let sd = 1.0 / (s0 + delta).sqrt();
    let mut rng = StdRng::seed_from_u64(99);
    let draws = 1_000_000;
    let mut reference = vec![0.0; p];
    let mut w = vec![0.0; p];
    for _ in 0..draws {
        for (wi, m) in w.iter_mut().zip(&mu) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *wi = m + sd * z;
        }
        for (r, v) in reference.iter_mut().zip(ggn_diag(&model, &data, &w)) {
            *r += v / draws as f64;
        }
    }
    // The output bias has a constant GGN, hence zero spread.
    for c in 0..p {
        assert!(
            (got[c] - reference[c]).abs() <= 3.0 * se[c] + 1e-9 * reference[c].abs(),
            "coordinate {c}: {} vs reference {} (se {})",
            got[c],
            reference[c],
            se[c]
        );
    }
}
