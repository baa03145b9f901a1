use d2g_core::oracles::OracleReport;
use d2g_core::verify;
use proptest::prelude::*;

fn all_pass(reports: &[OracleReport], tol: f64) -> std::result::Result<(), TestCaseError> {
    for r in reports {
        prop_assert!(r.trials > 0 && r.pass && r.max_rel_err <= tol, "{r:?}");
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Stationary points come from the ridge/IRLS oracle, so agreement is
    // limited only by rounding.
    #[test]
    fn laplace_equals_transformed_linear_model(seed in any::<u64>()) {
        all_pass(&verify::theorem1(seed, 2), 1e-10)?;
    }

    #[test]
    fn one_voggn_step_equals_linear_model(seed in any::<u64>()) {
        all_pass(&verify::theorem2(seed, 2), 1e-9)?;
    }

    #[test]
    fn gradient_factorizes_through_jacobian(seed in any::<u64>()) {
        all_pass(&verify::gradient_identity(seed, 3), 1e-5)?;
    }

    #[test]
    fn weight_and_function_space_agree(seed in any::<u64>()) {
        all_pass(&verify::duality(seed, 2), 1e-8)?;
    }

    #[test]
    fn kernels_are_symmetric_psd_and_summable(seed in any::<u64>()) {
        for r in verify::kernel_properties(seed, 1) {
            prop_assert!(r.pass, "{r:?}");
        }
    }
}

#[test]
fn ggn_matches_hessian_on_linear_and_trained_networks() {
    for r in verify::ggn_exactness(17, 5, 3) {
        assert!(r.pass && r.trials > 0, "{r:?}");
    }
}
