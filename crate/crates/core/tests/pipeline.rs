use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdt_core::density::Sample;
use sdt_core::model::{make_normal_model, make_poisson_model, ConstraintSet, ParametricModel};
use sdt_core::robustness::{draw_contaminated, ContaminationSpec};
use sdt_core::testing::{run_sdt, TestSpec};

fn normal_sample(n: usize, mu: f64, sigma: f64, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw_contaminated(&make_normal_model(), &[mu, sigma], &ContaminationSpec::none(), n, &mut rng).unwrap()
}

fn mu_test(mu0: f64, beta: f64, gamma: f64, lambda: f64) -> TestSpec {
    let c = ConstraintSet::fix(2, &[(0, mu0)]).unwrap();
    TestSpec::new(Arc::new(make_normal_model()), c, beta, gamma, lambda).unwrap()
}

#[test]
fn statistic_is_affine_invariant() {
    let s = normal_sample(40, 0.2, 1.0, 3);
    let spec = mu_test(0.0, 0.3, 0.3, 0.5);
    let base = run_sdt(&s, &spec).unwrap();
    let moved = Sample::new(s.observations().iter().map(|x| 5.0 + 3.0 * x).collect()).unwrap();
    let shifted = run_sdt(&moved, &mu_test(5.0, 0.3, 0.3, 0.5)).unwrap();
    // S_(γ,λ) scales by σ^(−γ) under a change of scale
    let scaled = shifted.statistic * 3.0f64.powf(0.3);
    assert!((scaled - base.statistic).abs() < 1e-6 * (1.0 + base.statistic));
    assert!((shifted.p_value - base.p_value).abs() < 1e-6);
}

#[test]
fn robust_test_ignores_a_gross_outlier() {
    let clean = normal_sample(50, 0.0, 1.0, 8);
    let mut obs = clean.observations().to_vec();
    obs.push(40.0);
    let dirty = Sample::new(obs).unwrap();
    let robust = mu_test(0.0, 0.5, 0.5, 0.0);
    let a = run_sdt(&clean, &robust).unwrap();
    let b = run_sdt(&dirty, &robust).unwrap();
    assert!((a.p_value - b.p_value).abs() < 0.05);
    let mle = mu_test(0.0, 0.0, 0.0, 0.0);
    let c = run_sdt(&clean, &mle).unwrap();
    let d = run_sdt(&dirty, &mle).unwrap();
    assert!((c.statistic - d.statistic).abs() > 10.0 * (a.statistic - b.statistic).abs());
}

#[test]
fn poisson_rate_test() {
    let model: Arc<dyn ParametricModel> = Arc::new(make_poisson_model());
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let s = draw_contaminated(model.as_ref(), &[3.0], &ContaminationSpec::none(), 200, &mut rng).unwrap();
    let at_truth = TestSpec::new(model.clone(), ConstraintSet::fix(1, &[(0, 3.0)]).unwrap(), 0.3, 0.3, 0.0).unwrap();
    let r = run_sdt(&s, &at_truth).unwrap();
    assert!(r.p_value > 0.01);
    assert_eq!(r.restricted_fit.theta_hat, vec![3.0]);
    let far = TestSpec::new(model, ConstraintSet::fix(1, &[(0, 4.0)]).unwrap(), 0.3, 0.3, 0.0).unwrap();
    assert!(run_sdt(&s, &far).unwrap().reject);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reports_are_well_formed(
        seed in 0u64..10_000,
        mu in -1.0f64..1.0,
        beta in 0.0f64..0.8,
        gamma in 0.0f64..0.8,
        lambda in -1.0f64..1.0,
    ) {
        let s = normal_sample(30, mu, 1.0, seed);
        let r = run_sdt(&s, &mu_test(0.0, beta, gamma, lambda)).unwrap();
        prop_assert!(r.statistic >= 0.0 && r.statistic.is_finite());
        prop_assert!((0.0..=1.0).contains(&r.p_value));
        prop_assert_eq!(r.reject, r.statistic > r.critical_value);
        prop_assert_eq!(r.restricted_fit.theta_hat[0], 0.0);
        prop_assert!(r.unrestricted_fit.converged && r.restricted_fit.converged);
    }
}
