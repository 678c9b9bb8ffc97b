mod common;

use lcmdiv::fixtures;
use lcmdiv::model::manifest_distribution;
use lcmdiv::simulation::{
    contaminated_distribution, mse_summary, run_study_with, sample_multinomial, ReplicateEstimate,
    SimulationPlan,
};
use lcmdiv::ParameterVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn sampled_proportions_follow_the_model() {
    let spec = fixtures::simulation_spec();
    let p = manifest_distribution(&spec, &fixtures::simulation_theta0())
        .unwrap()
        .p;
    let n = 200_000u64;
    let counts = sample_multinomial(&p, n, &mut ChaCha8Rng::seed_from_u64(21)).unwrap();
    assert_eq!(counts.total(), n);
    // chi-square with 31 degrees of freedom; 70 is far in the upper tail
    let chi2: f64 = counts
        .counts
        .iter()
        .zip(&p)
        .filter(|(_, &pv)| pv > 0.0)
        .map(|(&c, &pv)| (c as f64 - n as f64 * pv).powi(2) / (n as f64 * pv))
        .sum();
    assert!(chi2 < 70.0, "chi2 = {chi2}");
}

#[test]
fn contamination_is_linear_in_epsilon() {
    let spec = fixtures::simulation_spec();
    let theta = fixtures::simulation_theta0();
    let base = manifest_distribution(&spec, &theta).unwrap().p;
    let other = manifest_distribution(
        &fixtures::contaminant_spec(),
        &fixtures::contaminant_theta(0.5),
    )
    .unwrap()
    .p;
    for eps in [0.0, 0.05, 0.3, 1.0] {
        let mixed =
            contaminated_distribution(&spec, &theta, &fixtures::contamination(0.5, eps).unwrap())
                .unwrap();
        for ((m, b), o) in mixed.p.iter().zip(&base).zip(&other) {
            assert!((m - ((1.0 - eps) * b + eps * o)).abs() < 1e-15);
        }
    }
    let c = fixtures::contamination(0.5, 1.5).unwrap();
    assert!(contaminated_distribution(&spec, &theta, &c).is_err());
}

#[test]
fn studies_are_reproducible() {
    let spec = common::two_class_spec();
    let plan = SimulationPlan {
        spec: spec.clone(),
        theta0: common::two_class_theta(),
        sample_sizes: vec![40, 400],
        a_values: vec![0.0, 1.0],
        replicates: 6,
        rng_seed: 5,
        contamination: None,
    };
    // a fitter that returns the empirical log-odds of item 1 in lambda_1
    let fitter = |counts: &lcmdiv::ObservedCounts, a: f64, seed: u64| {
        let mut theta = common::two_class_theta();
        theta.lambda[0] +=
            counts.counts[4] as f64 / counts.total() as f64 + a * 1e-3 + (seed % 7) as f64 * 1e-6;
        Ok((theta, 0.0))
    };
    let one = run_study_with(&plan, fitter).unwrap();
    let two = run_study_with(&plan, fitter).unwrap();
    assert_eq!(one, two);
    assert_eq!(one.rows.len(), 4);
    assert!(one.rows.iter().all(|r| r.n_success == 6 && r.n_failed == 0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mse_dominates_squared_bias(seed in any::<u64>(), n in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = common::two_class_spec();
        let theta0 = common::two_class_theta();
        let estimates: Vec<ReplicateEstimate> = (0..n)
            .map(|_| {
                let flat: Vec<f64> = theta0.flat().iter().map(|x| x + rng.random_range(-1.0..1.0)).collect();
                ReplicateEstimate::from_theta(&spec, ParameterVector::from_flat(spec.t, &flat), 0.0).unwrap()
            })
            .collect();
        let s = mse_summary(&estimates, &theta0, &spec).unwrap();
        for (mse, bias) in [
            (s.mse_lambda, s.bias_lambda),
            (s.mse_eta, s.bias_eta),
            (s.mse_theta, s.bias_theta),
            (s.mse_p, s.bias_p),
            (s.mse_w, s.bias_w),
            (s.mse_pw, s.bias_pw),
        ] {
            prop_assert!(bias >= 0.0);
            prop_assert!(mse >= bias - 1e-10);
        }
        let (t, u) = (spec.t as f64, spec.u as f64);
        prop_assert!((s.mse_theta - (t * s.mse_lambda + u * s.mse_eta) / (t + u)).abs() < 1e-14);
        let (m, k) = (spec.m as f64, spec.k as f64);
        prop_assert!((s.mse_pw - (k * m * s.mse_p + m * s.mse_w) / (m * (k + 1.0))).abs() < 1e-14);
    }

    #[test]
    fn multinomial_counts_sum_to_n(seed in any::<u64>(), n in 0u64..5000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = common::random_simplex(&mut rng, 16);
        let c = sample_multinomial(&p, n, &mut rng).unwrap();
        prop_assert_eq!(c.total(), n);
        prop_assert_eq!(c.counts.len(), 16);
    }
}
