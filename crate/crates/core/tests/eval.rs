use proptest::prelude::*;

use cfmf::eval::{evaluate_model, sweep_csv, train_model, SWEEP_CSV_HEADER};
use cfmf::synthetic::generate_synthetic_detailed;
use cfmf::{
    fit_als, generate_synthetic, mae, run_experiment, run_sweep, Algorithm, AlsConfig, Dataset, Error, ExperimentConfig, FactorInit,
    Mixture, SelectBy, SweepAxis, SweepSpec, SyntheticSpec,
};

fn spec(users: usize, items: usize, mixture: Mixture, noise_sd: f64, density: f64) -> SyntheticSpec {
    SyntheticSpec {
        users,
        items,
        k_true: 3,
        density,
        noise_sd,
        mixture,
        seed: 12,
    }
}

fn quick() -> ExperimentConfig {
    ExperimentConfig {
        k: 4,
        top_n: 5,
        max_iter: 5,
        ..ExperimentConfig::default()
    }
}

#[test]
fn mae_examples() {
    assert_eq!(mae(&[(5.0, 5.0), (3.0, 3.0)]).unwrap(), 0.0);
    assert_eq!(mae(&[(4.0, 6.0)]).unwrap(), 2.0);
    assert_eq!(mae(&[(1.0, 2.0), (5.0, 3.0), (7.0, 7.0)]).unwrap(), 1.0);
    assert!(matches!(mae(&[]), Err(Error::Usage(_))));
}

#[test]
fn baseline_on_three_rating_toy() {
    let data = Dataset::from_triples(2, 2, &[(0, 0, 2.0), (0, 1, 4.0), (1, 0, 6.0)], &[(1, 1, 5.0)]).unwrap();
    let (report, _) = run_experiment(&data, Algorithm::Baseline, &ExperimentConfig::default()).unwrap();
    assert_eq!(report.mae, 1.0);
    assert_eq!(report.coverage, 1.0);
    assert_eq!(report.test_pairs, 1);
}

#[test]
fn v2_with_frozen_blend_reports_v1_mae() {
    let data = generate_synthetic(&spec(60, 40, Mixture::PerUser, 0.5, 0.2)).unwrap();
    let cfg = ExperimentConfig {
        lambda4: Some(0.0),
        lr4: Some(0.0),
        lr2: Some(0.005),
        ..quick()
    };
    let (v1, _) = run_experiment(&data, Algorithm::CfMfV1, &cfg).unwrap();
    let (v2, _) = run_experiment(&data, Algorithm::CfMfV2, &cfg).unwrap();
    assert_eq!(v1.mae.to_bits(), v2.mae.to_bits());
}

#[test]
fn run_experiment_is_deterministic() {
    let data = generate_synthetic(&spec(60, 40, Mixture::PerUser, 0.5, 0.2)).unwrap();
    for algo in Algorithm::ALL {
        let (a, _) = run_experiment(&data, algo, &quick()).unwrap();
        let (b, _) = run_experiment(&data, algo, &quick()).unwrap();
        assert_eq!(a.mae.to_bits(), b.mae.to_bits(), "{algo}");
        assert_eq!(a.to_json(false), b.to_json(false), "{algo}");
        assert!(a.mae >= 0.0 && (0.0..=1.0).contains(&a.coverage));
    }
}

#[test]
fn reports_carry_training_traces() {
    let data = generate_synthetic(&spec(60, 40, Mixture::PerUser, 0.5, 0.2)).unwrap();
    let (r, _) = run_experiment(&data, Algorithm::CfMfV2, &quick()).unwrap();
    assert_eq!(r.per_epoch.as_ref().unwrap().len(), 5);
    assert!(r.selected_epoch.unwrap() <= 5);
    let json = r.to_json(false);
    assert!(!json.contains("wall_time"));
    assert!(r.to_json(true).contains("wall_time"));
    let (b, _) = run_experiment(&data, Algorithm::Baseline, &quick()).unwrap();
    assert!(b.per_epoch.is_none());
}

#[test]
fn neighbourhood_coverage_counts_fallbacks() {
    let data = generate_synthetic(&spec(60, 40, Mixture::PerUser, 0.5, 0.1)).unwrap();
    let (item, _) = run_experiment(&data, Algorithm::CfItem, &quick()).unwrap();
    let (user, _) = run_experiment(&data, Algorithm::CfUser, &quick()).unwrap();
    assert!(item.coverage < 1.0 && item.coverage > 0.0);
    assert!(user.coverage > 0.0 && user.coverage <= 1.0);
}

#[test]
fn clamping_never_hurts() {
    let data = generate_synthetic(&spec(60, 40, Mixture::PerUser, 1.0, 0.2)).unwrap();
    for algo in [Algorithm::MfAls, Algorithm::CfMfV1] {
        let (model, _) = train_model(&data, algo, &quick()).unwrap();
        let (raw, _) = evaluate_model(&model, &data, false).unwrap();
        let (clamped, _) = evaluate_model(&model, &data, true).unwrap();
        assert!(clamped <= raw);
    }
}

#[test]
fn empty_test_set_is_a_usage_error() {
    let data = Dataset::from_triples(2, 2, &[(0, 0, 2.0), (1, 1, 4.0)], &[]).unwrap();
    assert!(data.test_empty);
    assert!(matches!(run_experiment(&data, Algorithm::Baseline, &quick()), Err(Error::Usage(_))));
}

#[test]
fn noiseless_bias_data_is_recovered_by_baseline() {
    let s = generate_synthetic_detailed(&spec(300, 300, Mixture::PureBias, 0.0, 1.0)).unwrap();
    let (report, _) = run_experiment(&s.dataset, Algorithm::Baseline, &ExperimentConfig::default()).unwrap();
    assert!(report.mae < 0.05, "baseline MAE {}", report.mae);
}

#[test]
fn global_mean_upper_bounds_baseline_on_bias_data() {
    let data = generate_synthetic(&spec(100, 80, Mixture::PureBias, 0.3, 0.3)).unwrap();
    let (report, _) = run_experiment(&data, Algorithm::Baseline, &ExperimentConfig::default()).unwrap();
    let g = data.train.mean_rating().unwrap();
    let pairs: Vec<(f64, f64)> = data.test.triples().iter().map(|t| (g, t.value)).collect();
    assert!(mae(&pairs).unwrap() >= report.mae);
}

#[test]
fn noiseless_low_rank_data_is_recovered_by_als() {
    let s = generate_synthetic_detailed(&SyntheticSpec {
        k_true: 2,
        ..spec(10, 10, Mixture::PureFactor, 0.0, 1.0)
    })
    .unwrap();
    assert_eq!(s.clamped, 0);
    for k in [2, 3] {
        let cfg = AlsConfig {
            k,
            lambda: 1e-9,
            max_iter: 300,
            epsilon: 1e-300,
            init: FactorInit::Uniform { seed: 5 },
            raw_targets: false,
            select_by: SelectBy::Final,
        };
        let (model, _) = fit_als(&s.dataset, &cfg).unwrap();
        let t = s.dataset.train.triples();
        let sse: f64 = t.iter().map(|r| (model.predict(r.user, r.item).unwrap() - r.value).powi(2)).sum();
        let rmse = (sse / t.len() as f64).sqrt();
        assert!(rmse < 1e-3, "K={k}: train RMSE {rmse}");
    }
}

#[test]
fn sweep_examples() {
    let data = generate_synthetic(&spec(40, 30, Mixture::PerUser, 0.5, 0.3)).unwrap();
    let n = SweepSpec::new(SweepAxis::N, vec![5, 10], quick()).unwrap();
    let rows = run_sweep(&data, &n, &[Algorithm::CfItem], 1).unwrap();
    assert_eq!(rows.len(), 2);
    let csv = sweep_csv(&rows);
    assert_eq!(csv.lines().next(), Some(SWEEP_CSV_HEADER));
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("cf_item,N,5,"));

    let grid = vec![5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 60, 70, 80, 90, 100];
    let fixed = ExperimentConfig { max_iter: 2, ..quick() };
    let k = SweepSpec::new(SweepAxis::K, grid, fixed).unwrap();
    let rows = run_sweep(&data, &k, &[Algorithm::CfMfV1, Algorithm::CfMfV2], 4).unwrap();
    assert_eq!(rows.len(), 30);

    assert!(matches!(run_sweep(&data, &n, &[], 1), Err(Error::Usage(_))));
    assert!(SweepSpec::new(SweepAxis::K, vec![10, 5], quick()).is_err());
}

#[test]
fn parallel_sweep_matches_sequential() {
    let data = generate_synthetic(&spec(40, 30, Mixture::PerUser, 0.5, 0.3)).unwrap();
    let s = SweepSpec::new(SweepAxis::K, vec![2, 4, 6], quick()).unwrap();
    let algos = [Algorithm::MfAls, Algorithm::CfMfV1];
    let a = run_sweep(&data, &s, &algos, 1).unwrap();
    let b = run_sweep(&data, &s, &algos, 3).unwrap();
    let key = |rows: &[cfmf::eval::SweepRow]| rows.iter().map(|r| (r.algorithm, r.value, r.report.mae.to_bits())).collect::<Vec<_>>();
    assert_eq!(key(&a), key(&b));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn sweep_row_count(n_values in 1usize..4, n_algos in 1usize..4) {
        let data = generate_synthetic(&spec(20, 15, Mixture::PerUser, 0.5, 0.4)).unwrap();
        let values: Vec<usize> = (1..=n_values).map(|v| v * 2).collect();
        let algos = &[Algorithm::Baseline, Algorithm::CfItem, Algorithm::CfUser][..n_algos];
        let s = SweepSpec::new(SweepAxis::N, values, quick()).unwrap();
        prop_assert_eq!(run_sweep(&data, &s, algos, 2).unwrap().len(), n_values * n_algos);
    }
}
