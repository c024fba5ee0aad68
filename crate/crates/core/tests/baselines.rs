use icu_policy::baselines::{
    fit_logistic, penalized_log_likelihood, predict_logistic, raw_severity, BaselineSet, LogisticModel,
    SeverityVariant,
};
use icu_policy::cohort_sim::{generate_cohort, SimConfig};
use icu_policy::math::sigmoid;
use icu_policy::record::{Event, PatientRecord};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn recovers_planted_coefficients() {
    let truth = [1.0, -0.5, 0.25];
    let intercept = -0.3;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for _ in 0..10_000 {
        let row: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z = intercept + row.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>();
        y.push(rng.random::<f64>() < sigmoid(z));
        x.push(row);
    }
    let (model, trace) = fit_logistic(&x, &y, 1e-6, "planted").unwrap();
    assert!(trace.converged);
    for (w, t) in model.weights.iter().zip(&truth) {
        assert!((w - t).abs() < 0.1, "{w} vs {t}");
    }
    assert!((model.intercept - intercept).abs() < 0.1);
}

#[test]
fn zero_model_starts_at_one_half() {
    let x = vec![vec![1.0, 2.0], vec![-1.0, 0.5]];
    let y = [true, false];
    let zero = LogisticModel::zeros(2);
    assert_eq!(predict_logistic(&zero, &x[0]).unwrap(), 0.5);
    let (_, trace) = fit_logistic(&x, &y, 1e-3, "t").unwrap();
    assert!((trace.objective[0] - penalized_log_likelihood(&zero, &x, &y, 1e-3)).abs() < 1e-15);
    assert!((trace.objective[0] + std::f64::consts::LN_2).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn objective_is_monotone(
        rows in prop::collection::vec((prop::collection::vec(-3.0f64..3.0, 4), any::<bool>()), 4..60),
        l2 in 1e-6f64..1.0,
    ) {
        let x: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
        let y: Vec<bool> = rows.iter().map(|r| r.1).collect();
        prop_assume!(y.iter().any(|v| *v) && y.iter().any(|v| !*v));
        let (_, trace) = fit_logistic(&x, &y, l2, "t").unwrap();
        for w in trace.objective.windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn extraction_ignores_event_order(seed in 0u64..200) {
        let cfg = SimConfig { n_patients: 1, seed, ..SimConfig::default() };
        let (records, _) = generate_cohort(&cfg).unwrap();
        let record = &records[0];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shuffled: Vec<Event> = record.window(24.0).cloned().collect();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let permuted = PatientRecord { events: shuffled, ..record.clone() };
        for variant in SeverityVariant::ALL {
            prop_assert_eq!(raw_severity(record, variant), raw_severity(&permuted, variant));
        }
    }
}

#[test]
fn baseline_set_round_trips_and_predicts() {
    let cfg = SimConfig {
        n_patients: 400,
        seed: 3,
        ..SimConfig::default()
    };
    let (records, truth) = generate_cohort(&cfg).unwrap();
    let labels: Vec<[bool; 14]> = truth.iter().map(|g| g.labels.to_array()).collect();
    let set = BaselineSet::fit(&records[..300], &labels[..300], 1e-3).unwrap();
    assert_eq!(set.get(SeverityVariant::SofaLike).unwrap().scaler.medians.len(), 6);
    assert_eq!(set.get(SeverityVariant::SapsIiLike).unwrap().scaler.medians.len(), 17);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("baselines.json");
    set.save(&path).unwrap();
    let back = BaselineSet::load(&path).unwrap();
    assert_eq!(back, set);
    for model in &set.models {
        let preds = model.predict_all(&records[300..]).unwrap();
        assert!(preds.iter().flatten().all(|p| *p > 0.0 && *p < 1.0));
    }
}
