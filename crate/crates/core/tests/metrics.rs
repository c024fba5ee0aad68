use icu_policy::eval::{
    aggregate_over_seeds, auprc, auroc, calibration_curve, precision_at_i, quantile_groups, quantile_relationships,
};
use icu_policy::tasks::{NUM_INTERVENTIONS, NUM_TASKS};
use proptest::prelude::*;

/// Fraction of (positive, negative) pairs ranked correctly, ties worth 1/2.
fn pairwise_auroc(s: &[f64], y: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] && !y[j] {
                pairs += 1.0;
                if s[i] > s[j] {
                    wins += 1.0;
                } else if s[i] == s[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Precision and recall at every distinct threshold `score >= t`, from the
/// highest threshold down, integrated as a step function in recall.
fn stepwise_ap(s: &[f64], y: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = s.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let positives = y.iter().filter(|v| **v).count() as f64;
    let (mut ap, mut last_recall) = (0.0, 0.0);
    for t in thresholds {
        let predicted: Vec<usize> = (0..s.len()).filter(|&i| s[i] >= t).collect();
        let tp = predicted.iter().filter(|&&i| y[i]).count() as f64;
        let recall = tp / positives;
        ap += (recall - last_recall) * tp / predicted.len() as f64;
        last_recall = recall;
    }
    ap
}

/// Intervention k is in the top I iff fewer than I others outrank it,
/// where j outranks k when p_j > p_k or they tie and j comes first.
fn enumerated_precision(p: &[f64; NUM_TASKS], truth: &[bool; NUM_INTERVENTIONS]) -> Option<f64> {
    let i = truth.iter().filter(|v| **v).count();
    if i == 0 {
        return None;
    }
    let mut hits = 0;
    for k in 0..NUM_INTERVENTIONS {
        let above = (0..NUM_INTERVENTIONS)
            .filter(|&j| p[j + 1] > p[k + 1] || (p[j + 1] == p[k + 1] && j < k))
            .count();
        if above < i && truth[k] {
            hits += 1;
        }
    }
    Some(hits as f64 / i as f64)
}

/// Scores drawn from a small grid when `ties` is set, to force tie blocks.
fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..=50, any::<bool>()).prop_flat_map(|(n, ties)| {
        let score = if ties {
            (0u8..4).prop_map(|k| k as f64 / 4.0).boxed()
        } else {
            (0.0f64..1.0).boxed()
        };
        (prop::collection::vec(score, n), prop::collection::vec(any::<bool>(), n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn auroc_matches_pairwise_counting((s, y) in instance()) {
        let both = y.iter().any(|v| *v) && y.iter().any(|v| !*v);
        match auroc(&s, &y) {
            Ok(v) => {
                prop_assert!(both);
                prop_assert!((v - pairwise_auroc(&s, &y)).abs() <= 1e-12);
            }
            Err(_) => prop_assert!(!both),
        }
    }

    #[test]
    fn auprc_matches_step_integration((s, y) in instance()) {
        match auprc(&s, &y) {
            Ok(v) => prop_assert!((v - stepwise_ap(&s, &y)).abs() <= 1e-12),
            Err(_) => prop_assert!(y.iter().all(|v| !*v)),
        }
    }

    #[test]
    fn precision_matches_enumeration(
        p in prop::array::uniform14((0u8..5).prop_map(|k| k as f64 / 4.0)),
        picks in prop::collection::btree_set(0usize..NUM_INTERVENTIONS, 0..=4),
    ) {
        let mut truth = [false; NUM_INTERVENTIONS];
        for k in picks {
            truth[k] = true;
        }
        prop_assert_eq!(precision_at_i(&p, &truth), enumerated_precision(&p, &truth));
    }

    #[test]
    fn auroc_is_invariant_to_monotone_maps((s, y) in instance()) {
        if let Ok(v) = auroc(&s, &y) {
            let mapped: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
            prop_assert_eq!(v, auroc(&mapped, &y).unwrap());
        }
    }

    #[test]
    fn equal_scores_give_prevalence(y in prop::collection::vec(any::<bool>(), 1..50)) {
        let s = vec![0.3; y.len()];
        if let Ok(v) = auprc(&s, &y) {
            let prevalence = y.iter().filter(|b| **b).count() as f64 / y.len() as f64;
            prop_assert!((v - prevalence).abs() < 1e-15);
        }
    }

    #[test]
    fn calibration_counts_sum_to_n((s, y) in instance()) {
        let bins = calibration_curve(&s, &y, 10).unwrap();
        prop_assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), s.len());
        prop_assert!(bins.iter().all(|b| b.count > 0));
    }

    #[test]
    fn quantile_groups_partition(values in prop::collection::vec(-5.0f64..5.0, 10..80), g in 1usize..10) {
        let groups = quantile_groups(&values, g).unwrap();
        let mut sizes = vec![0usize; g];
        for k in &groups {
            sizes[*k] += 1;
        }
        prop_assert_eq!(sizes.iter().sum::<usize>(), values.len());
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        // Lower groups never hold larger values.
        for a in 0..values.len() {
            for b in 0..values.len() {
                if groups[a] < groups[b] {
                    prop_assert!(values[a] <= values[b]);
                }
            }
        }
    }

    #[test]
    fn seed_aggregation_is_order_free(mut v in prop::collection::vec(0.0f64..1.0, 2..8)) {
        let (m, s) = aggregate_over_seeds(&v).unwrap();
        v.reverse();
        let (m2, s2) = aggregate_over_seeds(&v).unwrap();
        prop_assert!((m - m2).abs() < 1e-12 && (s - s2).abs() < 1e-12);
    }
}

#[test]
fn spec_examples() {
    assert_eq!(auroc(&[0.9, 0.8, 0.3, 0.2], &[true, false, true, false]).unwrap(), 0.75);
    assert_eq!(auprc(&[0.4, 0.3, 0.2, 0.1], &[false, false, false, true]).unwrap(), 0.25);
}

#[test]
fn strictly_increasing_values_form_contiguous_blocks() {
    let v: Vec<f64> = (0..12).map(f64::from).collect();
    assert_eq!(quantile_groups(&v, 4).unwrap(), vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]);
}

#[test]
fn quantile_tables_shape() {
    let preds: Vec<[f64; NUM_TASKS]> = (0..57)
        .map(|i| std::array::from_fn(|j| ((i * 7 + j * 3) % 11) as f64 / 11.0))
        .collect();
    let t = quantile_relationships(&preds).unwrap();
    assert_eq!(t.mortality_quantiles.len(), 5);
    assert_eq!(t.intervention_deciles.len(), 130);
    assert_eq!(t.mortality_quantiles.iter().map(|r| r.count).sum::<usize>(), 57);
    assert!(quantile_relationships(&preds[..4]).is_err());
}
