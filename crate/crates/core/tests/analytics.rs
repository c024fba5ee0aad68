use icu_policy::analytics::{
    conditional_affinities, kmeans, patient_compare, radar_profile, tsne, TsneConfig,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian_points(n: usize, dim: usize, offset: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| { let z: f64 = StandardNormal.sample(&mut *rng); offset + z })
                .collect()
        })
        .collect()
}

/// Best accuracy of any line in the plane, scanning directions in 0.5 degree
/// steps and every split point along each projection.
fn best_line_accuracy(coords: &[[f64; 2]], labels: &[bool]) -> f64 {
    let n = coords.len();
    let mut best = 0usize;
    for step in 0..360 {
        let theta = step as f64 * std::f64::consts::PI / 360.0;
        let (c, s) = (theta.cos(), theta.sin());
        let mut proj: Vec<(f64, bool)> = coords.iter().zip(labels).map(|(p, y)| (p[0] * c + p[1] * s, *y)).collect();
        proj.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total_pos = labels.iter().filter(|y| **y).count();
        let mut pos_below = 0;
        for k in 0..=n {
            if k > 0 && proj[k - 1].1 {
                pos_below += 1;
            }
            let neg_below = k - pos_below;
            // Below the cut predicted negative, or the reverse.
            let a = neg_below + (total_pos - pos_below);
            best = best.max(a).max(n - a);
        }
    }
    best as f64 / n as f64
}

#[test]
fn tsne_reduces_kl_on_gaussian_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let points = gaussian_points(500, 13, 0.0, &mut rng);
    let e = tsne(&points, &TsneConfig::default()).unwrap();
    assert!(e.kl < e.initial_kl, "{} !< {}", e.kl, e.initial_kl);
    assert_eq!(e.coords.len(), 500);
    assert!(e.coords.iter().flatten().all(|v| v.is_finite()));
}

#[test]
fn tsne_separates_two_blobs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut points = gaussian_points(200, 13, 0.0, &mut rng);
    points.extend(gaussian_points(200, 13, 4.0, &mut rng));
    let labels: Vec<bool> = (0..400).map(|i| i >= 200).collect();
    let config = TsneConfig {
        seed: 5,
        ..TsneConfig::default()
    };
    let e = tsne(&points, &config).unwrap();
    let acc = best_line_accuracy(&e.coords, &labels);
    assert!(acc > 0.95, "accuracy {acc}");
    let again = tsne(&points, &config).unwrap();
    assert_eq!(e, again);
}

#[test]
fn affinity_rows_are_distributions_at_target_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let points = gaussian_points(120, 13, 0.0, &mut rng);
    let rows = conditional_affinities(&points, 30.0).unwrap();
    for (i, row) in rows.iter().enumerate() {
        assert!(row.iter().all(|p| *p >= 0.0));
        assert_eq!(row[i], 0.0);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let entropy: f64 = row.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum();
        assert!((entropy - 30.0f64.ln()).abs() < 1e-5, "row {i}: {entropy}");
    }
}

#[test]
fn kmeans_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let points = gaussian_points(300, 13, 0.0, &mut rng);
    let a = kmeans(&points, 9, 11, 300, 1e-6).unwrap();
    let b = kmeans(&points, 9, 11, 300, 1e-6).unwrap();
    assert_eq!(a, b);
    assert!(a.assignments.iter().all(|c| *c < 9));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn kmeans_inertia_never_increases(
        points in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 12..60),
        k in 1usize..8,
        seed in 0u64..1000,
    ) {
        let r = kmeans(&points, k, seed, 300, 1e-6).unwrap();
        for w in r.inertia_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "{:?}", r.inertia_trace);
        }
        prop_assert_eq!(*r.inertia_trace.last().unwrap(), r.inertia);
    }

    #[test]
    fn compare_swap_negates(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let preds: Vec<[f64; 14]> = (0..3)
            .map(|_| std::array::from_fn(|_| rand::Rng::random::<f64>(&mut rng)))
            .collect();
        let ids: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let ab = patient_compare(&ids, &preds, "a", "b").unwrap();
        let ba = patient_compare(&ids, &preds, "b", "a").unwrap();
        prop_assert_eq!(ab.len(), 13);
        for (x, y) in ab.iter().zip(&ba) {
            prop_assert_eq!(&x.intervention, &y.intervention);
            prop_assert_eq!(x.difference, -y.difference);
        }
        let aa = patient_compare(&ids, &preds, "a", "a").unwrap();
        prop_assert!(aa.iter().all(|r| r.difference == 0.0));
    }
}

#[test]
fn single_cluster_radar_equals_global() {
    let preds: Vec<[f64; 14]> = (0..10).map(|i| std::array::from_fn(|j| ((i + j) % 7) as f64 / 7.0)).collect();
    let r = radar_profile(&[0; 10], 1, &preds).unwrap();
    assert_eq!(r.clusters.len(), 1);
    for (a, b) in r.clusters[0].means.iter().zip(&r.global) {
        assert!((a - b).abs() < 1e-15);
    }
}
