//! Clustering and embedding of predicted intervention vectors.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PredictionVector;
use crate::tasks::{Intervention, NUM_INTERVENTIONS};

pub use crate::eval::quantile_groups;

pub const DEFAULT_K: usize = 9;
pub const KMEANS_MAX_ITER: usize = 300;
pub const KMEANS_TOL: f64 = 1e-6;

/// The 13 intervention probabilities of each prediction.
pub fn intervention_vectors(preds: &[PredictionVector]) -> Vec<Vec<f64>> {
    preds.iter().map(|p| p[1..].to_vec()).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("points have different dimensions".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite coordinate".into()));
    }
    Ok(dim)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each assignment step, ending with the final one.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    points
        .iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (c, centroid) in centroids.iter().enumerate() {
                let d = sq_dist(p, centroid);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .unzip()
}

fn plus_plus_seeds(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[next]));
        }
    }
    centroids
}

/// k-means++ seeding followed by Lloyd iterations until the largest
/// centroid move is below `tol` or `max_iter` is reached. A cluster that
/// loses all members is moved to the point farthest from its centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<ClusterResult> {
    let dim = check_points(points)?;
    if k == 0 || points.len() < k {
        return Err(Error::Shape(format!("cannot form {k} clusters from {} points", points.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seeds(points, k, &mut rng);
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let (labels, dists) = assign(points, &centroids);
        trace.push(dists.iter().sum());
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&labels) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut taken = vec![false; points.len()];
        let mut shift = 0.0f64;
        for c in 0..k {
            let next: Vec<f64> = if counts[c] > 0 {
                sums[c].iter().map(|s| s / counts[c] as f64).collect()
            } else {
                let far = (0..points.len())
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("n >= k");
                taken[far] = true;
                points[far].clone()
            };
            shift = shift.max(sq_dist(&next, &centroids[c]).sqrt());
            centroids[c] = next;
        }
        if shift < tol {
            break;
        }
    }
    let (assignments, dists) = assign(points, &centroids);
    let inertia = dists.iter().sum();
    trace.push(inertia);
    Ok(ClusterResult {
        assignments,
        centroids,
        inertia,
        inertia_trace: trace,
        iterations,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding2D {
    pub coords: Vec<[f64; 2]>,
    /// KL divergence at the seeded initialization.
    pub initial_kl: f64,
    pub kl: f64,
}

const ENTROPY_TOL: f64 = 1e-5;

/// Conditional affinities `p_{j|i}` with each row's Gaussian bandwidth
/// bisected until the row entropy (nats) is within 1e-5 of
/// `ln(perplexity)`.
pub fn conditional_affinities(points: &[Vec<f64>], perplexity: f64) -> Result<Vec<Vec<f64>>> {
    check_points(points)?;
    let n = points.len();
    if !(perplexity > 0.0) || (n as f64) <= 3.0 * perplexity {
        return Err(Error::Shape(format!(
            "perplexity {perplexity} needs more than {} points, got {n}",
            3.0 * perplexity
        )));
    }
    if points.iter().all(|p| *p == points[0]) {
        return Err(Error::Shape("all points are identical".into()));
    }
    let target = perplexity.ln();
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let d: Vec<f64> = (0..n).map(|j| sq_dist(&points[i], &points[j])).collect();
            let d_min = (0..n).filter(|&j| j != i).map(|j| d[j]).fold(f64::INFINITY, f64::min);
            let (mut beta, mut lo, mut hi) = (1.0f64, 0.0f64, f64::INFINITY);
            let mut row = vec![0.0; n];
            for _ in 0..200 {
                let mut sum = 0.0;
                let mut weighted = 0.0;
                for j in 0..n {
                    row[j] = if j == i { 0.0 } else { (-(d[j] - d_min) * beta).exp() };
                    sum += row[j];
                    weighted += (d[j] - d_min) * row[j];
                }
                // H = ln(sum) + beta * E[d]; the shift by d_min cancels.
                let entropy = sum.ln() + beta * weighted / sum;
                for v in row.iter_mut() {
                    *v /= sum;
                }
                let diff = entropy - target;
                if diff.abs() < ENTROPY_TOL {
                    break;
                }
                if diff > 0.0 {
                    lo = beta;
                    beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
                } else {
                    hi = beta;
                    beta = (beta + lo) / 2.0;
                }
            }
            row
        })
        .collect())
}

/// Symmetrized input affinities `p_ij`, row-major `n x n`.
pub fn tsne_affinities(points: &[Vec<f64>], perplexity: f64) -> Result<Vec<f64>> {
    let rows = conditional_affinities(points, perplexity)?;
    let n = points.len();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((rows[i][j] + rows[j][i]) / (2.0 * n as f64)).max(1e-12);
            }
        }
    }
    Ok(p)
}

/// Student-t numerators and their total.
fn low_dim_kernel(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let num: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / n, k % n);
            if i == j {
                0.0
            } else {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                1.0 / (1.0 + dx * dx + dy * dy)
            }
        })
        .collect();
    let total = num.iter().sum();
    (num, total)
}

/// `KL(P || Q)` for the embedding `y`.
pub fn tsne_kl(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let (num, total) = low_dim_kernel(y);
    let n = y.len();
    let mut kl = 0.0;
    for k in 0..n * n {
        if k / n != k % n {
            let q = (num[k] / total).max(1e-12);
            kl += p[k] * (p[k] / q).ln();
        }
    }
    kl
}

/// Exact t-SNE with early exaggeration, momentum and per-coordinate gains.
pub fn tsne(points: &[Vec<f64>], config: &TsneConfig) -> Result<Embedding2D> {
    let p = tsne_affinities(points, config.perplexity)?;
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            [1e-4 * a, 1e-4 * b]
        })
        .collect();
    let initial_kl = tsne_kl(&p, &y);
    let mut velocity = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    for iter in 0..config.iterations {
        let exaggeration = if iter < config.exaggeration_iters { config.exaggeration } else { 1.0 };
        let momentum = if iter < config.exaggeration_iters { 0.5 } else { 0.8 };
        let (num, total) = low_dim_kernel(&y);
        let grad: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..n {
                    let k = i * n + j;
                    let w = (exaggeration * p[k] - num[k] / total) * num[k];
                    g[0] += w * (y[i][0] - y[j][0]);
                    g[1] += w * (y[i][1] - y[j][1]);
                }
                [4.0 * g[0], 4.0 * g[1]]
            })
            .collect();
        for i in 0..n {
            for d in 0..2 {
                let same_sign = (grad[i][d] > 0.0) == (velocity[i][d] > 0.0);
                gains[i][d] = if same_sign { gains[i][d] * 0.8 } else { gains[i][d] + 0.2 };
                gains[i][d] = gains[i][d].max(0.01);
                velocity[i][d] = momentum * velocity[i][d] - config.learning_rate * gains[i][d] * grad[i][d];
                y[i][d] += velocity[i][d];
            }
        }
        for d in 0..2 {
            let mean = y.iter().map(|v| v[d]).sum::<f64>() / n as f64;
            y.iter_mut().for_each(|v| v[d] -= mean);
        }
    }
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("t-SNE diverged".into()));
    }
    let kl = tsne_kl(&p, &y);
    Ok(Embedding2D {
        coords: y,
        initial_kl,
        kl,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterProfile {
    pub cluster: usize,
    pub size: usize,
    pub means: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadarProfile {
    pub clusters: Vec<ClusterProfile>,
    pub global: Vec<f64>,
}

/// Mean intervention probabilities per cluster, plus the global means.
/// Empty clusters are left out.
pub fn radar_profile(assignments: &[usize], k: usize, preds: &[PredictionVector]) -> Result<RadarProfile> {
    if assignments.len() != preds.len() || preds.is_empty() {
        return Err(Error::Shape(format!(
            "{} assignments for {} predictions",
            assignments.len(),
            preds.len()
        )));
    }
    let mean_of = |members: &[&PredictionVector]| -> Vec<f64> {
        (1..=NUM_INTERVENTIONS)
            .map(|j| members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64)
            .collect()
    };
    let all: Vec<&PredictionVector> = preds.iter().collect();
    let mut clusters = Vec::new();
    for c in 0..k {
        let members: Vec<&PredictionVector> =
            preds.iter().zip(assignments).filter(|(_, a)| **a == c).map(|(p, _)| p).collect();
        if members.is_empty() {
            log::warn!("cluster {c} is empty and is left out of the radar profile");
            continue;
        }
        clusters.push(ClusterProfile {
            cluster: c,
            size: members.len(),
            means: mean_of(&members),
        });
    }
    Ok(RadarProfile {
        clusters,
        global: mean_of(&all),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub intervention: String,
    pub prob_a: f64,
    pub prob_b: f64,
    /// `prob_a - prob_b`.
    pub difference: f64,
}

/// Side-by-side intervention probabilities of two patients, sorted by
/// descending absolute difference (ties in task order).
pub fn patient_compare(ids: &[String], preds: &[PredictionVector], a: &str, b: &str) -> Result<Vec<CompareRow>> {
    let find = |id: &str| {
        ids.iter()
            .position(|x| x == id)
            .ok_or_else(|| Error::UnknownPatient(id.to_string()))
    };
    let (pa, pb) = (&preds[find(a)?], &preds[find(b)?]);
    let mut rows: Vec<CompareRow> = Intervention::ALL
        .iter()
        .map(|iv| {
            let j = iv.task().index();
            CompareRow {
                intervention: iv.name().to_string(),
                prob_a: pa[j],
                prob_b: pb[j],
                difference: pa[j] - pb[j],
            }
        })
        .collect();
    rows.sort_by(|x, y| y.difference.abs().total_cmp(&x.difference.abs()));
    Ok(rows)
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// A standalone SVG scatter plot colored by group id.
pub fn scatter_svg(coords: &[[f64; 2]], groups: &[usize], title: &str) -> String {
    let (w, h, pad) = (640.0, 640.0, 40.0);
    let bounds = |d: usize| {
        coords.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c[d]), hi.max(c[d])))
    };
    let ((x0, x1), (y0, y1)) = (bounds(0), bounds(1));
    let sx = |x: f64| pad + (x - x0) / (x1 - x0).max(1e-12) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0).max(1e-12) * (h - 2.0 * pad);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        w / 2.0,
        title.replace('&', "&amp;").replace('<', "&lt;")
    );
    for (c, g) in coords.iter().zip(groups) {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}" fill-opacity="0.8"/>"#,
            sx(c[0]),
            sy(c[1]),
            PALETTE[g % PALETTE.len()]
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 8.0]];
        let r = kmeans(&pts, 1, 0, 300, 1e-6).unwrap();
        assert!((r.centroids[0][0] - 2.0).abs() < 1e-12);
        assert!((r.centroids[0][1] - 4.0).abs() < 1e-12);
        let expected: f64 = pts.iter().map(|p| sq_dist(p, &[2.0, 4.0])).sum();
        assert!((r.inertia - expected).abs() < 1e-12);
    }

    #[test]
    fn one_cluster_per_point() {
        let pts: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let r = kmeans(&pts, 7, 3, 300, 1e-6).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut a = r.assignments.clone();
        a.sort();
        a.dedup();
        assert_eq!(a.len(), 7);
        assert!(kmeans(&pts, 8, 0, 300, 1e-6).is_err());
    }

    #[test]
    fn radar_and_compare() {
        let j = Intervention::Diuretic.task().index();
        let mut preds = vec![[0.5; 14]; 4];
        preds[0][j] = 1.0;
        preds[1][j] = 1.0;
        preds[2][j] = 0.0;
        preds[3][j] = 0.0;
        let r = radar_profile(&[0, 0, 1, 1], 3, &preds).unwrap();
        assert_eq!(r.clusters.len(), 2);
        assert_eq!(r.clusters[0].means[j - 1], 1.0);
        assert_eq!(r.global[j - 1], 0.5);
        assert!(r.clusters.iter().all(|c| c.means.len() == 13));
        let ids: Vec<String> = (0..4).map(|i| format!("p{i}")).collect();
        let rows = patient_compare(&ids, &preds, "p0", "p2").unwrap();
        assert_eq!(rows.len(), 13);
        assert_eq!(rows[0].intervention, "diuretic");
        assert_eq!(rows[0].difference, 1.0);
        assert!(matches!(patient_compare(&ids, &preds, "p0", "zz"), Err(Error::UnknownPatient(_))));
    }

    #[test]
    fn tsne_rejects_degenerate_input() {
        let same = vec![vec![1.0, 2.0]; 100];
        assert!(tsne_affinities(&same, 30.0).is_err());
        let few: Vec<Vec<f64>> = (0..90).map(|i| vec![i as f64]).collect();
        assert!(tsne_affinities(&few, 30.0).is_err());
    }

    #[test]
    fn affinities_are_symmetric_and_normalized() {
        let pts: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos()]).collect();
        let p = tsne_affinities(&pts, 5.0).unwrap();
        let n = pts.len();
        let total: f64 = p.iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
        for i in 0..n {
            for j in 0..n {
                assert_eq!(p[i * n + j], p[j * n + i]);
            }
        }
    }

    #[test]
    fn svg_has_one_circle_per_point() {
        let svg = scatter_svg(&[[0.0, 0.0], [1.0, 2.0]], &[0, 1], "a < b");
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains("a &lt; b"));
    }
}
