//! Clustering fitted users by their neural characteristics.
//!
//! Each fitted user becomes a feature vector: the shared neural parameters
//! (gain, baseline, width), the model's mean predicted rating variance, and
//! a one-hot block for the decoder variant. Continuous dimensions are
//! z-scored over the cohort so no single unit dominates the Euclidean
//! metric; the one-hot block is appended with a configurable weight
//! (default 1) because there is no principled exchange rate between "uses a
//! different decoder" and "one standard deviation of gain".
//!
//! Clustering is plain Lloyd iteration with seeded restarts. It is written
//! out here rather than pulled from a crate because the tests assert
//! algorithmic internals (per-iteration descent, empty-cluster repair,
//! deterministic restart selection) that off-the-shelf implementations
//! don't expose.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::FitResult;
use crate::rng::stream_rng;

/// One user's position in cluster space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub user_id: String,
    pub values: Vec<f64>,
}

/// Column names of [`featurize`] output, continuous block first.
pub const FEATURE_NAMES: [&str; 8] = [
    "gain",
    "baseline",
    "width",
    "mean_predicted_variance",
    "is_mvd",
    "is_wad",
    "is_mld",
    "is_mad",
];

/// Embed fitted users into feature space.
///
/// Continuous block: z-scored `(gain, baseline, width,
/// mean_predicted_variance)` using the cohort's own mean and (population)
/// standard deviation; a zero-spread dimension maps to all zeros. Decoder
/// block: one-hot times `decoder_weight`, unscaled otherwise.
pub fn featurize(fits: &[FitResult], decoder_weight: f64) -> Result<Vec<FeatureVector>> {
    if fits.is_empty() {
        return Err(Error::invalid("featurize", "need at least one fitted user"));
    }
    if !(decoder_weight.is_finite() && decoder_weight >= 0.0) {
        return Err(Error::invalid("featurize", "decoder weight must be >= 0"));
    }
    let continuous: Vec<[f64; 4]> = fits
        .iter()
        .map(|f| {
            [
                f.params.gain,
                f.params.baseline,
                f.params.width,
                f.mean_predicted_variance,
            ]
        })
        .collect();
    let n = fits.len() as f64;
    let mut means = [0.0; 4];
    let mut sds = [0.0; 4];
    for d in 0..4 {
        means[d] = continuous.iter().map(|row| row[d]).sum::<f64>() / n;
        let ss: f64 = continuous
            .iter()
            .map(|row| (row[d] - means[d]) * (row[d] - means[d]))
            .sum();
        sds[d] = (ss / n).sqrt();
    }
    Ok(fits
        .iter()
        .zip(&continuous)
        .map(|(fit, row)| {
            let mut values = Vec::with_capacity(8);
            for d in 0..4 {
                values.push(if sds[d] > 0.0 {
                    (row[d] - means[d]) / sds[d]
                } else {
                    0.0
                });
            }
            let mut one_hot = [0.0; 4];
            one_hot[fit.variant.index()] = decoder_weight;
            values.extend_from_slice(&one_hot);
            FeatureVector {
                user_id: fit.user_id.clone(),
                values,
            }
        })
        .collect())
}

/// Output of [`cluster_users`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub k: usize,
    /// Cluster index per user, parallel to the input order.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squared Euclidean distances.
    pub wcss: f64,
    /// `None` when `k == 1` (the coefficient needs two clusters).
    pub silhouette: Option<f64>,
    pub seed: u64,
    pub restarts: u32,
    /// WCSS after each Lloyd iteration of the winning restart; never
    /// increasing.
    pub wcss_trace: Vec<f64>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, ties to the lowest cluster index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn wcss_of(points: &[&[f64]], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &c)| squared_distance(p, &centroids[c]))
        .sum()
}

struct LloydRun {
    assignments: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    wcss: f64,
    trace: Vec<f64>,
}

/// One seeded Lloyd run: random distinct input points as initial
/// centroids, alternate assign/update until assignments stabilize (or 100
/// iterations), repairing empty clusters by re-seeding them at the point
/// farthest from its currently assigned centroid.
fn lloyd_once(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> LloydRun {
    let n = points.len();
    let dim = points[0].len();
    let init = rand::seq::index::sample(rng, n, k);
    let mut centroids: Vec<Vec<f64>> = init.iter().map(|i| points[i].to_vec()).collect();
    let mut assignments = vec![0usize; n];
    let mut trace = Vec::new();

    for _iter in 0..100 {
        // Assign.
        let new_assignments: Vec<usize> =
            points.iter().map(|p| nearest(p, &centroids)).collect();
        let mut counts = vec![0usize; k];
        for &c in &new_assignments {
            counts[c] += 1;
        }
        let mut repaired = new_assignments;
        // Repair: every empty cluster steals the point currently farthest
        // from its own centroid (skipping points that are sole members, so
        // the repair cannot create a fresh hole).
        for empty in 0..k {
            while counts[empty] == 0 {
                let mut victim: Option<(usize, f64)> = None;
                for (p, &c) in repaired.iter().enumerate() {
                    if counts[c] <= 1 {
                        continue;
                    }
                    let d = squared_distance(points[p], &centroids[c]);
                    if victim.map_or(true, |(_, bd)| d > bd) {
                        victim = Some((p, d));
                    }
                }
                match victim {
                    Some((p, _)) => {
                        counts[repaired[p]] -= 1;
                        counts[empty] += 1;
                        centroids[empty] = points[p].to_vec();
                        repaired[p] = empty;
                    }
                    // Fewer distinct points than clusters; leave empty.
                    None => break,
                }
            }
        }
        // Update.
        let mut sums = vec![vec![0.0; dim]; k];
        for (p, &c) in repaired.iter().enumerate() {
            for d in 0..dim {
                sums[c][d] += points[p][d];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for d in 0..dim {
                    centroids[c][d] = sums[c][d] / counts[c] as f64;
                }
            }
        }
        let stable = repaired == assignments;
        assignments = repaired;
        trace.push(wcss_of(points, &assignments, &centroids));
        if stable {
            break;
        }
    }
    let wcss = *trace.last().expect("at least one iteration");
    LloydRun {
        assignments,
        centroids,
        wcss,
        trace,
    }
}

/// Centroid-based partition of the users into `k` clusters.
///
/// Runs `restarts` seeded Lloyd initializations in parallel (restart `r`
/// uses RNG stream `(base_seed, r)`) and keeps the lowest within-cluster
/// sum of squares, ties to the lowest restart index — so the result is
/// deterministic and schedule-independent.
pub fn cluster_users(
    features: &[FeatureVector],
    k: usize,
    restarts: u32,
    base_seed: u64,
) -> Result<ClusterResult> {
    if features.is_empty() {
        return Err(Error::invalid("cluster", "no feature vectors"));
    }
    if k == 0 {
        return Err(Error::invalid("cluster", "k must be >= 1"));
    }
    if k > features.len() {
        return Err(Error::invalid(
            "cluster",
            format!("k = {k} exceeds the {} users", features.len()),
        ));
    }
    if restarts == 0 {
        return Err(Error::invalid("cluster", "need at least one restart"));
    }
    let dim = features[0].values.len();
    if features.iter().any(|f| f.values.len() != dim) {
        return Err(Error::invalid("cluster", "feature vectors differ in length"));
    }
    if features
        .iter()
        .any(|f| f.values.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::invalid("cluster", "feature values must be finite"));
    }
    let points: Vec<&[f64]> = features.iter().map(|f| f.values.as_slice()).collect();

    let runs: Vec<LloydRun> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(base_seed, r as u64);
            lloyd_once(&points, k, &mut rng)
        })
        .collect();
    let best = runs
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| {
            a.wcss
                .partial_cmp(&b.wcss)
                .expect("wcss is finite")
                .then(i.cmp(j))
        })
        .map(|(_, run)| run)
        .expect("restarts >= 1");

    let silhouette_score = if k >= 2 {
        Some(silhouette(features, &best.assignments)?)
    } else {
        None
    };
    Ok(ClusterResult {
        k,
        assignments: best.assignments.clone(),
        centroids: best.centroids.clone(),
        wcss: best.wcss,
        silhouette: silhouette_score,
        seed: base_seed,
        restarts,
        wcss_trace: best.trace.clone(),
    })
}

/// Mean silhouette coefficient (Euclidean distance).
///
/// Per point: `a` = mean distance to its own cluster (excluding itself),
/// `b` = smallest mean distance to another cluster, score `(b - a) /
/// max(a, b)`. Singleton clusters contribute 0 for their point, and a
/// point with `a = b = 0` (exact duplicates on both sides) scores 0.
pub fn silhouette(features: &[FeatureVector], assignments: &[usize]) -> Result<f64> {
    if features.len() != assignments.len() {
        return Err(Error::invalid(
            "silhouette",
            format!(
                "{} feature vectors vs {} assignments",
                features.len(),
                assignments.len()
            ),
        ));
    }
    if features.is_empty() {
        return Err(Error::invalid("silhouette", "no feature vectors"));
    }
    let k = assignments.iter().max().unwrap() + 1;
    let mut counts = vec![0usize; k];
    for &c in assignments {
        counts[c] += 1;
    }
    if k < 2 {
        return Err(Error::invalid("silhouette", "need at least two clusters"));
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::invalid("silhouette", "every cluster must be non-empty"));
    }
    let n = features.len();
    let mut total = 0.0;
    for i in 0..n {
        let own = assignments[i];
        if counts[own] == 1 {
            continue; // singleton scores 0
        }
        // Mean distance to each cluster.
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = squared_distance(&features[i].values, &features[j].values).sqrt();
            sums[assignments[j]] += d;
        }
        let a = sums[own] / (counts[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}
