//! Cohort simulation and repeated-rating statistics.
//!
//! A cohort is a list of user models rating a shared set of items several
//! times each. The statistics here mirror a repeated-rating experiment:
//! how many response categories does a (user, item) pair touch, how large
//! are the per-pair rating variances, and how heavy is the tail of that
//! variance distribution (summarized by a Pareto maximum-likelihood fit).
//!
//! Unit of analysis: the (user, item) pair. "Constant raters" exist at two
//! granularities — pairs whose trials never change, and users constant on
//! *every* item — and both fractions are computed and named separately so
//! they cannot be conflated.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};
use crate::scale::RatingScale;
use crate::user_model::{Simulator, UserModel};

/// One rating event: user, item, trial number (1-based), rating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingObservation {
    pub user_id: String,
    pub item_id: String,
    pub trial: u32,
    pub rating: f64,
}

/// Per-(user, item) rating variance across trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSample {
    pub user_id: String,
    pub item_id: String,
    pub variance: f64,
    pub n_trials: u32,
}

/// All variance samples plus the count of pairs skipped for having fewer
/// than two trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSummary {
    pub samples: Vec<VarianceSample>,
    pub n_skipped: usize,
}

/// Divisor convention for the per-pair variance. With five trials per pair
/// the difference is material (factor 5/4), so it is explicit and
/// configurable rather than implied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceEstimator {
    /// Divide by n (default).
    Population,
    /// Divide by n - 1.
    Sample,
}

impl Default for VarianceEstimator {
    fn default() -> Self {
        VarianceEstimator::Population
    }
}

/// Maximum-likelihood Pareto fit of a positive sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoFit {
    /// Tail location: the sample minimum.
    pub x_m: f64,
    /// Shape: `n / sum ln(x_i / x_m)`.
    pub alpha: f64,
    pub n_used: usize,
    /// Zero (or negative-rounding) variance samples excluded before the
    /// fit; these are exactly the constant raters.
    pub n_excluded: usize,
}

/// Simulate every (user, item) pair for `n_trials` repeated ratings.
///
/// `latents[u][i]` is the latent value user `u` holds for item `i`; all
/// users rate the same item count and every latent must lie inside the
/// scale. Pair `(u, i)` runs in seed space `derive_seed(base_seed, pair
/// index)` with one RNG stream per trial, so the observation list is
/// identical however the user loop is scheduled (it runs in parallel).
pub fn simulate_cohort(
    models: &[UserModel],
    latents: &[Vec<f64>],
    n_trials: u32,
    base_seed: u64,
) -> Result<Vec<RatingObservation>> {
    if models.is_empty() {
        return Err(Error::invalid("cohort", "need at least one user model"));
    }
    if n_trials == 0 {
        return Err(Error::invalid("cohort", "need at least one trial per pair"));
    }
    if latents.len() != models.len() {
        return Err(Error::invalid(
            "cohort",
            format!(
                "{} latent rows for {} user models",
                latents.len(),
                models.len()
            ),
        ));
    }
    let n_items = latents[0].len();
    if n_items == 0 {
        return Err(Error::invalid("cohort", "need at least one item"));
    }
    for (u, row) in latents.iter().enumerate() {
        if row.len() != n_items {
            return Err(Error::invalid(
                "cohort",
                format!("user {u} has {} latent values, expected {n_items}", row.len()),
            ));
        }
        let scale = models[u].scale();
        for (i, &s) in row.iter().enumerate() {
            if !(s.is_finite() && s >= scale.min && s <= scale.max) {
                return Err(Error::invalid(
                    "cohort",
                    format!("latent value {s} for (user {u}, item {i}) is outside the scale"),
                ));
            }
        }
    }

    let per_user: Result<Vec<Vec<RatingObservation>>> = models
        .par_iter()
        .enumerate()
        .map(|(u, model)| {
            let sim = Simulator::new(model)?;
            let user_id = model
                .label
                .clone()
                .unwrap_or_else(|| format!("user-{u:03}"));
            let mut out = Vec::with_capacity(n_items * n_trials as usize);
            for (i, &s) in latents[u].iter().enumerate() {
                let pair_seed = derive_seed(base_seed, (u * n_items + i) as u64);
                for t in 0..n_trials {
                    let mut rng = stream_rng(pair_seed, t as u64);
                    let rating = sim.simulate_rating(s, &mut rng)?;
                    out.push(RatingObservation {
                        user_id: user_id.clone(),
                        item_id: format!("item-{i:03}"),
                        trial: t + 1,
                        rating,
                    });
                }
            }
            Ok(out)
        })
        .collect();
    Ok(per_user?.into_iter().flatten().collect())
}

/// Check dataset-level invariants: trials are 1-based, (user, item, trial)
/// is unique, and every rating is exactly one of the scale's categories.
pub fn validate_observations(obs: &[RatingObservation], scale: &RatingScale) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (k, o) in obs.iter().enumerate() {
        if o.trial == 0 {
            return Err(Error::invalid(
                "observations",
                format!("record {k}: trial numbers start at 1"),
            ));
        }
        scale.category_index(o.rating).map_err(|_| {
            Error::invalid(
                "observations",
                format!("record {k}: rating {} is not a scale category", o.rating),
            )
        })?;
        if !seen.insert((o.user_id.clone(), o.item_id.clone(), o.trial)) {
            return Err(Error::invalid(
                "observations",
                format!(
                    "record {k}: duplicate (user={}, item={}, trial={})",
                    o.user_id, o.item_id, o.trial
                ),
            ));
        }
    }
    Ok(())
}

/// Ratings grouped per (user, item), pairs in sorted key order.
pub fn group_pairs(obs: &[RatingObservation]) -> BTreeMap<(String, String), Vec<f64>> {
    let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for o in obs {
        groups
            .entry((o.user_id.clone(), o.item_id.clone()))
            .or_default()
            .push(o.rating);
    }
    groups
}

/// Histogram of (user, item) pairs by number of distinct categories used:
/// `bins[k-1]` counts pairs that touched exactly `k` categories. Bin 1 is
/// the constant-rater mass.
pub fn category_usage_histogram(obs: &[RatingObservation], scale: &RatingScale) -> Result<Vec<u64>> {
    let mut bins = vec![0u64; scale.categories.len()];
    for ratings in group_pairs(obs).values() {
        let distinct: Result<BTreeSet<usize>> = ratings
            .iter()
            .map(|&r| scale.category_index(r))
            .collect();
        let k = distinct?.len();
        bins[k - 1] += 1;
    }
    Ok(bins)
}

/// Fraction of (user, item) pairs whose ratings never changed across
/// trials.
pub fn constant_pair_fraction(obs: &[RatingObservation]) -> f64 {
    let groups = group_pairs(obs);
    if groups.is_empty() {
        return f64::NAN;
    }
    let constant = groups
        .values()
        .filter(|ratings| ratings.windows(2).all(|w| w[0] == w[1]))
        .count();
    constant as f64 / groups.len() as f64
}

/// Fraction of users whose ratings never changed on *any* of their items —
/// the strictest reading of "gave constant ratings".
pub fn constant_user_fraction(obs: &[RatingObservation]) -> f64 {
    let mut users: BTreeMap<&str, bool> = BTreeMap::new();
    for ((user, _), ratings) in group_pairs(obs).iter().map(|(k, v)| ((&k.0, &k.1), v)) {
        let constant = ratings.windows(2).all(|w| w[0] == w[1]);
        users
            .entry(user.as_str())
            .and_modify(|all| *all &= constant)
            .or_insert(constant);
    }
    if users.is_empty() {
        return f64::NAN;
    }
    users.values().filter(|&&all| all).count() as f64 / users.len() as f64
}

/// Per-(user, item) rating variance across trials. Pairs with fewer than
/// two trials carry no variance information; they are skipped and counted.
pub fn variance_samples(
    obs: &[RatingObservation],
    estimator: VarianceEstimator,
) -> VarianceSummary {
    let mut samples = Vec::new();
    let mut n_skipped = 0;
    for ((user_id, item_id), ratings) in group_pairs(obs) {
        let n = ratings.len();
        if n < 2 {
            n_skipped += 1;
            continue;
        }
        let mean = ratings.iter().sum::<f64>() / n as f64;
        let ss: f64 = ratings.iter().map(|r| (r - mean) * (r - mean)).sum();
        let divisor = match estimator {
            VarianceEstimator::Population => n as f64,
            VarianceEstimator::Sample => (n - 1) as f64,
        };
        samples.push(VarianceSample {
            user_id,
            item_id,
            variance: ss / divisor,
            n_trials: n as u32,
        });
    }
    VarianceSummary { samples, n_skipped }
}

/// Maximum-likelihood Pareto fit: `x_m` is the smallest positive sample and
/// `alpha = n / sum ln(x_i / x_m)`.
///
/// Zero-valued samples lie outside Pareto support; they are excluded first
/// and reported in `n_excluded`. At least two positive samples must remain
/// and they must not all be equal (the shape estimate diverges otherwise).
pub fn pareto_ml_fit(samples: &[f64]) -> Result<ParetoFit> {
    if samples.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::invalid(
            "pareto",
            "samples must be finite and non-negative",
        ));
    }
    let positive: Vec<f64> = samples.iter().copied().filter(|x| *x > 0.0).collect();
    let n_excluded = samples.len() - positive.len();
    if positive.len() < 2 {
        return Err(Error::invalid(
            "pareto",
            format!(
                "need at least 2 positive samples, got {} ({} zero)",
                positive.len(),
                n_excluded
            ),
        ));
    }
    let x_m = positive.iter().copied().fold(f64::INFINITY, f64::min);
    let log_sum: f64 = positive.iter().map(|x| (x / x_m).ln()).sum();
    if log_sum <= 0.0 {
        return Err(Error::DegenerateFit(
            "all positive samples are equal; the Pareto shape estimate diverges".into(),
        ));
    }
    Ok(ParetoFit {
        x_m,
        alpha: positive.len() as f64 / log_sum,
        n_used: positive.len(),
        n_excluded,
    })
}
