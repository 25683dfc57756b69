//! A complete per-user generative model: population + decoder.
//!
//! One simulated feedback event runs the full pipeline
//! `sample_response → decode → discretize`. Everything distributional about
//! a model (rating pmf, variance, reliability) is estimated by Monte Carlo;
//! there is no closed-form path, because the decoder argmax makes the rating
//! distribution analytically intractable for MLD/MAD.
//!
//! All Monte Carlo entry points take a base seed and give trial `t` its own
//! RNG stream `(base_seed, t)`, so results are bit-identical no matter how
//! the loop is scheduled.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decoders::{
    decode_mvd, decode_wad, DecoderKind, DecoderSpec, LikelihoodTable, SearchGrid,
};
use crate::error::{Error, Result};
use crate::population::Population;
use crate::rng::{derive_seed, stream_rng};
use crate::scale::RatingScale;

/// A user: their population code plus the decoder they (implicitly) apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserModel {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub population: Population,
    pub decoder: DecoderSpec,
}

impl UserModel {
    pub fn new(population: Population, decoder: DecoderSpec) -> Result<Self> {
        let model = UserModel {
            label: None,
            population,
            decoder,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.population.validate()?;
        self.decoder.validate_for(&self.population)
    }

    pub fn scale(&self) -> &RatingScale {
        &self.population.scale
    }

    /// Convenience: a model with the library's default population shape and
    /// the given decoder variant. MLD/MAD get a grid covering the extended
    /// range at the default 1e-3 step.
    pub fn with_default_population(variant: DecoderKind) -> Result<Self> {
        let population = crate::population::build_population(
            21,
            RatingScale::five_star(),
            0.0,
            10.0,
            1.0,
            1.0,
        )?;
        let mut decoder = DecoderSpec::new(variant);
        if matches!(variant, DecoderKind::Mld | DecoderKind::Mad) {
            decoder = decoder.with_grid(SearchGrid::covering(&population));
        }
        UserModel::new(population, decoder)
    }
}

/// One decoded feedback event: the continuous estimate and its rating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedEvent {
    pub value: f64,
    pub rating: f64,
}

/// A validated model with decoder tables cached, for tight Monte Carlo
/// loops. Building the log-rate table once per model (instead of per trial)
/// is what keeps MLD/MAD simulation tractable.
pub struct Simulator<'m> {
    model: &'m UserModel,
    table: Option<LikelihoodTable>,
    prior_log_density: Option<Vec<f64>>,
}

impl<'m> Simulator<'m> {
    pub fn new(model: &'m UserModel) -> Result<Self> {
        model.validate()?;
        let (table, prior_log_density) = match model.decoder.variant {
            DecoderKind::Mvd | DecoderKind::Wad => (None, None),
            DecoderKind::Mld | DecoderKind::Mad => {
                let grid = model.decoder.grid.as_ref().expect("validated above");
                let table = LikelihoodTable::build(&model.population, grid);
                let prior = match (&model.decoder.prior, model.decoder.variant) {
                    (Some(p), DecoderKind::Mad) => {
                        Some((0..grid.len()).map(|j| p.log_density_at(grid, j)).collect())
                    }
                    _ => None,
                };
                (Some(table), prior)
            }
        };
        Ok(Simulator {
            model,
            table,
            prior_log_density,
        })
    }

    pub fn model(&self) -> &UserModel {
        self.model
    }

    fn check_latent(&self, s: f64) -> Result<()> {
        let (lo, hi) = self.model.population.preferred_range();
        if s.is_finite() && s >= lo - 1e-9 && s <= hi + 1e-9 {
            Ok(())
        } else {
            Err(Error::invalid(
                "latent",
                format!("s = {s} outside the extended scale range [{lo}, {hi}]"),
            ))
        }
    }

    /// One feedback event. A WAD all-zero response is resampled once; a
    /// second all-zero response is an error (only reachable when all rates
    /// are ~0, and looping forever on such parameters must be impossible).
    pub fn simulate_event<R: Rng + ?Sized>(&self, s: f64, rng: &mut R) -> Result<DecodedEvent> {
        self.check_latent(s)?;
        let pop = &self.model.population;
        match self.model.decoder.variant {
            DecoderKind::Mvd => {
                let resp = pop.sample_response(s, rng);
                let est = decode_mvd(pop, &resp, rng)?;
                Ok(DecodedEvent {
                    value: est.value,
                    rating: est.rating,
                })
            }
            DecoderKind::Wad => {
                let resp = pop.sample_response(s, rng);
                let est = match decode_wad(pop, &resp) {
                    Err(Error::DegenerateResponse) => {
                        let retry = pop.sample_response(s, rng);
                        decode_wad(pop, &retry)?
                    }
                    other => other?,
                };
                Ok(DecodedEvent {
                    value: est.value,
                    rating: est.rating,
                })
            }
            DecoderKind::Mld | DecoderKind::Mad => {
                let resp = pop.sample_response(s, rng);
                let table = self.table.as_ref().expect("grid decoder has a table");
                let best = match (self.model.decoder.variant, &self.prior_log_density) {
                    (DecoderKind::Mad, Some(ld)) => table.argmax_with_prior(&resp.counts, ld),
                    _ => table.argmax(&resp.counts),
                };
                let j = best.ok_or(Error::UndecodableResponse)?;
                let grid = self.model.decoder.grid.as_ref().expect("validated");
                let value = grid.point(j);
                Ok(DecodedEvent {
                    value,
                    rating: pop.scale.discretize(value)?,
                })
            }
        }
    }

    pub fn simulate_rating<R: Rng + ?Sized>(&self, s: f64, rng: &mut R) -> Result<f64> {
        Ok(self.simulate_event(s, rng)?.rating)
    }
}

/// One simulated feedback event for `model` at latent value `s`.
///
/// For repeated simulation prefer [`Simulator`], which caches the decoder's
/// log-rate table instead of rebuilding it per call.
pub fn simulate_rating<R: Rng + ?Sized>(model: &UserModel, s: f64, rng: &mut R) -> Result<f64> {
    Simulator::new(model)?.simulate_rating(s, rng)
}

/// Empirical rating distribution, one probability per scale category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingPMF {
    pub probabilities: Vec<f64>,
    pub n_trials: u64,
}

impl RatingPMF {
    pub fn validate(&self, scale: &RatingScale) -> Result<()> {
        if self.probabilities.len() != scale.categories.len() {
            return Err(Error::invalid(
                "pmf",
                format!(
                    "{} probabilities for {} categories",
                    self.probabilities.len(),
                    scale.categories.len()
                ),
            ));
        }
        if self.probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid("pmf", "probabilities must be finite and >= 0"));
        }
        let total: f64 = self.probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "pmf",
                format!("probabilities sum to {total}, not 1"),
            ));
        }
        Ok(())
    }
}

/// Mean rating under the pmf.
pub fn pmf_mean(pmf: &RatingPMF, scale: &RatingScale) -> f64 {
    pmf.probabilities
        .iter()
        .zip(&scale.categories)
        .map(|(p, c)| p * c)
        .sum()
}

/// Rating variance under the pmf: `sum_k p_k (c_k - mean)^2`.
pub fn pmf_variance(pmf: &RatingPMF, scale: &RatingScale) -> f64 {
    let mean = pmf_mean(pmf, scale);
    pmf.probabilities
        .iter()
        .zip(&scale.categories)
        .map(|(p, c)| p * (c - mean) * (c - mean))
        .sum()
}

/// Monte Carlo estimate of the rating pmf at latent value `s`.
///
/// Trial `t` runs on RNG stream `(base_seed, t)`.
pub fn rating_pmf_mc(model: &UserModel, s: f64, n_trials: u64, base_seed: u64) -> Result<RatingPMF> {
    rating_pmf_with_sim(&Simulator::new(model)?, s, n_trials, base_seed)
}

/// As [`rating_pmf_mc`], against an already-built [`Simulator`]. The
/// fitting loop calls this thousands of times per model; rebuilding the
/// decoder table each time would dominate its runtime.
pub fn rating_pmf_with_sim(
    sim: &Simulator<'_>,
    s: f64,
    n_trials: u64,
    base_seed: u64,
) -> Result<RatingPMF> {
    if n_trials == 0 {
        return Err(Error::invalid("n_trials", "need at least one trial"));
    }
    let scale = sim.model().scale();
    let mut counts = vec![0u64; scale.categories.len()];
    for t in 0..n_trials {
        let mut rng = stream_rng(base_seed, t);
        let rating = sim.simulate_rating(s, &mut rng)?;
        counts[scale.category_index(rating)?] += 1;
    }
    Ok(RatingPMF {
        probabilities: counts
            .iter()
            .map(|&c| c as f64 / n_trials as f64)
            .collect(),
        n_trials,
    })
}

/// Whether reliability is measured on discrete ratings (what a rating
/// system observes; the default) or on the continuous estimate before
/// discretization (exposes decoder-intrinsic variance otherwise masked by
/// clipping at the scale ends).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimateMode {
    Rating,
    Continuous,
}

impl Default for EstimateMode {
    fn default() -> Self {
        EstimateMode::Rating
    }
}

/// Decoder accuracy across latent values: per-point mean squared error and
/// its fraction of the worst possible squared error (the squared scale
/// span), a 0-to-1 unreliability measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityProfile {
    pub latents: Vec<f64>,
    pub mse: Vec<f64>,
    /// `mse / span^2`. In `Rating` mode this lies in [0, 1]; in
    /// `Continuous` mode it can exceed 1 only when the population margin
    /// lets estimates stray outside the scale.
    pub fraction: Vec<f64>,
    pub mode: EstimateMode,
    pub n_trials: u64,
}

/// Monte Carlo reliability profile over `latents`.
///
/// For each latent value `s`: `MSE = mean over trials of (decoded - s)^2`,
/// where `decoded` is the rating or the continuous estimate per `mode`.
/// Latent index `k` uses seed space `derive_seed(base_seed, k)` with one
/// stream per trial.
pub fn reliability_profile(
    model: &UserModel,
    latents: &[f64],
    n_trials: u64,
    base_seed: u64,
    mode: EstimateMode,
) -> Result<ReliabilityProfile> {
    if n_trials < 100 {
        return Err(Error::invalid(
            "n_trials",
            "reliability estimates need at least 100 trials",
        ));
    }
    if latents.is_empty() {
        return Err(Error::invalid("latents", "need at least one latent value"));
    }
    let sim = Simulator::new(model)?;
    let span = model.scale().span();
    let max_mse = span * span;
    let mut mse = Vec::with_capacity(latents.len());
    for (k, &s) in latents.iter().enumerate() {
        let seed = derive_seed(base_seed, k as u64);
        let mut acc = 0.0;
        for t in 0..n_trials {
            let mut rng = stream_rng(seed, t);
            let event = sim.simulate_event(s, &mut rng)?;
            let decoded = match mode {
                EstimateMode::Rating => event.rating,
                EstimateMode::Continuous => event.value,
            };
            acc += (decoded - s) * (decoded - s);
        }
        mse.push(acc / n_trials as f64);
    }
    let fraction = mse.iter().map(|m| m / max_mse).collect();
    Ok(ReliabilityProfile {
        latents: latents.to_vec(),
        mse,
        fraction,
        mode,
        n_trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoders::Prior;
    use crate::population::build_population;

    fn default_model(variant: DecoderKind) -> UserModel {
        UserModel::with_default_population(variant).unwrap()
    }

    fn total_variation(a: &RatingPMF, b: &RatingPMF) -> f64 {
        0.5 * a
            .probabilities
            .iter()
            .zip(&b.probabilities)
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
    }

    #[test]
    fn huge_gain_makes_ratings_deterministic() {
        for variant in [DecoderKind::Mvd, DecoderKind::Wad] {
            let population = build_population(
                21,
                RatingScale::five_star(),
                0.0,
                1e4,
                1.0,
                1.0,
            )
            .unwrap();
            let model = UserModel::new(population, DecoderSpec::new(variant)).unwrap();
            let pmf = rating_pmf_mc(&model, 3.0, 1000, 9).unwrap();
            let idx = model.scale().category_index(3.0).unwrap();
            assert!(
                pmf.probabilities[idx] >= 0.999,
                "{variant}: p(3) = {}",
                pmf.probabilities[idx]
            );
        }
    }

    #[test]
    fn silent_population_under_mvd_is_uniform_over_neurons() {
        // g = 0, f0 = 0: every response is all-zero, so the MVD tie rule
        // picks a neuron uniformly. 21 evenly spaced preferred values
        // discretize to ratings 1..5 with multiplicities 3,5,5,5,3.
        let population =
            build_population(21, RatingScale::five_star(), 0.0, 0.0, 0.0, 1.0).unwrap();
        let model = UserModel::new(population, DecoderSpec::new(DecoderKind::Mvd)).unwrap();
        let pmf = rating_pmf_mc(&model, 3.0, 20_000, 31).unwrap();
        let expected = [3.0, 5.0, 5.0, 5.0, 3.0].map(|m| m / 21.0);
        for (k, (&got, want)) in pmf.probabilities.iter().zip(expected).enumerate() {
            assert!(
                (got - want).abs() < 0.015,
                "category {k}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn fixed_seed_reproduces_the_rating_sequence() {
        let model = default_model(DecoderKind::Wad);
        let sim = Simulator::new(&model).unwrap();
        let run = |seed: u64| -> Vec<f64> {
            (0..50)
                .map(|t| {
                    let mut rng = stream_rng(seed, t);
                    sim.simulate_rating(2.2, &mut rng).unwrap()
                })
                .collect()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43), "different seeds should diverge somewhere");
    }

    #[test]
    fn free_function_matches_simulator() {
        let model = default_model(DecoderKind::Mvd);
        let sim = Simulator::new(&model).unwrap();
        let mut a = stream_rng(7, 3);
        let mut b = stream_rng(7, 3);
        assert_eq!(
            simulate_rating(&model, 4.0, &mut a).unwrap(),
            sim.simulate_rating(4.0, &mut b).unwrap()
        );
    }

    #[test]
    fn latent_outside_extended_range_is_rejected() {
        let model = default_model(DecoderKind::Mvd);
        let mut rng = stream_rng(0, 0);
        assert!(simulate_rating(&model, 5.5, &mut rng).is_err());
        assert!(simulate_rating(&model, f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn wad_on_silent_population_errors_after_one_resample() {
        let population =
            build_population(5, RatingScale::five_star(), 0.0, 0.0, 0.0, 1.0).unwrap();
        let model = UserModel::new(population, DecoderSpec::new(DecoderKind::Wad)).unwrap();
        let mut rng = stream_rng(1, 0);
        match simulate_rating(&model, 3.0, &mut rng) {
            Err(Error::DegenerateResponse) => {}
            other => panic!("expected degenerate-response error, got {other:?}"),
        }
    }

    #[test]
    fn pmf_is_normalized_and_one_trial_is_one_hot() {
        let model = default_model(DecoderKind::Wad);
        let pmf = rating_pmf_mc(&model, 2.0, 1, 5).unwrap();
        pmf.validate(model.scale()).unwrap();
        assert_eq!(
            pmf.probabilities.iter().filter(|&&p| p == 1.0).count(),
            1,
            "single trial must concentrate on one category"
        );
        let pmf = rating_pmf_mc(&model, 2.0, 777, 5).unwrap();
        pmf.validate(model.scale()).unwrap();
    }

    #[test]
    fn pmf_variance_closed_forms() {
        let scale = RatingScale::five_star();
        let one_hot = RatingPMF {
            probabilities: vec![0.0, 0.0, 1.0, 0.0, 0.0],
            n_trials: 1,
        };
        assert_eq!(pmf_variance(&one_hot, &scale), 0.0);
        let two_point = RatingPMF {
            probabilities: vec![0.5, 0.0, 0.0, 0.0, 0.5],
            n_trials: 2,
        };
        assert!((pmf_variance(&two_point, &scale) - 4.0).abs() < 1e-12);
        let uniform = RatingPMF {
            probabilities: vec![0.2; 5],
            n_trials: 5,
        };
        assert!((pmf_variance(&uniform, &scale) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mvd_extreme_latents_are_less_uncertain_than_middle() {
        let model = default_model(DecoderKind::Mvd);
        let scale = model.scale();
        let var = |s: f64| {
            pmf_variance(&rating_pmf_mc(&model, s, 10_000, 444).unwrap(), scale)
        };
        let (v1, v3, v5) = (var(1.0), var(3.0), var(5.0));
        assert!(v1 < v3, "Var(s=1) = {v1} !< Var(s=3) = {v3}");
        assert!(v5 < v3, "Var(s=5) = {v5} !< Var(s=3) = {v3}");
    }

    #[test]
    fn two_seeds_agree_within_total_variation_bound() {
        let model = default_model(DecoderKind::Mvd);
        let a = rating_pmf_mc(&model, 2.6, 50_000, 1001).unwrap();
        let b = rating_pmf_mc(&model, 2.6, 50_000, 2002).unwrap();
        let tv = total_variation(&a, &b);
        assert!(tv <= 0.02, "total variation {tv} exceeds 0.02 at n=50k");
    }

    #[test]
    fn gaussian_prior_reduces_rating_variance() {
        // Scaled-down companion of the acceptance check: coarse grid,
        // fewer trials, same direction.
        let population =
            build_population(21, RatingScale::five_star(), 0.0, 10.0, 1.0, 1.0).unwrap();
        let grid = SearchGrid::new(1.0, 5.0, 0.01).unwrap();
        let mld = UserModel::new(
            population.clone(),
            DecoderSpec::new(DecoderKind::Mld).with_grid(grid),
        )
        .unwrap();
        let mad = UserModel::new(
            population,
            DecoderSpec::new(DecoderKind::Mad)
                .with_grid(grid)
                .with_prior(Prior::Gaussian {
                    mean: 3.0,
                    sd: 0.5,
                }),
        )
        .unwrap();
        let scale = mld.scale().clone();
        let v_mld = pmf_variance(&rating_pmf_mc(&mld, 3.0, 2000, 77).unwrap(), &scale);
        let v_mad = pmf_variance(&rating_pmf_mc(&mad, 3.0, 2000, 77).unwrap(), &scale);
        assert!(
            v_mad < v_mld,
            "prior should stabilise repeated ratings: {v_mad} !< {v_mld}"
        );
    }

    #[test]
    fn reliability_near_zero_at_huge_gain() {
        let population = build_population(
            41,
            RatingScale::five_star(),
            0.0,
            1e4,
            1.0,
            0.5,
        )
        .unwrap();
        let model = UserModel::new(population, DecoderSpec::new(DecoderKind::Mvd)).unwrap();
        let profile = reliability_profile(
            &model,
            &[1.0, 2.0, 3.0, 4.0, 5.0],
            200,
            19,
            EstimateMode::Rating,
        )
        .unwrap();
        for (s, f) in profile.latents.iter().zip(&profile.fraction) {
            assert!(*f <= 0.02, "s={s}: fraction {f}");
        }
    }

    #[test]
    fn reliability_fractions_stay_in_unit_interval() {
        let model = default_model(DecoderKind::Wad);
        let profile = reliability_profile(
            &model,
            &[1.0, 1.5, 2.5, 3.5, 4.5, 5.0],
            300,
            23,
            EstimateMode::Rating,
        )
        .unwrap();
        for f in &profile.fraction {
            assert!(*f >= 0.0 && *f <= 1.0);
        }
    }

    #[test]
    fn wad_continuous_error_shrinks_toward_the_middle() {
        let model = default_model(DecoderKind::Wad);
        let profile = reliability_profile(
            &model,
            &[1.0, 3.0],
            2000,
            101,
            EstimateMode::Continuous,
        )
        .unwrap();
        assert!(
            profile.fraction[1] < profile.fraction[0],
            "continuous WAD error at s=3 ({}) should undercut s=1 ({})",
            profile.fraction[1],
            profile.fraction[0]
        );
    }

    #[test]
    fn reliability_preconditions() {
        let model = default_model(DecoderKind::Mvd);
        assert!(reliability_profile(&model, &[3.0], 99, 0, EstimateMode::Rating).is_err());
        assert!(reliability_profile(&model, &[], 200, 0, EstimateMode::Rating).is_err());
    }

    #[test]
    fn mvd_rating_support_is_discretized_preferred_values() {
        let population =
            build_population(4, RatingScale::five_star(), 0.0, 8.0, 0.5, 0.8).unwrap();
        let model = UserModel::new(population, DecoderSpec::new(DecoderKind::Mvd)).unwrap();
        let support: std::collections::BTreeSet<i64> = model
            .population
            .preferred_values()
            .map(|p| model.scale().discretize(p).unwrap() as i64)
            .collect();
        let sim = Simulator::new(&model).unwrap();
        for t in 0..500 {
            let mut rng = stream_rng(3, t);
            let rating = sim.simulate_rating(2.0, &mut rng).unwrap();
            assert!(support.contains(&(rating as i64)), "rating {rating} off-support");
        }
    }

    #[test]
    fn user_model_json_round_trip() {
        let model = default_model(DecoderKind::Mad).with_label("u-17");
        let text = serde_json::to_string_pretty(&model).unwrap();
        let back: UserModel = serde_json::from_str(&text).unwrap();
        assert_eq!(model, back);
        back.validate().unwrap();
    }
}
