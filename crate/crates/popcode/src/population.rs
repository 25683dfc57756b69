//! Tuning curves, neuron populations and noisy population responses.
//!
//! A neuron's expected spike count for a latent value `s` follows a
//! bell-shaped tuning curve
//!
//! ```text
//! f(s) = gain * N(preferred, width^2)(s) + baseline
//! ```
//!
//! where `N` is the *normalized* Gaussian density. Note the peak height is
//! therefore `gain / (width * sqrt(2*pi)) + baseline`, not `gain + baseline`;
//! texts that use the unnormalized bell differ by that factor. Trial-to-trial
//! variability is Poisson: the observed count of neuron `i` is drawn from
//! `Poisson(f_i(s))`, independently across neurons and trials.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scale::RatingScale;

/// One neuron's bell-shaped tuning curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningCurve {
    /// Scales the Gaussian density (spike-count times scale units).
    pub gain: f64,
    /// Baseline expected spike count, added everywhere.
    pub baseline: f64,
    /// Stimulus value at which the curve peaks (for positive gain).
    pub preferred: f64,
    /// Width (standard deviation) of the Gaussian bell, in scale units.
    pub width: f64,
}

impl TuningCurve {
    pub fn new(gain: f64, baseline: f64, preferred: f64, width: f64) -> Result<Self> {
        let curve = TuningCurve {
            gain,
            baseline,
            preferred,
            width,
        };
        curve.validate()?;
        Ok(curve)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.gain.is_finite()
            && self.gain >= 0.0
            && self.baseline.is_finite()
            && self.baseline >= 0.0
            && self.preferred.is_finite()
            && self.width.is_finite()
            && self.width > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "tuning curve",
                format!(
                    "need gain >= 0, baseline >= 0, width > 0, finite preferred; got {self:?}"
                ),
            ))
        }
    }

    /// Expected spike count at latent value `s`.
    pub fn rate(&self, s: f64) -> f64 {
        let z = (s - self.preferred) / self.width;
        let density = (-0.5 * z * z).exp() / (self.width * (std::f64::consts::TAU).sqrt());
        self.gain * density + self.baseline
    }
}

/// Expected spike count of `curve` at latent value `s`.
pub fn tuning_rate(curve: &TuningCurve, s: f64) -> f64 {
    curve.rate(s)
}

/// A population of tuning curves tiling a rating scale.
///
/// Preferred values are sorted ascending and may extend `margin` scale units
/// beyond the scale ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub curves: Vec<TuningCurve>,
    pub scale: RatingScale,
    pub margin: f64,
}

impl Population {
    pub fn new(curves: Vec<TuningCurve>, scale: RatingScale, margin: f64) -> Result<Self> {
        let pop = Population {
            curves,
            scale,
            margin,
        };
        pop.validate()?;
        Ok(pop)
    }

    pub fn validate(&self) -> Result<()> {
        self.scale.validate()?;
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::invalid("population", "margin must be >= 0"));
        }
        if self.curves.is_empty() {
            return Err(Error::invalid("population", "need at least one neuron"));
        }
        for curve in &self.curves {
            curve.validate()?;
        }
        if !self
            .curves
            .windows(2)
            .all(|w| w[0].preferred <= w[1].preferred)
        {
            return Err(Error::invalid(
                "population",
                "preferred values must be sorted ascending",
            ));
        }
        let (lo, hi) = self.preferred_range();
        for curve in &self.curves {
            if curve.preferred < lo - 1e-9 || curve.preferred > hi + 1e-9 {
                return Err(Error::invalid(
                    "population",
                    format!(
                        "preferred value {} outside [{lo}, {hi}]",
                        curve.preferred
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    /// Interval that preferred values (and decoder grids) must cover:
    /// `[scale.min - margin, scale.max + margin]`.
    pub fn preferred_range(&self) -> (f64, f64) {
        (self.scale.min - self.margin, self.scale.max + self.margin)
    }

    pub fn preferred_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.curves.iter().map(|c| c.preferred)
    }

    /// Expected spike count of every neuron at latent value `s`.
    pub fn expected_response(&self, s: f64) -> Vec<f64> {
        self.curves.iter().map(|c| c.rate(s)).collect()
    }

    /// Draw one noisy population response at latent value `s`.
    pub fn sample_response<R: Rng + ?Sized>(&self, s: f64, rng: &mut R) -> PopulationResponse {
        let counts = self
            .curves
            .iter()
            .map(|c| sample_poisson(c.rate(s), rng))
            .collect();
        PopulationResponse { counts }
    }
}

/// Build `n` identical-shape curves with preferred values uniformly spaced
/// over `[scale.min - margin, scale.max + margin]`. For `n == 1` the single
/// preferred value sits at the interval midpoint.
pub fn build_population(
    n: usize,
    scale: RatingScale,
    margin: f64,
    gain: f64,
    baseline: f64,
    width: f64,
) -> Result<Population> {
    if n == 0 {
        return Err(Error::invalid("population", "need at least one neuron"));
    }
    scale.validate()?;
    if !(margin.is_finite() && margin >= 0.0) {
        return Err(Error::invalid("population", "margin must be >= 0"));
    }
    let lo = scale.min - margin;
    let hi = scale.max + margin;
    let curves: Result<Vec<TuningCurve>> = (0..n)
        .map(|i| {
            let preferred = if n == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            };
            TuningCurve::new(gain, baseline, preferred, width)
        })
        .collect();
    Population::new(curves?, scale, margin)
}

/// Spike counts of one cognition trial, one entry per neuron.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationResponse {
    pub counts: Vec<u64>,
}

impl PopulationResponse {
    pub fn new(counts: Vec<u64>) -> Self {
        PopulationResponse { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Check that the response shape matches `pop`.
    pub fn check_against(&self, pop: &Population) -> Result<()> {
        if self.counts.len() == pop.len() {
            Ok(())
        } else {
            Err(Error::invalid(
                "response",
                format!(
                    "got {} counts for a population of {} neurons",
                    self.counts.len(),
                    pop.len()
                ),
            ))
        }
    }
}

/// Expected spike counts of every neuron at latent value `s`.
pub fn expected_response(pop: &Population, s: f64) -> Vec<f64> {
    pop.expected_response(s)
}

/// Independent Poisson draws with means `expected_response(pop, s)`.
pub fn sample_response<R: Rng + ?Sized>(
    pop: &Population,
    s: f64,
    rng: &mut R,
) -> PopulationResponse {
    pop.sample_response(s, rng)
}

fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        return 0; // Poisson(0) is the point mass at zero
    }
    let draw: f64 = Poisson::new(lambda)
        .expect("rates are finite and positive here")
        .sample(rng);
    draw as u64
}
