//! Decoder functions: from a noisy population response to an estimate.
//!
//! Four decoders translate a spike-count vector into a continuous estimate
//! `s_hat`, which is then clipped and rounded onto the rating scale:
//!
//! * **MVD** (mode value): the preferred value of a maximal-count neuron;
//!   ties are resolved uniformly at random (seeded).
//! * **WAD** (weighted average): preferred values averaged with the counts
//!   as weights.
//! * **MLD** (maximum likelihood): argmax over a search grid of the Poisson
//!   log-likelihood of the response.
//! * **MAD** (maximum a posteriori): as MLD, with a prior log-density added.
//!
//! The log-likelihood drops the `ln(r_i!)` term: it does not depend on the
//! candidate stimulus, so every argmax is unchanged. MLD/MAD use an
//! exhaustive grid scan (no local search); exact ties go to the smallest
//! grid value.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::{Population, PopulationResponse};

/// The four decoder variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Mvd,
    Wad,
    Mld,
    Mad,
}

impl DecoderKind {
    pub const ALL: [DecoderKind; 4] = [
        DecoderKind::Mvd,
        DecoderKind::Wad,
        DecoderKind::Mld,
        DecoderKind::Mad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DecoderKind::Mvd => "mvd",
            DecoderKind::Wad => "wad",
            DecoderKind::Mld => "mld",
            DecoderKind::Mad => "mad",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text.to_ascii_lowercase().as_str() {
            "mvd" => Ok(DecoderKind::Mvd),
            "wad" => Ok(DecoderKind::Wad),
            "mld" => Ok(DecoderKind::Mld),
            "mad" => Ok(DecoderKind::Mad),
            other => Err(Error::invalid(
                "decoder",
                format!("unknown decoder '{other}' (expected mvd|wad|mld|mad)"),
            )),
        }
    }

    /// Offset of this variant in one-hot feature blocks.
    pub fn index(self) -> usize {
        match self {
            DecoderKind::Mvd => 0,
            DecoderKind::Wad => 1,
            DecoderKind::Mld => 2,
            DecoderKind::Mad => 3,
        }
    }
}

impl std::fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Uniform discretization of the stimulus axis for MLD/MAD argmax scans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl SearchGrid {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        let grid = SearchGrid { lo, hi, step };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid over `[min - margin, max + margin]` with the default 1e-3 step.
    pub fn covering(pop: &Population) -> Self {
        let (lo, hi) = pop.preferred_range();
        SearchGrid { lo, hi, step: 1e-3 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lo.is_finite()
            && self.hi.is_finite()
            && self.lo < self.hi
            && self.step > 0.0
            && (self.hi - self.lo) / self.step >= 2.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "grid",
                format!("need lo < hi and at least 2 steps, got {self:?}"),
            ))
        }
    }

    /// Number of grid points (intervals + 1).
    pub fn len(&self) -> usize {
        ((self.hi - self.lo) / self.step).round() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, index: usize) -> f64 {
        self.lo + index as f64 * self.step
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }

    /// Index of the grid point closest to `s`.
    pub fn nearest_index(&self, s: f64) -> usize {
        let raw = ((s - self.lo) / self.step).round();
        (raw.max(0.0) as usize).min(self.len() - 1)
    }

    pub fn covers(&self, lo: f64, hi: f64) -> bool {
        self.lo <= lo + 1e-9 && self.point(self.len() - 1) >= hi - 1e-9
    }
}

/// Prior belief over the stimulus, for the MAP decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Prior {
    Gaussian { mean: f64, sd: f64 },
    /// One log-density value per point of the decoder's search grid.
    /// Entries may be `-inf` (excluded values) but at least one must be
    /// finite; `NaN`/`+inf` are rejected.
    Tabulated { log_density: Vec<f64> },
}

impl Prior {
    pub fn validate(&self, grid: &SearchGrid) -> Result<()> {
        match self {
            Prior::Gaussian { mean, sd } => {
                if mean.is_finite() && sd.is_finite() && *sd > 0.0 {
                    Ok(())
                } else {
                    Err(Error::invalid("prior", "need finite mean and sd > 0"))
                }
            }
            Prior::Tabulated { log_density } => {
                if log_density.len() != grid.len() {
                    return Err(Error::invalid(
                        "prior",
                        format!(
                            "tabulated prior has {} entries for a grid of {} points",
                            log_density.len(),
                            grid.len()
                        ),
                    ));
                }
                if log_density.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                    return Err(Error::invalid("prior", "log-densities must not be NaN/+inf"));
                }
                if !log_density.iter().any(|v| v.is_finite()) {
                    return Err(Error::invalid(
                        "prior",
                        "at least one grid point needs nonzero probability",
                    ));
                }
                Ok(())
            }
        }
    }

    /// Unnormalized log-density at grid point `index`.
    pub fn log_density_at(&self, grid: &SearchGrid, index: usize) -> f64 {
        match self {
            Prior::Gaussian { mean, sd } => {
                let z = (grid.point(index) - mean) / sd;
                -0.5 * z * z - sd.ln() - 0.5 * std::f64::consts::TAU.ln()
            }
            Prior::Tabulated { log_density } => log_density[index],
        }
    }
}

/// A decoder choice plus whatever it needs to run.
///
/// `grid` is required for MLD/MAD and ignored by MVD/WAD. A MAD spec without
/// a prior decodes with a uniform prior over the grid, which makes it
/// identical to MLD; MAD is never silently informative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderSpec {
    pub variant: DecoderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<SearchGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Prior>,
}

impl DecoderSpec {
    pub fn new(variant: DecoderKind) -> Self {
        DecoderSpec {
            variant,
            grid: None,
            prior: None,
        }
    }

    pub fn with_grid(mut self, grid: SearchGrid) -> Self {
        self.grid = Some(grid);
        self
    }

    pub fn with_prior(mut self, prior: Prior) -> Self {
        self.prior = Some(prior);
        self
    }

    /// Validate against the population the decoder will serve.
    pub fn validate_for(&self, pop: &Population) -> Result<()> {
        match self.variant {
            DecoderKind::Mvd | DecoderKind::Wad => Ok(()),
            DecoderKind::Mld | DecoderKind::Mad => {
                let grid = self.grid.as_ref().ok_or_else(|| {
                    Error::invalid("decoder", format!("{} requires a search grid", self.variant))
                })?;
                grid.validate()?;
                let (lo, hi) = pop.preferred_range();
                if !grid.covers(lo, hi) {
                    return Err(Error::invalid(
                        "decoder",
                        format!("grid {grid:?} does not cover [{lo}, {hi}]"),
                    ));
                }
                if let Some(prior) = &self.prior {
                    prior.validate(grid)?;
                }
                Ok(())
            }
        }
    }
}

/// A decoded estimate: the continuous value, its rating, and (for grid
/// decoders) the objective profile over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    /// Continuous stimulus estimate.
    pub value: f64,
    /// `value` clipped and rounded onto the scale.
    pub rating: f64,
    pub diagnostics: Option<DecodeDiagnostics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeDiagnostics {
    pub grid: SearchGrid,
    pub log_likelihood: Vec<f64>,
    /// Present when a prior entered the decision.
    pub log_posterior: Option<Vec<f64>>,
}

fn finish(pop: &Population, value: f64, diagnostics: Option<DecodeDiagnostics>) -> Result<Estimate> {
    Ok(Estimate {
        value,
        rating: pop.scale.discretize(value)?,
        diagnostics,
    })
}

/// Mode value decoder: preferred value of a maximal-count neuron.
///
/// Ties at the maximum are resolved uniformly at random among the tied
/// neurons, so an all-zero response is still decodable (any neuron may win).
pub fn decode_mvd<R: Rng + ?Sized>(
    pop: &Population,
    resp: &PopulationResponse,
    rng: &mut R,
) -> Result<Estimate> {
    resp.check_against(pop)?;
    let max = *resp.counts.iter().max().expect("population is non-empty");
    let tied: Vec<usize> = (0..resp.counts.len())
        .filter(|&i| resp.counts[i] == max)
        .collect();
    let winner = if tied.len() == 1 {
        tied[0]
    } else {
        tied[rng.random_range(0..tied.len())]
    };
    finish(pop, pop.curves[winner].preferred, None)
}

/// Weighted average decoder: count-weighted mean of preferred values.
///
/// Errors with [`Error::DegenerateResponse`] when every count is zero; the
/// caller may resample a fresh trial.
pub fn decode_wad(pop: &Population, resp: &PopulationResponse) -> Result<Estimate> {
    resp.check_against(pop)?;
    let total = resp.total();
    if total == 0 {
        return Err(Error::DegenerateResponse);
    }
    let weighted: f64 = resp
        .counts
        .iter()
        .zip(&pop.curves)
        .map(|(&r, c)| r as f64 * c.preferred)
        .sum();
    finish(pop, weighted / total as f64, None)
}

/// Poisson log-likelihood of `resp` at stimulus `s`, up to the constant
/// `-sum ln(r_i!)`:
///
/// ```text
/// sum_i [ r_i * ln f_i(s) - f_i(s) ]
/// ```
///
/// A neuron with `f_i(s) = 0` and a positive count drives the value to
/// `-inf`, which is a legal return, not an error.
pub fn log_likelihood(pop: &Population, resp: &PopulationResponse, s: f64) -> f64 {
    let mut acc = 0.0;
    for (&r, curve) in resp.counts.iter().zip(&pop.curves) {
        let rate = curve.rate(s);
        if r > 0 {
            acc += r as f64 * rate.ln();
        }
        acc -= rate;
    }
    acc
}

/// Unnormalized log-posterior at grid point `index`:
/// `log_likelihood + log prior density`.
pub fn log_posterior(
    pop: &Population,
    resp: &PopulationResponse,
    prior: &Prior,
    grid: &SearchGrid,
    index: usize,
) -> f64 {
    log_likelihood(pop, resp, grid.point(index)) + prior.log_density_at(grid, index)
}

/// Maximum likelihood decoder: exhaustive argmax of [`log_likelihood`] over
/// the grid, ties to the smallest grid value.
pub fn decode_mld(
    pop: &Population,
    resp: &PopulationResponse,
    grid: &SearchGrid,
) -> Result<Estimate> {
    resp.check_against(pop)?;
    grid.validate()?;
    let table = LikelihoodTable::build(pop, grid);
    let profile = table.profile(&resp.counts);
    let best = argmax_first(&profile).ok_or(Error::UndecodableResponse)?;
    finish(
        pop,
        grid.point(best),
        Some(DecodeDiagnostics {
            grid: *grid,
            log_likelihood: profile,
            log_posterior: None,
        }),
    )
}

/// Maximum a posteriori decoder: as [`decode_mld`] with the prior log-density
/// added. `prior = None` means uniform over the grid and reproduces MLD
/// exactly.
pub fn decode_mad(
    pop: &Population,
    resp: &PopulationResponse,
    prior: Option<&Prior>,
    grid: &SearchGrid,
) -> Result<Estimate> {
    resp.check_against(pop)?;
    grid.validate()?;
    if let Some(p) = prior {
        p.validate(grid)?;
    }
    let table = LikelihoodTable::build(pop, grid);
    let likelihood = table.profile(&resp.counts);
    let posterior: Vec<f64> = match prior {
        None => likelihood.clone(),
        Some(p) => likelihood
            .iter()
            .enumerate()
            .map(|(j, &ll)| ll + p.log_density_at(grid, j))
            .collect(),
    };
    let best = argmax_first(&posterior).ok_or(Error::UndecodableResponse)?;
    finish(
        pop,
        grid.point(best),
        Some(DecodeDiagnostics {
            grid: *grid,
            log_likelihood: likelihood,
            log_posterior: Some(posterior),
        }),
    )
}

/// Index of the maximum, first (smallest grid value) on exact ties; `None`
/// when every entry is `-inf`.
fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    let mut best_value = f64::NEG_INFINITY;
    for (j, &v) in values.iter().enumerate() {
        if v > best_value {
            best_value = v;
            best = Some(j);
        }
    }
    best
}

/// Cached per-grid-point rates for fast repeated decoding.
///
/// Stores `ln f_i(s_j)` (grid-major) and `sum_i f_i(s_j)`, so one decode is
/// a multiply-add pass instead of `N * M` exp calls.
pub(crate) struct LikelihoodTable {
    n_neurons: usize,
    ln_rates: Vec<f64>,
    rate_sums: Vec<f64>,
}

impl LikelihoodTable {
    pub(crate) fn build(pop: &Population, grid: &SearchGrid) -> Self {
        let m = grid.len();
        let n = pop.len();
        let mut ln_rates = Vec::with_capacity(m * n);
        let mut rate_sums = Vec::with_capacity(m);
        for j in 0..m {
            let s = grid.point(j);
            let mut sum = 0.0;
            for curve in &pop.curves {
                let rate = curve.rate(s);
                sum += rate;
                ln_rates.push(rate.ln());
            }
            rate_sums.push(sum);
        }
        LikelihoodTable {
            n_neurons: n,
            ln_rates,
            rate_sums,
        }
    }

    /// Log-likelihood at every grid point.
    pub(crate) fn profile(&self, counts: &[u64]) -> Vec<f64> {
        let nonzero: Vec<(usize, f64)> = counts
            .iter()
            .enumerate()
            .filter(|(_, &r)| r > 0)
            .map(|(i, &r)| (i, r as f64))
            .collect();
        let mut out = Vec::with_capacity(self.rate_sums.len());
        for j in 0..self.rate_sums.len() {
            let row = j * self.n_neurons;
            let mut acc = -self.rate_sums[j];
            for &(i, r) in &nonzero {
                acc += r * self.ln_rates[row + i];
            }
            out.push(acc);
        }
        out
    }

    /// Grid argmax of the log-likelihood, ties to the smallest grid value.
    pub(crate) fn argmax(&self, counts: &[u64]) -> Option<usize> {
        let nonzero: Vec<(usize, f64)> = counts
            .iter()
            .enumerate()
            .filter(|(_, &r)| r > 0)
            .map(|(i, &r)| (i, r as f64))
            .collect();
        let mut best: Option<usize> = None;
        let mut best_value = f64::NEG_INFINITY;
        for j in 0..self.rate_sums.len() {
            let row = j * self.n_neurons;
            let mut acc = -self.rate_sums[j];
            for &(i, r) in &nonzero {
                acc += r * self.ln_rates[row + i];
            }
            if acc > best_value {
                best_value = acc;
                best = Some(j);
            }
        }
        best
    }

    /// Grid argmax of likelihood plus a per-point prior log-density.
    pub(crate) fn argmax_with_prior(&self, counts: &[u64], prior_ld: &[f64]) -> Option<usize> {
        debug_assert_eq!(prior_ld.len(), self.rate_sums.len());
        let nonzero: Vec<(usize, f64)> = counts
            .iter()
            .enumerate()
            .filter(|(_, &r)| r > 0)
            .map(|(i, &r)| (i, r as f64))
            .collect();
        let mut best: Option<usize> = None;
        let mut best_value = f64::NEG_INFINITY;
        for j in 0..self.rate_sums.len() {
            let row = j * self.n_neurons;
            let mut acc = prior_ld[j] - self.rate_sums[j];
            for &(i, r) in &nonzero {
                acc += r * self.ln_rates[row + i];
            }
            if acc > best_value {
                best_value = acc;
                best = Some(j);
            }
        }
        best
    }
}
