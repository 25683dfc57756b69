//! File formats: CSV ingestion/emission and JSON model persistence.
//!
//! Conventions (documented in FORMATS.md):
//! * tabular and plot data are CSV with a header row;
//! * structured models and fits are single JSON documents;
//! * every run directory gets exactly one `manifest.json` describing the
//!   command, config, seed, and files — and no timestamps, so rerunning a
//!   command with the same inputs reproduces every output byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cohort::{validate_observations, RatingObservation, VarianceSummary};
use crate::decoders::{decode_mad, decode_mld, decode_mvd, decode_wad, DecoderKind, Estimate, SearchGrid};
use crate::error::{Error, Result};
use crate::population::{Population, PopulationResponse};
use crate::rng::stream_rng;
use crate::scale::RatingScale;
use crate::user_model::{RatingPMF, ReliabilityProfile, UserModel};

/// Provenance record written once per output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// Snapshot of the effective configuration.
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn with_input(mut self, path: impl AsRef<Path>) -> Self {
        self.inputs.push(path.as_ref().display().to_string());
        self
    }

    pub fn record_output(&mut self, path: impl AsRef<Path>) {
        self.outputs.push(path.as_ref().display().to_string());
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        save_json(&path, self)?;
        Ok(path)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn json_err(path: &Path, source: serde_json::Error) -> Error {
    Error::Json {
        path: path.display().to_string(),
        source,
    }
}

/// Write any serializable value as pretty-printed JSON (with a trailing
/// newline, as text files should end).
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| json_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Read a JSON document. Use the typed loaders below when the value has
/// invariants; they validate after parsing.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| json_err(path, e))
}

pub fn load_population(path: &Path) -> Result<Population> {
    let population: Population = load_json(path)?;
    population.validate()?;
    Ok(population)
}

pub fn load_user_model(path: &Path) -> Result<UserModel> {
    let model: UserModel = load_json(path)?;
    model.validate()?;
    Ok(model)
}

pub fn load_fit_results(path: &Path) -> Result<Vec<crate::fitting::FitResult>> {
    let fits: Vec<crate::fitting::FitResult> = load_json(path)?;
    if fits.is_empty() {
        return Err(Error::invalid("fits", "fit manifest holds no users"));
    }
    Ok(fits)
}

#[derive(Debug, Deserialize)]
struct RawObservation {
    user_id: String,
    item_id: String,
    trial: u32,
    rating: f64,
}

/// Read a ratings CSV (`user_id,item_id,trial,rating`), validating as it
/// goes: every rating must match a scale category (and is snapped to its
/// exact value), trials are 1-based, and (user, item, trial) must be
/// unique. Errors name the offending line.
pub fn ingest_ratings(path: &Path, scale: &RatingScale) -> Result<Vec<RatingObservation>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Malformed {
            path: path.display().to_string(),
            line: 0,
            why: e.to_string(),
        })?;
    {
        let headers = reader.headers().map_err(|e| Error::Malformed {
            path: path.display().to_string(),
            line: 1,
            why: e.to_string(),
        })?;
        let expected = ["user_id", "item_id", "trial", "rating"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Malformed {
                path: path.display().to_string(),
                line: 1,
                why: format!("header must be {}", expected.join(",")),
            });
        }
    }
    let mut out = Vec::new();
    for record in reader.deserialize::<RawObservation>() {
        let raw = match record {
            Ok(raw) => raw,
            Err(e) => {
                let line = e
                    .position()
                    .map(|p| p.line())
                    .unwrap_or(0);
                return Err(Error::Malformed {
                    path: path.display().to_string(),
                    line,
                    why: e.to_string(),
                });
            }
        };
        let line = out.len() as u64 + 2; // header is line 1, rows follow in order
        let idx = scale.category_index(raw.rating).map_err(|_| Error::Malformed {
            path: path.display().to_string(),
            line,
            why: format!("rating {} is not a category of the scale", raw.rating),
        })?;
        if raw.trial == 0 {
            return Err(Error::Malformed {
                path: path.display().to_string(),
                line,
                why: "trial numbers start at 1".into(),
            });
        }
        out.push(RatingObservation {
            user_id: raw.user_id,
            item_id: raw.item_id,
            trial: raw.trial,
            rating: scale.categories[idx],
        });
    }
    validate_observations(&out, scale).map_err(|e| match e {
        Error::Invalid { why, .. } => Error::Malformed {
            path: path.display().to_string(),
            line: 0,
            why,
        },
        other => other,
    })?;
    Ok(out)
}

/// Write observations in the same CSV dialect `ingest_ratings` reads.
pub fn emit_observations(path: &Path, obs: &[RatingObservation]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    writer
        .write_record(["user_id", "item_id", "trial", "rating"])
        .map_err(|e| csv_err(path, e))?;
    for o in obs {
        writer
            .write_record(&[
                o.user_id.clone(),
                o.item_id.clone(),
                o.trial.to_string(),
                fmt_f64(o.rating),
            ])
            .map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

fn csv_err(path: &Path, source: csv::Error) -> Error {
    Error::Malformed {
        path: path.display().to_string(),
        line: 0,
        why: source.to_string(),
    }
}

/// Shortest decimal that round-trips, same for every emitter.
fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Sample `n_trials` population responses at latent value `s` and write
/// them long-form: `trial,neuron_index,preferred_value,count`. Trial `t`
/// (1-based in the file) uses RNG stream `(base_seed, t-1)`, the same
/// derivation as every other per-trial loop, so the counts column exactly
/// reproduces what `sample_response` returns under those streams.
pub fn emit_raster(
    population: &Population,
    s: f64,
    n_trials: u32,
    base_seed: u64,
    path: &Path,
) -> Result<()> {
    population.validate()?;
    if n_trials == 0 {
        return Err(Error::invalid("raster", "need at least one trial"));
    }
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    writer
        .write_record(["trial", "neuron_index", "preferred_value", "count"])
        .map_err(|e| csv_err(path, e))?;
    for t in 0..n_trials {
        let mut rng = stream_rng(base_seed, t as u64);
        let resp = population.sample_response(s, &mut rng);
        for (i, &count) in resp.counts.iter().enumerate() {
            writer
                .write_record(&[
                    (t + 1).to_string(),
                    i.to_string(),
                    fmt_f64(population.curves[i].preferred),
                    count.to_string(),
                ])
                .map_err(|e| csv_err(path, e))?;
        }
    }
    writer.flush().map_err(|e| io_err(path, e))
}

/// Decode one response with the model's own decoder and write the decision
/// landscape: per grid value `s`, the expected activity of a neuron
/// preferring `s` when the stimulus sits at the decoded estimate (the
/// population's expected response profile around the answer), the response
/// log-likelihood, and — when the model carries a prior — the log-posterior.
/// The final row repeats those columns at the estimate itself, so the file
/// is plottable as curves plus a marked point.
///
/// Returns the estimate. `seed` only matters for MVD tie-breaking.
pub fn emit_decoder_profile(
    model: &UserModel,
    resp: &PopulationResponse,
    seed: u64,
    path: &Path,
) -> Result<Estimate> {
    model.validate()?;
    resp.check_against(&model.population)?;
    let grid = model
        .decoder
        .grid
        .unwrap_or_else(|| SearchGrid::covering(&model.population));
    let prior = match model.decoder.variant {
        DecoderKind::Mad => model.decoder.prior.as_ref(),
        _ => None,
    };

    let estimate = match model.decoder.variant {
        DecoderKind::Mvd => {
            let mut rng = stream_rng(seed, 0);
            decode_mvd(&model.population, resp, &mut rng)?
        }
        DecoderKind::Wad => decode_wad(&model.population, resp)?,
        DecoderKind::Mld => decode_mld(&model.population, resp, &grid)?,
        DecoderKind::Mad => decode_mad(&model.population, resp, prior, &grid)?,
    };

    // Expected activity of a hypothetical neuron preferring `x` while the
    // population encodes the decoded estimate: the smooth profile the
    // observed counts scatter around.
    let reference = crate::population::TuningCurve::new(
        mean_gain(&model.population),
        mean_baseline(&model.population),
        estimate.value,
        mean_width(&model.population),
    )?;

    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["s", "expected_activity", "log_likelihood"];
    if prior.is_some() {
        header.push("log_posterior");
    }
    writer.write_record(&header).map_err(|e| csv_err(path, e))?;

    let mut write_row = |s: f64, j: usize| -> Result<()> {
        let ll = crate::decoders::log_likelihood(&model.population, resp, s);
        let mut row = vec![fmt_f64(s), fmt_f64(reference.rate(s)), fmt_f64(ll)];
        if let Some(p) = prior {
            row.push(fmt_f64(ll + p.log_density_at(&grid, j)));
        }
        writer.write_record(&row).map_err(|e| csv_err(path, e))
    };
    for j in 0..grid.len() {
        write_row(grid.point(j), j)?;
    }
    // The one-row estimate record.
    write_row(estimate.value, grid.nearest_index(estimate.value))?;
    writer.flush().map_err(|e| io_err(path, e))?;
    Ok(estimate)
}

fn mean_gain(pop: &Population) -> f64 {
    pop.curves.iter().map(|c| c.gain).sum::<f64>() / pop.len() as f64
}

fn mean_baseline(pop: &Population) -> f64 {
    pop.curves.iter().map(|c| c.baseline).sum::<f64>() / pop.len() as f64
}

fn mean_width(pop: &Population) -> f64 {
    pop.curves.iter().map(|c| c.width).sum::<f64>() / pop.len() as f64
}

/// Category-usage histogram as CSV: `categories_used,pairs`.
pub fn emit_histogram(path: &Path, bins: &[u64]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    writer
        .write_record(["categories_used", "pairs"])
        .map_err(|e| csv_err(path, e))?;
    for (k, &count) in bins.iter().enumerate() {
        writer
            .write_record(&[(k + 1).to_string(), count.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

/// Per-(user, item) variances as CSV: `user_id,item_id,variance,n_trials`.
pub fn emit_variances(path: &Path, summary: &VarianceSummary) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    writer
        .write_record(["user_id", "item_id", "variance", "n_trials"])
        .map_err(|e| csv_err(path, e))?;
    for s in &summary.samples {
        writer
            .write_record(&[
                s.user_id.clone(),
                s.item_id.clone(),
                fmt_f64(s.variance),
                s.n_trials.to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

/// Rating pmf as CSV: `category,probability`.
pub fn emit_pmf(path: &Path, scale: &RatingScale, pmf: &RatingPMF) -> Result<()> {
    pmf.validate(scale)?;
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    writer
        .write_record(["category", "probability"])
        .map_err(|e| csv_err(path, e))?;
    for (c, p) in scale.categories.iter().zip(&pmf.probabilities) {
        writer
            .write_record(&[fmt_f64(*c), fmt_f64(*p)])
            .map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

/// Reliability profile as CSV: `s,mse,fraction_of_max_mse`.
pub fn emit_reliability(path: &Path, profile: &ReliabilityProfile) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    writer
        .write_record(["s", "mse", "fraction_of_max_mse"])
        .map_err(|e| csv_err(path, e))?;
    for ((s, mse), fraction) in profile
        .latents
        .iter()
        .zip(&profile.mse)
        .zip(&profile.fraction)
    {
        writer
            .write_record(&[fmt_f64(*s), fmt_f64(*mse), fmt_f64(*fraction)])
            .map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

/// Cluster assignments as CSV: `user_id,cluster`.
pub fn emit_assignments(
    path: &Path,
    features: &[crate::clustering::FeatureVector],
    assignments: &[usize],
) -> Result<()> {
    if features.len() != assignments.len() {
        return Err(Error::invalid(
            "assignments",
            "feature and assignment counts differ",
        ));
    }
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    writer
        .write_record(["user_id", "cluster"])
        .map_err(|e| csv_err(path, e))?;
    for (f, &c) in features.iter().zip(assignments) {
        writer
            .write_record(&[f.user_id.clone(), c.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

/// Filesystem-safe slug for user-provided identifiers.
pub fn slug(id: &str) -> String {
    let mut out: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect();
    if out.is_empty() {
        out.push('x');
    }
    out
}
