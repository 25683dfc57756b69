//! Poisson population-code simulation and estimation for noisy user ratings.
//!
//! The premise: when a person rates the same item twice they rarely give the
//! same answer, and the variability looks like neural noise. This crate
//! models a rater as a small population of Poisson neurons with bell-shaped
//! tuning curves encoding a latent per-item value, plus a decoder that turns
//! one noisy population response into a rating on a discrete scale. From
//! that generative story it derives everything a rating pipeline might
//! want:
//!
//! * [`population`] — tuning curves, populations, Poisson responses;
//! * [`decoders`] — four response-to-estimate rules (mode value, weighted
//!   average, maximum likelihood, maximum a posteriori);
//! * [`user_model`] — a population plus a decoder as one generative user,
//!   with Monte Carlo rating distributions and reliability profiles;
//! * [`cohort`] — repeated-rating experiments over many users and items,
//!   category-usage and variance statistics, Pareto tail fits;
//! * [`fitting`] — recovering decoder, neural parameters, and latent item
//!   values from observed ratings;
//! * [`clustering`] — grouping fitted users by their neural
//!   characteristics;
//! * [`io`] — CSV/JSON formats and the per-run manifest.
//!
//! Everything randomized takes an explicit seed and derives one RNG stream
//! per trial from it (see [`rng`]), so every result in the crate — up to
//! and including CLI output files — is reproducible byte for byte.
//!
//! ```
//! use popcode::decoders::DecoderKind;
//! use popcode::user_model::{rating_pmf_mc, UserModel};
//!
//! // A default rater who decodes by count-weighted averaging.
//! let model = UserModel::with_default_population(DecoderKind::Wad).unwrap();
//! let pmf = rating_pmf_mc(&model, 3.5, 2_000, 7).unwrap();
//! // Repeated ratings of the same item spread over neighboring categories.
//! assert!(pmf.probabilities[2] > 0.2 && pmf.probabilities[3] > 0.2);
//! ```

pub mod clustering;
pub mod cohort;
pub mod decoders;
pub mod error;
pub mod fitting;
pub mod io;
pub mod population;
pub mod rng;
pub mod scale;
pub mod user_model;

pub use error::{Error, Result};
pub use population::{build_population, Population, PopulationResponse, TuningCurve};
pub use scale::RatingScale;
