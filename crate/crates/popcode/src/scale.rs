//! Rating scales and discretization of continuous estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A bounded discrete response scale, e.g. the classic 1..5 star scale.
///
/// `categories` are the legal answer values in strictly increasing order;
/// the first equals `min` and the last equals `max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingScale {
    pub min: f64,
    pub max: f64,
    pub categories: Vec<f64>,
}

impl RatingScale {
    pub fn new(min: f64, max: f64, categories: Vec<f64>) -> Result<Self> {
        let scale = RatingScale {
            min,
            max,
            categories,
        };
        scale.validate()?;
        Ok(scale)
    }

    /// The 5-star scale with integer categories 1..=5.
    pub fn five_star() -> Self {
        RatingScale {
            min: 1.0,
            max: 5.0,
            categories: vec![1.0, 2.0, 3.0, 4.0, 5.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.min.is_finite() || !self.max.is_finite() || self.min >= self.max {
            return Err(Error::invalid(
                "scale",
                format!("need finite min < max, got [{}, {}]", self.min, self.max),
            ));
        }
        if self.categories.len() < 2 {
            return Err(Error::invalid("scale", "need at least two categories"));
        }
        if !self.categories.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid(
                "scale",
                "categories must be strictly increasing",
            ));
        }
        if self.categories[0] != self.min || *self.categories.last().unwrap() != self.max {
            return Err(Error::invalid(
                "scale",
                "first/last category must equal min/max",
            ));
        }
        Ok(())
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    /// Index of `rating` in `categories`, or `None` if it is not a category.
    pub fn category_index(&self, rating: f64) -> Option<usize> {
        self.categories
            .iter()
            .position(|&c| (c - rating).abs() <= 1e-9)
    }

    /// Clip a continuous estimate to `[min, max]` and round to the nearest
    /// category. Exact midpoints round up (towards the larger category).
    pub fn discretize(&self, s_hat: f64) -> Result<f64> {
        if !s_hat.is_finite() {
            return Err(Error::invalid(
                "estimate",
                format!("cannot discretize non-finite value {s_hat}"),
            ));
        }
        let s = s_hat.clamp(self.min, self.max);
        // Upper bound of the partition cell: first category whose midpoint
        // with its predecessor lies strictly above s.
        let mut best = self.categories[0];
        for pair in self.categories.windows(2) {
            let midpoint = 0.5 * (pair[0] + pair[1]);
            if s >= midpoint {
                best = pair[1];
            } else {
                break;
            }
        }
        Ok(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_star_is_valid() {
        RatingScale::five_star().validate().unwrap();
    }

    #[test]
    fn rejects_bad_scales() {
        assert!(RatingScale::new(5.0, 1.0, vec![1.0, 5.0]).is_err());
        assert!(RatingScale::new(1.0, 5.0, vec![1.0, 3.0, 2.0, 5.0]).is_err());
        assert!(RatingScale::new(1.0, 5.0, vec![2.0, 5.0]).is_err());
        assert!(RatingScale::new(1.0, 5.0, vec![1.0]).is_err());
    }

    #[test]
    fn discretize_rounds_to_nearest() {
        let scale = RatingScale::five_star();
        assert_eq!(scale.discretize(2.4).unwrap(), 2.0);
        assert_eq!(scale.discretize(2.6).unwrap(), 3.0);
        assert_eq!(scale.discretize(1.0).unwrap(), 1.0);
    }

    #[test]
    fn discretize_midpoint_rounds_up() {
        let scale = RatingScale::five_star();
        assert_eq!(scale.discretize(2.5).unwrap(), 3.0);
        assert_eq!(scale.discretize(4.5).unwrap(), 5.0);
    }

    #[test]
    fn discretize_clips_to_scale() {
        let scale = RatingScale::five_star();
        assert_eq!(scale.discretize(7.2).unwrap(), 5.0);
        assert_eq!(scale.discretize(-3.0).unwrap(), 1.0);
    }

    #[test]
    fn discretize_rejects_non_finite() {
        let scale = RatingScale::five_star();
        assert!(scale.discretize(f64::NAN).is_err());
        assert!(scale.discretize(f64::INFINITY).is_err());
    }

    #[test]
    fn category_index_matches_value() {
        let scale = RatingScale::five_star();
        assert_eq!(scale.category_index(3.0), Some(2));
        assert_eq!(scale.category_index(3.2), None);
    }
}
