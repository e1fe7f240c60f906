use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::parse::Rating;
use crate::promptgen::Modality;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YesRate {
    pub rate: f64,
    pub n_valid: usize,
    pub n_invalid: usize,
}

/// Agree and strongly agree count as yes; each neutral counts as half a yes.
/// Invalid ratings are left out of both numerator and denominator.
pub fn binarize(ratings: &[Rating]) -> Result<YesRate, StatsError> {
    let mut yes = 0usize;
    let mut neutral = 0usize;
    let mut n_valid = 0usize;
    for r in ratings {
        match r.level() {
            Some(4 | 5) => yes += 1,
            Some(3) => neutral += 1,
            Some(_) => {}
            None => continue,
        }
        n_valid += 1;
    }
    if n_valid == 0 {
        return Err(StatsError::NoValidRatings);
    }
    Ok(YesRate {
        rate: (yes as f64 + 0.5 * neutral as f64) / n_valid as f64,
        n_valid,
        n_invalid: ratings.len() - n_valid,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub model: String,
    pub condition_label: String,
    pub news_id: String,
    pub modality: Modality,
}

/// Aggregated yes-rate for one (model, condition, news, modality).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationCell {
    pub key: CellKey,
    pub ratings: Vec<Rating>,
    /// `None` when the cell has no valid rating.
    pub yes_rate: Option<f64>,
    pub n_valid: usize,
    pub n_invalid: usize,
}

impl ObservationCell {
    pub fn from_ratings(key: CellKey, ratings: Vec<Rating>) -> ObservationCell {
        let (yes_rate, n_valid) = match binarize(&ratings) {
            Ok(y) => (Some(y.rate), y.n_valid),
            Err(_) => (None, 0),
        };
        let n_invalid = ratings.len() - n_valid;
        ObservationCell {
            key,
            ratings,
            yes_rate,
            n_valid,
            n_invalid,
        }
    }

    /// Counts of valid ratings per Likert level (index 0 is L1).
    pub fn level_counts(&self) -> [u32; 5] {
        let mut c = [0u32; 5];
        for k in self.ratings.iter().filter_map(|r| r.level()) {
            c[(k - 1) as usize] += 1;
        }
        c
    }
}
