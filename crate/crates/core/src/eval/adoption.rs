use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::refiner::DecisionRecord;

/// Fraction of filtered candidates the oracle accepted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdoptionStats {
    pub filtered: usize,
    pub accepted: usize,
    pub rate: f64,
}

impl AdoptionStats {
    pub fn from_counts(filtered: usize, accepted: usize) -> Result<Self> {
        if filtered == 0 {
            return Err(Error::EmptyDecisionLog);
        }
        Ok(Self {
            filtered,
            accepted,
            rate: accepted as f64 / filtered as f64,
        })
    }
}

pub fn adoption_rate<'a>(
    log: impl IntoIterator<Item = &'a DecisionRecord>,
) -> Result<AdoptionStats> {
    let (mut filtered, mut accepted) = (0, 0);
    for d in log {
        filtered += 1;
        accepted += usize::from(d.z == 1);
    }
    AdoptionStats::from_counts(filtered, accepted)
}
