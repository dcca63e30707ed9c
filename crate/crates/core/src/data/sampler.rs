use crate::error::{Error, Result};
use crate::numerics::RngStream;

use super::dataset::Dataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triple {
    pub user: u32,
    pub pos: u32,
    pub neg: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BprBatch {
    pub triples: Vec<Triple>,
}

impl BprBatch {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Distinct users in ascending order.
    pub fn users(&self) -> Vec<u32> {
        let mut u: Vec<u32> = self.triples.iter().map(|t| t.user).collect();
        u.sort_unstable();
        u.dedup();
        u
    }

    /// Distinct positive and negative items in ascending order.
    pub fn items(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.triples.iter().flat_map(|t| [t.pos, t.neg]).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Draws `(u, i+)` uniformly from the training interactions and a negative
/// uniformly from the items `u` has not interacted with (by rejection).
pub fn sample_bpr_batch(dataset: &Dataset, batch_size: usize, rng: &mut RngStream) -> Result<BprBatch> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    if dataset.train_records.is_empty() {
        return Err(Error::domain("no training interactions to sample"));
    }
    let mut triples = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let r = dataset.train_records[rng.below(dataset.train_records.len())];
        if dataset.train[r.user as usize].len() >= dataset.n_items {
            return Err(Error::domain(format!(
                "user {} is positive on every item; no negative exists",
                r.user
            )));
        }
        let neg = loop {
            let cand = rng.below(dataset.n_items) as u32;
            if !dataset.is_train_positive(r.user, cand) {
                break cand;
            }
        };
        triples.push(Triple {
            user: r.user,
            pos: r.item,
            neg,
        });
    }
    Ok(BprBatch { triples })
}
