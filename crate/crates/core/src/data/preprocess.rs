use std::collections::HashMap;

use crate::error::{Error, Result};

use super::dataset::IdMaps;
use super::interactions::{Interaction, InteractionLog};

/// Collapses duplicate (user, item) pairs to their earliest occurrence, then
/// repeatedly drops users and items with fewer than `min_interactions`
/// records until nothing changes. Dense ids follow first appearance in the
/// surviving log.
pub fn preprocess(log: &InteractionLog, min_interactions: usize) -> Result<(InteractionLog, IdMaps)> {
    if log.is_empty() {
        return Err(Error::domain("cannot preprocess an empty log"));
    }

    // earliest timestamp wins; equal timestamps keep the first record
    let mut keep: HashMap<(&str, &str), usize> = HashMap::new();
    for (k, r) in log.records.iter().enumerate() {
        keep.entry((r.user.as_str(), r.item.as_str()))
            .and_modify(|best| {
                if r.timestamp < log.records[*best].timestamp {
                    *best = k;
                }
            })
            .or_insert(k);
    }
    let mut kept: Vec<bool> = vec![false; log.len()];
    for &k in keep.values() {
        kept[k] = true;
    }
    let mut records: Vec<&Interaction> = log
        .records
        .iter()
        .zip(&kept)
        .filter_map(|(r, &k)| k.then_some(r))
        .collect();

    loop {
        let mut user_count: HashMap<&str, usize> = HashMap::new();
        let mut item_count: HashMap<&str, usize> = HashMap::new();
        for r in &records {
            *user_count.entry(&r.user).or_default() += 1;
            *item_count.entry(&r.item).or_default() += 1;
        }
        let before = records.len();
        records.retain(|r| {
            user_count[r.user.as_str()] >= min_interactions
                && item_count[r.item.as_str()] >= min_interactions
        });
        if records.len() == before {
            break;
        }
    }
    if records.is_empty() {
        return Err(Error::domain("dataset vanished under filtering"));
    }

    let mut maps = IdMaps::default();
    for r in &records {
        maps.intern_user(&r.user);
        maps.intern_item(&r.item);
    }
    let filtered = InteractionLog {
        records: records.into_iter().cloned().collect(),
    };
    Ok((filtered, maps))
}
