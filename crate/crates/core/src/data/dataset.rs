use std::collections::HashMap;

use crate::error::{Error, Result};

/// One interaction with dense ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Record {
    pub user: u32,
    pub item: u32,
    pub timestamp: u64,
}

/// Dense id ↔ raw id tables, dense ids in first-appearance order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdMaps {
    pub users: Vec<String>,
    pub items: Vec<String>,
    user_index: HashMap<String, u32>,
    item_index: HashMap<String, u32>,
}

impl IdMaps {
    pub fn from_raw(users: Vec<String>, items: Vec<String>) -> Result<Self> {
        let user_index = index_of(&users, "user")?;
        let item_index = index_of(&items, "item")?;
        Ok(Self {
            users,
            items,
            user_index,
            item_index,
        })
    }

    pub fn user(&self, raw: &str) -> Option<u32> {
        self.user_index.get(raw).copied()
    }

    pub fn item(&self, raw: &str) -> Option<u32> {
        self.item_index.get(raw).copied()
    }

    pub(crate) fn intern_user(&mut self, raw: &str) -> u32 {
        intern(&mut self.users, &mut self.user_index, raw)
    }

    pub(crate) fn intern_item(&mut self, raw: &str) -> u32 {
        intern(&mut self.items, &mut self.item_index, raw)
    }
}

fn intern(list: &mut Vec<String>, index: &mut HashMap<String, u32>, raw: &str) -> u32 {
    if let Some(&id) = index.get(raw) {
        return id;
    }
    let id = list.len() as u32;
    list.push(raw.to_string());
    index.insert(raw.to_string(), id);
    id
}

fn index_of(list: &[String], what: &str) -> Result<HashMap<String, u32>> {
    let mut map = HashMap::with_capacity(list.len());
    for (k, raw) in list.iter().enumerate() {
        if map.insert(raw.clone(), k as u32).is_some() {
            return Err(Error::format(format!("duplicate raw {what} id {raw:?}")));
        }
    }
    Ok(map)
}

/// Preprocessed, split interaction data. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub n_users: usize,
    pub n_items: usize,
    /// Per-user sorted positive item lists.
    pub train: Vec<Vec<u32>>,
    pub val: Vec<Vec<u32>>,
    pub test: Vec<Vec<u32>>,
    /// Records of each split in chronological order.
    pub train_records: Vec<Record>,
    pub val_records: Vec<Record>,
    pub test_records: Vec<Record>,
    pub ids: IdMaps,
    pub user_degree: Vec<u32>,
    pub item_degree: Vec<u32>,
    pub ratios: [f64; 3],
    pub dropped_val: usize,
    pub dropped_test: usize,
}

impl Dataset {
    /// Builds per-user lists and degrees and validates the split invariants.
    #[allow(clippy::too_many_arguments)]
    pub fn from_records(
        ids: IdMaps,
        train_records: Vec<Record>,
        val_records: Vec<Record>,
        test_records: Vec<Record>,
        ratios: [f64; 3],
        dropped_val: usize,
        dropped_test: usize,
    ) -> Result<Self> {
        let n_users = ids.users.len();
        let n_items = ids.items.len();
        let lists = |recs: &[Record], name: &str| -> Result<Vec<Vec<u32>>> {
            let mut out = vec![Vec::new(); n_users];
            for r in recs {
                if r.user as usize >= n_users || r.item as usize >= n_items {
                    return Err(Error::format(format!(
                        "{name} record ({}, {}) outside {n_users}x{n_items}",
                        r.user, r.item
                    )));
                }
                out[r.user as usize].push(r.item);
            }
            for l in &mut out {
                l.sort_unstable();
                let before = l.len();
                l.dedup();
                if l.len() != before {
                    return Err(Error::format(format!("duplicate interaction in {name}")));
                }
            }
            Ok(out)
        };
        let train = lists(&train_records, "train")?;
        let val = lists(&val_records, "val")?;
        let test = lists(&test_records, "test")?;

        let mut user_degree = vec![0u32; n_users];
        let mut item_degree = vec![0u32; n_items];
        for r in &train_records {
            user_degree[r.user as usize] += 1;
            item_degree[r.item as usize] += 1;
        }
        if user_degree.contains(&0) || item_degree.contains(&0) {
            return Err(Error::format("every dense id must occur in the training split"));
        }
        for u in 0..n_users {
            let overlap = |a: &[u32], b: &[u32]| a.iter().any(|x| b.binary_search(x).is_ok());
            if overlap(&train[u], &val[u]) || overlap(&train[u], &test[u]) || overlap(&val[u], &test[u])
            {
                return Err(Error::format(format!("splits overlap for user {u}")));
            }
        }

        Ok(Self {
            n_users,
            n_items,
            train,
            val,
            test,
            train_records,
            val_records,
            test_records,
            ids,
            user_degree,
            item_degree,
            ratios,
            dropped_val,
            dropped_test,
        })
    }

    #[inline]
    pub fn is_train_positive(&self, user: u32, item: u32) -> bool {
        self.train[user as usize].binary_search(&item).is_ok()
    }

    pub fn n_train(&self) -> usize {
        self.train_records.len()
    }
}
