use crate::error::{Error, Result};

use super::dataset::{Dataset, IdMaps, Record};
use super::interactions::InteractionLog;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

/// Global chronological split: a stable sort by timestamp (ties keep input
/// order), then consecutive train/val/test slices. Val/test records whose
/// user or item never occurs in train are dropped and counted. Dense ids are
/// assigned in first-appearance order of the input log among entities seen
/// in train.
pub fn chrono_split(log: &InteractionLog, ratios: SplitRatios) -> Result<Dataset> {
    let parts = [ratios.train, ratios.val, ratios.test];
    if parts.iter().any(|&r| !(r >= 0.0)) || ratios.train <= 0.0 {
        return Err(Error::config(format!("invalid split ratios {parts:?}")));
    }
    let total: f64 = parts.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split ratios sum to {total}, expected 1")));
    }
    if log.is_empty() {
        return Err(Error::domain("cannot split an empty log"));
    }

    let n = log.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&k| log.records[k].timestamp);
    let cut_train = ((n as f64) * ratios.train).round() as usize;
    let cut_val = (((n as f64) * (ratios.train + ratios.val)).round() as usize).max(cut_train);
    let cut_train = cut_train.min(n);
    let cut_val = cut_val.min(n);

    let mut in_train = vec![false; n];
    for &k in &order[..cut_train] {
        in_train[k] = true;
    }
    // Interning walks the input in file order so ids follow first appearance.
    let mut maps = IdMaps::default();
    let train_users: std::collections::HashSet<&str> =
        order[..cut_train].iter().map(|&k| log.records[k].user.as_str()).collect();
    let train_items: std::collections::HashSet<&str> =
        order[..cut_train].iter().map(|&k| log.records[k].item.as_str()).collect();
    for r in &log.records {
        if train_users.contains(r.user.as_str()) {
            maps.intern_user(&r.user);
        }
        if train_items.contains(r.item.as_str()) {
            maps.intern_item(&r.item);
        }
    }

    let convert = |slice: &[usize]| -> (Vec<Record>, usize) {
        let mut out = Vec::with_capacity(slice.len());
        let mut dropped = 0;
        for &k in slice {
            let r = &log.records[k];
            match (maps.user(&r.user), maps.item(&r.item)) {
                (Some(user), Some(item)) => out.push(Record {
                    user,
                    item,
                    timestamp: r.timestamp,
                }),
                _ => dropped += 1,
            }
        }
        (out, dropped)
    };
    let (train, _) = convert(&order[..cut_train]);
    let (val, dropped_val) = convert(&order[cut_train..cut_val]);
    let (test, dropped_test) = convert(&order[cut_val..]);
    if dropped_val + dropped_test > 0 {
        log::info!("split dropped {dropped_val} val and {dropped_test} test records with unseen ids");
    }

    Dataset::from_records(maps, train, val, test, parts, dropped_val, dropped_test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Interaction;

    fn log_of(recs: &[(&str, &str, u64)]) -> InteractionLog {
        InteractionLog {
            records: recs
                .iter()
                .map(|&(u, i, t)| Interaction {
                    user: u.into(),
                    item: i.into(),
                    timestamp: t,
                })
                .collect(),
        }
    }

    #[test]
    fn ten_distinct_timestamps() {
        // file order differs from time order
        let recs = [
            ("u4", "x", 10),
            ("u0", "x", 3),
            ("u0", "y", 1),
            ("u1", "x", 2),
            ("u2", "y", 9),
            ("u1", "y", 8),
            ("u2", "x", 4),
            ("u3", "x", 5),
            ("u3", "y", 7),
            ("u4", "y", 6),
        ];
        let ds = chrono_split(&log_of(&recs), SplitRatios::default()).unwrap();
        let ts = |r: &[Record]| r.iter().map(|x| x.timestamp).collect::<Vec<_>>();
        assert_eq!(ts(&ds.train_records), vec![1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(ts(&ds.val_records), vec![9]);
        assert_eq!(ts(&ds.test_records), vec![10]);
        assert_eq!((ds.dropped_val, ds.dropped_test), (0, 0));
        assert_eq!(ds.ids.users, vec!["u4", "u0", "u1", "u2", "u3"]);
    }

    #[test]
    fn eight_one_one() {
        let recs: Vec<(String, String, u64)> =
            (0..10).map(|k| (format!("u{}", k % 2), format!("i{}", k % 3), k as u64)).collect();
        let log = InteractionLog {
            records: recs
                .iter()
                .map(|(u, i, t)| Interaction {
                    user: u.clone(),
                    item: i.clone(),
                    timestamp: *t,
                })
                .collect(),
        };
        // duplicates are not this function's job; dedupe first
        let (log, _) = crate::data::preprocess(&log, 1).unwrap();
        let ds = chrono_split(&log, SplitRatios::default()).unwrap();
        let total = ds.train_records.len() + ds.val_records.len() + ds.test_records.len();
        assert_eq!(total + ds.dropped_val + ds.dropped_test, log.len());
    }

    #[test]
    fn equal_timestamps_follow_input_order() {
        let recs = [
            ("a", "x", 5),
            ("b", "y", 5),
            ("a", "y", 5),
            ("b", "x", 5),
            ("c", "x", 5),
            ("c", "y", 5),
            ("d", "x", 5),
            ("d", "y", 5),
            ("a", "z", 5),
            ("b", "z", 5),
        ];
        let ds = chrono_split(&log_of(&recs), SplitRatios::default()).unwrap();
        // train = first eight in file order; z never seen in train → both dropped
        assert_eq!(ds.train_records.len(), 8);
        assert_eq!(ds.dropped_val, 1);
        assert_eq!(ds.dropped_test, 1);
        assert_eq!(ds.ids.items, vec!["x", "y"]);
    }

    #[test]
    fn rejects_bad_ratios() {
        let log = log_of(&[("a", "x", 1)]);
        let bad = SplitRatios {
            train: 0.5,
            val: 0.1,
            test: 0.1,
        };
        assert!(matches!(chrono_split(&log, bad), Err(Error::Config(_))));
    }
}
