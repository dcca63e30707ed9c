use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{parse_key_values, read_to_string, write_atomic, write_dir_atomic};

use super::dataset::{Dataset, IdMaps, Record};
use super::interactions::parse_interactions;

const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Writes `meta`, `train`, `val`, `test` and the raw-id tables `users` /
/// `items` into `dir`.
pub fn save_snapshot(ds: &Dataset, dir: &Path) -> Result<()> {
    write_dir_atomic(dir, |tmp| {
        let mut meta = String::new();
        let _ = writeln!(meta, "n_users={}", ds.n_users);
        let _ = writeln!(meta, "n_items={}", ds.n_items);
        let _ = writeln!(meta, "n_train={}", ds.train_records.len());
        let _ = writeln!(meta, "n_val={}", ds.val_records.len());
        let _ = writeln!(meta, "n_test={}", ds.test_records.len());
        let _ = writeln!(meta, "ratio_train={}", ds.ratios[0]);
        let _ = writeln!(meta, "ratio_val={}", ds.ratios[1]);
        let _ = writeln!(meta, "ratio_test={}", ds.ratios[2]);
        let _ = writeln!(meta, "dropped_val={}", ds.dropped_val);
        let _ = writeln!(meta, "dropped_test={}", ds.dropped_test);
        write_atomic(&tmp.join("meta"), meta.as_bytes())?;

        for (name, recs) in SPLITS
            .iter()
            .zip([&ds.train_records, &ds.val_records, &ds.test_records])
        {
            let mut s = String::with_capacity(recs.len() * 16);
            for r in recs {
                let _ = writeln!(s, "{},{},{}", r.user, r.item, r.timestamp);
            }
            write_atomic(&tmp.join(name), s.as_bytes())?;
        }
        write_atomic(&tmp.join("users"), (ds.ids.users.join("\n") + "\n").as_bytes())?;
        write_atomic(&tmp.join("items"), (ds.ids.items.join("\n") + "\n").as_bytes())?;
        Ok(())
    })
}

pub fn load_snapshot(dir: &Path) -> Result<Dataset> {
    let meta: HashMap<String, String> = parse_key_values(&read_to_string(&dir.join("meta"))?)?
        .into_iter()
        .collect();
    let get = |k: &str| -> Result<&str> {
        meta.get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::format(format!("snapshot meta lacks {k}")))
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::format(format!("snapshot meta {k} is not a count")))
    };
    let ratio = |k: &str| -> Result<f64> {
        get(k)?
            .parse()
            .map_err(|_| Error::format(format!("snapshot meta {k} is not a number")))
    };

    let lines = |name: &str| -> Result<Vec<String>> {
        Ok(read_to_string(&dir.join(name))?
            .lines()
            .map(|l| l.trim_end_matches('\r').to_string())
            .filter(|l| !l.is_empty())
            .collect())
    };
    let ids = IdMaps::from_raw(lines("users")?, lines("items")?)?;
    if ids.users.len() != num("n_users")? || ids.items.len() != num("n_items")? {
        return Err(Error::format("snapshot id tables disagree with meta counts"));
    }

    let mut splits = Vec::with_capacity(3);
    for name in SPLITS {
        let text = read_to_string(&dir.join(name))?;
        let recs = if text.trim().is_empty() {
            Vec::new()
        } else {
            parse_interactions(&text)?
                .records
                .into_iter()
                .map(|r| {
                    let parse = |s: &str| {
                        s.parse::<u32>()
                            .map_err(|_| Error::format(format!("{name}: non-numeric dense id {s:?}")))
                    };
                    Ok(Record {
                        user: parse(&r.user)?,
                        item: parse(&r.item)?,
                        timestamp: r.timestamp,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        };
        if recs.len() != num(&format!("n_{name}"))? {
            return Err(Error::format(format!("{name} record count disagrees with meta")));
        }
        splits.push(recs);
    }
    let test = splits.pop().unwrap_or_default();
    let val = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    Dataset::from_records(
        ids,
        train,
        val,
        test,
        [ratio("ratio_train")?, ratio("ratio_val")?, ratio("ratio_test")?],
        num("dropped_val")?,
        num("dropped_test")?,
    )
}
