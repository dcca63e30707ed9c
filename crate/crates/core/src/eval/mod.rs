//! Full-ranking top-N evaluation (Recall@N, NDCG@N) with training
//! positives masked, plus the early-stopping tracker.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;

use crate::backbone::{Backbone, Features};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{cmp_desc, dot, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!("unknown split {other:?} (val|test)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub at: BTreeMap<usize, Metrics>,
    pub n_users: usize,
}

impl EvalResult {
    pub fn ndcg(&self, n: usize) -> Option<f64> {
        self.at.get(&n).map(|m| m.ndcg)
    }

    pub fn recall(&self, n: usize) -> Option<f64> {
        self.at.get(&n).map(|m| m.recall)
    }

    /// `recall@N=...` / `ndcg@N=...` lines.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (n, m) in &self.at {
            let _ = writeln!(out, "recall@{n}={}", m.recall);
            let _ = writeln!(out, "ndcg@{n}={}", m.ndcg);
        }
        let _ = writeln!(out, "users={}", self.n_users);
        out
    }

    /// Rows for the `epoch,split,metric,value` run log (no header).
    pub fn to_log_rows(&self, epoch: usize, split: Split) -> String {
        let mut out = String::new();
        for (n, m) in &self.at {
            let _ = writeln!(out, "{epoch},{},recall@{n},{}", split.name(), m.recall);
            let _ = writeln!(out, "{epoch},{},ndcg@{n},{}", split.name(), m.ndcg);
        }
        out
    }
}

pub const METRIC_LOG_HEADER: &str = "epoch,split,metric,value";

/// Indices of the `n` best scores, ties by ascending index.
pub fn top_n(scores: &[f64], n: usize) -> Vec<u32> {
    let cmp = |a: &u32, b: &u32| cmp_desc(scores[*a as usize], scores[*b as usize]).then(a.cmp(b));
    let mut idx: Vec<u32> = (0..scores.len() as u32).collect();
    let n = n.min(idx.len());
    if n == 0 {
        return Vec::new();
    }
    if n < idx.len() {
        idx.select_nth_unstable_by(n - 1, cmp);
        idx.truncate(n);
    }
    idx.sort_unstable_by(cmp);
    idx
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// Recall and NDCG of one ranked list against a sorted ground-truth set.
pub fn rank_metrics(ranked: &[u32], truth: &[u32], n: usize) -> Metrics {
    let hits: Vec<usize> = ranked
        .iter()
        .take(n)
        .enumerate()
        .filter(|(_, i)| truth.binary_search(i).is_ok())
        .map(|(r, _)| r + 1)
        .collect();
    let dcg: f64 = hits.iter().map(|&r| discount(r)).sum();
    let idcg: f64 = (1..=n.min(truth.len())).map(discount).sum();
    Metrics {
        recall: hits.len() as f64 / truth.len() as f64,
        ndcg: if idcg > 0.0 { dcg / idcg } else { 0.0 },
    }
}

/// Ranks every item for every user holding ground truth in `split`, with
/// train positives (and validation positives for the test split) excluded,
/// and averages the metrics over those users.
pub fn evaluate<T: Real>(features: &Features<T>, dataset: &Dataset, split: Split, ns: &[usize]) -> Result<EvalResult> {
    if ns.is_empty() || ns.contains(&0) {
        return Err(Error::config("cutoffs must be a nonempty list of positive integers"));
    }
    if features.user.rows() != dataset.n_users || features.item.rows() != dataset.n_items {
        return Err(Error::config("feature tables do not match the dataset"));
    }
    let truth = match split {
        Split::Val => &dataset.val,
        Split::Test => &dataset.test,
    };
    let max_n = *ns.iter().max().unwrap();
    let users: Vec<usize> = (0..dataset.n_users).filter(|&u| !truth[u].is_empty()).collect();
    if users.is_empty() {
        return Err(Error::domain(format!("{} split has no interactions", split.name())));
    }
    let per_user: Vec<Vec<Metrics>> = users
        .par_iter()
        .map(|&u| {
            let uv = features.user.row(u);
            let mut scores: Vec<f64> = (0..dataset.n_items).map(|i| dot(uv, features.item.row(i))).collect();
            for &i in &dataset.train[u] {
                scores[i as usize] = f64::NEG_INFINITY;
            }
            if split == Split::Test {
                for &i in &dataset.val[u] {
                    scores[i as usize] = f64::NEG_INFINITY;
                }
            }
            let ranked = top_n(&scores, max_n);
            ns.iter().map(|&n| rank_metrics(&ranked, &truth[u], n)).collect()
        })
        .collect();
    let mut at = BTreeMap::new();
    for (k, &n) in ns.iter().enumerate() {
        let (mut r, mut g) = (0.0, 0.0);
        for m in &per_user {
            r += m[k].recall;
            g += m[k].ndcg;
        }
        let cnt = per_user.len() as f64;
        at.insert(
            n,
            Metrics {
                recall: r / cnt,
                ndcg: g / cnt,
            },
        );
    }
    Ok(EvalResult {
        at,
        n_users: users.len(),
    })
}

pub fn evaluate_model<T: Real>(model: &Backbone<T>, dataset: &Dataset, split: Split, ns: &[usize]) -> Result<EvalResult> {
    evaluate(&model.all_features(), dataset, split, ns)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub stop: bool,
    pub is_best: bool,
}

/// Stops after `patience` consecutive observations without a strict
/// improvement over the best so far.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<f64>,
    best_epoch: Option<usize>,
    since_best: usize,
    seen: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: None,
            since_best: 0,
            seen: 0,
        }
    }

    pub fn observe(&mut self, value: f64) -> StopDecision {
        let epoch = self.seen;
        self.seen += 1;
        let is_best = match self.best {
            None => true,
            Some(b) => value > b,
        };
        if is_best {
            self.best = Some(value);
            self.best_epoch = Some(epoch);
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        StopDecision {
            stop: self.since_best >= self.patience && !is_best,
            is_best,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}
