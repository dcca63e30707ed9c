use rayon::prelude::*;

use crate::backbone::Features;
use crate::error::{Error, Result};
use crate::numerics::{cmp_desc, dot, Real, RngStream, StreamTag};

use super::losses::{ListSample, PairSample};
use super::{PckdConfig, PckdMethod, SamplingMode};

const PAIR_REDRAWS: usize = 100;

/// Per-user item permutation by descending student score.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankTable {
    rows: Vec<Vec<u32>>,
    pub built_at_epoch: usize,
}

impl RankTable {
    pub fn from_rows(rows: Vec<Vec<u32>>, built_at_epoch: usize) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        for (u, r) in rows.iter().enumerate() {
            let mut seen = vec![false; n];
            if r.len() != n || r.iter().any(|&i| (i as usize) >= n || std::mem::replace(&mut seen[i as usize], true)) {
                return Err(Error::domain(format!("rank row of user {u} is not a permutation")));
            }
        }
        Ok(Self { rows, built_at_epoch })
    }

    pub fn row(&self, user: u32) -> &[u32] {
        &self.rows[user as usize]
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn n_items(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

/// Sorts every item for every user by descending student score, ties by
/// ascending item index. Training positives are kept.
pub fn rebuild_rank_table<T: Real>(student: &Features<T>, epoch: usize) -> RankTable {
    let n_items = student.item.rows();
    let rows = (0..student.user.rows())
        .into_par_iter()
        .map(|u| {
            let uv = student.user.row(u);
            let scores: Vec<f64> = (0..n_items).map(|i| dot(uv, student.item.row(i))).collect();
            let mut order: Vec<u32> = (0..n_items as u32).collect();
            order.sort_by(|&a, &b| cmp_desc(scores[a as usize], scores[b as usize]).then(a.cmp(&b)));
            order
        })
        .collect();
    RankTable {
        rows,
        built_at_epoch: epoch,
    }
}

/// Unnormalized draw weights by 0-based rank position: `e^{-k/T}` for the
/// 1-based rank `k`, or all ones in random mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RankSampler {
    weights: Vec<f64>,
}

impl RankSampler {
    pub fn new(n_items: usize, t: f64, mode: SamplingMode) -> Result<Self> {
        let weights = match mode {
            SamplingMode::Random => vec![1.0; n_items],
            SamplingMode::RankAware => {
                if !(t > 0.0) {
                    return Err(Error::config(format!("sampling temperature must be positive, got {t}")));
                }
                (1..=n_items).map(|k| (-(k as f64) / t).exp()).collect()
            }
        };
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// One rank position, skipping those already `taken`.
    fn draw_position(&self, taken: &[bool], rng: &mut RngStream) -> usize {
        let total: f64 = self
            .weights
            .iter()
            .zip(taken)
            .filter(|(_, &t)| !t)
            .map(|(w, _)| w)
            .sum();
        let free = || (0..self.weights.len()).filter(|&k| !taken[k]);
        if total <= 0.0 {
            // Every remaining weight underflowed; the limit distribution
            // puts all mass on the best remaining rank.
            return free().next().expect("no free position");
        }
        let target = rng.uniform() * total;
        let mut acc = 0.0;
        let mut last = None;
        for k in free() {
            if self.weights[k] <= 0.0 {
                continue;
            }
            acc += self.weights[k];
            last = Some(k);
            if acc > target {
                return k;
            }
        }
        last.expect("positive total implies a positive weight")
    }

    /// `n` distinct items from `row` (a rank-ordered permutation), drawn
    /// sequentially without replacement.
    pub fn sample(&self, row: &[u32], n: usize, rng: &mut RngStream) -> Result<Vec<u32>> {
        if row.len() != self.weights.len() {
            return Err(Error::config(format!(
                "sampler built for {} items, row has {}",
                self.weights.len(),
                row.len()
            )));
        }
        if n > row.len() {
            return Err(Error::domain(format!("cannot draw {n} distinct items from {}", row.len())));
        }
        let mut taken = vec![false; row.len()];
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let k = self.draw_position(&taken, rng);
            taken[k] = true;
            out.push(row[k]);
        }
        Ok(out)
    }
}

/// `n` distinct items for `user`, where the item at 1-based rank `k` has
/// weight `e^{-k/T}` (rank-aware) or every item is equally likely (random).
pub fn rank_aware_sample(
    table: &RankTable,
    user: u32,
    t: f64,
    n: usize,
    rng: &mut RngStream,
    mode: SamplingMode,
) -> Result<Vec<u32>> {
    if user as usize >= table.n_users() {
        return Err(Error::domain(format!("user {user} outside rank table")));
    }
    RankSampler::new(table.n_items(), t, mode)?.sample(table.row(user), n, rng)
}

/// Items drawn for the regularizer in one step.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PckdSamples {
    pub pairs: Vec<PairSample>,
    pub lists: Vec<ListSample>,
}

impl PckdSamples {
    pub fn items(&self) -> Vec<u32> {
        self.pairs
            .iter()
            .flat_map(|p| [p.i, p.j])
            .chain(self.lists.iter().flat_map(|l| l.items.iter().copied()))
            .collect()
    }
}

fn draw_pair(
    user: u32,
    row: &[u32],
    first: &RankSampler,
    second: &RankSampler,
    rng: &mut RngStream,
) -> Result<PairSample> {
    let i = first.sample(row, 1, rng)?[0];
    for _ in 0..PAIR_REDRAWS {
        let j = second.sample(row, 1, rng)?[0];
        if j != i {
            return Ok(PairSample { user, i, j });
        }
    }
    Err(Error::domain(format!(
        "no distinct second item for user {user} after {PAIR_REDRAWS} draws"
    )))
}

/// Draws pairs and/or lists for `users` per the configured regularizer.
/// Each user gets its own substream keyed by `(epoch, step, user)`, so the
/// result does not depend on thread count or on which other users are in
/// the batch.
pub fn draw_samples(
    cfg: &PckdConfig,
    table: &RankTable,
    users: &[u32],
    seed: u64,
    epoch: usize,
    step: usize,
) -> Result<PckdSamples> {
    if cfg.method == PckdMethod::None {
        return Ok(PckdSamples::default());
    }
    let n = table.n_items();
    let base = RankSampler::new(n, cfg.t, cfg.sampling)?;
    let (first, second) = if cfg.method == PckdMethod::Hybrid {
        (
            RankSampler::new(n, cfg.t1, cfg.sampling)?,
            RankSampler::new(n, cfg.t2, cfg.sampling)?,
        )
    } else {
        (base.clone(), base.clone())
    };
    let per_user: Vec<(Option<PairSample>, Option<ListSample>)> = users
        .par_iter()
        .map(|&user| {
            if user as usize >= table.n_users() {
                return Err(Error::domain(format!("user {user} outside rank table")));
            }
            let mut rng = RngStream::keyed(seed, StreamTag::PckdSampling, &[epoch as u64, step as u64, user as u64]);
            let row = table.row(user);
            let list = match cfg.method {
                PckdMethod::List | PckdMethod::Hybrid => Some(ListSample {
                    user,
                    items: base.sample(row, cfg.q, &mut rng)?,
                }),
                _ => None,
            };
            let pair = match cfg.method {
                PckdMethod::Pair | PckdMethod::Hybrid => Some(draw_pair(user, row, &first, &second, &mut rng)?),
                _ => None,
            };
            Ok((pair, list))
        })
        .collect::<Result<_>>()?;
    let mut out = PckdSamples::default();
    for (p, l) in per_user {
        out.pairs.extend(p);
        out.lists.extend(l);
    }
    Ok(out)
}
