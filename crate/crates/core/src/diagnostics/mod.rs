//! Preference (in)consistency between the student's own scores and the
//! scores of its projected features: the sampled per-user rate `C_u`, its
//! mean `C`, and the 5×5 matrix over rank quintiles.

use rayon::prelude::*;

use crate::backbone::{score, Features};
use crate::distill::{pref_of_scores, RankTable};
use crate::error::{Error, Result};
use crate::numerics::{dot, Real, RngStream, StreamTag};
use crate::projector::{ProjectorPair, Selection};

pub const GROUPS: usize = 5;

pub type GroupMatrix = [[f64; GROUPS]; GROUPS];

#[derive(Clone, Debug, PartialEq)]
pub struct InconsistencyReport {
    pub epoch: usize,
    pub c: f64,
    pub per_user: Vec<f64>,
    pub pairs_per_user: usize,
    pub groupwise: Option<GroupMatrix>,
}

/// `sign(s(u,i) - s(u,j))` with ties counted as `+1`.
pub fn pref<T: Real>(u: &[T], i: &[T], j: &[T]) -> Result<i8> {
    let (si, sj) = (score(u, i)?, score(u, j)?);
    Ok(pref_of_scores(si, sj) as i8)
}

/// Projected features of every user and item, with deterministic argmax
/// expert selection.
pub fn projected_features<T: Real>(
    banks: &ProjectorPair<T>,
    student: &Features<T>,
    teacher: &Features<T>,
) -> Result<Features<T>> {
    Ok(Features {
        user: banks.user.forward(&student.user, &teacher.user, &Selection::Eval)?.0,
        item: banks.item.forward(&student.item, &teacher.item, &Selection::Eval)?.0,
    })
}

fn check_pair<T: Real>(student: &Features<T>, projected: &Features<T>) -> Result<()> {
    if student.user.rows() != projected.user.rows() || student.item.rows() != projected.item.rows() {
        return Err(Error::config("student and projected tables cover different entities"));
    }
    Ok(())
}

fn disagrees<T: Real>(student: &Features<T>, projected: &Features<T>, u: usize, i: usize, j: usize) -> bool {
    let s = |f: &Features<T>, k: usize| dot(f.user.row(u), f.item.row(k));
    pref_of_scores(s(student, i), s(student, j)) != pref_of_scores(s(projected, i), s(projected, j))
}

/// Uniform ordered pair `i != j` from `0..n`.
fn uniform_pair(n: usize, rng: &mut RngStream) -> (usize, usize) {
    let i = rng.below(n);
    let mut j = rng.below(n - 1);
    if j >= i {
        j += 1;
    }
    (i, j)
}

/// Sampled `C_u` from `m` uniform ordered pairs per user, and their mean.
/// User `u` draws from the substream keyed by `(epoch, u)`.
pub fn estimate_inconsistency<T: Real>(
    student: &Features<T>,
    projected: &Features<T>,
    m: usize,
    seed: u64,
    epoch: usize,
) -> Result<InconsistencyReport> {
    check_pair(student, projected)?;
    let n = student.item.rows();
    if n < 2 {
        return Err(Error::domain("inconsistency needs at least two items"));
    }
    if m == 0 {
        return Err(Error::config("pairs per user must be at least 1"));
    }
    let per_user: Vec<f64> = (0..student.user.rows())
        .into_par_iter()
        .map(|u| {
            let mut rng = RngStream::keyed(seed, StreamTag::Diagnostics, &[epoch as u64, u as u64, 0]);
            let hits = (0..m)
                .filter(|_| {
                    let (i, j) = uniform_pair(n, &mut rng);
                    disagrees(student, projected, u, i, j)
                })
                .count();
            hits as f64 / m as f64
        })
        .collect();
    let c = if per_user.is_empty() {
        0.0
    } else {
        per_user.iter().sum::<f64>() / per_user.len() as f64
    };
    Ok(InconsistencyReport {
        epoch,
        c,
        per_user,
        pairs_per_user: m,
        groupwise: None,
    })
}

/// Sizes of the five contiguous rank groups; the first `n % 5` groups get
/// one extra item.
pub fn group_sizes(n_items: usize) -> [usize; GROUPS] {
    let (base, rem) = (n_items / GROUPS, n_items % GROUPS);
    std::array::from_fn(|g| base + usize::from(g < rem))
}

/// `C^{m,n}` averaged over users, estimated from `pairs_per_cell` ordered
/// pairs per user and cell, then symmetrized. A diagonal cell whose group
/// holds a single item has no pairs; such users are left out of that cell.
pub fn groupwise_inconsistency<T: Real>(
    student: &Features<T>,
    projected: &Features<T>,
    table: &RankTable,
    pairs_per_cell: usize,
    seed: u64,
    epoch: usize,
) -> Result<GroupMatrix> {
    check_pair(student, projected)?;
    let n = student.item.rows();
    if n < GROUPS {
        return Err(Error::domain(format!("group-wise inconsistency needs at least {GROUPS} items")));
    }
    if table.n_items() != n || table.n_users() != student.user.rows() {
        return Err(Error::config("rank table does not match the feature tables"));
    }
    if pairs_per_cell == 0 {
        return Err(Error::config("pairs per cell must be at least 1"));
    }
    let sizes = group_sizes(n);
    let starts: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, &s| {
            let start = *acc;
            *acc += s;
            Some(start)
        })
        .collect();

    let per_user: Vec<[[Option<f64>; GROUPS]; GROUPS]> = (0..student.user.rows())
        .into_par_iter()
        .map(|u| {
            let row = table.row(u as u32);
            let mut rng = RngStream::keyed(seed, StreamTag::Diagnostics, &[epoch as u64, u as u64, 1]);
            let mut cells = [[None; GROUPS]; GROUPS];
            for a in 0..GROUPS {
                for b in 0..GROUPS {
                    if a == b && sizes[a] < 2 {
                        continue;
                    }
                    let mut hits = 0usize;
                    for _ in 0..pairs_per_cell {
                        let (pi, pj) = if a == b {
                            let (x, y) = uniform_pair(sizes[a], &mut rng);
                            (starts[a] + x, starts[a] + y)
                        } else {
                            (starts[a] + rng.below(sizes[a]), starts[b] + rng.below(sizes[b]))
                        };
                        let (i, j) = (row[pi] as usize, row[pj] as usize);
                        hits += usize::from(disagrees(student, projected, u, i, j));
                    }
                    cells[a][b] = Some(hits as f64 / pairs_per_cell as f64);
                }
            }
            cells
        })
        .collect();

    let mut raw = [[0.0; GROUPS]; GROUPS];
    for a in 0..GROUPS {
        for b in 0..GROUPS {
            let vals: Vec<f64> = per_user.iter().filter_map(|c| c[a][b]).collect();
            if !vals.is_empty() {
                raw[a][b] = vals.iter().sum::<f64>() / vals.len() as f64;
            }
        }
    }
    Ok(std::array::from_fn(|a| std::array::from_fn(|b| 0.5 * (raw[a][b] + raw[b][a]))))
}

/// `epoch,C` series.
pub fn c_series_csv(points: &[(usize, f64)]) -> String {
    let mut out = String::from("epoch,C\n");
    for (e, c) in points {
        out.push_str(&format!("{e},{c}\n"));
    }
    out
}

/// 5×5 matrix with `g1..g5` row and column labels.
pub fn groupwise_csv(m: &GroupMatrix) -> String {
    let labels: Vec<String> = (1..=GROUPS).map(|g| format!("g{g}")).collect();
    let mut out = format!("group,{}\n", labels.join(","));
    for (a, row) in m.iter().enumerate() {
        let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!("{},{}\n", labels[a], vals.join(",")));
    }
    out
}
