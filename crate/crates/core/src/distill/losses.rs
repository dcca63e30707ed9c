use crate::backbone::Features;
use crate::data::BprBatch;
use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix, Real};

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Sign of a score difference with `sign(0) = +1`.
pub fn pref_of_scores(si: f64, sj: f64) -> f64 {
    if si - sj >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Sorted distinct entity ids; row `k` of a gathered matrix belongs to `ids[k]`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Rows {
    ids: Vec<u32>,
}

impl Rows {
    pub fn new(mut ids: Vec<u32>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        Self { ids }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index(&self, id: u32) -> Result<usize> {
        self.ids
            .binary_search(&id)
            .map_err(|_| Error::domain(format!("entity {id} was not projected")))
    }

    pub fn as_usize(&self) -> Vec<usize> {
        self.ids.iter().map(|&i| i as usize).collect()
    }
}

/// Projected features for a subset of users and items.
#[derive(Clone, Debug, PartialEq)]
pub struct Projected<T> {
    pub users: Rows,
    pub items: Rows,
    pub user: Matrix<T>,
    pub item: Matrix<T>,
}

/// Gradients w.r.t. the rows of a [`Projected`].
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedGrads<T> {
    pub user: Matrix<T>,
    pub item: Matrix<T>,
}

impl<T: Real> Projected<T> {
    pub fn new(users: Rows, items: Rows, user: Matrix<T>, item: Matrix<T>) -> Result<Self> {
        if user.rows() != users.len() || item.rows() != items.len() || user.cols() != item.cols() {
            return Err(Error::config("projected rows do not match their id lists"));
        }
        Ok(Self {
            users,
            items,
            user,
            item,
        })
    }

    pub fn zero_grads(&self) -> ProjectedGrads<T> {
        ProjectedGrads {
            user: Matrix::zeros(self.user.rows(), self.user.cols()),
            item: Matrix::zeros(self.item.rows(), self.item.cols()),
        }
    }
}

impl<T: Real> ProjectedGrads<T> {
    pub fn axpy(&mut self, a: T, other: &Self) {
        self.user.axpy(a, &other.user);
        self.item.axpy(a, &other.item);
    }
}

fn add_scaled<T: Real>(dst: &mut [T], a: f64, src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += T::of(a * s.as_f64());
    }
}

fn student_score<T: Real>(student: &Features<T>, u: u32, i: u32) -> Result<f64> {
    let (nu, ni) = (student.user.rows(), student.item.rows());
    if u as usize >= nu || i as usize >= ni {
        return Err(Error::domain(format!("pair ({u}, {i}) outside {nu}x{ni}")));
    }
    Ok(dot(student.user.row(u as usize), student.item.row(i as usize)))
}

/// Mean over triples of `-log σ(s(u,i+) - s(u,i-))`, with gradients w.r.t.
/// the full student feature tables.
pub fn bpr_loss<T: Real>(student: &Features<T>, batch: &BprBatch) -> Result<(f64, Features<T>)> {
    if batch.is_empty() {
        return Err(Error::domain("empty BPR batch"));
    }
    let mut grad = Features {
        user: Matrix::zeros(student.user.rows(), student.user.cols()),
        item: Matrix::zeros(student.item.rows(), student.item.cols()),
    };
    let n = batch.len() as f64;
    let mut total = 0.0;
    for t in &batch.triples {
        let diff = student_score(student, t.user, t.pos)? - student_score(student, t.user, t.neg)?;
        total += softplus(-diff);
        // d/d diff of softplus(-diff) = -σ(-diff)
        let g = -sigmoid(-diff) / n;
        let (u, p, q) = (t.user as usize, t.pos as usize, t.neg as usize);
        let urow = student.user.row(u);
        add_scaled(grad.user.row_mut(u), g, student.item.row(p));
        add_scaled(grad.user.row_mut(u), -g, student.item.row(q));
        add_scaled(grad.item.row_mut(p), g, urow);
        add_scaled(grad.item.row_mut(q), -g, urow);
    }
    Ok((total / n, grad))
}

fn fd_side<T: Real>(proj: &Matrix<T>, teacher: &Matrix<T>, squared: bool) -> Result<(f64, Matrix<T>)> {
    proj.ensure_shape(teacher, "projected vs teacher features")?;
    let mut grad = Matrix::zeros(proj.rows(), proj.cols());
    let mut total = 0.0;
    for r in 0..proj.rows() {
        let res: Vec<f64> = proj
            .row(r)
            .iter()
            .zip(teacher.row(r))
            .map(|(&p, &t)| p.as_f64() - t.as_f64())
            .collect();
        let sq: f64 = res.iter().map(|x| x * x).sum();
        let g = grad.row_mut(r);
        if squared {
            total += sq;
            for (gk, rk) in g.iter_mut().zip(&res) {
                *gk = T::of(2.0 * rk);
            }
        } else {
            let norm = sq.sqrt();
            total += norm;
            if norm > 0.0 {
                for (gk, rk) in g.iter_mut().zip(&res) {
                    *gk = T::of(rk / norm);
                }
            }
        }
    }
    Ok((total, grad))
}

/// `Σ_u ‖ũ - u^t‖ + Σ_i ‖ĩ - i^t‖` over the given rows (squared norms when
/// `squared`). Returns gradients w.r.t. the projected rows; the norm's
/// gradient at a zero residual is taken as zero.
pub fn fd_loss<T: Real>(
    proj_user: &Matrix<T>,
    teacher_user: &Matrix<T>,
    proj_item: &Matrix<T>,
    teacher_item: &Matrix<T>,
    squared: bool,
) -> Result<(f64, Matrix<T>, Matrix<T>)> {
    let (lu, gu) = fd_side(proj_user, teacher_user, squared)?;
    let (li, gi) = fd_side(proj_item, teacher_item, squared)?;
    Ok((lu + li, gu, gi))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairSample {
    pub user: u32,
    pub i: u32,
    pub j: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ListSample {
    pub user: u32,
    pub items: Vec<u32>,
}

fn proj_score<T: Real>(proj: &Projected<T>, ur: usize, ir: usize) -> f64 {
    dot(proj.user.row(ur), proj.item.row(ir))
}

/// Adds `g * ∂ s̃(u,i)` into the projected-feature gradients.
fn push_score_grad<T: Real>(grads: &mut ProjectedGrads<T>, proj: &Projected<T>, ur: usize, ir: usize, g: f64) {
    add_scaled(grads.user.row_mut(ur), g, proj.item.row(ir));
    add_scaled(grads.item.row_mut(ir), g, proj.user.row(ur));
}

/// Number of distinct users among the samples, at least 1.
fn distinct_users(users: impl Iterator<Item = u32>) -> f64 {
    let mut v: Vec<u32> = users.collect();
    v.sort_unstable();
    v.dedup();
    v.len().max(1) as f64
}

/// Mean over users of `Σ_pairs -log σ(Pref_s(u,i,j) · (s̃(u,i) - s̃(u,j)))`.
/// `Pref_s` comes from the student's own features and is a constant;
/// gradients are w.r.t. the projected rows only.
pub fn pckd_p_loss<T: Real>(
    student: &Features<T>,
    proj: &Projected<T>,
    pairs: &[PairSample],
) -> Result<(f64, ProjectedGrads<T>)> {
    let mut grads = proj.zero_grads();
    let mut total = 0.0;
    let n = distinct_users(pairs.iter().map(|p| p.user));
    for p in pairs {
        if p.i == p.j {
            return Err(Error::domain(format!("pair for user {} repeats item {}", p.user, p.i)));
        }
        let pref = pref_of_scores(
            student_score(student, p.user, p.i)?,
            student_score(student, p.user, p.j)?,
        );
        let ur = proj.users.index(p.user)?;
        let (ir, jr) = (proj.items.index(p.i)?, proj.items.index(p.j)?);
        let x = pref * (proj_score(proj, ur, ir) - proj_score(proj, ur, jr));
        total += softplus(-x) / n;
        let dx = -sigmoid(-x) / n;
        push_score_grad(&mut grads, proj, ur, ir, pref * dx);
        push_score_grad(&mut grads, proj, ur, jr, -pref * dx);
    }
    Ok((total, grads))
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean over users of `-Σ_{i∈Q_u} P_s(i) log P̃(i)`: cross-entropy from the student's softmax
/// over `Q_u` (a constant target) to the projected softmax.
pub fn pckd_l_loss<T: Real>(
    student: &Features<T>,
    proj: &Projected<T>,
    lists: &[ListSample],
) -> Result<(f64, ProjectedGrads<T>)> {
    let mut grads = proj.zero_grads();
    let mut total = 0.0;
    let n = distinct_users(lists.iter().map(|l| l.user));
    for l in lists {
        if l.items.len() < 2 {
            return Err(Error::domain(format!("list for user {} has fewer than 2 items", l.user)));
        }
        let mut seen = l.items.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::domain(format!("list for user {} repeats an item", l.user)));
        }
        let target = softmax(
            &l.items
                .iter()
                .map(|&i| student_score(student, l.user, i))
                .collect::<Result<Vec<_>>>()?,
        );
        let ur = proj.users.index(l.user)?;
        let rows = l.items.iter().map(|&i| proj.items.index(i)).collect::<Result<Vec<_>>>()?;
        let logits: Vec<f64> = rows.iter().map(|&ir| proj_score(proj, ur, ir)).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        total += target.iter().zip(&logits).map(|(p, z)| -p * (z - lse)).sum::<f64>() / n;
        let q = softmax(&logits);
        for (k, &ir) in rows.iter().enumerate() {
            push_score_grad(&mut grads, proj, ur, ir, (q[k] - target[k]) / n);
        }
    }
    Ok((total, grads))
}

/// `(1 - α)·L_list + α·L_pair'` where the pairs were drawn with separate
/// temperatures for the first and second item.
pub fn pckd_h_loss<T: Real>(
    student: &Features<T>,
    proj: &Projected<T>,
    lists: &[ListSample],
    pairs: &[PairSample],
    alpha: f64,
) -> Result<(f64, ProjectedGrads<T>)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let (l, gl) = pckd_l_loss(student, proj, lists)?;
    let (p, gp) = pckd_p_loss(student, proj, pairs)?;
    let mut grads = proj.zero_grads();
    grads.axpy(T::of(1.0 - alpha), &gl);
    grads.axpy(T::of(alpha), &gp);
    Ok(((1.0 - alpha) * l + alpha * p, grads))
}

/// `L_base + λ_DE·L_DE + λ_PCKD·L_PCKD`.
pub fn total_loss(base: f64, de: f64, pckd: f64, lambda_de: f64, lambda_pckd: f64) -> f64 {
    base + lambda_de * de + lambda_pckd * pckd
}
