use crate::backbone::{Features, Role};
use crate::data::BprBatch;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Real, RngStream, StreamTag};
use crate::projector::{BankCache, ExpertBank, ProjectorPair, ProjectorPairGrads, Selection};

use super::losses::{
    bpr_loss, fd_loss, pckd_h_loss, pckd_l_loss, pckd_p_loss, total_loss, Projected, ProjectedGrads, Rows,
};
use super::rank::PckdSamples;
use super::{PckdConfig, PckdMethod};

/// How expert weights are chosen for one optimization step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSelection {
    Eval,
    /// Gumbel-softmax; each entity's noise comes from a substream keyed by
    /// `(epoch, step, role, id)`, so it is fixed within a step.
    Train {
        temperature: f64,
        seed: u64,
        epoch: usize,
        step: usize,
    },
}

impl StepSelection {
    fn for_rows(&self, role: Role, ids: &[u32], k: usize) -> Selection {
        match *self {
            StepSelection::Eval => Selection::Eval,
            StepSelection::Train {
                temperature,
                seed,
                epoch,
                step,
            } => {
                let role_key = match role {
                    Role::User => 0,
                    Role::Item => 1,
                };
                let mut noise = Matrix::zeros(ids.len(), k);
                for (r, &id) in ids.iter().enumerate() {
                    let mut rng = RngStream::keyed(
                        seed,
                        StreamTag::Selection,
                        &[epoch as u64, step as u64, role_key, id as u64],
                    );
                    noise.row_mut(r).iter_mut().for_each(|v| *v = rng.gumbel());
                }
                Selection::Train { temperature, noise }
            }
        }
    }
}

struct SideForward<T> {
    rows: Vec<usize>,
    out: Matrix<T>,
    cache: BankCache<T>,
}

fn forward_side<T: Real>(
    bank: &ExpertBank<T>,
    student: &Matrix<T>,
    teacher: &Matrix<T>,
    role: Role,
    ids: &Rows,
    sel: &StepSelection,
) -> Result<SideForward<T>> {
    let rows = ids.as_usize();
    if let Some(&bad) = rows.iter().find(|&&r| r >= student.rows() || r >= teacher.rows()) {
        return Err(Error::domain(format!("{role:?} {bad} out of range")));
    }
    let x = student.gather_rows(&rows);
    let t = teacher.gather_rows(&rows);
    let selection = sel.for_rows(role, ids.ids(), bank.k());
    let (out, cache) = bank.forward(&x, &t, &selection)?;
    Ok(SideForward { rows, out, cache })
}

fn zero_features<T: Real>(like: &Features<T>) -> Features<T> {
    Features {
        user: Matrix::zeros(like.user.rows(), like.user.cols()),
        item: Matrix::zeros(like.item.rows(), like.item.cols()),
    }
}

#[derive(Clone, Debug)]
pub struct DeOutput<T> {
    pub value: f64,
    /// Gradient w.r.t. the full student feature tables.
    pub student_grad: Features<T>,
    pub bank_grads: ProjectorPairGrads<T>,
}

/// Feature distillation through the expert banks over the given users and
/// items: `fd_loss(de_project(student), teacher)`.
pub fn de_loss<T: Real>(
    student: &Features<T>,
    teacher: &Features<T>,
    banks: &ProjectorPair<T>,
    users: &Rows,
    items: &Rows,
    sel: &StepSelection,
    squared: bool,
) -> Result<DeOutput<T>> {
    let fu = forward_side(&banks.user, &student.user, &teacher.user, Role::User, users, sel)?;
    let fi = forward_side(&banks.item, &student.item, &teacher.item, Role::Item, items, sel)?;
    let (value, gu, gi) = fd_loss(
        &fu.out,
        &teacher.user.gather_rows(&fu.rows),
        &fi.out,
        &teacher.item.gather_rows(&fi.rows),
        squared,
    )?;
    let (xu, bu) = banks.user.backward(&fu.cache, &gu)?;
    let (xi, bi) = banks.item.backward(&fi.cache, &gi)?;
    let mut student_grad = zero_features(student);
    student_grad.user.scatter_add_rows(&fu.rows, &xu);
    student_grad.item.scatter_add_rows(&fi.rows, &xi);
    Ok(DeOutput {
        value,
        student_grad,
        bank_grads: ProjectorPairGrads { user: bu, item: bi },
    })
}

pub struct StepInputs<'a, T> {
    pub student: &'a Features<T>,
    /// Student features the regularizer's targets (pair signs, list
    /// softmax) are read from; defaults to `student`. Targets never carry
    /// gradient, so pinning them lets callers probe the objective as a
    /// function of the projection input alone.
    pub targets: Option<&'a Features<T>>,
    /// Required whenever `banks` is present.
    pub teacher: Option<&'a Features<T>>,
    /// `None` trains the student on the base loss alone.
    pub banks: Option<&'a ProjectorPair<T>>,
    pub batch: &'a BprBatch,
    pub samples: &'a PckdSamples,
    pub selection: StepSelection,
    pub cfg: &'a PckdConfig,
}

#[derive(Clone, Debug)]
pub struct StepOutput<T> {
    pub loss_base: f64,
    pub loss_de: f64,
    pub loss_pckd: f64,
    pub total: f64,
    pub student_grad: Features<T>,
    pub bank_grads: Option<ProjectorPairGrads<T>>,
}

/// Full per-step objective `L_base + λ_DE·L_DE + λ_PCKD·L_PCKD` and its
/// gradients. One projection pass serves both distillation terms: users
/// are the batch's users, items are the batch's items plus every sampled
/// item.
pub fn objective<T: Real>(inp: &StepInputs<'_, T>) -> Result<StepOutput<T>> {
    let cfg = inp.cfg;
    let (loss_base, mut student_grad) = bpr_loss(inp.student, inp.batch)?;
    let Some(banks) = inp.banks else {
        return Ok(StepOutput {
            loss_base,
            loss_de: 0.0,
            loss_pckd: 0.0,
            total: loss_base,
            student_grad,
            bank_grads: None,
        });
    };
    let teacher = inp
        .teacher
        .ok_or_else(|| Error::config("distillation step needs teacher features"))?;
    if teacher.user.cols() != banks.user.output_dim() || inp.student.user.cols() != banks.user.input_dim() {
        return Err(Error::config("projector dims do not match student/teacher features"));
    }

    let users = Rows::new(inp.batch.users());
    let batch_items = Rows::new(inp.batch.items());
    let mut all_items = batch_items.ids().to_vec();
    all_items.extend(inp.samples.items());
    let items = Rows::new(all_items);

    let fu = forward_side(&banks.user, &inp.student.user, &teacher.user, Role::User, &users, &inp.selection)?;
    let fi = forward_side(&banks.item, &inp.student.item, &teacher.item, Role::Item, &items, &inp.selection)?;
    let proj = Projected::new(users, items, fu.out, fi.out)?;
    let mut grads = proj.zero_grads();

    // Feature distillation over the batch's own users and items.
    let de_rows: Vec<usize> = batch_items
        .ids()
        .iter()
        .map(|&i| proj.items.index(i))
        .collect::<Result<_>>()?;
    let de_item_ids: Vec<usize> = batch_items.as_usize();
    let (loss_de, gu, gi) = fd_loss(
        &proj.user,
        &teacher.user.gather_rows(&fu.rows),
        &proj.item.gather_rows(&de_rows),
        &teacher.item.gather_rows(&de_item_ids),
        cfg.fd_squared,
    )?;
    let lde = T::of(cfg.lambda_de);
    grads.user.axpy(lde, &gu);
    let mut gi_full = Matrix::zeros(proj.item.rows(), proj.item.cols());
    gi_full.scatter_add_rows(&de_rows, &gi);
    grads.item.axpy(lde, &gi_full);

    let targets = inp.targets.unwrap_or(inp.student);
    let pckd = match cfg.method {
        PckdMethod::None => None,
        PckdMethod::Pair => Some(pckd_p_loss(targets, &proj, &inp.samples.pairs)?),
        PckdMethod::List => Some(pckd_l_loss(targets, &proj, &inp.samples.lists)?),
        PckdMethod::Hybrid => Some(pckd_h_loss(
            targets,
            &proj,
            &inp.samples.lists,
            &inp.samples.pairs,
            cfg.alpha,
        )?),
    };
    let loss_pckd = match pckd {
        Some((value, gp)) => {
            grads.axpy(T::of(cfg.lambda_pckd), &gp);
            value
        }
        None => 0.0,
    };

    let ProjectedGrads { user: gpu, item: gpi } = grads;
    let (xu, bu) = banks.user.backward(&fu.cache, &gpu)?;
    let (xi, bi) = banks.item.backward(&fi.cache, &gpi)?;
    student_grad.user.scatter_add_rows(&fu.rows, &xu);
    student_grad.item.scatter_add_rows(&fi.rows, &xi);

    Ok(StepOutput {
        loss_base,
        loss_de,
        loss_pckd,
        total: total_loss(loss_base, loss_de, loss_pckd, cfg.lambda_de, cfg.lambda_pckd),
        student_grad,
        bank_grads: Some(ProjectorPairGrads { user: bu, item: bi }),
    })
}
