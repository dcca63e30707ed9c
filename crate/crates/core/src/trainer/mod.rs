//! Teacher pretraining and student distillation loops: batching, rank
//! refresh, loss assembly, Adam updates, early stopping on validation
//! NDCG@20, periodic inconsistency diagnostics, run logs and manifests.

mod config;
mod grid;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

pub use config::{hex, normalize_key, DistillMethod, RunConfig};
pub use grid::{grid_csv, run_experiment_grid, GridRow, GridSpec};

use crate::backbone::{save_checkpoint, Backbone, Checkpoint, Features};
use crate::data::{sample_bpr_batch, Dataset};
use crate::diagnostics::{c_series_csv, estimate_inconsistency, groupwise_csv, groupwise_inconsistency, projected_features, GroupMatrix};
use crate::distill::{draw_samples, objective, rebuild_rank_table, PckdMethod, PckdSamples, RankTable, StepInputs, StepSelection};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EarlyStopper, EvalResult, Split};
use crate::io::{write_atomic, write_dir_atomic};
use crate::numerics::{adam_step, AdamConfig, AdamState, Matrix, RngStream, StreamTag};
use crate::projector::{ExpertBank, ProjectorPair};

pub const RUNLOG_HEADER: &str = "epoch,loss_base,loss_de,loss_pckd,val_ndcg20,C,seconds";
pub const CODE_VERSION: &str = concat!("pckd ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_base: f64,
    pub loss_de: f64,
    pub loss_pckd: f64,
    pub val_ndcg20: f64,
    pub c: Option<f64>,
    pub seconds: Option<f64>,
}

/// Append-only per-epoch training record.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    records: Vec<EpochRecord>,
}

impl RunLog {
    pub fn push(&mut self, rec: EpochRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if rec.epoch <= last.epoch {
                return Err(Error::config(format!(
                    "run log epochs must increase ({} after {})",
                    rec.epoch, last.epoch
                )));
            }
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        let mut out = format!("{RUNLOG_HEADER}\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch,
                r.loss_base,
                r.loss_de,
                r.loss_pckd,
                r.val_ndcg20,
                opt(r.c),
                opt(r.seconds)
            );
        }
        out
    }

    /// `(epoch, C)` for every epoch where diagnostics ran.
    pub fn c_series(&self) -> Vec<(usize, f64)> {
        self.records.iter().filter_map(|r| r.c.map(|c| (r.epoch, c))).collect()
    }
}

/// Result of a teacher or student run; `checkpoint` holds the best
/// validation epoch's parameters.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub checkpoint: Checkpoint,
    pub log: RunLog,
    pub best_epoch: Option<usize>,
    pub best_val_ndcg20: Option<f64>,
    pub test: Option<EvalResult>,
    /// Inconsistency of the returned student (distillation runs only).
    pub final_c: Option<f64>,
    pub final_groupwise: Option<GroupMatrix>,
    /// Epochs at which the rank table was rebuilt.
    pub rank_rebuilds: Vec<usize>,
}

struct Params {
    model: Backbone<f32>,
    banks: Option<ProjectorPair<f32>>,
}

struct Optim {
    cfg: AdamConfig,
    user: AdamState<f32>,
    item: AdamState<f32>,
    banks: Vec<AdamState<f32>>,
}

impl Optim {
    fn new(run: &RunConfig, p: &mut Params) -> Self {
        let base = p.model.base();
        let banks = match &mut p.banks {
            Some(b) => bank_params(b).into_iter().map(|m| AdamState::for_params(m)).collect(),
            None => Vec::new(),
        };
        Self {
            cfg: AdamConfig::new(run.lr).with_weight_decay(run.weight_decay),
            user: AdamState::for_params(&base.user_emb),
            item: AdamState::for_params(&base.item_emb),
            banks,
        }
    }
}

fn bank_params(b: &mut ProjectorPair<f32>) -> Vec<&mut Matrix<f32>> {
    let mut v = b.user.params_mut();
    v.extend(b.item.params_mut());
    v
}

/// Shared epoch loop. `teacher` is `None` for base-loss-only training.
fn fit(
    run: &RunConfig,
    ds: &Dataset,
    dim: usize,
    role_key: u64,
    teacher: Option<&Features<f32>>,
) -> Result<RunOutcome> {
    run.validate()?;
    let seed = run.seed()?;
    let pcfg = if teacher.is_some() {
        run.pckd_config()
    } else {
        crate::distill::PckdConfig {
            method: PckdMethod::None,
            ..run.pckd.clone()
        }
    };
    let digest = run.digest();

    let mut init = RngStream::keyed(seed, StreamTag::Init, &[role_key]);
    let model = Backbone::<f32>::init(run.backbone, ds, dim, run.layers, &mut init)?;
    let banks = match teacher {
        Some(t) => {
            let k = if run.method == DistillMethod::Fitnet { 1 } else { run.experts };
            let dt = t.user.cols();
            let mut brng = RngStream::keyed(seed, StreamTag::Init, &[role_key, 1]);
            Some(ProjectorPair {
                user: ExpertBank::init(k, dim, dt, run.gumbel, &mut brng)?,
                item: ExpertBank::init(k, dim, dt, run.gumbel, &mut brng)?,
            })
        }
        None => None,
    };
    let mut p = Params { model, banks };
    let mut opt = Optim::new(run, &mut p);
    let mut batch_rng = RngStream::keyed(seed, StreamTag::Batching, &[role_key]);

    let snapshot = |p: &Params| {
        let c = Checkpoint::from_backbone(&p.model, seed, digest);
        match &p.banks {
            Some(b) => c.with_projectors(b),
            None => c,
        }
    };

    let mut log = RunLog::default();
    let mut stopper = EarlyStopper::new(run.patience);
    let mut best = snapshot(&p);
    let mut best_params: Option<(Backbone<f32>, Option<ProjectorPair<f32>>)> = None;
    let mut rank_rebuilds = Vec::new();
    let mut table: Option<RankTable> = None;
    let steps = ds.n_train().div_ceil(run.batch_size).max(1);
    let started = Instant::now();

    if run.max_epochs == 0 {
        log::warn!("max_epochs=0: returning the initial model untrained");
    }

    for epoch in 0..run.max_epochs {
        if pcfg.method != PckdMethod::None && epoch % pcfg.rank_refresh == 0 {
            table = Some(rebuild_rank_table(&p.model.all_features(), epoch));
            rank_rebuilds.push(epoch);
        }
        let (mut lb, mut lde, mut lp) = (0.0, 0.0, 0.0);
        for step in 0..steps {
            let batch = sample_bpr_batch(ds, run.batch_size, &mut batch_rng)?;
            let samples = match &table {
                Some(t) => draw_samples(&pcfg, t, &batch.users(), seed, epoch, step)?,
                None => PckdSamples::default(),
            };
            let feats = p.model.all_features();
            let out = objective(&StepInputs {
                student: &feats,
                targets: None,
                teacher,
                banks: p.banks.as_ref(),
                batch: &batch,
                samples: &samples,
                selection: StepSelection::Train {
                    temperature: run.gumbel.at(epoch),
                    seed,
                    epoch,
                    step,
                },
                cfg: &pcfg,
            })?;
            if !out.total.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {step}"
                )));
            }
            lb += out.loss_base;
            lde += out.loss_de;
            lp += out.loss_pckd;

            let g = p.model.backward_into_embeddings(&out.student_grad)?;
            let base = p.model.base_mut();
            adam_step(&mut base.user_emb, &g.user, &mut opt.user, &opt.cfg, "user embeddings")?;
            adam_step(&mut base.item_emb, &g.item, &mut opt.item, &opt.cfg, "item embeddings")?;
            if let (Some(b), Some(bg)) = (&mut p.banks, &out.bank_grads) {
                let grads: Vec<&Matrix<f32>> = bg.user.tensors().into_iter().chain(bg.item.tensors()).collect();
                for ((param, grad), st) in bank_params(b).into_iter().zip(grads).zip(&mut opt.banks) {
                    adam_step(param, grad, st, &opt.cfg, "projector")?;
                }
            }
        }

        let feats = p.model.all_features();
        let val = evaluate(&feats, ds, Split::Val, &[20])?.ndcg(20).unwrap_or(0.0);
        let c = match (&p.banks, teacher) {
            (Some(b), Some(t)) if run.diag_every > 0 && epoch % run.diag_every == 0 => {
                let proj = projected_features(b, &feats, t)?;
                Some(estimate_inconsistency(&feats, &proj, run.diag_pairs, seed, epoch)?.c)
            }
            _ => None,
        };
        let n = steps as f64;
        log.push(EpochRecord {
            epoch,
            loss_base: lb / n,
            loss_de: lde / n,
            loss_pckd: lp / n,
            val_ndcg20: val,
            c,
            seconds: run.wall_clock.then(|| started.elapsed().as_secs_f64()),
        })?;
        log::debug!("epoch {epoch}: base {:.5} val ndcg@20 {val:.5}", lb / n);

        let d = stopper.observe(val);
        if d.is_best {
            best = snapshot(&p);
            best_params = Some((p.model.clone(), p.banks.clone()));
        }
        if d.stop {
            log::info!("early stop at epoch {epoch}, best epoch {:?}", stopper.best_epoch());
            break;
        }
    }

    let (model, banks) = best_params.unwrap_or((p.model, p.banks));
    let feats = model.all_features();
    let test = if ds.test.iter().any(|t| !t.is_empty()) {
        Some(evaluate(&feats, ds, Split::Test, &[10, 20])?)
    } else {
        None
    };
    let (final_c, final_groupwise) = match (&banks, teacher) {
        (Some(b), Some(t)) => {
            let proj = projected_features(b, &feats, t)?;
            let c = estimate_inconsistency(&feats, &proj, run.diag_pairs, seed, usize::MAX)?.c;
            let g = if ds.n_items >= crate::diagnostics::GROUPS {
                let table = rebuild_rank_table(&feats, 0);
                Some(groupwise_inconsistency(&feats, &proj, &table, run.diag_cell_pairs, seed, usize::MAX)?)
            } else {
                None
            };
            (Some(c), g)
        }
        _ => (None, None),
    };

    Ok(RunOutcome {
        checkpoint: best,
        log,
        best_epoch: stopper.best_epoch(),
        best_val_ndcg20: stopper.best(),
        test,
        final_c,
        final_groupwise,
        rank_rebuilds,
    })
}

/// Trains the backbone at `d_teacher` on the base loss alone.
pub fn train_teacher(run: &RunConfig, ds: &Dataset) -> Result<RunOutcome> {
    fit(run, ds, run.d_teacher, 0, None)
}

/// Trains a `d_student` model against a frozen teacher with the configured
/// method. `method=none` ignores the teacher.
pub fn distill(run: &RunConfig, ds: &Dataset, teacher: Option<&Checkpoint>) -> Result<RunOutcome> {
    if !run.method.uses_teacher() {
        return fit(run, ds, run.d_student, 1, None);
    }
    let teacher = teacher.ok_or_else(|| Error::config(format!("method {} needs a teacher", run.method.name())))?;
    if teacher.kind != run.backbone {
        return Err(Error::config(format!(
            "teacher is a {} model but the run uses {}",
            teacher.kind.name(),
            run.backbone.name()
        )));
    }
    if teacher.dim() != run.d_teacher {
        return Err(Error::config(format!(
            "teacher dimension {} != d_teacher {}",
            teacher.dim(),
            run.d_teacher
        )));
    }
    let model = teacher
        .to_backbone(run.backbone, ds)
        .map_err(|e| Error::config(format!("incompatible teacher: {e}")))?;
    let feats = model.all_features();
    fit(run, ds, run.d_student, 1, Some(&feats))
}

pub fn manifest_text(run: &RunConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "config_digest={}", hex(&run.digest()));
    let _ = writeln!(out, "seed={}", run.seed.map_or_else(|| "unset".into(), |s| s.to_string()));
    let _ = writeln!(out, "code_version={CODE_VERSION}");
    for line in run.canonical().lines() {
        let _ = writeln!(out, "config.{line}");
    }
    out
}

/// Writes `model.ckpt`, `runlog.csv` and `manifest` into `dir`; the best
/// test metrics and final inconsistency go to `summary` when present.
pub fn save_run(dir: &Path, run: &RunConfig, outcome: &RunOutcome) -> Result<()> {
    let mut summary = String::new();
    if let Some(e) = outcome.best_epoch {
        let _ = writeln!(summary, "best_epoch={e}");
    }
    if let Some(v) = outcome.best_val_ndcg20 {
        let _ = writeln!(summary, "best_val_ndcg@20={v}");
    }
    if let Some(t) = &outcome.test {
        for line in t.to_key_values().lines() {
            let _ = writeln!(summary, "test_{line}");
        }
    }
    if let Some(c) = outcome.final_c {
        let _ = writeln!(summary, "final_C={c}");
    }
    write_dir_atomic(dir, |tmp| {
        save_checkpoint(&outcome.checkpoint, &tmp.join("model.ckpt"))?;
        write_atomic(&tmp.join("runlog.csv"), outcome.log.to_csv().as_bytes())?;
        write_atomic(&tmp.join("manifest"), manifest_text(run).as_bytes())?;
        write_atomic(&tmp.join("summary"), summary.as_bytes())?;
        if let Some(g) = &outcome.final_groupwise {
            write_atomic(&tmp.join("groupwise.csv"), groupwise_csv(g).as_bytes())?;
        }
        let series = outcome.log.c_series();
        if !series.is_empty() {
            write_atomic(&tmp.join("inconsistency.csv"), c_series_csv(&series).as_bytes())?;
        }
        Ok(())
    })
}
