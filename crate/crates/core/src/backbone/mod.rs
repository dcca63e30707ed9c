//! Student/teacher recommenders: matrix factorization and LightGCN-style
//! propagation over the normalized user-item graph. Scores are inner
//! products of user and item features.

mod checkpoint;
mod graph;

use std::sync::Arc;

pub use checkpoint::{load_checkpoint, save_checkpoint, BlockTag, Checkpoint, ParamBlock};
pub use graph::NormalizedGraph;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix, Real, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Mf,
    Gcn,
}

impl ModelKind {
    pub fn tag(self) -> u8 {
        match self {
            ModelKind::Mf => 0,
            ModelKind::Gcn => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(ModelKind::Mf),
            1 => Ok(ModelKind::Gcn),
            t => Err(Error::format(format!("unknown model kind tag {t}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mf => "mf",
            ModelKind::Gcn => "gcn",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mf" | "bprmf" => Ok(ModelKind::Mf),
            "gcn" | "lightgcn" => Ok(ModelKind::Gcn),
            other => Err(Error::config(format!("unknown backbone {other:?} (mf|gcn)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    User,
    Item,
}

/// Full user and item feature tables.
#[derive(Clone, Debug, PartialEq)]
pub struct Features<T> {
    pub user: Matrix<T>,
    pub item: Matrix<T>,
}

impl<T: Real> Features<T> {
    pub fn get(&self, role: Role) -> &Matrix<T> {
        match role {
            Role::User => &self.user,
            Role::Item => &self.item,
        }
    }

    pub fn cast<U: Real>(&self) -> Features<U> {
        Features {
            user: self.user.cast(),
            item: self.item.cast(),
        }
    }
}

/// Embedding tables of a matrix-factorization model.
#[derive(Clone, Debug, PartialEq)]
pub struct MfModel<T> {
    pub user_emb: Matrix<T>,
    pub item_emb: Matrix<T>,
}

impl<T: Real> MfModel<T> {
    /// Uniform(-0.5/sqrt(d), 0.5/sqrt(d)) initialization.
    pub fn init(n_users: usize, n_items: usize, dim: usize, rng: &mut RngStream) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("embedding dimension must be at least 1"));
        }
        let bound = 0.5 / (dim as f64).sqrt();
        let mut table = |rows: usize| {
            Matrix::from_fn(rows, dim, |_, _| T::of((2.0 * rng.uniform() - 1.0) * bound))
        };
        let user_emb = table(n_users);
        let item_emb = table(n_items);
        Ok(Self { user_emb, item_emb })
    }

    pub fn new(user_emb: Matrix<T>, item_emb: Matrix<T>) -> Result<Self> {
        if user_emb.cols() != item_emb.cols() || user_emb.cols() == 0 {
            return Err(Error::config(format!(
                "user dim {} and item dim {} must be equal and positive",
                user_emb.cols(),
                item_emb.cols()
            )));
        }
        if !user_emb.is_finite() || !item_emb.is_finite() {
            return Err(Error::numeric("embedding tables contain non-finite values"));
        }
        Ok(Self { user_emb, item_emb })
    }
}

/// LightGCN: base embeddings averaged over `layers` rounds of symmetric
/// normalized propagation (layer 0 included).
#[derive(Clone, Debug, PartialEq)]
pub struct GcnModel<T> {
    pub base: MfModel<T>,
    pub layers: usize,
    pub graph: Arc<NormalizedGraph>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Backbone<T> {
    Mf(MfModel<T>),
    Gcn(GcnModel<T>),
}

impl<T: Real> Backbone<T> {
    pub fn mf(base: MfModel<T>) -> Self {
        Backbone::Mf(base)
    }

    pub fn gcn(base: MfModel<T>, layers: usize, graph: Arc<NormalizedGraph>) -> Result<Self> {
        if graph.n_users() != base.user_emb.rows() || graph.n_items() != base.item_emb.rows() {
            return Err(Error::config("graph size does not match embedding tables"));
        }
        Ok(Backbone::Gcn(GcnModel { base, layers, graph }))
    }

    /// Fresh model of `kind` sized to `dataset`.
    pub fn init(
        kind: ModelKind,
        dataset: &Dataset,
        dim: usize,
        layers: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let base = MfModel::init(dataset.n_users, dataset.n_items, dim, rng)?;
        match kind {
            ModelKind::Mf => Ok(Self::mf(base)),
            ModelKind::Gcn => Self::gcn(base, layers, Arc::new(NormalizedGraph::from_dataset(dataset))),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Backbone::Mf(_) => ModelKind::Mf,
            Backbone::Gcn(_) => ModelKind::Gcn,
        }
    }

    pub fn base(&self) -> &MfModel<T> {
        match self {
            Backbone::Mf(m) => m,
            Backbone::Gcn(g) => &g.base,
        }
    }

    pub fn base_mut(&mut self) -> &mut MfModel<T> {
        match self {
            Backbone::Mf(m) => m,
            Backbone::Gcn(g) => &mut g.base,
        }
    }

    pub fn layers(&self) -> usize {
        match self {
            Backbone::Mf(_) => 0,
            Backbone::Gcn(g) => g.layers,
        }
    }

    pub fn dim(&self) -> usize {
        self.base().user_emb.cols()
    }

    pub fn n_users(&self) -> usize {
        self.base().user_emb.rows()
    }

    pub fn n_items(&self) -> usize {
        self.base().item_emb.rows()
    }

    /// Features of every user and item.
    pub fn all_features(&self) -> Features<T> {
        match self {
            Backbone::Mf(m) => Features {
                user: m.user_emb.clone(),
                item: m.item_emb.clone(),
            },
            Backbone::Gcn(g) => g.graph.layer_mean(&g.base.user_emb, &g.base.item_emb, g.layers),
        }
    }

    /// Feature rows for the requested ids.
    pub fn features(&self, role: Role, ids: &[u32]) -> Result<Matrix<T>> {
        let n = match role {
            Role::User => self.n_users(),
            Role::Item => self.n_items(),
        };
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= n) {
            return Err(Error::domain(format!("{role:?} id {bad} out of range (< {n})")));
        }
        let rows: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        Ok(match self {
            Backbone::Mf(m) => match role {
                Role::User => m.user_emb.gather_rows(&rows),
                Role::Item => m.item_emb.gather_rows(&rows),
            },
            Backbone::Gcn(_) => self.all_features().get(role).gather_rows(&rows),
        })
    }

    /// Maps full feature-table gradients to base-embedding gradients. For
    /// the graph model this is the adjoint of the (symmetric) layer-mean
    /// propagation.
    pub fn backward_into_embeddings(&self, grad: &Features<T>) -> Result<Features<T>> {
        let base = self.base();
        base.user_emb.ensure_shape(&grad.user, "user feature gradient")?;
        base.item_emb.ensure_shape(&grad.item, "item feature gradient")?;
        Ok(match self {
            Backbone::Mf(_) => grad.clone(),
            Backbone::Gcn(g) => g.graph.layer_mean(&grad.user, &grad.item, g.layers),
        })
    }
}

/// Inner-product matching function.
pub fn score<T: Real>(u: &[T], i: &[T]) -> Result<f64> {
    if u.len() != i.len() {
        return Err(Error::config(format!(
            "score: user dim {} != item dim {}",
            u.len(),
            i.len()
        )));
    }
    Ok(dot(u, i))
}

/// Scores of user `u` against every item row, unmasked.
pub fn score_all_items<T: Real>(features: &Features<T>, u: usize) -> Vec<f64> {
    let uv = features.user.row(u);
    (0..features.item.rows())
        .map(|i| dot(uv, features.item.row(i)))
        .collect()
}
