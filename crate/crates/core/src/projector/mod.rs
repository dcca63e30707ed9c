//! Projectors that lift student features (d^s) into the teacher space (d^t):
//! a plain MLP, and an expert bank whose per-entity mixture weights come from
//! a selection network over the teacher's feature.

mod experts;
mod mlp;

pub use experts::{
    de_project, de_select, BankCache, BankGrads, ExpertBank, SelectMode, Selection,
    TemperatureSchedule,
};
pub use mlp::{project, Activation, Dense, Mlp, MlpCache, MlpGrads};

use crate::numerics::Real;

/// User-side and item-side banks.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectorPair<T> {
    pub user: ExpertBank<T>,
    pub item: ExpertBank<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectorPairGrads<T> {
    pub user: BankGrads<T>,
    pub item: BankGrads<T>,
}

impl<T: Real> ProjectorPair<T> {
    pub fn zero_grads(&self) -> ProjectorPairGrads<T> {
        ProjectorPairGrads {
            user: self.user.zero_grads(),
            item: self.item.zero_grads(),
        }
    }

    pub fn cast<U: Real>(&self) -> ProjectorPair<U> {
        ProjectorPair {
            user: self.user.cast(),
            item: self.item.cast(),
        }
    }
}
