//! Training losses: BPR, feature distillation (plain and expert-bank), and
//! the preference-consistency regularizers in pair-wise, list-wise and
//! hybrid form, together with the student rank table and the rank-aware
//! sampler they draw items from.

mod losses;
mod objective;
mod rank;

pub use losses::{
    bpr_loss, fd_loss, pckd_h_loss, pckd_l_loss, pckd_p_loss, pref_of_scores, sigmoid, softplus, total_loss,
    ListSample, PairSample, Projected, ProjectedGrads, Rows,
};
pub use objective::{de_loss, objective, DeOutput, StepInputs, StepOutput, StepSelection};
pub use rank::{draw_samples, rank_aware_sample, rebuild_rank_table, PckdSamples, RankSampler, RankTable};

use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PckdMethod {
    None,
    Pair,
    List,
    Hybrid,
}

impl PckdMethod {
    pub fn name(self) -> &'static str {
        match self {
            PckdMethod::None => "none",
            PckdMethod::Pair => "pckd_p",
            PckdMethod::List => "pckd_l",
            PckdMethod::Hybrid => "pckd_h",
        }
    }
}

impl FromStr for PckdMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PckdMethod::None),
            "pckd_p" => Ok(PckdMethod::Pair),
            "pckd_l" => Ok(PckdMethod::List),
            "pckd_h" => Ok(PckdMethod::Hybrid),
            other => Err(Error::config(format!(
                "unknown regularizer {other:?} (none|pckd_p|pckd_l|pckd_h)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingMode {
    RankAware,
    Random,
}

impl SamplingMode {
    pub fn name(self) -> &'static str {
        match self {
            SamplingMode::RankAware => "rank_aware",
            SamplingMode::Random => "random",
        }
    }
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rank_aware" => Ok(SamplingMode::RankAware),
            "random" => Ok(SamplingMode::Random),
            other => Err(Error::config(format!("unknown sampling mode {other:?} (rank_aware|random)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PckdConfig {
    pub method: PckdMethod,
    /// Temperature of the rank-aware distribution.
    pub t: f64,
    /// Hybrid: temperature for the first (top) item of a pair.
    pub t1: f64,
    /// Hybrid: temperature for the second item of a pair.
    pub t2: f64,
    /// List size `|Q_u|`.
    pub q: usize,
    pub alpha: f64,
    pub lambda_de: f64,
    pub lambda_pckd: f64,
    pub sampling: SamplingMode,
    /// Rank table refresh period in epochs.
    pub rank_refresh: usize,
    /// Squared residual norms in feature distillation instead of plain norms.
    pub fd_squared: bool,
}

impl Default for PckdConfig {
    fn default() -> Self {
        Self {
            method: PckdMethod::List,
            t: 10.0,
            t1: 1.0,
            t2: 100.0,
            q: 10,
            alpha: 0.5,
            lambda_de: 0.01,
            lambda_pckd: 5e-3,
            sampling: SamplingMode::RankAware,
            rank_refresh: 5,
            fd_squared: true,
        }
    }
}

impl PckdConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{what} must be positive and finite, got {v}")))
            }
        };
        pos(self.t, "T")?;
        if self.method == PckdMethod::Hybrid {
            pos(self.t1, "T1")?;
            pos(self.t2, "T2")?;
            if self.t1 >= self.t2 {
                return Err(Error::config(format!(
                    "hybrid sampling needs T1 < T2, got {} >= {}",
                    self.t1, self.t2
                )));
            }
        }
        if matches!(self.method, PckdMethod::List | PckdMethod::Hybrid) && self.q < 2 {
            return Err(Error::config(format!("Q must be at least 2, got {}", self.q)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        for (v, what) in [(self.lambda_de, "lambda_de"), (self.lambda_pckd, "lambda_pckd")] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{what} must be nonnegative, got {v}")));
            }
        }
        if self.rank_refresh == 0 {
            return Err(Error::config("rank refresh period K must be at least 1"));
        }
        Ok(())
    }
}
