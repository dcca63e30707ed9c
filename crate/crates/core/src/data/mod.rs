//! Interaction ingest, k-core filtering, chronological splitting and
//! BPR triple sampling.

mod dataset;
mod interactions;
mod preprocess;
mod sampler;
mod snapshot;
mod split;
mod synth;

pub use dataset::{Dataset, IdMaps, Record};
pub use interactions::{load_interactions, parse_interactions, Interaction, InteractionLog};
pub use preprocess::preprocess;
pub use sampler::{sample_bpr_batch, BprBatch, Triple};
pub use snapshot::{load_snapshot, save_snapshot};
pub use split::{chrono_split, SplitRatios};
pub use synth::{generate_synthetic, write_interactions};
