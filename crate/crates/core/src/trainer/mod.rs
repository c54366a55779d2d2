//! Tuning for the dual-encoder towers and the search-query bandit.

mod bandit;
mod dual;
mod towers;

use thiserror::Error;

pub use bandit::{
    bandit_step, candidate_queries, hit_reward, query_features, BanditOutcome, BanditPolicy,
    FEATURE_DIM, MAX_CANDIDATES,
};
pub use dual::{
    dual_encoder_loss, mean_loss, recall_at_k, train_dual_encoder, EncodedExample, Gradients,
    TrainConfig, TrainReport,
};
pub use towers::{TowerParams, DEFAULT_TAU, TAU_RANGE};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("example shape does not match tower dimension {0}")]
    Shape(usize),
    #[error("non-finite loss ({loss})")]
    NonFinite { loss: f64 },
    #[error("no candidate queries")]
    NoCandidates,
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
