//! Episode datasets and the occupancy tuples built from them.

pub mod dataset;
pub mod normalizer;
pub mod policy_embedding;
pub mod tuples;

pub use dataset::{Dataset, EpisodeRecord};
pub use normalizer::Normalizer;
pub use policy_embedding::{
    scalar_policy_embedding, EmbeddingMode, PolicyContext, DEFAULT_WINDOW_MAX, PolicyEmbedding, PolicyWindow, SequenceEncoder,
};
pub use tuples::{make_tuples, policy_context, sample_delta_t, OccupancyTuple, TupleSampler};
