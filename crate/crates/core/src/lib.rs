//! Simulation engine for graph-guided personalized federated recommendation.
//!
//! Every user is a client that trains a local neural recommender on its own
//! implicit-feedback data. A server collects the locally updated item
//! embeddings, builds a user-relation graph from their pairwise cosine
//! similarity, and propagates the embeddings over that graph to produce a
//! user-specific regularization target for each client plus a globally
//! shared item embedding. The crate covers the whole loop: dataset
//! ingestion and leave-one-out splitting, the client model with hand-derived
//! gradients, the server-side graph math, the federated round orchestration,
//! and the HR@K / NDCG@K ranking evaluation.

pub mod config;
pub mod dataset;
pub mod error;
pub mod fedsim;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod rng;

pub use config::{Aggregation, Backbone, ExperimentConfig, Normalization};
pub use error::{Error, Result};

/// Dense real matrix of shape (items, dimension); the only parameter kind
/// a client ever shares with the server.
pub type Embedding = ndarray::Array2<f64>;
