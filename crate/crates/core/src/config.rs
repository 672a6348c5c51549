//! Experiment configuration: every protocol hyperparameter with its
//! documented default, plus validation of the invariants the simulator
//! relies on.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::GraphNormalization;

/// Server-side aggregation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Propagate uploads over the user-relation graph (user-specific r_i).
    GraphAgg,
    /// Indiscriminate uniform averaging; r_i = q_global for every client.
    FedAvg,
}

/// Client model backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    /// Per-client MLP score function over concatenated embeddings.
    Ncf,
    /// Dot-product scorer (matrix-factorization style), no score weights.
    Mf,
}

pub use crate::graph::GraphNormalization as Normalization;

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "graph_agg" => Ok(Aggregation::GraphAgg),
            "fed_avg" => Ok(Aggregation::FedAvg),
            other => Err(Error::InvalidConfig(format!(
                "unknown aggregation '{other}' (expected graph_agg or fed_avg)"
            ))),
        }
    }
}

impl std::str::FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ncf" => Ok(Backbone::Ncf),
            "mf" => Ok(Backbone::Mf),
            other => Err(Error::InvalidConfig(format!(
                "unknown backbone '{other}' (expected ncf or mf)"
            ))),
        }
    }
}

impl std::str::FromStr for GraphNormalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "row_normalized" => Ok(GraphNormalization::RowNormalized),
            "vanilla" => Ok(GraphNormalization::Vanilla),
            other => Err(Error::InvalidConfig(format!(
                "unknown normalization '{other}' (expected row_normalized or vanilla)"
            ))),
        }
    }
}

/// All protocol hyperparameters for one experiment.
///
/// `eta_grid` holds the learning-rate candidates searched on validation; a
/// single entry means no search.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    /// Regularization coefficient pulling q_i toward r_i.
    pub lambda: f64,
    /// Scaling factor on the mean similarity for the adjacency threshold.
    pub gamma: f64,
    /// Laplace noise scale applied to uploads (0 disables).
    pub delta: f64,
    /// Embedding dimension d.
    pub dim: usize,
    /// Local epochs per communication round (0 means upload without training).
    pub local_epochs: usize,
    /// Communication rounds T.
    pub rounds: usize,
    /// Graph convolution layers l.
    pub conv_layers: usize,
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    /// Sampled negatives per evaluation list (99 gives 100 candidates).
    pub eval_negatives: usize,
    pub aggregation: Aggregation,
    pub backbone: Backbone,
    pub normalization: Normalization,
    /// Rebuild the user graph every this many rounds (1 = every round; the
    /// light variant uses a larger cadence).
    pub graph_update_every: usize,
    pub seed: u64,
    /// Learning-rate candidates, selected by validation HR@10.
    pub eta_grid: Vec<f64>,
    /// MLP hidden widths for the ncf backbone.
    pub hidden_sizes: Vec<usize>,
    /// The user embedding trains at `eta * user_lr_scale`. It receives one
    /// averaged gradient per batch while the score weights accumulate every
    /// sample, so it needs a faster rate to keep pace.
    pub user_lr_scale: f64,
    /// Item-embedding rows train at `eta * item_lr_scale * n_items`. Each
    /// row is hit by at most a handful of samples per epoch, and the factor
    /// keeps per-row step sizes comparable as the catalog grows.
    pub item_lr_scale: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            lambda: 0.5,
            gamma: 0.5,
            delta: 0.0,
            dim: 32,
            local_epochs: 1,
            rounds: 100,
            conv_layers: 1,
            batch_size: 256,
            negatives_per_positive: 4,
            eval_negatives: 99,
            aggregation: Aggregation::GraphAgg,
            backbone: Backbone::Ncf,
            normalization: Normalization::RowNormalized,
            graph_update_every: 1,
            seed: 42,
            eta_grid: vec![0.0001, 0.001, 0.01, 0.1],
            hidden_sizes: vec![32, 16, 8],
            user_lr_scale: 80.0,
            item_lr_scale: 80.0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        fn bad(msg: impl Into<String>) -> Result<()> {
            Err(Error::InvalidConfig(msg.into()))
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.gamma < 0.0 || !self.gamma.is_finite() {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if self.delta < 0.0 || !self.delta.is_finite() {
            return bad(format!("delta must be >= 0, got {}", self.delta));
        }
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if self.rounds == 0 {
            return bad("rounds must be >= 1");
        }
        if self.conv_layers == 0 {
            return bad("conv_layers must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.graph_update_every == 0 {
            return bad("graph_update_every must be >= 1");
        }
        if self.eta_grid.is_empty() {
            return bad("eta_grid must not be empty");
        }
        if self.eta_grid.iter().any(|&e| e <= 0.0 || !e.is_finite()) {
            return bad("every eta must be > 0");
        }
        if self.user_lr_scale <= 0.0 || !self.user_lr_scale.is_finite() {
            return bad(format!(
                "user_lr_scale must be > 0, got {}",
                self.user_lr_scale
            ));
        }
        if self.item_lr_scale <= 0.0 || !self.item_lr_scale.is_finite() {
            return bad(format!(
                "item_lr_scale must be > 0, got {}",
                self.item_lr_scale
            ));
        }
        Ok(())
    }

    pub(crate) fn score_spec(&self) -> crate::model::ScoreFunctionSpec {
        match self.backbone {
            Backbone::Ncf => crate::model::ScoreFunctionSpec::mlp(self.hidden_sizes.clone()),
            Backbone::Mf => crate::model::ScoreFunctionSpec::dot_product(),
        }
    }
}
