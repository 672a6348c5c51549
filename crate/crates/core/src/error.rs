use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: no records")]
    NoRecords { path: String },

    #[error("no users left after filtering (min_interactions = {min_interactions})")]
    AllUsersFiltered { min_interactions: usize },

    #[error("user {user} has {have} interactions, need at least {need} for the split")]
    TooFewInteractions { user: u32, have: usize, need: usize },

    #[error("user {user}: {available} candidate items available, {needed} needed")]
    InsufficientCandidates {
        user: u32,
        needed: usize,
        available: usize,
    },

    #[error("item {item} out of range (dataset has {n_items} items)")]
    ItemOutOfRange { item: usize, n_items: usize },

    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },

    #[error("predictions ({predictions}) and labels ({labels}) differ in length")]
    LengthMismatch { predictions: usize, labels: usize },

    #[error("client {client} uploaded a zero-norm embedding")]
    ZeroNormUpload { client: usize },

    #[error("client {client} uploaded a non-finite embedding (training diverged?)")]
    NonFiniteUpload { client: usize },

    #[error("node {node} has no neighbors; row-normalized aggregation is undefined")]
    IsolatedNode { node: usize },

    #[error("test item {item} not present in the scored list")]
    TestItemMissing { item: u32 },

    #[error("item {item} received a non-finite score")]
    NonFiniteScore { item: u32 },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("client {client} failed in round {round}: {source}")]
    ClientFailed {
        client: usize,
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
