use thiserror::Error;

/// Why the aggregator refused an update envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    /// Sender was not invited to the round.
    Unexpected,
    /// Sender already delivered an update; the first one wins.
    Duplicate,
    /// Envelope failed authentication or used an unknown format.
    Undecryptable,
    /// Plaintext did not decode to a weight vector of the planned shape.
    Malformed,
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Rejection::Unexpected => "sender not expected in round",
            Rejection::Duplicate => "duplicate update from sender",
            Rejection::Undecryptable => "envelope failed to open",
            Rejection::Malformed => "update is not a valid weight vector",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("integrity violation: {0}")]
    Integrity(String),

    #[error("already registered: {0}")]
    AlreadyRegistered(String),

    #[error("not authorized: {0}")]
    Authorization(String),

    #[error("permission denied: {0}")]
    Permission(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("low-order point: Diffie-Hellman output is all zero")]
    LowOrderPoint,

    #[error("decryption failed")]
    Decryption,

    #[error("format error: {0}")]
    Format(String),

    #[error("numeric divergence at epoch {epoch}: {detail}")]
    Numeric { epoch: usize, detail: String },

    #[error("update rejected: {0}")]
    Rejected(Rejection),

    #[error("no eligible workers for model {model_id}: {report}")]
    NoEligibleWorkers { model_id: u64, report: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
