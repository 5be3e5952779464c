use thiserror::Error;

/// Error type shared across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A codec's compress routine failed internally. Never silently mapped
    /// to raw storage; acceptance decisions are a separate concern.
    #[error("{codec} compression failed: {reason}")]
    Codec { codec: &'static str, reason: String },

    /// A payload did not decode back to its original bytes.
    #[error("{codec} payload integrity error: {reason}")]
    Integrity { codec: &'static str, reason: String },

    /// A structural parameter is out of range or inconsistent.
    #[error("invalid configuration ({field}): {reason}")]
    Config { field: &'static str, reason: String },

    /// An operation precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Calibration probes were not distinguishable.
    #[error("calibration failed: probe regions overlap (observed gap {observed_gap_ns} ns)")]
    Calibration { observed_gap_ns: i64 },

    /// Socket / IO failure talking to a target or serving one.
    #[error("transport error: {0}")]
    Transport(#[from] std::io::Error),

    /// A peer spoke the wire protocol incorrectly.
    #[error("protocol error: {0}")]
    Protocol(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Config {
            field,
            reason: reason.into(),
        }
    }

    /// Exit-status class used by the command line front end: transport
    /// failures are distinguishable from contract/config failures.
    pub fn is_transport(&self) -> bool {
        matches!(self, Error::Transport(_) | Error::Protocol(_))
    }
}
