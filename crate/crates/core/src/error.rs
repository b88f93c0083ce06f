//! One error type for the whole engine. Variants carry enough context to name
//! the offending input (line number, timestamp, slot) without a backtrace.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("timestamp {ts} outside day boundaries [{lo}, {hi})")]
    TimestampOutOfRange { ts: i64, lo: i64, hi: i64 },

    #[error("config: {0}")]
    Config(String),

    #[error("non-finite gradient for slot {slot}")]
    NonFiniteGradient { slot: usize },

    #[error("labels are all {value}: entropy undefined")]
    DegenerateLabels { value: u8 },

    #[error("metric input: {0}")]
    MetricInput(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("cluster config infeasible: {0}")]
    InfeasibleClusterConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Exit-code convention: usage and config problems are 2, runtime failures 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::InfeasibleClusterConfig(_) => 2,
            Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 2,
            _ => 1,
        }
    }
}
