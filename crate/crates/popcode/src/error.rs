//! Error types shared across the crate.
//!
//! Errors fall into two classes that the CLI maps onto distinct exit codes:
//! invalid inputs or parameters ([`Error::is_validation`], exit code 2) and
//! degenerate numerical situations that arise from legal inputs
//! (exit code 3).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Construction or configuration rejected an argument.
    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },

    /// Malformed input data (CSV/JSON), with position information when known.
    #[error("{path}:{line}: {why}")]
    Malformed {
        path: String,
        line: u64,
        why: String,
    },

    /// A population response carried no usable signal for the decoder.
    #[error("degenerate response: all spike counts are zero")]
    DegenerateResponse,

    /// Every candidate stimulus had zero likelihood/posterior mass.
    #[error("undecodable response: objective is -inf on the whole grid")]
    UndecodableResponse,

    /// Tail fit requested on samples that carry no spread.
    #[error("degenerate tail fit: {0}")]
    DegenerateFit(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn invalid(what: &'static str, why: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            why: why.into(),
        }
    }

    /// True for input/parameter problems, false for numerical degeneracies.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid { .. } | Error::Malformed { .. } | Error::Io { .. } | Error::Json { .. }
        )
    }

    /// Process exit code used by the CLI: 2 validation, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        if self.is_validation() {
            2
        } else {
            3
        }
    }
}
