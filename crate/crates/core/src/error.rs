use std::path::PathBuf;

use crate::agents::Agents;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("cannot pool an empty graph")]
    EmptyGraph,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("world with {types}^{properties} objects exceeds the enumeration limit")]
    WorldTooLarge { properties: usize, types: usize },

    #[error("infeasible world: {0}")]
    Infeasible(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Divergence {
        epoch: usize,
        last_good: Box<Agents>,
    },

    #[error("incompatible artifacts: {0}")]
    Incompatible(String),

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, detail: impl Into<String>) -> Self {
        Error::Parse {
            line,
            detail: detail.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Incompatible(_) | Error::Parse { .. } => 2,
            Error::Infeasible(_) | Error::WorldTooLarge { .. } => 3,
            Error::Divergence { .. } => 4,
            _ => 1,
        }
    }
}
