use thiserror::Error;

/// Errors produced by cloud construction, parsing, extraction, and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid atom: {0}")]
    InvalidAtom(String),

    #[error("invalid cloud `{id}`: {msg}")]
    InvalidCloud { id: String, msg: String },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("ligand `{code}` not found; available het groups: {available}")]
    UnknownLigand { code: String, available: String },

    #[error("ligand `{code}` is ambiguous; candidates: {candidates} (qualify as CODE:CHAIN or CODE:CHAIN:SEQ)")]
    AmbiguousLigand { code: String, candidates: String },

    #[error("no atom within {radius} A of ligand `{code}`")]
    EmptyPocket { code: String, radius: f64 },

    #[error("no partial charge for: {pairs}")]
    UnresolvedCharges { pairs: String },

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("file format error in `{path}`: {msg}")]
    Format { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
