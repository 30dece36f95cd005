use alloc::string::String;

use thiserror::Error;

/// Construction-time validation failures for the domain types.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("query text is empty")]
    EmptyQuery,
    #[error("source `{0}` has empty text")]
    EmptySource(String),
    #[error("context must contain at least one source")]
    EmptyContext,
    #[error("duplicate doc_id `{0}` in context")]
    DuplicateDocId(String),
    #[error("declared k = {declared} but context has {actual} sources")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("order is not a permutation of 0..{0}")]
    InvalidPermutation(usize),
    #[error("doc_id `{0}` is not part of the context")]
    UnknownDocId(String),
    #[error("relevance scores do not cover the context")]
    RelevanceMismatch,
    #[error("relevance score for `{0}` is negative or not finite")]
    InvalidScore(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RetrievalError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("document `{0}` has empty contents")]
    EmptyContents(String),
    #[error("query has no tokens")]
    EmptyQuery,
    #[error("retrieval returned no sources")]
    NoResults,
    #[error("all retrieval scores are zero")]
    AllZeroScores,
    #[error("invalid BM25 parameters: {0}")]
    InvalidParams(&'static str),
}

/// Failures reported by an answer oracle or the layers wrapping it.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("oracle unavailable: {0}")]
    Unavailable(String),
    #[error("malformed oracle response: {0}")]
    MalformedResponse(String),
    #[error("oracle does not support attention salience")]
    UnsupportedCapability,
    #[error("prompt of {len} chars exceeds the oracle limit of {max}")]
    ContextTooLarge { len: usize, max: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExplainError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("context of {k} sources exceeds the exhaustive limit of {limit}")]
    ContextTooLarge { k: usize, limit: usize },
    #[error("k = {k} exceeds the exhaustive permutation limit of {limit}")]
    KTooLarge { k: usize, limit: usize },
    #[error("Kendall's tau is undefined for fewer than two items")]
    Undefined,
    #[error("permutations have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cost matrix is not square")]
    NonSquareMatrix,
    #[error("cost matrix has a non-finite entry at ({0}, {1})")]
    NonFiniteEntry(usize, usize),
    #[error("attention profile has {got} weights but context has {expected} sources")]
    ProfileMismatch { expected: usize, got: usize },
}

impl ExplainError {
    /// Stable machine-readable code used in error payloads.
    pub fn code(&self) -> &'static str {
        match self {
            ExplainError::Oracle(OracleError::Unavailable(_)) => "OracleUnavailable",
            ExplainError::Oracle(OracleError::MalformedResponse(_)) => "OracleMalformedResponse",
            ExplainError::Oracle(OracleError::UnsupportedCapability) => "UnsupportedCapability",
            ExplainError::Oracle(OracleError::ContextTooLarge { .. }) => "ContextTooLarge",
            ExplainError::Retrieval(RetrievalError::EmptyQuery) => "EmptyQuery",
            ExplainError::Retrieval(RetrievalError::AllZeroScores) => "AllZeroScores",
            ExplainError::Retrieval(RetrievalError::NoResults) => "NoResults",
            ExplainError::Retrieval(RetrievalError::DuplicateId(_)) => "DuplicateId",
            ExplainError::Retrieval(RetrievalError::EmptyCorpus) => "EmptyCorpus",
            ExplainError::Retrieval(_) => "RetrievalError",
            ExplainError::Model(_) => "ValidationError",
            ExplainError::ContextTooLarge { .. } => "ContextTooLarge",
            ExplainError::KTooLarge { .. } => "KTooLarge",
            ExplainError::Undefined => "Undefined",
            ExplainError::LengthMismatch(..) => "LengthMismatch",
            ExplainError::InvalidConfig(_) => "InvalidConfig",
            ExplainError::NonSquareMatrix => "NonSquareMatrix",
            ExplainError::NonFiniteEntry(..) => "NonFiniteEntry",
            ExplainError::ProfileMismatch { .. } => "ProfileMismatch",
        }
    }
}
