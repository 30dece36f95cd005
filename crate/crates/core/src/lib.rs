//! Counterfactual explanations for retrieval-augmented answers.
//!
//! Given a question and the ordered list of sources retrieved for it, this
//! crate searches perturbations of that context (which sources are present,
//! and in what order) for the smallest change that flips the answer returned
//! by an answer oracle. It also summarizes answers over whole families of
//! perturbations and ranks source orderings that put relevant sources where
//! the oracle is expected to pay the most attention.
//!
//! The crate is `no_std` and only needs `alloc`. Transport, persistence and
//! the command line live in the `ctxplain` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod answer;
pub mod assignment;
pub mod combination;
pub mod error;
pub mod model;
pub mod oracle;
pub mod permutation;
pub mod prompt;
pub mod retrieval;

pub use answer::{answers_equal, normalize_answer};
pub use error::{ExplainError, ModelError, OracleError, RetrievalError};
pub use model::{
    AnswerRecord, AnswerRule, Combination, ContextSequence, Counterfactual, CounterfactualKind,
    EvaluationKey, Perturbation, PerturbationInsight, Permutation, Query, RelevanceMethod,
    RelevanceVector, RuleKind, SearchOutcome, SourceDocument,
};
pub use oracle::{Answer, MockOracle, MockRule, Oracle, OracleCapabilities};
