//! Shared domain vocabulary: queries, sources, contexts, perturbations and
//! the records produced by evaluating them.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::answer::normalize_answer;
use crate::error::{ExplainError, ModelError, RetrievalError};

fn hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// A natural-language question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawQuery")]
pub struct Query {
    pub id: String,
    pub text: String,
}

#[derive(Deserialize)]
struct RawQuery {
    id: String,
    text: String,
}

impl TryFrom<RawQuery> for Query {
    type Error = ModelError;

    fn try_from(raw: RawQuery) -> Result<Self, Self::Error> {
        Query::with_id(raw.id, raw.text)
    }
}

impl Query {
    /// Builds a query whose id is derived from the trimmed text, so the same
    /// question maps to the same cache entries across runs.
    pub fn new(text: impl Into<String>) -> Result<Self, ModelError> {
        let text = text.into();
        let digest = Sha256::digest(text.trim().as_bytes());
        let id = alloc::format!("q-{}", hex(&digest[..8]));
        Query::with_id(id, text)
    }

    pub fn with_id(id: impl Into<String>, text: impl Into<String>) -> Result<Self, ModelError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ModelError::EmptyQuery);
        }
        Ok(Query { id: id.into(), text })
    }
}

/// One retrievable knowledge source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub doc_id: String,
    pub text: String,
    /// Raw BM25 score assigned at retrieval time.
    pub retrieval_score: f64,
}

impl SourceDocument {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>, retrieval_score: f64) -> Self {
        SourceDocument {
            doc_id: doc_id.into(),
            text: text.into(),
            retrieval_score,
        }
    }
}

/// The ordered sources fed to the oracle for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawContext")]
pub struct ContextSequence {
    query: Query,
    sources: Vec<SourceDocument>,
    k: usize,
}

#[derive(Deserialize)]
struct RawContext {
    query: Query,
    sources: Vec<SourceDocument>,
    k: usize,
}

impl TryFrom<RawContext> for ContextSequence {
    type Error = ModelError;

    fn try_from(raw: RawContext) -> Result<Self, Self::Error> {
        if raw.k != raw.sources.len() {
            return Err(ModelError::LengthMismatch {
                declared: raw.k,
                actual: raw.sources.len(),
            });
        }
        ContextSequence::new(raw.query, raw.sources)
    }
}

impl ContextSequence {
    pub fn new(query: Query, sources: Vec<SourceDocument>) -> Result<Self, ModelError> {
        if sources.is_empty() {
            return Err(ModelError::EmptyContext);
        }
        let mut seen = BTreeSet::new();
        for source in &sources {
            if source.text.is_empty() {
                return Err(ModelError::EmptySource(source.doc_id.clone()));
            }
            if !seen.insert(source.doc_id.as_str()) {
                return Err(ModelError::DuplicateDocId(source.doc_id.clone()));
            }
        }
        let k = sources.len();
        Ok(ContextSequence { query, sources, k })
    }

    pub fn query(&self) -> &Query {
        &self.query
    }

    pub fn sources(&self) -> &[SourceDocument] {
        &self.sources
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.sources.iter().map(|s| s.doc_id.as_str())
    }

    pub fn index_of(&self, doc_id: &str) -> Option<usize> {
        self.sources.iter().position(|s| s.doc_id == doc_id)
    }

    /// Sources at the given original indices, in the order given.
    pub fn select(&self, indices: &[usize]) -> Vec<&SourceDocument> {
        indices.iter().map(|&i| &self.sources[i]).collect()
    }

    /// Sources of a combination, in their original relative order.
    pub fn retained(&self, combination: &Combination) -> Result<Vec<&SourceDocument>, ModelError> {
        let indices = combination.indices(self)?;
        Ok(self.select(&indices))
    }

    /// Sources arranged by a permutation (position i holds `order[i]`).
    pub fn arranged(&self, permutation: &Permutation) -> Result<Vec<&SourceDocument>, ModelError> {
        if permutation.len() != self.k {
            return Err(ModelError::InvalidPermutation(self.k));
        }
        Ok(self.select(permutation.order()))
    }

    /// Combination holding the sources whose bit is set in `mask`.
    pub(crate) fn combination_from_mask(&self, mask: u64) -> Combination {
        Combination {
            member_ids: self
                .sources
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, s)| s.doc_id.clone())
                .collect(),
        }
    }

    pub fn full_combination(&self) -> Combination {
        Combination {
            member_ids: self.doc_ids().map(String::from).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelevanceMethod {
    RetrievalScore,
    AttentionSalience,
}

/// Per-source relative relevance `S(q, d, D_q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceVector {
    pub method: RelevanceMethod,
    pub scores: BTreeMap<String, f64>,
    pub normalized: bool,
}

impl RelevanceVector {
    /// Scales `raw` (one entry per source, in context order) to sum to one.
    pub fn normalized_from(
        method: RelevanceMethod,
        ctx: &ContextSequence,
        raw: &[f64],
    ) -> Result<Self, ExplainError> {
        if raw.len() != ctx.k() {
            return Err(ModelError::RelevanceMismatch.into());
        }
        for (source, &value) in ctx.sources().iter().zip(raw) {
            if !value.is_finite() || value < 0.0 {
                return Err(ModelError::InvalidScore(source.doc_id.clone()).into());
            }
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(RetrievalError::AllZeroScores.into());
        }
        let scores = ctx
            .doc_ids()
            .zip(raw)
            .map(|(id, &value)| (id.to_string(), value / total))
            .collect();
        Ok(RelevanceVector {
            method,
            scores,
            normalized: true,
        })
    }

    /// Unnormalized vector, used when relevance is supplied verbatim.
    pub fn from_scores(
        method: RelevanceMethod,
        ctx: &ContextSequence,
        scores: BTreeMap<String, f64>,
    ) -> Result<Self, ModelError> {
        let rv = RelevanceVector {
            method,
            scores,
            normalized: false,
        };
        rv.in_context_order(ctx)?;
        Ok(rv)
    }

    /// Scores laid out in context order; fails unless the vector covers
    /// exactly the context's sources.
    pub fn in_context_order(&self, ctx: &ContextSequence) -> Result<Vec<f64>, ModelError> {
        if self.scores.len() != ctx.k() {
            return Err(ModelError::RelevanceMismatch);
        }
        ctx.doc_ids()
            .map(|id| match self.scores.get(id) {
                Some(v) if v.is_finite() && *v >= 0.0 => Ok(*v),
                Some(_) => Err(ModelError::InvalidScore(id.to_string())),
                None => Err(ModelError::RelevanceMismatch),
            })
            .collect()
    }
}

/// A subset of the context's sources. Members are kept in context order.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Combination {
    pub member_ids: Vec<String>,
}

impl Combination {
    pub fn empty() -> Self {
        Combination {
            member_ids: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.member_ids.iter().any(|m| m == doc_id)
    }

    /// Original context indices of the members, ascending.
    pub fn indices(&self, ctx: &ContextSequence) -> Result<Vec<usize>, ModelError> {
        let mut out = Vec::with_capacity(self.member_ids.len());
        for id in &self.member_ids {
            let idx = ctx
                .index_of(id)
                .ok_or_else(|| ModelError::UnknownDocId(id.clone()))?;
            out.push(idx);
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// Members of `ctx` that are not in this combination.
    pub fn complement(&self, ctx: &ContextSequence) -> Combination {
        Combination {
            member_ids: ctx
                .doc_ids()
                .filter(|id| !self.contains(id))
                .map(String::from)
                .collect(),
        }
    }
}

/// A reordering of the context: position `i` holds original index `order[i]`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation(Vec<usize>);

impl TryFrom<Vec<usize>> for Permutation {
    type Error = ModelError;

    fn try_from(order: Vec<usize>) -> Result<Self, Self::Error> {
        Permutation::new(order)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.0
    }
}

impl Permutation {
    pub fn new(order: Vec<usize>) -> Result<Self, ModelError> {
        let k = order.len();
        let mut seen = alloc::vec![false; k];
        for &i in &order {
            if i >= k || core::mem::replace(&mut seen[i], true) {
                return Err(ModelError::InvalidPermutation(k));
            }
        }
        Ok(Permutation(order))
    }

    pub(crate) fn from_vec_unchecked(order: Vec<usize>) -> Self {
        debug_assert!(Permutation::new(order.clone()).is_ok());
        Permutation(order)
    }

    pub fn identity(k: usize) -> Self {
        Permutation((0..k).collect())
    }

    pub fn order(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &v)| i == v)
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = alloc::vec![0; self.0.len()];
        for (pos, &item) in self.0.iter().enumerate() {
            inv[item] = pos;
        }
        Permutation(inv)
    }

    /// `self ∘ other`: position `i` holds `self[other[i]]`.
    pub fn compose(&self, other: &Permutation) -> Result<Permutation, ModelError> {
        if self.len() != other.len() {
            return Err(ModelError::InvalidPermutation(self.len()));
        }
        Ok(Permutation(other.0.iter().map(|&i| self.0[i]).collect()))
    }

    pub fn reversed(&self) -> Permutation {
        Permutation(self.0.iter().rev().copied().collect())
    }
}

/// Either kind of context perturbation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    Combination(Combination),
    Permutation(Permutation),
}

/// A normalized oracle answer together with the perturbation that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub raw: String,
    pub normalized: String,
    pub perturbation: Perturbation,
    pub oracle_calls_used: u64,
}

impl AnswerRecord {
    pub fn new(raw: impl Into<String>, perturbation: Perturbation, oracle_calls_used: u64) -> Self {
        let raw = raw.into();
        let normalized = normalize_answer(&raw);
        AnswerRecord {
            raw,
            normalized,
            perturbation,
            oracle_calls_used,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CounterfactualKind {
    TopDownRemoval,
    BottomUpRetention,
    Reordering,
}

/// A minimal perturbation that flips the answer.
///
/// For `TopDownRemoval` the perturbation is the removed set, for
/// `BottomUpRetention` the retained set, and for `Reordering` the new order.
/// `new_answer.perturbation` is always the context actually evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterfactual {
    pub kind: CounterfactualKind,
    pub perturbation: Perturbation,
    pub original_answer: AnswerRecord,
    pub new_answer: AnswerRecord,
    pub perturbations_tested: u64,
    pub similarity: Option<f64>,
}

/// Result of a counterfactual search.
///
/// `NotFound` means every candidate was evaluated without a flip;
/// `BudgetExhausted` means the search stopped at `max_perturbations`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome")]
pub enum SearchOutcome {
    Found { counterfactual: Counterfactual },
    NotFound { perturbations_tested: u64 },
    BudgetExhausted { perturbations_tested: u64 },
}

impl SearchOutcome {
    pub fn counterfactual(&self) -> Option<&Counterfactual> {
        match self {
            SearchOutcome::Found { counterfactual } => Some(counterfactual),
            _ => None,
        }
    }

    pub fn perturbations_tested(&self) -> u64 {
        match self {
            SearchOutcome::Found { counterfactual } => counterfactual.perturbations_tested,
            SearchOutcome::NotFound {
                perturbations_tested,
            }
            | SearchOutcome::BudgetExhausted {
                perturbations_tested,
            } => *perturbations_tested,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleKind {
    RequiredSources,
    FixedPositions,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRule {
    pub answer: String,
    pub kind: RuleKind,
    pub required_ids: Vec<String>,
    pub fixed_positions: BTreeMap<usize, String>,
}

impl AnswerRule {
    /// True when nothing is shared by every perturbation ("no rule found").
    pub fn is_empty(&self) -> bool {
        match self.kind {
            RuleKind::RequiredSources => self.required_ids.is_empty(),
            RuleKind::FixedPositions => self.fixed_positions.is_empty(),
        }
    }
}

/// Answers grouped over a set of evaluated perturbations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationInsight {
    pub groups: BTreeMap<String, Vec<Perturbation>>,
    pub proportions: BTreeMap<String, f64>,
    pub rules: Vec<AnswerRule>,
    pub total_evaluated: u64,
}

impl PerturbationInsight {
    pub(crate) fn from_groups(
        groups: BTreeMap<String, Vec<Perturbation>>,
        rules: Vec<AnswerRule>,
    ) -> Self {
        let total: usize = groups.values().map(Vec::len).sum();
        let proportions = groups
            .iter()
            .map(|(answer, members)| (answer.clone(), members.len() as f64 / total as f64))
            .collect();
        PerturbationInsight {
            groups,
            proportions,
            rules,
            total_evaluated: total as u64,
        }
    }

    pub fn rule_for(&self, answer: &str) -> Option<&AnswerRule> {
        self.rules.iter().find(|r| r.answer == answer)
    }
}

/// Cache identity of one oracle evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EvaluationKey {
    pub query_id: String,
    pub ordered_doc_ids: Vec<String>,
    pub oracle_id: String,
}

impl EvaluationKey {
    pub fn new(query: &Query, selected: &[&SourceDocument], oracle_id: &str) -> Self {
        EvaluationKey {
            query_id: query.id.clone(),
            ordered_doc_ids: selected.iter().map(|s| s.doc_id.clone()).collect(),
            oracle_id: oracle_id.to_string(),
        }
    }

    /// Hex SHA-256 over a length-prefixed encoding of the key.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        let mut field = |bytes: &[u8]| {
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(bytes);
        };
        field(self.oracle_id.as_bytes());
        field(self.query_id.as_bytes());
        field(&(self.ordered_doc_ids.len() as u64).to_le_bytes());
        for id in &self.ordered_doc_ids {
            field(id.as_bytes());
        }
        hex(&hasher.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ctx3() -> ContextSequence {
        ContextSequence::new(
            Query::new("who?").unwrap(),
            vec![
                SourceDocument::new("a", "alpha", 2.0),
                SourceDocument::new("b", "beta", 1.0),
                SourceDocument::new("c", "gamma", 1.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn query_rejects_blank_text() {
        assert_eq!(Query::new("  \t"), Err(ModelError::EmptyQuery));
        assert_eq!(Query::new("x").unwrap().id, Query::new(" x ").unwrap().id);
    }

    #[test]
    fn context_rejects_duplicates_and_empty() {
        let q = Query::new("q").unwrap();
        let dup = vec![SourceDocument::new("a", "t", 1.0), SourceDocument::new("a", "u", 1.0)];
        assert_eq!(
            ContextSequence::new(q.clone(), dup),
            Err(ModelError::DuplicateDocId("a".into()))
        );
        assert_eq!(ContextSequence::new(q, vec![]), Err(ModelError::EmptyContext));
    }

    #[test]
    fn context_json_checks_k() {
        let ctx = ctx3();
        let mut json: serde_json::Value = serde_json::to_value(&ctx).unwrap();
        assert_eq!(json["k"], 3);
        json["k"] = 2.into();
        assert!(serde_json::from_value::<ContextSequence>(json).is_err());
    }

    #[test]
    fn permutation_validates_and_serializes_as_array() {
        assert!(Permutation::new(vec![0, 0]).is_err());
        assert!(Permutation::new(vec![0, 2]).is_err());
        let p = Permutation::new(vec![2, 0, 1]).unwrap();
        assert_eq!(serde_json::to_string(&p).unwrap(), "[2,0,1]");
        assert!(serde_json::from_str::<Permutation>("[1,1]").is_err());
        assert!(p.compose(&p.inverse()).unwrap().is_identity());
    }

    #[test]
    fn full_combination_reconstructs_context() {
        let ctx = ctx3();
        let full = ctx.full_combination();
        let retained = ctx.retained(&full).unwrap();
        let ids: Vec<&str> = retained.iter().map(|s| s.doc_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(ctx.combination_from_mask(0b101).member_ids, ["a", "c"]);
        assert_eq!(full.complement(&ctx), Combination::empty());
    }

    #[test]
    fn relevance_normalization() {
        let ctx = ctx3();
        let rv = RelevanceVector::normalized_from(RelevanceMethod::RetrievalScore, &ctx, &[2.0, 1.0, 1.0])
            .unwrap();
        assert_eq!(rv.in_context_order(&ctx).unwrap(), [0.5, 0.25, 0.25]);
        assert_eq!(
            RelevanceVector::normalized_from(RelevanceMethod::RetrievalScore, &ctx, &[0.0; 3]),
            Err(ExplainError::Retrieval(RetrievalError::AllZeroScores))
        );
    }

    #[test]
    fn evaluation_key_distinguishes_order() {
        let ctx = ctx3();
        let q = ctx.query();
        let ab = EvaluationKey::new(q, &ctx.select(&[0, 1]), "m");
        let ba = EvaluationKey::new(q, &ctx.select(&[1, 0]), "m");
        assert_ne!(ab.digest(), ba.digest());
        assert_eq!(ab.digest(), EvaluationKey::new(q, &ctx.select(&[0, 1]), "m").digest());
        assert_eq!(ab.digest().len(), 64);
    }

    #[test]
    fn perturbation_json_shape() {
        let p = Perturbation::Permutation(Permutation::identity(2));
        assert_eq!(serde_json::to_string(&p).unwrap(), r#"{"permutation":[0,1]}"#);
        let c = Perturbation::Combination(Combination { member_ids: vec!["a".into()] });
        assert_eq!(serde_json::to_string(&c).unwrap(), r#"{"combination":{"member_ids":["a"]}}"#);
    }
}
