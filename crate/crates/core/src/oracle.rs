//! The answer oracle abstraction and the deterministic mock oracle.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{ExplainError, OracleError};
use crate::model::{
    AnswerRecord, ContextSequence, Perturbation, Query, RelevanceMethod, RelevanceVector,
    SourceDocument,
};
use crate::prompt::build_prompt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCapabilities {
    pub supports_attention: bool,
    pub max_context_chars: usize,
}

/// A raw answer and the number of remote requests spent producing it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub raw: String,
    pub calls: u64,
}

/// Anything that maps (question, ordered sources) to an answer string.
///
/// Implementations must be deterministic for a given input; the explainers
/// assume that re-asking the same question about the same context yields the
/// same answer.
pub trait Oracle {
    fn id(&self) -> &str;

    fn capabilities(&self) -> OracleCapabilities;

    fn answer(&self, query: &Query, selected: &[&SourceDocument]) -> Result<Answer, OracleError>;

    /// Raw per-source attention mass, one entry per selected source.
    fn salience(&self, _query: &Query, _selected: &[&SourceDocument]) -> Result<Vec<f64>, OracleError> {
        Err(OracleError::UnsupportedCapability)
    }
}

macro_rules! forward_oracle {
    ($($ptr:ty),*) => {$(
        impl<T: Oracle + ?Sized> Oracle for $ptr {
            fn id(&self) -> &str {
                (**self).id()
            }
            fn capabilities(&self) -> OracleCapabilities {
                (**self).capabilities()
            }
            fn answer(&self, query: &Query, selected: &[&SourceDocument]) -> Result<Answer, OracleError> {
                (**self).answer(query, selected)
            }
            fn salience(&self, query: &Query, selected: &[&SourceDocument]) -> Result<Vec<f64>, OracleError> {
                (**self).salience(query, selected)
            }
        }
    )*};
}

forward_oracle!(&T, Box<T>, Arc<T>);

/// Asks the oracle and wraps the result as an [`AnswerRecord`].
pub fn evaluate<O: Oracle + ?Sized>(
    oracle: &O,
    query: &Query,
    selected: &[&SourceDocument],
    perturbation: Perturbation,
) -> Result<AnswerRecord, OracleError> {
    let answer = oracle.answer(query, selected)?;
    Ok(AnswerRecord::new(answer.raw, perturbation, answer.calls))
}

/// Attention salience over the whole context, normalized to sum to one.
pub fn attention_salience<O: Oracle + ?Sized>(
    oracle: &O,
    ctx: &ContextSequence,
) -> Result<RelevanceVector, ExplainError> {
    if !oracle.capabilities().supports_attention {
        return Err(OracleError::UnsupportedCapability.into());
    }
    let selected: Vec<&SourceDocument> = ctx.sources().iter().collect();
    let raw = oracle.salience(ctx.query(), &selected)?;
    if raw.len() != ctx.k() {
        return Err(OracleError::MalformedResponse(alloc::format!(
            "expected {} salience values, got {}",
            ctx.k(),
            raw.len()
        ))
        .into());
    }
    RelevanceVector::normalized_from(RelevanceMethod::AttentionSalience, ctx, &raw)
}

/// One mock rule. All conditions must hold for the rule to fire.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default)]
    pub requires: Vec<String>,
    #[serde(default)]
    pub forbids: Vec<String>,
    /// Position (0-based, within the evaluated context) to required doc_id.
    #[serde(default, deserialize_with = "positions")]
    pub position_equals: BTreeMap<usize, String>,
    pub answer: String,
}

impl MockRule {
    pub fn matches(&self, ordered_ids: &[&str]) -> bool {
        self.requires.iter().all(|r| ordered_ids.contains(&r.as_str()))
            && !self.forbids.iter().any(|f| ordered_ids.contains(&f.as_str()))
            && self
                .position_equals
                .iter()
                .all(|(&pos, id)| ordered_ids.get(pos) == Some(&id.as_str()))
    }
}

/// Accepts integer or numeric-string keys; buffered formats (flattened or
/// tagged JSON) only hand over strings.
fn positions<'de, D: serde::Deserializer<'de>>(d: D) -> Result<BTreeMap<usize, String>, D::Error> {
    #[derive(PartialEq, Eq, PartialOrd, Ord)]
    struct Position(usize);

    impl<'de> Deserialize<'de> for Position {
        fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
            struct V;
            impl serde::de::Visitor<'_> for V {
                type Value = Position;

                fn expecting(&self, f: &mut core::fmt::Formatter) -> core::fmt::Result {
                    f.write_str("a position")
                }

                fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<Position, E> {
                    usize::try_from(v).map(Position).map_err(E::custom)
                }

                fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<Position, E> {
                    v.parse().map(Position).map_err(E::custom)
                }
            }
            d.deserialize_any(V)
        }
    }

    let raw = BTreeMap::<Position, String>::deserialize(d)?;
    Ok(raw.into_iter().map(|(k, v)| (k.0, v)).collect())
}

fn default_mock_id() -> String {
    String::from("mock")
}

fn default_max_chars() -> usize {
    1 << 20
}

/// Rule-driven oracle: rules are tried top-down and the first match wins.
///
/// Loaded from fixtures shaped like
/// `{"default_answer": .., "rules": [{"requires": [..], "forbids": [..],
/// "position_equals": {"0": "d1"}, "answer": ..}]}`. An optional `salience`
/// map (doc_id to weight) enables attention salience.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockOracle {
    #[serde(default = "default_mock_id")]
    pub id: String,
    pub default_answer: String,
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub salience: Option<BTreeMap<String, f64>>,
    #[serde(default = "default_max_chars")]
    pub max_context_chars: usize,
}

impl MockOracle {
    pub fn new(id: impl Into<String>, default_answer: impl Into<String>) -> Self {
        MockOracle {
            id: id.into(),
            default_answer: default_answer.into(),
            rules: Vec::new(),
            salience: None,
            max_context_chars: default_max_chars(),
        }
    }

    pub fn with_rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn with_salience(mut self, salience: BTreeMap<String, f64>) -> Self {
        self.salience = Some(salience);
        self
    }

    /// The answer for an ordered list of doc_ids.
    pub fn answer_for(&self, ordered_ids: &[&str]) -> &str {
        self.rules
            .iter()
            .find(|r| r.matches(ordered_ids))
            .map_or(self.default_answer.as_str(), |r| r.answer.as_str())
    }
}

impl Oracle for MockOracle {
    fn id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> OracleCapabilities {
        OracleCapabilities {
            supports_attention: self.salience.is_some(),
            max_context_chars: self.max_context_chars,
        }
    }

    fn answer(&self, query: &Query, selected: &[&SourceDocument]) -> Result<Answer, OracleError> {
        build_prompt(query, selected, self.max_context_chars)?;
        let ids: Vec<&str> = selected.iter().map(|s| s.doc_id.as_str()).collect();
        Ok(Answer {
            raw: self.answer_for(&ids).into(),
            calls: 1,
        })
    }

    fn salience(&self, _query: &Query, selected: &[&SourceDocument]) -> Result<Vec<f64>, OracleError> {
        let weights = self.salience.as_ref().ok_or(OracleError::UnsupportedCapability)?;
        Ok(selected
            .iter()
            .map(|s| weights.get(&s.doc_id).copied().unwrap_or(0.0))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ctx() -> ContextSequence {
        ContextSequence::new(
            Query::new("who?").unwrap(),
            vec![
                SourceDocument::new("a", "alpha", 1.0),
                SourceDocument::new("b", "beta", 1.0),
                SourceDocument::new("c", "gamma", 1.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn positions_survive_buffered_deserialization() {
        #[derive(Deserialize)]
        #[serde(tag = "kind")]
        enum Wrapped {
            Mock { rule: MockRule },
        }
        let Wrapped::Mock { rule } =
            serde_json::from_str(r#"{"kind": "Mock", "rule": {"position_equals": {"2": "c"}, "answer": "x"}}"#).unwrap();
        assert_eq!(rule.position_equals.get(&2).map(String::as_str), Some("c"));
        let back: MockRule = serde_json::from_str(&serde_json::to_string(&rule).unwrap()).unwrap();
        assert_eq!(back, rule);
    }

    #[test]
    fn first_matching_rule_wins() {
        let oracle: MockOracle = serde_json::from_str(
            r#"{"default_answer": "Nobody",
                "rules": [
                  {"position_equals": {"0": "a"}, "answer": "Alpha first"},
                  {"requires": ["b"], "forbids": ["c"], "answer": "Beta"},
                  {"requires": ["a"], "answer": "Alpha"}
                ]}"#,
        )
        .unwrap();
        assert_eq!(oracle.id, "mock");
        assert_eq!(oracle.answer_for(&["a", "b"]), "Alpha first");
        assert_eq!(oracle.answer_for(&["b", "a"]), "Beta");
        assert_eq!(oracle.answer_for(&["c", "b", "a"]), "Alpha");
        assert_eq!(oracle.answer_for(&[]), "Nobody");
    }

    #[test]
    fn salience_pass_through() {
        let ctx = ctx();
        let oracle = MockOracle::new("m", "x").with_salience(
            [("a".into(), 0.6), ("b".into(), 0.3), ("c".into(), 0.1)].into_iter().collect(),
        );
        let rv = attention_salience(&oracle, &ctx).unwrap();
        assert_eq!(rv.method, RelevanceMethod::AttentionSalience);
        let v = rv.in_context_order(&ctx).unwrap();
        for (got, want) in v.iter().zip([0.6, 0.3, 0.1]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn salience_single_source() {
        let one = ContextSequence::new(
            Query::new("q").unwrap(),
            vec![SourceDocument::new("a", "alpha", 1.0)],
        )
        .unwrap();
        let oracle = MockOracle::new("m", "x").with_salience([("a".into(), 7.0)].into_iter().collect());
        assert_eq!(attention_salience(&oracle, &one).unwrap().in_context_order(&one).unwrap(), [1.0]);
    }

    #[test]
    fn salience_requires_capability() {
        let oracle = MockOracle::new("m", "x");
        assert_eq!(
            attention_salience(&oracle, &ctx()),
            Err(ExplainError::Oracle(OracleError::UnsupportedCapability))
        );
    }

    #[test]
    fn evaluate_normalizes() {
        let ctx = ctx();
        let oracle = MockOracle::new("m", "  Roger Federer. ");
        let rec = evaluate(&oracle, ctx.query(), &[], Perturbation::Combination(Default::default()))
            .unwrap();
        assert_eq!(rec.raw, "  Roger Federer. ");
        assert_eq!(rec.normalized, "roger federer");
        assert_eq!(rec.oracle_calls_used, 1);
    }
}
