//! BM25 inverted index over a small document corpus.
//!
//! Scoring follows the Robertson/Lucene formulation:
//!
//! ```text
//! idf(t)      = ln(1 + (N - df + 0.5) / (df + 0.5))
//! score(d, q) = Σ_{t ∈ q} idf(t) · tf·(k1 + 1) / (tf + k1·(1 - b + b·|d| / avgdl))
//! ```
//!
//! Each distinct query term contributes once. Tokens are maximal runs of
//! Unicode alphanumeric characters, lowercased; there is no stemming and no
//! stopword list.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{ExplainError, RetrievalError};
use crate::model::{ContextSequence, Query, RelevanceMethod, RelevanceVector, SourceDocument};

/// One line of a corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub contents: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    pub top_k: usize,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params {
            k1: 0.9,
            b: 0.4,
            top_k: 10,
        }
    }
}

impl Bm25Params {
    pub fn with_top_k(top_k: usize) -> Self {
        Bm25Params {
            top_k,
            ..Bm25Params::default()
        }
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(self.k1.is_finite() && self.k1 > 0.0) {
            return Err(RetrievalError::InvalidParams("k1 must be positive"));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(RetrievalError::InvalidParams("b must lie in [0, 1]"));
        }
        if self.top_k == 0 {
            return Err(RetrievalError::InvalidParams("top_k must be positive"));
        }
        Ok(())
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.chars().flat_map(char::to_lowercase).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexedDoc {
    id: String,
    contents: String,
    len: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Posting {
    doc: u32,
    tf: u32,
}

/// Immutable BM25 index. Build once with [`build_index`], then query freely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Index {
    docs: Vec<IndexedDoc>,
    postings: BTreeMap<String, Vec<Posting>>,
    avg_doc_len: f64,
}

pub fn build_index<I>(corpus: I) -> Result<Index, RetrievalError>
where
    I: IntoIterator<Item = CorpusRecord>,
{
    let mut docs = Vec::new();
    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    let mut ids = BTreeSet::new();
    let mut total_len = 0u64;

    for record in corpus {
        if !ids.insert(record.id.clone()) {
            return Err(RetrievalError::DuplicateId(record.id));
        }
        if record.contents.trim().is_empty() {
            return Err(RetrievalError::EmptyContents(record.id));
        }
        let doc = docs.len() as u32;
        let tokens = tokenize(&record.contents);
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for token in &tokens {
            *tf.entry(token.clone()).or_default() += 1;
        }
        for (term, tf) in tf {
            postings.entry(term).or_default().push(Posting { doc, tf });
        }
        total_len += tokens.len() as u64;
        docs.push(IndexedDoc {
            id: record.id,
            contents: record.contents,
            len: tokens.len() as u32,
        });
    }

    if docs.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    let avg_doc_len = total_len as f64 / docs.len() as f64;
    Ok(Index {
        docs,
        postings,
        avg_doc_len,
    })
}

impl Index {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_len(&self, doc_id: &str) -> Option<u32> {
        self.docs.iter().find(|d| d.id == doc_id).map(|d| d.len)
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.docs.len() as f64;
        let df = df as f64;
        libm::log(1.0 + (n - df + 0.5) / (df + 0.5))
    }

    fn query_terms(text: &str) -> Result<BTreeSet<String>, RetrievalError> {
        let terms: BTreeSet<String> = tokenize(text).into_iter().collect();
        if terms.is_empty() {
            return Err(RetrievalError::EmptyQuery);
        }
        Ok(terms)
    }

    fn scores(&self, terms: &BTreeSet<String>, params: &Bm25Params) -> Vec<f64> {
        let mut scores = alloc::vec![0.0; self.docs.len()];
        for term in terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(list.len());
            for posting in list {
                let len = self.docs[posting.doc as usize].len as f64;
                let tf = posting.tf as f64;
                let norm = params.k1 * (1.0 - params.b + params.b * len / self.avg_doc_len);
                scores[posting.doc as usize] += idf * tf * (params.k1 + 1.0) / (tf + norm);
            }
        }
        scores
    }

    /// BM25 score of a single indexed document.
    pub fn score_document(
        &self,
        doc_id: &str,
        query_text: &str,
        params: &Bm25Params,
    ) -> Result<Option<f64>, RetrievalError> {
        let terms = Index::query_terms(query_text)?;
        let scores = self.scores(&terms, params);
        Ok(self
            .docs
            .iter()
            .position(|d| d.id == doc_id)
            .map(|i| scores[i]))
    }
}

/// Up to `top_k` documents with positive score, by descending score and then
/// ascending id.
pub fn retrieve(
    index: &Index,
    query: &Query,
    params: &Bm25Params,
) -> Result<Vec<SourceDocument>, RetrievalError> {
    params.validate()?;
    let terms = Index::query_terms(&query.text)?;
    let scores = index.scores(&terms, params);
    let mut ranked: Vec<(usize, f64)> = scores
        .into_iter()
        .enumerate()
        .filter(|&(_, s)| s > 0.0)
        .collect();
    ranked.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| index.docs[a.0].id.cmp(&index.docs[b.0].id))
    });
    ranked.truncate(params.top_k);
    Ok(ranked
        .into_iter()
        .map(|(i, score)| {
            let doc = &index.docs[i];
            SourceDocument::new(doc.id.clone(), doc.contents.clone(), score)
        })
        .collect())
}

/// [`retrieve`] packaged as the context `D_q`; an empty result is `NoResults`.
pub fn retrieve_context(
    index: &Index,
    query: &Query,
    params: &Bm25Params,
) -> Result<ContextSequence, ExplainError> {
    let sources = retrieve(index, query, params)?;
    if sources.is_empty() {
        return Err(RetrievalError::NoResults.into());
    }
    Ok(ContextSequence::new(query.clone(), sources)?)
}

/// Each source's share of the context's total retrieval score.
pub fn relative_relevance(ctx: &ContextSequence) -> Result<RelevanceVector, ExplainError> {
    let raw: Vec<f64> = ctx.sources().iter().map(|s| s.retrieval_score).collect();
    RelevanceVector::normalized_from(RelevanceMethod::RetrievalScore, ctx, &raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn record(id: &str, contents: &str) -> CorpusRecord {
        CorpusRecord {
            id: id.into(),
            contents: contents.into(),
        }
    }

    fn toy() -> Index {
        build_index(vec![
            record("d1", "Federer wins the final"),
            record("d2", "Nadal on clay"),
            record("d3", "Djokovic ranked first for many weeks"),
        ])
        .unwrap()
    }

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(tokenize("Grand-Slam wins: 24!"), ["grand", "slam", "wins", "24"]);
        assert_eq!(tokenize("ÉCOLE  über"), ["école", "über"]);
        assert!(tokenize(" ,.; ").is_empty());
    }

    #[test]
    fn average_length_is_mean_token_count() {
        let index = toy();
        assert_eq!(index.len(), 3);
        assert_eq!(index.avg_doc_len(), (4.0 + 3.0 + 6.0) / 3.0);
    }

    #[test]
    fn build_errors() {
        let dup = build_index(vec![record("d1", "a"), record("d1", "b")]);
        assert_eq!(dup, Err(RetrievalError::DuplicateId("d1".into())));
        assert_eq!(build_index(vec![]), Err(RetrievalError::EmptyCorpus));
    }

    #[test]
    fn unmatched_query_is_empty() {
        let q = Query::new("zebra").unwrap();
        assert!(retrieve(&toy(), &q, &Bm25Params::default()).unwrap().is_empty());
        assert_eq!(
            retrieve_context(&toy(), &q, &Bm25Params::default()),
            Err(ExplainError::Retrieval(RetrievalError::NoResults))
        );
        let blank = Query::new("?!").unwrap();
        assert_eq!(
            retrieve(&toy(), &blank, &Bm25Params::default()),
            Err(RetrievalError::EmptyQuery)
        );
    }

    #[test]
    fn single_matching_document_ranks_first() {
        let q = Query::new("federer wins").unwrap();
        let hits = retrieve(&toy(), &q, &Bm25Params::default()).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].doc_id, "d1");
        // hand-computed: N=3, df=1 for both terms, |d1|=4, avgdl=13/3
        let idf = libm::log(1.0 + 2.5 / 1.5);
        let norm = 0.9 * (1.0 - 0.4 + 0.4 * 4.0 / (13.0 / 3.0));
        let expected = 2.0 * idf * 1.9 / (1.0 + norm);
        assert!((hits[0].retrieval_score - expected).abs() < 1e-12);
    }

    #[test]
    fn top_k_truncates() {
        let index = build_index(
            (0..5).map(|i| record(&alloc::format!("d{i}"), &"tennis ".repeat(i + 1))),
        )
        .unwrap();
        let q = Query::new("tennis").unwrap();
        let hits = retrieve(&index, &q, &Bm25Params::with_top_k(2)).unwrap();
        assert_eq!(hits.len(), 2);
        let all = retrieve(&index, &q, &Bm25Params::with_top_k(5)).unwrap();
        assert_eq!(hits[..], all[..2]);
    }

    #[test]
    fn ties_break_by_id() {
        let index = build_index(vec![record("b", "tennis"), record("a", "tennis")]).unwrap();
        let hits = retrieve(&index, &Query::new("tennis").unwrap(), &Bm25Params::default()).unwrap();
        assert_eq!(hits[0].doc_id, "a");
        assert_eq!(hits[1].doc_id, "b");
    }

    #[test]
    fn relative_relevance_examples() {
        let q = Query::new("q").unwrap();
        let ctx = ContextSequence::new(
            q.clone(),
            vec![
                SourceDocument::new("a", "x", 2.0),
                SourceDocument::new("b", "y", 1.0),
                SourceDocument::new("c", "z", 1.0),
            ],
        )
        .unwrap();
        let rv = relative_relevance(&ctx).unwrap();
        assert_eq!(rv.in_context_order(&ctx).unwrap(), [0.5, 0.25, 0.25]);
        assert!(rv.normalized);

        let one = ContextSequence::new(q.clone(), vec![SourceDocument::new("a", "x", 3.0)]).unwrap();
        assert_eq!(relative_relevance(&one).unwrap().in_context_order(&one).unwrap(), [1.0]);

        let zeros = ContextSequence::new(
            q,
            vec![SourceDocument::new("a", "x", 0.0), SourceDocument::new("b", "y", 0.0)],
        )
        .unwrap();
        assert_eq!(
            relative_relevance(&zeros),
            Err(ExplainError::Retrieval(RetrievalError::AllZeroScores))
        );
    }

    #[test]
    fn invalid_params_rejected() {
        let q = Query::new("tennis").unwrap();
        let bad = Bm25Params { b: 1.5, ..Bm25Params::default() };
        assert!(retrieve(&toy(), &q, &bad).is_err());
    }
}
