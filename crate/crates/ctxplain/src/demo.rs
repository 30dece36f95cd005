//! Built-in demo scenarios: a corpus, a question and a mock oracle each.

use ctxplain_core::retrieval::Index;
use ctxplain_core::MockOracle;

use crate::corpus::{index_jsonl, CorpusError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Demo {
    pub name: &'static str,
    pub question: &'static str,
    pub top_k: usize,
    corpus: &'static str,
    oracle: &'static str,
}

pub const BIG_THREE: Demo = Demo {
    name: "big-three",
    question: "Who is the best tennis player of the Big Three?",
    top_k: 5,
    corpus: include_str!("../fixtures/big_three/corpus.jsonl"),
    oracle: include_str!("../fixtures/big_three/oracle.json"),
};

pub const US_OPEN: Demo = Demo {
    name: "us-open",
    question: "Who is the most recent winner of the US Open women's championship?",
    top_k: 4,
    corpus: include_str!("../fixtures/us_open/corpus.jsonl"),
    oracle: include_str!("../fixtures/us_open/oracle.json"),
};

pub const TIMELINE: Demo = Demo {
    name: "timeline",
    question: "How many times did Novak Djokovic win the Tennis Player of the Year award in the 2010s?",
    top_k: 10,
    corpus: include_str!("../fixtures/timeline/corpus.jsonl"),
    oracle: include_str!("../fixtures/timeline/oracle.json"),
};

pub const ALL: [Demo; 3] = [BIG_THREE, US_OPEN, TIMELINE];

impl Demo {
    pub fn by_name(name: &str) -> Option<Demo> {
        ALL.into_iter().find(|d| d.name == name || d.name.replace('-', "_") == name)
    }

    pub fn corpus_jsonl(&self) -> &'static str {
        self.corpus
    }

    pub fn index(&self) -> Result<Index, CorpusError> {
        index_jsonl(self.corpus.as_bytes())
    }

    pub fn oracle(&self) -> MockOracle {
        serde_json::from_str(self.oracle).expect("bundled oracle fixture is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ctxplain_core::retrieval::{retrieve, Bm25Params};
    use ctxplain_core::Query;

    fn ranked(demo: Demo) -> Vec<String> {
        let q = Query::new(demo.question).unwrap();
        retrieve(&demo.index().unwrap(), &q, &Bm25Params::with_top_k(demo.top_k))
            .unwrap()
            .into_iter()
            .map(|s| s.doc_id)
            .collect()
    }

    #[test]
    fn big_three_ranks_match_wins_document_first() {
        let ids = ranked(BIG_THREE);
        assert_eq!(ids.len(), 5);
        assert_eq!(ids[0], "d1");
        assert!(ids.iter().all(|id| id.starts_with('d')));
    }

    #[test]
    fn us_open_ranks_current_document_last() {
        let ids = ranked(US_OPEN);
        assert_eq!(ids.len(), 4);
        assert_eq!(ids[3], "u4");
        assert!(ids.iter().all(|id| id.starts_with('u')));
    }

    #[test]
    fn timeline_retrieves_all_years_with_djokovic_first() {
        let ids = ranked(TIMELINE);
        assert_eq!(ids.len(), 10);
        let mut top: Vec<&str> = ids[..5].iter().map(String::as_str).collect();
        top.sort_unstable();
        assert_eq!(top, ["y2011", "y2012", "y2014", "y2015", "y2018"]);
    }

    #[test]
    fn names_resolve_and_oracles_parse() {
        assert_eq!(Demo::by_name("us_open"), Some(US_OPEN));
        assert_eq!(Demo::by_name("nope"), None);
        for demo in ALL {
            assert_eq!(demo.oracle().id, demo.name);
        }
    }
}
