//! Test-only oracles and brute-force references. Nothing here calls into the
//! search or solver code paths it is used to check.

#![allow(dead_code)]

use std::cell::Cell;
use std::collections::HashMap;

use ctxplain_core::{Answer, ContextSequence, Oracle, OracleCapabilities, OracleError, Query, SourceDocument};

pub fn context(k: usize) -> ContextSequence {
    ContextSequence::new(
        Query::new("which source decides?").unwrap(),
        (0..k)
            .map(|i| SourceDocument::new(format!("d{i}"), format!("document number {i}"), (k - i) as f64))
            .collect(),
    )
    .unwrap()
}

/// Answers from an explicit table keyed by the ordered doc_id list; unknown
/// keys fall back to `default`. Counts every call.
pub struct TableOracle {
    pub table: HashMap<Vec<String>, String>,
    pub default: String,
    pub calls: Cell<u64>,
}

impl TableOracle {
    pub fn new(default: &str) -> Self {
        TableOracle {
            table: HashMap::new(),
            default: default.into(),
            calls: Cell::new(0),
        }
    }

    pub fn lookup(&self, ids: &[String]) -> &str {
        self.table.get(ids).map_or(self.default.as_str(), String::as_str)
    }
}

impl Oracle for TableOracle {
    fn id(&self) -> &str {
        "table"
    }

    fn capabilities(&self) -> OracleCapabilities {
        OracleCapabilities {
            supports_attention: false,
            max_context_chars: usize::MAX,
        }
    }

    fn answer(&self, _query: &Query, selected: &[&SourceDocument]) -> Result<Answer, OracleError> {
        self.calls.set(self.calls.get() + 1);
        let ids: Vec<String> = selected.iter().map(|s| s.doc_id.clone()).collect();
        Ok(Answer {
            raw: self.lookup(&ids).to_string(),
            calls: 1,
        })
    }
}

pub fn ids_of_mask(ctx: &ContextSequence, mask: u32) -> Vec<String> {
    ctx.doc_ids()
        .enumerate()
        .filter(|(i, _)| mask >> i & 1 == 1)
        .map(|(_, id)| id.to_string())
        .collect()
}

pub fn ids_of_order(ctx: &ContextSequence, order: &[usize]) -> Vec<String> {
    let ids: Vec<&str> = ctx.doc_ids().collect();
    order.iter().map(|&i| ids[i].to_string()).collect()
}

/// Smallest removal (`top_down`) or retention set size that changes the
/// baseline answer, by sweeping every subset.
pub fn brute_force_flip_size(ctx: &ContextSequence, oracle: &TableOracle, top_down: bool) -> Option<u32> {
    let k = ctx.k() as u32;
    let full = (1u32 << k) - 1;
    let retained = |mask: u32| if top_down { full & !mask } else { mask };
    let baseline = ctxplain_core::normalize_answer(oracle.lookup(&ids_of_mask(ctx, retained(0))));
    (1..=full)
        .filter(|&m| {
            ctxplain_core::normalize_answer(oracle.lookup(&ids_of_mask(ctx, retained(m)))) != baseline
        })
        .map(u32::count_ones)
        .min()
}

/// Every permutation of `0..k` (Heap's algorithm, unordered).
pub fn heap_permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if n <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..n - 1 {
            rec(n - 1, a, out);
            if n % 2 == 0 {
                a.swap(i, n - 1);
            } else {
                a.swap(0, n - 1);
            }
        }
        rec(n - 1, a, out);
    }
    let mut a: Vec<usize> = (0..k).collect();
    let mut out = Vec::new();
    rec(k, &mut a, &mut out);
    out
}

/// Kendall's tau straight from the pair-counting definition, comparing each
/// pair of positions in `p` against the identity order.
pub fn tau_by_pairs(p: &[usize]) -> f64 {
    let k = p.len();
    let (mut concordant, mut discordant) = (0i64, 0i64);
    for i in 0..k {
        for j in i + 1..k {
            if p[i] < p[j] {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    (concordant - discordant) as f64 / (k * (k - 1) / 2) as f64
}

/// All k! assignments with costs summed as plain `f64` in row order, sorted
/// by (cost, permutation).
pub fn brute_force_assignments(cost: &[Vec<f64>]) -> Vec<(f64, Vec<usize>)> {
    let mut all: Vec<(f64, Vec<usize>)> = heap_permutations(cost.len())
        .into_iter()
        .map(|p| (p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum(), p))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    all
}

/// Upper quantile of the chi-square distribution with 5 degrees of freedom
/// at probability 0.999.
pub const CHI2_5_Q999: f64 = 20.515;
