//! Combination analysis: which sources must be present (or absent) for the
//! oracle to give a particular answer.
//!
//! Subsets of the context are represented internally as bitmasks over the
//! original context indices, so contexts are capped at 64 sources even when
//! sampling.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::answer::normalize_answer;
use crate::error::ExplainError;
use crate::model::{
    AnswerRecord, AnswerRule, Combination, ContextSequence, Counterfactual, CounterfactualKind,
    Perturbation, PerturbationInsight, RelevanceMethod, RelevanceVector, RuleKind, SearchOutcome,
};
use crate::oracle::{attention_salience, evaluate, Oracle};
use crate::retrieval::relative_relevance;

pub const DEFAULT_MAX_PERTURBATIONS: u64 = 1000;
/// Largest context enumerated exhaustively (2^20 subsets).
pub const DEFAULT_COMBINATION_LIMIT: usize = 20;
const MASK_BITS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Remove sources from the full context.
    TopDown,
    /// Retain sources starting from the empty context.
    BottomUp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CombinationSearchConfig {
    pub direction: Direction,
    pub target_answer: Option<String>,
    pub max_perturbations: u64,
    pub scoring: RelevanceMethod,
    pub sample_size: Option<u64>,
    pub seed: u64,
    pub k_limit: usize,
}

impl Default for CombinationSearchConfig {
    fn default() -> Self {
        CombinationSearchConfig {
            direction: Direction::TopDown,
            target_answer: None,
            max_perturbations: DEFAULT_MAX_PERTURBATIONS,
            scoring: RelevanceMethod::RetrievalScore,
            sample_size: None,
            seed: 0,
            k_limit: DEFAULT_COMBINATION_LIMIT,
        }
    }
}

fn full_mask(k: usize) -> u64 {
    if k >= MASK_BITS {
        u64::MAX
    } else {
        (1u64 << k) - 1
    }
}

fn members(mask: u64) -> impl Iterator<Item = usize> {
    (0..MASK_BITS).filter(move |i| mask >> i & 1 == 1)
}

/// All `size`-element masks over `k` bits, in increasing numeric order.
fn masks_of_size(k: usize, size: usize) -> Vec<u64> {
    if size == 0 {
        return alloc::vec![0];
    }
    if size > k {
        return Vec::new();
    }
    let limit = full_mask(k);
    let mut out = Vec::new();
    let mut mask = full_mask(size);
    loop {
        out.push(mask);
        if mask == limit << (k - size) & limit {
            break;
        }
        // Gosper's hack: next integer with the same popcount
        let c = mask & mask.wrapping_neg();
        let r = mask + c;
        mask = (((r ^ mask) >> 2) / c) | r;
    }
    out
}

/// Lexicographic comparison of the index lists of two masks.
fn cmp_index_lists(a: u64, b: u64) -> Ordering {
    b.reverse_bits().cmp(&a.reverse_bits())
}

/// Masks grouped by ascending size; within a size, by descending relevance
/// sum, then by the lexicographic order of the member doc_id lists.
pub(crate) struct OrderedMasks<'a> {
    k: usize,
    scores: Vec<f64>,
    ids: Vec<&'a str>,
    next_size: usize,
    level: alloc::vec::IntoIter<u64>,
}

impl<'a> OrderedMasks<'a> {
    pub(crate) fn new(ctx: &'a ContextSequence, scores: Vec<f64>) -> Self {
        OrderedMasks {
            k: ctx.k(),
            scores,
            ids: ctx.doc_ids().collect(),
            next_size: 0,
            level: Vec::new().into_iter(),
        }
    }

    fn score(&self, mask: u64) -> f64 {
        members(mask).map(|i| self.scores[i]).sum()
    }

    fn cmp_ids(&self, a: u64, b: u64) -> Ordering {
        let la = members(a).map(|i| self.ids[i]);
        let lb = members(b).map(|i| self.ids[i]);
        la.cmp(lb)
    }
}

impl Iterator for OrderedMasks<'_> {
    type Item = u64;

    fn next(&mut self) -> Option<u64> {
        loop {
            if let Some(mask) = self.level.next() {
                return Some(mask);
            }
            if self.next_size > self.k {
                return None;
            }
            let mut keyed: Vec<(f64, u64)> = masks_of_size(self.k, self.next_size)
                .into_iter()
                .map(|m| (self.score(m), m))
                .collect();
            keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| self.cmp_ids(a.1, b.1)));
            self.level = keyed.into_iter().map(|(_, m)| m).collect::<Vec<_>>().into_iter();
            self.next_size += 1;
        }
    }
}

/// Iterator returned by [`enumerate_combinations_ordered`].
pub struct OrderedCombinations<'a> {
    ctx: &'a ContextSequence,
    masks: OrderedMasks<'a>,
}

impl Iterator for OrderedCombinations<'_> {
    type Item = Combination;

    fn next(&mut self) -> Option<Combination> {
        self.masks.next().map(|m| self.ctx.combination_from_mask(m))
    }
}

fn check_exhaustive(k: usize, limit: usize) -> Result<(), ExplainError> {
    if k > limit.min(MASK_BITS) {
        return Err(ExplainError::ContextTooLarge { k, limit: limit.min(MASK_BITS) });
    }
    Ok(())
}

/// Every subset of the context, smallest first, most relevant first within a
/// size. Fails with `ContextTooLarge` above `limit` sources.
pub fn enumerate_combinations_ordered<'a>(
    ctx: &'a ContextSequence,
    relevance: &RelevanceVector,
    limit: usize,
) -> Result<OrderedCombinations<'a>, ExplainError> {
    check_exhaustive(ctx.k(), limit)?;
    let scores = relevance.in_context_order(ctx)?;
    Ok(OrderedCombinations {
        ctx,
        masks: OrderedMasks::new(ctx, scores),
    })
}

pub(crate) fn relevance_for<O: Oracle + ?Sized>(
    ctx: &ContextSequence,
    oracle: &O,
    method: RelevanceMethod,
) -> Result<RelevanceVector, ExplainError> {
    match method {
        RelevanceMethod::RetrievalScore => relative_relevance(ctx),
        RelevanceMethod::AttentionSalience => attention_salience(oracle, ctx),
    }
}

fn evaluate_mask<O: Oracle + ?Sized>(
    ctx: &ContextSequence,
    oracle: &O,
    retained: u64,
) -> Result<AnswerRecord, ExplainError> {
    let indices: Vec<usize> = members(retained).take_while(|&i| i < ctx.k()).collect();
    let selected = ctx.select(&indices);
    let combination = ctx.combination_from_mask(retained);
    Ok(evaluate(oracle, ctx.query(), &selected, Perturbation::Combination(combination))?)
}

pub(crate) fn flips(baseline: &str, candidate: &str, target: Option<&str>) -> bool {
    candidate != baseline && target.map_or(true, |t| candidate == t)
}

/// Searches for the smallest removal set (top-down) or retention set
/// (bottom-up) that changes the baseline answer.
///
/// Candidates are visited in [`enumerate_combinations_ordered`] order, so
/// the first flip found is minimal in size among everything evaluated.
pub fn find_combination_counterfactual<O: Oracle + ?Sized>(
    ctx: &ContextSequence,
    oracle: &O,
    config: &CombinationSearchConfig,
) -> Result<SearchOutcome, ExplainError> {
    let k = ctx.k();
    check_exhaustive(k, config.k_limit)?;
    let relevance = relevance_for(ctx, oracle, config.scoring)?;
    let scores = relevance.in_context_order(ctx)?;
    let full = full_mask(k);
    let target = config.target_answer.as_deref().map(normalize_answer);

    let baseline_mask = match config.direction {
        Direction::TopDown => full,
        Direction::BottomUp => 0,
    };
    let baseline = evaluate_mask(ctx, oracle, baseline_mask)?;

    let mut tested = 0u64;
    for mask in OrderedMasks::new(ctx, scores).filter(|&m| m != 0) {
        if tested == config.max_perturbations {
            return Ok(SearchOutcome::BudgetExhausted {
                perturbations_tested: tested,
            });
        }
        tested += 1;
        let retained = match config.direction {
            Direction::TopDown => full & !mask,
            Direction::BottomUp => mask,
        };
        let answer = evaluate_mask(ctx, oracle, retained)?;
        if flips(&baseline.normalized, &answer.normalized, target.as_deref()) {
            let kind = match config.direction {
                Direction::TopDown => CounterfactualKind::TopDownRemoval,
                Direction::BottomUp => CounterfactualKind::BottomUpRetention,
            };
            return Ok(SearchOutcome::Found {
                counterfactual: Counterfactual {
                    kind,
                    perturbation: Perturbation::Combination(ctx.combination_from_mask(mask)),
                    original_answer: baseline,
                    new_answer: answer,
                    perturbations_tested: tested,
                    similarity: None,
                },
            });
        }
    }
    Ok(SearchOutcome::NotFound {
        perturbations_tested: tested,
    })
}

/// Distinct subsets to evaluate for insights, in canonical order (size,
/// then index list).
fn insight_masks(k: usize, config: &CombinationSearchConfig) -> Result<Vec<u64>, ExplainError> {
    let mut masks = match config.sample_size {
        None => {
            check_exhaustive(k, config.k_limit)?;
            (0..=k).flat_map(|size| masks_of_size(k, size)).collect()
        }
        Some(s) => sample_masks(k, s, config.seed)?,
    };
    masks.sort_by(|&a, &b| a.count_ones().cmp(&b.count_ones()).then_with(|| cmp_index_lists(a, b)));
    Ok(masks)
}

/// `s` distinct subsets drawn uniformly without replacement; the empty set
/// and then the full set are always included.
fn sample_masks(k: usize, s: u64, seed: u64) -> Result<Vec<u64>, ExplainError> {
    if k > MASK_BITS {
        return Err(ExplainError::ContextTooLarge { k, limit: MASK_BITS });
    }
    if s == 0 {
        return Err(ExplainError::InvalidConfig("sample_size must be positive".into()));
    }
    if k < MASK_BITS && s > 1u64 << k {
        return Err(ExplainError::InvalidConfig(alloc::format!(
            "sample_size {s} exceeds the {} subsets of {k} sources",
            1u64 << k
        )));
    }
    let full = full_mask(k);
    let mut chosen: Vec<u64> = [0, full].into_iter().take(s.min(2) as usize).collect();
    chosen.dedup();
    let remaining = s as usize - chosen.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    if k <= 16 {
        let mut pool: Vec<u64> = (1..full).collect();
        for i in 0..remaining {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        chosen.extend_from_slice(&pool[..remaining]);
    } else {
        let mut seen: BTreeSet<u64> = chosen.iter().copied().collect();
        while chosen.len() < s as usize {
            let mask = rng.gen::<u64>() & full;
            if seen.insert(mask) {
                chosen.push(mask);
            }
        }
    }
    Ok(chosen)
}

/// Groups the oracle's answers over all (or a seeded sample of) subsets of
/// the context and mines one required-sources rule per answer.
pub fn combination_insights<O: Oracle + ?Sized>(
    ctx: &ContextSequence,
    oracle: &O,
    config: &CombinationSearchConfig,
) -> Result<PerturbationInsight, ExplainError> {
    let masks = insight_masks(ctx.k(), config)?;
    let mut groups: BTreeMap<String, Vec<Combination>> = BTreeMap::new();
    for mask in masks {
        let answer = evaluate_mask(ctx, oracle, mask)?;
        groups
            .entry(answer.normalized)
            .or_default()
            .push(ctx.combination_from_mask(mask));
    }
    let rules = groups
        .iter()
        .map(|(answer, combos)| mine_combination_rule(answer, combos))
        .collect();
    let groups = groups
        .into_iter()
        .map(|(answer, combos)| {
            (answer, combos.into_iter().map(Perturbation::Combination).collect())
        })
        .collect();
    Ok(PerturbationInsight::from_groups(groups, rules))
}

/// Sources present in every combination that produced `answer`. An empty
/// result means no rule was found.
pub fn mine_combination_rule(answer: &str, combos: &[Combination]) -> AnswerRule {
    let required_ids = match combos.split_first() {
        None => Vec::new(),
        Some((first, rest)) => first
            .member_ids
            .iter()
            .filter(|id| rest.iter().all(|c| c.contains(id)))
            .cloned()
            .collect(),
    };
    AnswerRule {
        answer: answer.into(),
        kind: RuleKind::RequiredSources,
        required_ids,
        fixed_positions: BTreeMap::new(),
    }
}
