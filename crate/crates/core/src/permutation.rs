//! Permutation analysis: how the order of the sources affects the answer.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::combination::{flips, DEFAULT_MAX_PERTURBATIONS};
use crate::error::ExplainError;
use crate::model::{
    AnswerRecord, AnswerRule, ContextSequence, Counterfactual, CounterfactualKind, Permutation,
    Perturbation, PerturbationInsight, RuleKind, SearchOutcome,
};
use crate::oracle::{evaluate, Oracle};

/// Largest k enumerated exhaustively (8! = 40320 orders).
pub const DEFAULT_PERMUTATION_LIMIT: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PermutationSearchConfig {
    pub max_perturbations: u64,
    pub sample_size: Option<u64>,
    pub seed: u64,
    pub k_limit: usize,
}

impl Default for PermutationSearchConfig {
    fn default() -> Self {
        PermutationSearchConfig {
            max_perturbations: DEFAULT_MAX_PERTURBATIONS,
            sample_size: None,
            seed: 0,
            k_limit: DEFAULT_PERMUTATION_LIMIT,
        }
    }
}

/// Number of item pairs ordered differently by `p` and `reference`.
fn discordant_pairs(p: &[usize], reference: &[usize]) -> usize {
    let k = p.len();
    let mut pos_p = alloc::vec![0; k];
    let mut pos_r = alloc::vec![0; k];
    for i in 0..k {
        pos_p[p[i]] = i;
        pos_r[reference[i]] = i;
    }
    let mut discordant = 0;
    for a in 0..k {
        for b in a + 1..k {
            if (pos_p[a] < pos_p[b]) != (pos_r[a] < pos_r[b]) {
                discordant += 1;
            }
        }
    }
    discordant
}

fn tau_from_discordant(k: usize, discordant: usize) -> f64 {
    let pairs = k * (k - 1) / 2;
    (pairs as f64 - 2.0 * discordant as f64) / pairs as f64
}

/// Kendall's tau between two total orders of the same items:
/// `(concordant - discordant) / (k(k-1)/2)`.
pub fn kendall_tau(p: &Permutation, reference: &Permutation) -> Result<f64, ExplainError> {
    if p.len() != reference.len() {
        return Err(ExplainError::LengthMismatch(p.len(), reference.len()));
    }
    if p.len() < 2 {
        return Err(ExplainError::Undefined);
    }
    Ok(tau_from_discordant(p.len(), discordant_pairs(p.order(), reference.order())))
}

/// Advances `order` to the next lexicographic permutation; false at the last.
fn next_lexicographic(order: &mut [usize]) -> bool {
    let n = order.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && order[i - 1] >= order[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while order[j] <= order[i - 1] {
        j -= 1;
    }
    order.swap(i - 1, j);
    order[i..].reverse();
    true
}

/// All k! orders in lexicographic order.
pub fn all_permutations(k: usize) -> Vec<Permutation> {
    let mut order: Vec<usize> = (0..k).collect();
    let mut out = Vec::new();
    loop {
        out.push(Permutation::from_vec_unchecked(order.clone()));
        if !next_lexicographic(&mut order) {
            return out;
        }
    }
}

fn check_exhaustive(k: usize, limit: usize) -> Result<(), ExplainError> {
    if k > limit {
        return Err(ExplainError::KTooLarge { k, limit });
    }
    Ok(())
}

/// Non-identity orders by descending similarity to the retrieval order;
/// equal similarity falls back to lexicographic order.
pub fn permutations_by_similarity(k: usize) -> Vec<(Permutation, f64)> {
    if k < 2 {
        return Vec::new();
    }
    let identity: Vec<usize> = (0..k).collect();
    let mut keyed: Vec<(usize, Permutation)> = all_permutations(k)
        .into_iter()
        .skip(1)
        .map(|p| (discordant_pairs(p.order(), &identity), p))
        .collect();
    // stable sort keeps the lexicographic generation order within a tie
    keyed.sort_by_key(|(d, _)| *d);
    keyed
        .into_iter()
        .map(|(d, p)| (p, tau_from_discordant(k, d)))
        .collect()
}

fn evaluate_order<O: Oracle + ?Sized>(
    ctx: &ContextSequence,
    oracle: &O,
    permutation: &Permutation,
) -> Result<AnswerRecord, ExplainError> {
    let selected = ctx.arranged(permutation)?;
    Ok(evaluate(
        oracle,
        ctx.query(),
        &selected,
        Perturbation::Permutation(permutation.clone()),
    )?)
}

/// The reordering closest to the retrieval order (by Kendall's tau) whose
/// answer differs from the answer for the retrieval order.
pub fn find_permutation_counterfactual<O: Oracle + ?Sized>(
    ctx: &ContextSequence,
    oracle: &O,
    config: &PermutationSearchConfig,
) -> Result<SearchOutcome, ExplainError> {
    let k = ctx.k();
    check_exhaustive(k, config.k_limit)?;
    let baseline = evaluate_order(ctx, oracle, &Permutation::identity(k))?;

    let mut tested = 0u64;
    for (permutation, tau) in permutations_by_similarity(k) {
        if tested == config.max_perturbations {
            return Ok(SearchOutcome::BudgetExhausted {
                perturbations_tested: tested,
            });
        }
        tested += 1;
        let answer = evaluate_order(ctx, oracle, &permutation)?;
        if flips(&baseline.normalized, &answer.normalized, None) {
            return Ok(SearchOutcome::Found {
                counterfactual: Counterfactual {
                    kind: CounterfactualKind::Reordering,
                    perturbation: Perturbation::Permutation(permutation),
                    original_answer: baseline,
                    new_answer: answer,
                    perturbations_tested: tested,
                    similarity: Some(tau),
                },
            });
        }
    }
    Ok(SearchOutcome::NotFound {
        perturbations_tested: tested,
    })
}

/// Seeded Fisher-Yates sampler that counts the swaps it performs.
pub struct PermutationSampler {
    rng: ChaCha8Rng,
    swaps: u64,
}

impl PermutationSampler {
    pub fn new(seed: u64) -> Self {
        PermutationSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            swaps: 0,
        }
    }

    /// One uniformly random order of `0..k`, using exactly `k - 1` swaps.
    pub fn shuffle(&mut self, k: usize) -> Permutation {
        let mut order: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            let j = self.rng.gen_range(0..=i);
            order.swap(i, j);
            self.swaps += 1;
        }
        Permutation::from_vec_unchecked(order)
    }

    pub fn sample(&mut self, k: usize, s: usize) -> Vec<Permutation> {
        (0..s).map(|_| self.shuffle(k)).collect()
    }

    pub fn swaps(&self) -> u64 {
        self.swaps
    }
}

/// `s` independent uniform orders of `0..k` (duplicates allowed).
pub fn sample_permutations(k: usize, s: usize, seed: u64) -> Vec<Permutation> {
    PermutationSampler::new(seed).sample(k, s)
}

/// Groups answers over all k! orders, or over a seeded sample counted with
/// multiplicity; each distinct order is evaluated once.
pub fn permutation_insights<O: Oracle + ?Sized>(
    ctx: &ContextSequence,
    oracle: &O,
    config: &PermutationSearchConfig,
) -> Result<PerturbationInsight, ExplainError> {
    let k = ctx.k();
    let perms = match config.sample_size {
        None => {
            check_exhaustive(k, config.k_limit)?;
            all_permutations(k)
        }
        Some(0) => return Err(ExplainError::InvalidConfig("sample_size must be positive".into())),
        Some(s) => sample_permutations(k, s as usize, config.seed),
    };

    let mut answers: BTreeMap<Permutation, String> = BTreeMap::new();
    let mut groups: BTreeMap<String, Vec<Permutation>> = BTreeMap::new();
    for p in perms {
        let answer = match answers.get(&p) {
            Some(a) => a.clone(),
            None => {
                let a = evaluate_order(ctx, oracle, &p)?.normalized;
                answers.insert(p.clone(), a.clone());
                a
            }
        };
        groups.entry(answer).or_default().push(p);
    }

    let rules = groups
        .iter()
        .map(|(answer, perms)| mine_permutation_rule(answer, perms, ctx))
        .collect();
    let groups = groups
        .into_iter()
        .map(|(answer, perms)| (answer, perms.into_iter().map(Perturbation::Permutation).collect()))
        .collect();
    Ok(PerturbationInsight::from_groups(groups, rules))
}

/// Positions that hold the same source in every order that produced `answer`.
pub fn mine_permutation_rule(answer: &str, perms: &[Permutation], ctx: &ContextSequence) -> AnswerRule {
    let mut fixed_positions = BTreeMap::new();
    if let Some((first, rest)) = perms.split_first() {
        for (pos, &item) in first.order().iter().enumerate() {
            if rest.iter().all(|p| p.order().get(pos) == Some(&item)) {
                if let Some(source) = ctx.sources().get(item) {
                    fixed_positions.insert(pos, source.doc_id.clone());
                }
            }
        }
    }
    AnswerRule {
        answer: answer.into(),
        kind: RuleKind::FixedPositions,
        required_ids: Vec::new(),
        fixed_positions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Query, SourceDocument};
    use crate::oracle::{MockOracle, MockRule};
    use alloc::vec;

    fn perm(v: &[usize]) -> Permutation {
        Permutation::new(v.to_vec()).unwrap()
    }

    fn ctx(k: usize) -> ContextSequence {
        ContextSequence::new(
            Query::new("q").unwrap(),
            (1..=k)
                .map(|i| SourceDocument::new(alloc::format!("d{i}"), alloc::format!("doc {i}"), 1.0))
                .collect(),
        )
        .unwrap()
    }

    fn first_position_oracle() -> MockOracle {
        MockOracle::new("m", "Novak Djokovic").with_rule(MockRule {
            position_equals: [(0, "d1".into())].into_iter().collect(),
            answer: "Roger Federer".into(),
            ..Default::default()
        })
    }

    #[test]
    fn tau_examples() {
        let id = Permutation::identity(4);
        assert_eq!(kendall_tau(&id, &id).unwrap(), 1.0);
        assert_eq!(kendall_tau(&id.reversed(), &id).unwrap(), -1.0);
        assert!((kendall_tau(&perm(&[1, 0, 2]), &perm(&[0, 1, 2])).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            kendall_tau(&perm(&[0, 1]), &perm(&[0, 1, 2])),
            Err(ExplainError::LengthMismatch(2, 3))
        );
        assert_eq!(kendall_tau(&perm(&[0]), &perm(&[0])), Err(ExplainError::Undefined));
    }

    #[test]
    fn lexicographic_generation() {
        let all = all_permutations(3);
        let orders: Vec<&[usize]> = all.iter().map(Permutation::order).collect();
        assert_eq!(
            orders,
            [&[0, 1, 2][..], &[0, 2, 1], &[1, 0, 2], &[1, 2, 0], &[2, 0, 1], &[2, 1, 0]]
        );
        assert_eq!(all_permutations(1).len(), 1);
        assert_eq!(all_permutations(6).len(), 720);
    }

    #[test]
    fn similarity_order_starts_with_adjacent_swaps() {
        let ranked = permutations_by_similarity(5);
        assert_eq!(ranked.len(), 119);
        let head: Vec<&[usize]> = ranked[..4].iter().map(|(p, _)| p.order()).collect();
        assert_eq!(
            head,
            [&[0, 1, 2, 4, 3][..], &[0, 1, 3, 2, 4], &[0, 2, 1, 3, 4], &[1, 0, 2, 3, 4]]
        );
        assert!(ranked[..4].iter().all(|(_, t)| (*t - 0.8).abs() < 1e-15));
        assert!(ranked.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn positional_fixture_swaps_first_two() {
        let ctx = ctx(5);
        let out =
            find_permutation_counterfactual(&ctx, &first_position_oracle(), &Default::default()).unwrap();
        let cf = out.counterfactual().unwrap();
        assert_eq!(cf.perturbation, Perturbation::Permutation(perm(&[1, 0, 2, 3, 4])));
        assert_eq!(cf.similarity, Some(0.8));
        assert_eq!(cf.original_answer.normalized, "roger federer");
        assert_eq!(cf.new_answer.normalized, "novak djokovic");
        assert_eq!(cf.perturbations_tested, 4);
    }

    #[test]
    fn insensitive_oracle_not_found() {
        let out = find_permutation_counterfactual(&ctx(3), &MockOracle::new("m", "x"), &Default::default())
            .unwrap();
        assert_eq!(out, SearchOutcome::NotFound { perturbations_tested: 5 });
        let out = find_permutation_counterfactual(&ctx(1), &MockOracle::new("m", "x"), &Default::default())
            .unwrap();
        assert_eq!(out, SearchOutcome::NotFound { perturbations_tested: 0 });
    }

    #[test]
    fn exhaustive_limit() {
        let err = find_permutation_counterfactual(&ctx(9), &MockOracle::new("m", "x"), &Default::default());
        assert_eq!(err, Err(ExplainError::KTooLarge { k: 9, limit: 8 }));
    }

    #[test]
    fn sampler_basics() {
        assert!(sample_permutations(1, 4, 3).iter().all(|p| p.order() == [0]));
        assert_eq!(sample_permutations(6, 20, 11), sample_permutations(6, 20, 11));
        let mut sampler = PermutationSampler::new(5);
        sampler.sample(7, 13);
        assert_eq!(sampler.swaps(), 13 * 6);
    }

    #[test]
    fn rule_examples() {
        let c = ctx(3);
        let r = mine_permutation_rule("a", &[perm(&[0, 1, 2]), perm(&[0, 2, 1])], &c);
        assert_eq!(r.fixed_positions, [(0, "d1".into())].into_iter().collect());
        let r = mine_permutation_rule("a", &[perm(&[0, 1, 2])], &c);
        assert_eq!(r.fixed_positions.len(), 3);
        let r = mine_permutation_rule("a", &[perm(&[0, 1, 2]), perm(&[1, 0, 2])], &c);
        assert_eq!(r.fixed_positions, [(2, "d3".into())].into_iter().collect());
    }

    #[test]
    fn exhaustive_insights() {
        let c = ctx(3);
        let constant = permutation_insights(&c, &MockOracle::new("m", "x"), &Default::default()).unwrap();
        assert_eq!(constant.groups["x"].len(), 6);
        assert!(constant.rules[0].is_empty());

        let positional = permutation_insights(&c, &first_position_oracle(), &Default::default()).unwrap();
        let rf = &positional.groups["roger federer"];
        assert_eq!(
            rf,
            &vec![
                Perturbation::Permutation(perm(&[0, 1, 2])),
                Perturbation::Permutation(perm(&[0, 2, 1]))
            ]
        );
        let rule = positional.rule_for("roger federer").unwrap();
        assert_eq!(rule.fixed_positions, [(0, "d1".into())].into_iter().collect());
        assert!((positional.proportions["novak djokovic"] - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn sampled_insights_count_duplicates() {
        let c = ctx(2);
        let config = PermutationSearchConfig {
            sample_size: Some(50),
            seed: 1,
            ..Default::default()
        };
        let insight = permutation_insights(&c, &MockOracle::new("m", "x"), &config).unwrap();
        assert_eq!(insight.total_evaluated, 50);
        assert_eq!(insight.groups["x"].len(), 50);
    }
}
