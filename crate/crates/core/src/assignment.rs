//! Attention-optimal source orderings as a ranked linear assignment problem.
//!
//! Positions are rows and sources are columns. The cost of placing source
//! `j` at position `i` is `-(relevance_j * weight_i)`, so minimum-cost
//! assignments are the orderings that put the most relevant sources where
//! the oracle is expected to attend most.
//!
//! The `s` best assignments are ranked by partitioning the solution space:
//! every subproblem fixes some (position, source) pairs and forbids others,
//! and carries its own optimum. The globally best subproblem is emitted and
//! then split so that the children cover exactly its remaining solutions.
//! Each child is solved with a shortest-augmenting-path Hungarian solver.
//!
//! Ties are resolved deterministically: among assignments of equal cost the
//! lexicographically smallest permutation array comes first. Within one
//! subproblem that solution is recovered from the optimal duals, since every
//! optimal assignment uses only zero-reduced-cost cells.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::ExplainError;
use crate::model::{ContextSequence, Permutation, RelevanceVector};

/// Expected attention per context position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionProfile {
    pub weights: Vec<f64>,
}

impl AttentionProfile {
    pub fn new(weights: Vec<f64>) -> Result<Self, ExplainError> {
        if weights.is_empty() {
            return Err(ExplainError::InvalidConfig("attention profile is empty".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(ExplainError::InvalidConfig(
                "attention weights must be positive and finite".into(),
            ));
        }
        Ok(AttentionProfile { weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// High at both ends, lowest in the middle: 1.0 at the endpoints, 0.5 at
/// the center, linear in between.
pub fn v_shaped_profile(k: usize) -> AttentionProfile {
    let weights = match k {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => {
            let span = (k - 1) as f64;
            (0..k)
                .map(|i| 0.5 + libm::fabs(2.0 * i as f64 - span) / (2.0 * span))
                .collect()
        }
    };
    AttentionProfile { weights }
}

/// Square cost matrix, row-major. Rows are positions, columns are sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct AssignmentCostMatrix {
    n: usize,
    cells: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    cost: Vec<Vec<f64>>,
}

impl TryFrom<RawMatrix> for AssignmentCostMatrix {
    type Error = ExplainError;

    fn try_from(raw: RawMatrix) -> Result<Self, Self::Error> {
        AssignmentCostMatrix::new(raw.cost)
    }
}

impl From<AssignmentCostMatrix> for RawMatrix {
    fn from(m: AssignmentCostMatrix) -> Self {
        RawMatrix { cost: m.rows() }
    }
}

impl AssignmentCostMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, ExplainError> {
        let n = rows.len();
        let mut cells = Vec::with_capacity(n * n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(ExplainError::NonSquareMatrix);
            }
            if let Some(j) = row.iter().position(|c| !c.is_finite()) {
                return Err(ExplainError::NonFiniteEntry(i, j));
            }
            cells.extend(row);
        }
        Ok(AssignmentCostMatrix { n, cells })
    }

    /// `cost[i][j] = -(relevance[j] * weights[i])`.
    pub fn from_relevance(relevance: &[f64], weights: &[f64]) -> Result<Self, ExplainError> {
        if relevance.len() != weights.len() {
            return Err(ExplainError::ProfileMismatch {
                expected: relevance.len(),
                got: weights.len(),
            });
        }
        AssignmentCostMatrix::new(
            weights
                .iter()
                .map(|w| relevance.iter().map(|r| -(r * w)).collect())
                .collect(),
        )
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cells[row * self.n + col]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.cells.chunks(self.n.max(1)).map(<[f64]>::to_vec).take(self.n).collect()
    }

    /// Total cost of `row -> order[row]`, correctly rounded so that
    /// assignments using the same multiset of cells cost exactly the same.
    pub fn total(&self, order: &[usize]) -> f64 {
        exact_sum(order.iter().enumerate().map(|(i, &j)| self.get(i, j)))
    }
}

/// Correctly rounded sum of finite floats (Shewchuk's partials, with the
/// final half-way correction used by Python's `math.fsum`).
pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut kept = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if libm::fabs(x) < libm::fabs(y) {
                core::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }

    let Some(mut hi) = partials.pop() else {
        return 0.0;
    };
    let mut lo = 0.0;
    while let Some(y) = partials.pop() {
        let x = hi;
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    if let Some(&next) = partials.last() {
        if (lo < 0.0 && next < 0.0) || (lo > 0.0 && next > 0.0) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
    }
    hi
}

/// One ranked ordering. `permutation[i]` is the source placed at position
/// `i`; `score` is the negated total cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAssignment {
    pub permutation: Permutation,
    pub score: f64,
    pub rank: u64,
}

impl RankedAssignment {
    pub fn cost(&self) -> f64 {
        -self.score
    }
}

struct Duals {
    row_to_col: Vec<usize>,
    u: Vec<f64>,
    v: Vec<f64>,
}

/// Shortest-augmenting-path Hungarian method on an `n x n` row-major matrix;
/// `f64::INFINITY` marks forbidden cells. `None` when no perfect matching
/// avoids the forbidden cells.
fn hungarian(n: usize, a: &[f64]) -> Option<Duals> {
    let inf = f64::INFINITY;
    // 1-based with a virtual row/column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if j1 == 0 {
                return None;
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[owner[j] - 1] = j - 1;
    }
    Some(Duals {
        row_to_col,
        u: u[1..].to_vec(),
        v: v[1..].to_vec(),
    })
}

/// Lexicographically smallest perfect matching inside the tight-cell graph,
/// starting from the perfect matching `row_to_col`.
fn lex_min_matching(n: usize, tight: &[bool], mut row_to_col: Vec<usize>) -> Vec<usize> {
    let mut col_to_row = vec![0; n];
    for (r, &c) in row_to_col.iter().enumerate() {
        col_to_row[c] = r;
    }
    let mut frozen_col = vec![false; n];

    for i in 0..n {
        for j in 0..n {
            if frozen_col[j] || !tight[i * n + j] {
                continue;
            }
            if row_to_col[i] != j {
                // hand j to row i; its owner must reach i's old column through
                // an alternating path over unfrozen rows and columns
                let start = col_to_row[j];
                let goal = row_to_col[i];
                let mut search = PathSearch {
                    n,
                    tight,
                    col_to_row: &col_to_row,
                    frozen_col: &frozen_col,
                    banned_col: j,
                    goal,
                    visited: vec![false; n],
                    path: Vec::new(),
                };
                if !search.dfs(start) {
                    continue;
                }
                for (row, col) in core::mem::take(&mut search.path) {
                    row_to_col[row] = col;
                    col_to_row[col] = row;
                }
                row_to_col[i] = j;
                col_to_row[j] = i;
            }
            frozen_col[j] = true;
            break;
        }
    }
    row_to_col
}

struct PathSearch<'a> {
    n: usize,
    tight: &'a [bool],
    col_to_row: &'a [usize],
    frozen_col: &'a [bool],
    banned_col: usize,
    goal: usize,
    visited: Vec<bool>,
    /// (row, new column) reassignments, filled on success.
    path: Vec<(usize, usize)>,
}

impl PathSearch<'_> {
    fn dfs(&mut self, row: usize) -> bool {
        for c in 0..self.n {
            if c == self.banned_col || self.frozen_col[c] || self.visited[c] || !self.tight[row * self.n + c] {
                continue;
            }
            self.visited[c] = true;
            if c == self.goal || self.dfs(self.col_to_row[c]) {
                self.path.push((row, c));
                return true;
            }
        }
        false
    }
}

/// Optimal assignment of a square matrix with forbidden (infinite) cells,
/// lexicographically smallest among the optimal ones.
fn solve_lex_min(n: usize, a: &[f64]) -> Option<Vec<usize>> {
    if n == 0 {
        return Some(Vec::new());
    }
    let duals = hungarian(n, a)?;
    let scale = a
        .iter()
        .filter(|x| x.is_finite())
        .fold(1.0f64, |m, x| m.max(libm::fabs(*x)));
    let tol = 1e-9 * scale;
    let tight: Vec<bool> = (0..n * n)
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            a[idx].is_finite() && a[idx] - duals.u[i] - duals.v[j] <= tol
        })
        .collect();
    Some(lex_min_matching(n, &tight, duals.row_to_col))
}

#[derive(Clone)]
struct Subproblem {
    forced: Vec<(usize, usize)>,
    forbidden: Vec<(usize, usize)>,
    solution: Vec<usize>,
    cost: f64,
}

impl Subproblem {
    fn solve(
        matrix: &AssignmentCostMatrix,
        forced: Vec<(usize, usize)>,
        forbidden: Vec<(usize, usize)>,
    ) -> Option<Subproblem> {
        let n = matrix.size();
        let mut row_forced = vec![false; n];
        let mut col_forced = vec![false; n];
        for &(r, c) in &forced {
            row_forced[r] = true;
            col_forced[c] = true;
        }
        let rows: Vec<usize> = (0..n).filter(|&r| !row_forced[r]).collect();
        let cols: Vec<usize> = (0..n).filter(|&c| !col_forced[c]).collect();
        let m = rows.len();
        let mut reduced = Vec::with_capacity(m * m);
        for &r in &rows {
            for &c in &cols {
                reduced.push(matrix.get(r, c));
            }
        }
        for &(r, c) in &forbidden {
            if let (Ok(ri), Ok(ci)) = (rows.binary_search(&r), cols.binary_search(&c)) {
                reduced[ri * m + ci] = f64::INFINITY;
            }
        }
        let local = solve_lex_min(m, &reduced)?;
        let mut solution = vec![0; n];
        for &(r, c) in &forced {
            solution[r] = c;
        }
        for (ri, &ci) in local.iter().enumerate() {
            solution[rows[ri]] = cols[ci];
        }
        let cost = matrix.total(&solution);
        Some(Subproblem {
            forced,
            forbidden,
            solution,
            cost,
        })
    }

    fn key_cmp(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then_with(|| self.solution.cmp(&other.solution))
    }
}

impl PartialEq for Subproblem {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}

impl Eq for Subproblem {}

impl PartialOrd for Subproblem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Subproblem {
    // reversed: BinaryHeap pops the cheapest subproblem first
    fn cmp(&self, other: &Self) -> Ordering {
        other.key_cmp(self)
    }
}

fn ranked(sub: &Subproblem, rank: u64) -> RankedAssignment {
    RankedAssignment {
        permutation: Permutation::from_vec_unchecked(sub.solution.clone()),
        score: -sub.cost,
        rank,
    }
}

/// Minimum-cost assignment; ties go to the lexicographically smallest order.
pub fn solve_best_assignment(cost: &AssignmentCostMatrix) -> Result<RankedAssignment, ExplainError> {
    let best = Subproblem::solve(cost, Vec::new(), Vec::new())
        .expect("a finite square matrix always has a perfect matching");
    Ok(ranked(&best, 1))
}

/// The `s` cheapest assignments in non-decreasing cost order (fewer when
/// `s` exceeds `k!`).
pub fn solve_s_best_assignments(
    cost: &AssignmentCostMatrix,
    s: usize,
) -> Result<Vec<RankedAssignment>, ExplainError> {
    let mut out = Vec::with_capacity(s.min(1024));
    if s == 0 {
        return Ok(out);
    }
    let mut pool = BinaryHeap::new();
    pool.extend(Subproblem::solve(cost, Vec::new(), Vec::new()));

    while let Some(best) = pool.pop() {
        out.push(ranked(&best, out.len() as u64 + 1));
        if out.len() == s {
            break;
        }
        let free_rows: Vec<usize> = (0..cost.size())
            .filter(|r| !best.forced.iter().any(|(fr, _)| fr == r))
            .collect();
        // the last free row has a single column left, so its child is empty
        let mut forced = best.forced.clone();
        for &row in free_rows.iter().take(free_rows.len().saturating_sub(1)) {
            let mut forbidden = best.forbidden.clone();
            forbidden.push((row, best.solution[row]));
            pool.extend(Subproblem::solve(cost, forced.clone(), forbidden));
            forced.push((row, best.solution[row]));
        }
    }
    Ok(out)
}

/// The `s` orderings of the context that best align relevance with the
/// attention profile.
pub fn optimal_permutations(
    ctx: &ContextSequence,
    relevance: &RelevanceVector,
    profile: &AttentionProfile,
    s: usize,
) -> Result<Vec<RankedAssignment>, ExplainError> {
    if profile.len() != ctx.k() {
        return Err(ExplainError::ProfileMismatch {
            expected: ctx.k(),
            got: profile.len(),
        });
    }
    let scores = relevance.in_context_order(ctx)?;
    let matrix = AssignmentCostMatrix::from_relevance(&scores, &profile.weights)?;
    solve_s_best_assignments(&matrix, s)
}
