//! Requests and result payloads shared by the CLI and the HTTP service.

use ctxplain_core::assignment::{optimal_permutations, v_shaped_profile, AttentionProfile};
use ctxplain_core::combination::{
    combination_insights, find_combination_counterfactual, CombinationSearchConfig, Direction,
    DEFAULT_COMBINATION_LIMIT, DEFAULT_MAX_PERTURBATIONS,
};
use ctxplain_core::oracle::{attention_salience, evaluate};
use ctxplain_core::permutation::{
    find_permutation_counterfactual, permutation_insights, PermutationSearchConfig, DEFAULT_PERMUTATION_LIMIT,
};
use ctxplain_core::retrieval::relative_relevance;
use ctxplain_core::{
    AnswerRecord, ContextSequence, CounterfactualKind, ExplainError, Oracle, OracleError, Permutation,
    Perturbation, PerturbationInsight, Query, RelevanceMethod, RelevanceVector, SearchOutcome,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const DEFAULT_OPTIMAL_S: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub combination_k: usize,
    pub permutation_k: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            combination_k: DEFAULT_COMBINATION_LIMIT,
            permutation_k: DEFAULT_PERMUTATION_LIMIT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsightFamily {
    Combination,
    Permutation,
    OptimalPermutation,
}

fn default_budget() -> u64 {
    DEFAULT_MAX_PERTURBATIONS
}

fn default_s() -> usize {
    DEFAULT_OPTIMAL_S
}

fn default_true() -> bool {
    true
}

fn default_scoring() -> RelevanceMethod {
    RelevanceMethod::RetrievalScore
}

/// Body of `POST /sessions/{id}/insights`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsightRequest {
    pub family: InsightFamily,
    /// Omitted for exhaustive evaluation.
    #[serde(default)]
    pub sample_size: Option<u64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_budget")]
    pub max_perturbations: u64,
    #[serde(default = "default_scoring")]
    pub scoring: RelevanceMethod,
    /// Number of ranked orders (optimal permutations only).
    #[serde(default = "default_s")]
    pub s: usize,
    /// Position weights; the V-shaped preset when omitted.
    #[serde(default)]
    pub profile: Option<Vec<f64>>,
    /// Ask the oracle about each optimal order.
    #[serde(default = "default_true")]
    pub evaluate: bool,
}

impl InsightRequest {
    pub fn new(family: InsightFamily) -> Self {
        InsightRequest {
            family,
            sample_size: None,
            seed: 0,
            max_perturbations: DEFAULT_MAX_PERTURBATIONS,
            scoring: RelevanceMethod::RetrievalScore,
            s: DEFAULT_OPTIMAL_S,
            profile: None,
            evaluate: true,
        }
    }
}

/// Body of `POST /sessions/{id}/counterfactuals`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualRequest {
    pub kind: CounterfactualKind,
    #[serde(default)]
    pub target_answer: Option<String>,
    #[serde(default = "default_budget")]
    pub max_perturbations: u64,
    #[serde(default = "default_scoring")]
    pub scoring: RelevanceMethod,
    #[serde(default)]
    pub seed: u64,
}

impl CounterfactualRequest {
    pub fn new(kind: CounterfactualKind) -> Self {
        CounterfactualRequest {
            kind,
            target_answer: None,
            max_perturbations: DEFAULT_MAX_PERTURBATIONS,
            scoring: RelevanceMethod::RetrievalScore,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "analysis", rename_all = "snake_case")]
pub enum AnalysisRequest {
    Insight(InsightRequest),
    Counterfactual(CounterfactualRequest),
}

/// One optimal order, optionally with the oracle's answer for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedAssignment {
    pub rank: u64,
    pub permutation: Permutation,
    pub doc_ids: Vec<String>,
    pub score: f64,
    pub answer: Option<AnswerRecord>,
}

/// Everything a finished analysis reports. The CLI prints exactly this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ResultPayload {
    Insight {
        family: InsightFamily,
        query: Query,
        doc_ids: Vec<String>,
        insight: PerturbationInsight,
    },
    OptimalPermutations {
        query: Query,
        doc_ids: Vec<String>,
        relevance: RelevanceVector,
        profile: Vec<f64>,
        ranked: Vec<EvaluatedAssignment>,
    },
    Counterfactual {
        query: Query,
        doc_ids: Vec<String>,
        kind: CounterfactualKind,
        outcome: SearchOutcome,
    },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error("evaluating {required} perturbations exceeds the budget of {budget}")]
    BudgetExhausted { required: u64, budget: u64 },
}

impl From<OracleError> for AnalysisError {
    fn from(e: OracleError) -> Self {
        AnalysisError::Explain(e.into())
    }
}

/// How a failure should be reported by front ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureClass {
    Oracle,
    Limit,
    Input,
}

impl AnalysisError {
    pub fn code(&self) -> &'static str {
        match self {
            AnalysisError::Explain(e) => e.code(),
            AnalysisError::BudgetExhausted { .. } => "BudgetExhausted",
        }
    }

    pub fn class(&self) -> FailureClass {
        match self.code() {
            "OracleUnavailable" | "OracleMalformedResponse" | "UnsupportedCapability" => FailureClass::Oracle,
            "KTooLarge" | "ContextTooLarge" | "BudgetExhausted" => FailureClass::Limit,
            _ => FailureClass::Input,
        }
    }

    pub fn details(&self) -> Value {
        match self {
            AnalysisError::BudgetExhausted { required, budget } => {
                serde_json::json!({"required": required, "budget": budget})
            }
            AnalysisError::Explain(ExplainError::KTooLarge { k, limit })
            | AnalysisError::Explain(ExplainError::ContextTooLarge { k, limit }) => {
                serde_json::json!({"k": k, "limit": limit})
            }
            AnalysisError::Explain(ExplainError::Oracle(OracleError::ContextTooLarge { len, max })) => {
                serde_json::json!({"len": len, "max": max})
            }
            _ => Value::Null,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            code: self.code().into(),
            message: self.to_string(),
            details: self.details(),
        }
    }
}

/// The `{code, message, details}` error shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub details: Value,
}

fn factorial_capped(k: usize, cap: u64) -> u64 {
    let mut f = 1u64;
    for i in 2..=k as u64 {
        f = f.saturating_mul(i);
        if f > cap {
            return f;
        }
    }
    f
}

fn subsets(k: usize) -> u64 {
    if k >= 64 {
        u64::MAX
    } else {
        1u64 << k
    }
}

/// Upper bound on oracle evaluations the analysis will perform, excluding
/// the baseline of a counterfactual search.
pub fn planned_evaluations(k: usize, request: &AnalysisRequest) -> u64 {
    match request {
        AnalysisRequest::Insight(r) => match r.family {
            InsightFamily::Combination => r.sample_size.unwrap_or(subsets(k)).min(subsets(k)),
            InsightFamily::Permutation => {
                let all = factorial_capped(k, u64::MAX / 2);
                r.sample_size.map_or(all, |s| s.min(all))
            }
            InsightFamily::OptimalPermutation => {
                if r.evaluate {
                    (r.s as u64).min(factorial_capped(k, r.s as u64))
                } else {
                    0
                }
            }
        },
        AnalysisRequest::Counterfactual(r) => {
            let candidates = match r.kind {
                CounterfactualKind::Reordering => factorial_capped(k, r.max_perturbations) - 1,
                _ => subsets(k) - 1,
            };
            candidates.min(r.max_perturbations)
        }
    }
}

/// Total oracle evaluations reported as job progress.
pub fn progress_total(k: usize, request: &AnalysisRequest) -> u64 {
    match request {
        AnalysisRequest::Counterfactual(_) => planned_evaluations(k, request) + 1,
        AnalysisRequest::Insight(_) => planned_evaluations(k, request),
    }
}

fn check_limits(k: usize, request: &AnalysisRequest, limits: &Limits) -> Result<(), AnalysisError> {
    let exhaustive = |limit: usize, permutations: bool| -> Result<(), AnalysisError> {
        if k > limit {
            return Err(if permutations {
                ExplainError::KTooLarge { k, limit }
            } else {
                ExplainError::ContextTooLarge { k, limit }
            }
            .into());
        }
        Ok(())
    };
    match request {
        AnalysisRequest::Insight(r) => {
            match (r.family, r.sample_size) {
                (InsightFamily::Combination, None) => exhaustive(limits.combination_k, false)?,
                (InsightFamily::Permutation, None) => exhaustive(limits.permutation_k, true)?,
                _ => {}
            }
            let required = planned_evaluations(k, request);
            if required > r.max_perturbations {
                return Err(AnalysisError::BudgetExhausted {
                    required,
                    budget: r.max_perturbations,
                });
            }
            Ok(())
        }
        AnalysisRequest::Counterfactual(r) => match r.kind {
            CounterfactualKind::Reordering => exhaustive(limits.permutation_k, true),
            _ => exhaustive(limits.combination_k, false),
        },
    }
}

fn relevance(ctx: &ContextSequence, oracle: &dyn Oracle, method: RelevanceMethod) -> Result<RelevanceVector, ExplainError> {
    match method {
        RelevanceMethod::RetrievalScore => relative_relevance(ctx),
        RelevanceMethod::AttentionSalience => attention_salience(oracle, ctx),
    }
}

/// Runs one analysis against `ctx`.
pub fn run_analysis(
    ctx: &ContextSequence,
    oracle: &dyn Oracle,
    request: &AnalysisRequest,
    limits: &Limits,
) -> Result<ResultPayload, AnalysisError> {
    let k = ctx.k();
    check_limits(k, request, limits)?;
    let query = ctx.query().clone();
    let doc_ids: Vec<String> = ctx.doc_ids().map(String::from).collect();

    match request {
        AnalysisRequest::Insight(r) => match r.family {
            InsightFamily::Combination => {
                let config = CombinationSearchConfig {
                    sample_size: r.sample_size,
                    seed: r.seed,
                    scoring: r.scoring,
                    max_perturbations: r.max_perturbations,
                    k_limit: limits.combination_k,
                    ..Default::default()
                };
                Ok(ResultPayload::Insight {
                    family: r.family,
                    query,
                    doc_ids,
                    insight: combination_insights(ctx, oracle, &config)?,
                })
            }
            InsightFamily::Permutation => {
                let config = PermutationSearchConfig {
                    max_perturbations: r.max_perturbations,
                    sample_size: r.sample_size,
                    seed: r.seed,
                    k_limit: limits.permutation_k,
                };
                Ok(ResultPayload::Insight {
                    family: r.family,
                    query,
                    doc_ids,
                    insight: permutation_insights(ctx, oracle, &config)?,
                })
            }
            InsightFamily::OptimalPermutation => {
                let relevance = relevance(ctx, oracle, r.scoring)?;
                let profile = match &r.profile {
                    Some(weights) => AttentionProfile::new(weights.clone())?,
                    None => v_shaped_profile(k),
                };
                let mut ranked = Vec::new();
                for assignment in optimal_permutations(ctx, &relevance, &profile, r.s)? {
                    let selected = ctx.arranged(&assignment.permutation).map_err(ExplainError::from)?;
                    let answer = if r.evaluate {
                        Some(evaluate(
                            oracle,
                            ctx.query(),
                            &selected,
                            Perturbation::Permutation(assignment.permutation.clone()),
                        )?)
                    } else {
                        None
                    };
                    ranked.push(EvaluatedAssignment {
                        rank: assignment.rank,
                        doc_ids: selected.iter().map(|s| s.doc_id.clone()).collect(),
                        permutation: assignment.permutation,
                        score: assignment.score,
                        answer,
                    });
                }
                Ok(ResultPayload::OptimalPermutations {
                    query,
                    doc_ids,
                    relevance,
                    profile: profile.weights,
                    ranked,
                })
            }
        },
        AnalysisRequest::Counterfactual(r) => {
            let outcome = match r.kind {
                CounterfactualKind::Reordering => {
                    let config = PermutationSearchConfig {
                        max_perturbations: r.max_perturbations,
                        sample_size: None,
                        seed: r.seed,
                        k_limit: limits.permutation_k,
                    };
                    find_permutation_counterfactual(ctx, oracle, &config)?
                }
                kind => {
                    let config = CombinationSearchConfig {
                        direction: if kind == CounterfactualKind::TopDownRemoval {
                            Direction::TopDown
                        } else {
                            Direction::BottomUp
                        },
                        target_answer: r.target_answer.clone(),
                        max_perturbations: r.max_perturbations,
                        scoring: r.scoring,
                        sample_size: None,
                        seed: r.seed,
                        k_limit: limits.combination_k,
                    };
                    find_combination_counterfactual(ctx, oracle, &config)?
                }
            };
            Ok(ResultPayload::Counterfactual {
                query,
                doc_ids,
                kind: r.kind,
                outcome,
            })
        }
    }
}

/// Stable identifier for (context, oracle, request): identical inputs map to
/// the same result.
pub fn result_id(ctx: &ContextSequence, oracle_namespace: &str, request: &AnalysisRequest) -> String {
    let bytes = serde_json::to_vec(&(ctx, oracle_namespace, request)).expect("inputs serialize");
    let digest = Sha256::digest(&bytes);
    let hex: String = digest[..10].iter().map(|b| format!("{b:02x}")).collect();
    format!("r-{hex}")
}
