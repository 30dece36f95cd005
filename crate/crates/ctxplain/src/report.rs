//! Plain-text tables for terminal output.

use comfy_table::presets::UTF8_BORDERS_ONLY;
use comfy_table::{Cell, CellAlignment, Table};
use ctxplain_core::{AnswerRule, ContextSequence, Perturbation, PerturbationInsight, RuleKind, SearchOutcome};

use crate::analysis::ResultPayload;
use crate::service::Baselines;

const MAX_LISTED: usize = 8;

fn table(header: &[&str]) -> Table {
    let mut t = Table::new();
    t.load_preset(UTF8_BORDERS_ONLY).set_header(header.to_vec());
    t
}

pub fn describe_perturbation(p: &Perturbation, doc_ids: &[String]) -> String {
    match p {
        Perturbation::Combination(c) => format!("{{{}}}", c.member_ids.join(", ")),
        Perturbation::Permutation(p) => {
            let ids: Vec<&str> = p.order().iter().map(|&i| doc_ids.get(i).map_or("?", String::as_str)).collect();
            format!("[{}]", ids.join(", "))
        }
    }
}

pub fn describe_rule(rule: Option<&AnswerRule>) -> String {
    match rule {
        Some(r) if !r.is_empty() => match r.kind {
            RuleKind::RequiredSources => format!("requires {{{}}}", r.required_ids.join(", ")),
            RuleKind::FixedPositions => {
                let fixed: Vec<String> = r.fixed_positions.iter().map(|(pos, id)| format!("{pos}: {id}")).collect();
                format!("fixes {}", fixed.join(", "))
            }
        },
        _ => "no rule found".into(),
    }
}

fn insight_tables(insight: &PerturbationInsight, doc_ids: &[String]) -> String {
    let mut summary = table(&["answer", "count", "share", "rule"]);
    let mut members = table(&["answer", "perturbations"]);
    for (answer, group) in &insight.groups {
        summary.add_row(vec![
            Cell::new(answer),
            Cell::new(group.len()).set_alignment(CellAlignment::Right),
            Cell::new(format!("{:.1}%", insight.proportions[answer] * 100.0)).set_alignment(CellAlignment::Right),
            Cell::new(describe_rule(insight.rule_for(answer))),
        ]);
        let mut listed: Vec<String> = group.iter().take(MAX_LISTED).map(|p| describe_perturbation(p, doc_ids)).collect();
        if group.len() > MAX_LISTED {
            listed.push(format!("... {} more", group.len() - MAX_LISTED));
        }
        members.add_row(vec![answer.clone(), listed.join("\n")]);
    }
    format!("{summary}\ntotal evaluated: {}\n\n{members}\n", insight.total_evaluated)
}

fn outcome_table(outcome: &SearchOutcome, doc_ids: &[String]) -> String {
    let mut t = table(&["field", "value"]);
    match outcome {
        SearchOutcome::Found { counterfactual: c } => {
            t.add_row(vec!["outcome".to_string(), "found".into()]);
            t.add_row(vec!["kind".to_string(), format!("{:?}", c.kind)]);
            let label = match c.kind {
                ctxplain_core::CounterfactualKind::TopDownRemoval => "removed",
                ctxplain_core::CounterfactualKind::BottomUpRetention => "retained",
                ctxplain_core::CounterfactualKind::Reordering => "new order",
            };
            t.add_row(vec![label.to_string(), describe_perturbation(&c.perturbation, doc_ids)]);
            t.add_row(vec!["original answer".to_string(), c.original_answer.normalized.clone()]);
            t.add_row(vec!["new answer".to_string(), c.new_answer.normalized.clone()]);
            if let Some(tau) = c.similarity {
                t.add_row(vec!["kendall tau".to_string(), format!("{tau:.4}")]);
            }
            t.add_row(vec!["perturbations tested".to_string(), c.perturbations_tested.to_string()]);
        }
        SearchOutcome::NotFound { perturbations_tested } => {
            t.add_row(vec!["outcome".to_string(), "no counterfactual exists".into()]);
            t.add_row(vec!["perturbations tested".to_string(), perturbations_tested.to_string()]);
        }
        SearchOutcome::BudgetExhausted { perturbations_tested } => {
            t.add_row(vec!["outcome".to_string(), "search budget exhausted".into()]);
            t.add_row(vec!["perturbations tested".to_string(), perturbations_tested.to_string()]);
        }
    }
    format!("{t}\n")
}

pub fn render_payload(payload: &ResultPayload) -> String {
    match payload {
        ResultPayload::Insight {
            query,
            doc_ids,
            insight,
            family,
        } => format!("{family:?} insights for: {}\n{}", query.text, insight_tables(insight, doc_ids)),
        ResultPayload::Counterfactual { query, doc_ids, outcome, .. } => {
            format!("Counterfactual for: {}\n{}", query.text, outcome_table(outcome, doc_ids))
        }
        ResultPayload::OptimalPermutations {
            query, ranked, profile, ..
        } => {
            let mut t = table(&["rank", "order", "score", "answer"]);
            for r in ranked {
                t.add_row(vec![
                    Cell::new(r.rank),
                    Cell::new(format!("[{}]", r.doc_ids.join(", "))),
                    Cell::new(format!("{:.6}", r.score)).set_alignment(CellAlignment::Right),
                    Cell::new(r.answer.as_ref().map_or("-", |a| a.normalized.as_str())),
                ]);
            }
            let weights: Vec<String> = profile.iter().map(|w| format!("{w:.3}")).collect();
            format!(
                "Optimal orders for: {}\nposition weights: [{}]\n{t}\n",
                query.text,
                weights.join(", ")
            )
        }
    }
}

pub fn render_context(context: &ContextSequence, baselines: Option<&Baselines>) -> String {
    let mut t = table(&["#", "doc_id", "score", "text"]);
    for (i, s) in context.sources().iter().enumerate() {
        let text: String = if s.text.chars().count() > 60 {
            s.text.chars().take(57).chain("...".chars()).collect()
        } else {
            s.text.clone()
        };
        t.add_row(vec![
            Cell::new(i),
            Cell::new(&s.doc_id),
            Cell::new(format!("{:.4}", s.retrieval_score)).set_alignment(CellAlignment::Right),
            Cell::new(text),
        ]);
    }
    let mut out = format!("Question: {}\n{t}\n", context.query().text);
    if let Some(b) = baselines {
        out.push_str(&format!("answer (all sources): {}\n", b.full.raw));
        out.push_str(&format!("answer (no sources):  {}\n", b.empty.raw));
    }
    out
}
