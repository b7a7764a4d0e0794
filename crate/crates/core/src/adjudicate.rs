//! End-to-end adjudication pipeline.
//!
//! Candidate statutes are searched in the knowledge base, the case facts
//! are refined against them, compiled to ground problems, and decided
//! clause by clause. Admissible specific-provision clauses then go through
//! specificity-priority selection (more specific guards dominate more
//! general ones); general-provision articles are adjudicated by the same
//! guard machinery but attach as liability modifiers with consequence
//! labels rather than competing penalty brackets. The final judgment
//! carries the chosen clauses, the penalty interval, a deterministic point
//! sentence, a structured explanation of every checked condition, and the
//! unsat cores of every rejected candidate.
//!
//! When prosecutor and defense facts conflict, the cores say so; the
//! repair loop re-invokes the wired argument extractor (at most
//! `max_repairs` times) and re-runs the pipeline, mirroring the
//! fact-re-grounding loop of the surrounding system. Constraints are never
//! silently deleted.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::{CaseRecord, FactAtom, Span};
use crate::compile::{encode, refine_facts, GroundProblem, ResolvedGuard, Tri};
use crate::kb::{
    search_constraints, ClauseId, GuardExpr, PenaltySpec, StatuteKB, UpperBound,
};
use crate::solver::{
    check_sat, implies, syntactic_subsumes, CoreKind, Implication, SatStatus, UnsatCore,
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Point-sentence selection policy over the admissible interval union.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum PointPolicy {
    /// Lowest admissible month count.
    Min,
    /// Floor of the midpoint of the lowest admissible interval.
    #[default]
    Mid,
}

/// Hook invoked by the repair loop to re-ground facts after a
/// conflicting-facts core.
pub trait RepairExtractor: Send + Sync {
    /// Returns a revised fact list, or `None` when no repair is possible.
    fn repair(&self, case: &CaseRecord, cores: &[UnsatCore]) -> Option<Vec<FactAtom>>;
}

#[derive(Clone, Default)]
pub struct AdjudicateConfig {
    pub point_policy: PointPolicy,
    /// Maximum number of fact re-grounding rounds on conflict cores.
    pub max_repairs: u32,
    /// Atom cap for priority implication checks.
    pub priority_atom_cap: usize,
    /// Re-grounding hook; required whenever repairs may trigger.
    pub repair_extractor: Option<Arc<dyn RepairExtractor>>,
}

impl AdjudicateConfig {
    pub fn new() -> Self {
        AdjudicateConfig {
            point_policy: PointPolicy::Mid,
            max_repairs: 3,
            priority_atom_cap: 16,
            repair_extractor: None,
        }
    }
}

impl std::fmt::Debug for AdjudicateConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdjudicateConfig")
            .field("point_policy", &self.point_policy)
            .field("max_repairs", &self.max_repairs)
            .field("priority_atom_cap", &self.priority_atom_cap)
            .field("repair_extractor", &self.repair_extractor.is_some())
            .finish()
    }
}

#[derive(Debug, Error)]
pub enum AdjudicateError {
    #[error("knowledge base has not been validated")]
    KbNotValidated,
    #[error("conflicting facts require repair but no extractor is wired")]
    ExtractorUnavailable,
    #[error("point sentence requested over an empty interval union")]
    EmptyUnion,
}

// ---------------------------------------------------------------------------
// Judgment
// ---------------------------------------------------------------------------

/// One condition checked on the satisfied path of a chosen guard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckedCondition {
    pub description: String,
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<Span>,
}

/// Explanation entry for one activated clause.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplanationEntry {
    pub clause_id: ClauseId,
    pub consequence_label: String,
    pub checked: Vec<CheckedCondition>,
}

/// An unsat core attached to the clause it rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedClause {
    pub clause_id: ClauseId,
    pub core: UnsatCore,
}

/// Solver-verified judgment for one case (and suspect, when applicable).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub case_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suspect_id: Option<String>,
    pub specific_articles: BTreeSet<u32>,
    pub general_articles: BTreeSet<u32>,
    pub chosen_clauses: BTreeSet<ClauseId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty_interval: Option<PenaltySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point_sentence_months: Option<i64>,
    pub consequence: String,
    pub valid: bool,
    pub explanation: Vec<ExplanationEntry>,
    pub diagnostics: Vec<RejectedClause>,
    pub repairs_used: u32,
}

// ---------------------------------------------------------------------------
// Priority selection
// ---------------------------------------------------------------------------

/// Strict specificity dominance: `a` dominates `b` iff `a`'s guard implies
/// `b`'s and not conversely. Beyond the atom cap the check falls back to
/// syntactic subsumption.
fn dominates(
    a: &GuardExpr,
    b: &GuardExpr,
    kb: &StatuteKB,
    atom_cap: usize,
) -> bool {
    match (
        implies(a, b, &kb.exclusivity, atom_cap),
        implies(b, a, &kb.exclusivity, atom_cap),
    ) {
        (Implication::Implies, Implication::NotImplies) => true,
        (Implication::Undecided, _) | (_, Implication::Undecided) => {
            syntactic_subsumes(a, b) && !syntactic_subsumes(b, a)
        }
        _ => false,
    }
}

/// Keeps the non-dominated elements of the admissible set; mutually
/// non-dominating clauses are all retained.
pub fn select_by_priority(
    admissible: &[(ClauseId, GuardExpr, PenaltySpec)],
    kb: &StatuteKB,
    atom_cap: usize,
) -> BTreeSet<ClauseId> {
    admissible
        .iter()
        .filter(|(id, guard, _)| {
            !admissible
                .iter()
                .any(|(other_id, other_guard, _)| {
                    other_id != id && dominates(other_guard, guard, kb, atom_cap)
                })
        })
        .map(|(id, _, _)| *id)
        .collect()
}

/// Picks a point sentence from a nonempty union of admissible intervals.
/// `Min` takes the lowest admissible month; `Mid` the floor midpoint of
/// the lowest interval (its minimum when the interval is unbounded).
pub fn choose_point_sentence(
    intervals: &[PenaltySpec],
    policy: PointPolicy,
) -> Result<i64, AdjudicateError> {
    if intervals.is_empty() {
        return Err(AdjudicateError::EmptyUnion);
    }
    let lowest = intervals
        .iter()
        .min_by_key(|spec| (spec.min_months(), spec.max_months().unwrap_or(i64::MAX)))
        .expect("nonempty");
    Ok(match policy {
        PointPolicy::Min => intervals.iter().map(|s| s.min_months()).min().unwrap(),
        PointPolicy::Mid => match lowest.max_months() {
            Some(max) => (lowest.min_months() + max).div_euclid(2),
            None => lowest.min_months(),
        },
    })
}

// ---------------------------------------------------------------------------
// Explanation extraction
// ---------------------------------------------------------------------------

fn collect_satisfied_path(node: &ResolvedGuard, out: &mut Vec<CheckedCondition>) {
    let relax = BTreeSet::new();
    match node {
        ResolvedGuard::Const(_) => {}
        ResolvedGuard::Causes(value) => out.push(CheckedCondition {
            description: "causes".to_string(),
            value: format!("{value:?}"),
            source: None,
            span: None,
        }),
        ResolvedGuard::Atom(atom) => out.push(CheckedCondition {
            description: format!(
                "{} {}",
                atom.predicate,
                match &atom.test {
                    crate::kb::AtomTest::Bool(b) => format!("== {b}"),
                    crate::kb::AtomTest::Token(t) => format!("== {t}"),
                    crate::kb::AtomTest::Cmp(op, n) => format!("{} {n}", op.symbol()),
                }
            ),
            value: format!("{:?}", atom.value),
            source: atom.source.clone(),
            span: atom.span,
        }),
        ResolvedGuard::Exists(unit) => {
            if let Some((binding, inner)) = &unit.witness {
                let mut inner_conditions = Vec::new();
                collect_satisfied_path(inner, &mut inner_conditions);
                out.push(CheckedCondition {
                    description: format!("{} [witness {binding}]", unit.description),
                    value: format!("{:?}", unit.value),
                    source: None,
                    span: None,
                });
                out.extend(inner_conditions);
            } else {
                out.push(CheckedCondition {
                    description: unit.description.clone(),
                    value: format!("{:?}", unit.value),
                    source: None,
                    span: None,
                });
            }
        }
        ResolvedGuard::Not(inner) => collect_satisfied_path(inner, out),
        ResolvedGuard::And(items) => {
            for item in items {
                collect_satisfied_path(item, out);
            }
        }
        ResolvedGuard::Or(items) => {
            // only the first satisfied branch is on the explanation path
            if let Some(hit) = items.iter().find(|i| i.eval(&relax) == Tri::True) {
                collect_satisfied_path(hit, out);
            }
        }
    }
}

fn explanation_for(problem: &GroundProblem) -> ExplanationEntry {
    let mut checked = Vec::new();
    collect_satisfied_path(&problem.article_guard, &mut checked);
    collect_satisfied_path(&problem.guard_formula, &mut checked);
    ExplanationEntry {
        clause_id: problem.clause_id,
        consequence_label: problem.consequence_label.clone(),
        checked,
    }
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

fn interval_hull(intervals: &[PenaltySpec]) -> Option<PenaltySpec> {
    let lower = intervals.iter().map(|s| s.min_months()).min()?;
    let mut upper = Some(0i64);
    for spec in intervals {
        upper = match (upper, spec.max_months()) {
            (Some(u), Some(m)) => Some(u.max(m)),
            _ => None,
        };
    }
    Some(PenaltySpec {
        lower_months: lower.max(0) as u32,
        upper: match upper {
            Some(u) => UpperBound::Months(u.max(0) as u32),
            None => UpperBound::Life,
        },
        lower_strict: false,
        upper_strict: false,
    })
}

/// Runs the full pipeline for one case against the candidate statutes.
///
/// With an empty candidate set the whole knowledge base is tried
/// (exhaustive mode, useful for oracle runs and tests).
pub fn adjudicate(
    case: &CaseRecord,
    kb: &StatuteKB,
    candidates: &BTreeSet<u32>,
    config: &AdjudicateConfig,
) -> Result<Judgment, AdjudicateError> {
    adjudicate_suspect(case, None, kb, candidates, config)
}

/// Like [`adjudicate`], restricted to the facts of one suspect of a
/// multi-suspect case.
pub fn adjudicate_suspect(
    case: &CaseRecord,
    suspect_id: Option<&str>,
    kb: &StatuteKB,
    candidates: &BTreeSet<u32>,
    config: &AdjudicateConfig,
) -> Result<Judgment, AdjudicateError> {
    if !kb.validated {
        return Err(AdjudicateError::KbNotValidated);
    }
    let candidates: BTreeSet<u32> = if candidates.is_empty() {
        kb.articles.keys().copied().collect()
    } else {
        candidates.clone()
    };

    let mut facts: Vec<FactAtom> = match suspect_id {
        Some(id) => case.facts_for_suspect(id),
        None => case.facts.clone(),
    };

    let search = search_constraints(&candidates, kb).map_err(|_| AdjudicateError::KbNotValidated)?;

    let mut repairs_used = 0;
    let (problems, results) = loop {
        let slice = refine_facts(&facts, &search.constraints, &kb.exclusivity);
        let problems = encode(&slice, &search.constraints, &kb.exclusivity);
        let results: Vec<_> = problems
            .iter()
            .map(|p| check_sat(p, &kb.exclusivity))
            .collect();

        let conflict_cores: Vec<UnsatCore> = results
            .iter()
            .filter_map(|r| r.core.clone())
            .filter(|c| c.kind == CoreKind::ConflictingFacts)
            .collect();

        if conflict_cores.is_empty() || repairs_used >= config.max_repairs {
            break (problems, results);
        }
        match &config.repair_extractor {
            Some(extractor) => match extractor.repair(case, &conflict_cores) {
                Some(revised) => {
                    facts = revised;
                    repairs_used += 1;
                }
                None => break (problems, results),
            },
            None => return Err(AdjudicateError::ExtractorUnavailable),
        }
    };

    let mut admissible_specific: Vec<(ClauseId, GuardExpr, PenaltySpec)> = Vec::new();
    let mut general_articles = BTreeSet::new();
    let mut diagnostics = Vec::new();
    let mut sat_problem_index: Vec<usize> = Vec::new();

    for (idx, (problem, result)) in problems.iter().zip(&results).enumerate() {
        match result.status {
            SatStatus::Sat => {
                sat_problem_index.push(idx);
                let article_no = problem.clause_id.0;
                if crate::case::is_general_article(article_no) {
                    general_articles.insert(article_no);
                } else {
                    let admissible_guard = GuardExpr::And(vec![
                        problem.article_guard_src.clone(),
                        problem.guard_src.clone(),
                    ]);
                    admissible_specific.push((
                        problem.clause_id,
                        admissible_guard,
                        result.satisfied_interval.expect("sat result carries interval"),
                    ));
                }
            }
            SatStatus::Unsat => diagnostics.push(RejectedClause {
                clause_id: problem.clause_id,
                core: result.core.clone().expect("unsat result carries core"),
            }),
        }
    }

    let chosen = select_by_priority(&admissible_specific, kb, config.priority_atom_cap);
    let chosen_intervals: Vec<PenaltySpec> = admissible_specific
        .iter()
        .filter(|(id, _, _)| chosen.contains(id))
        .map(|(_, _, interval)| *interval)
        .collect();

    let specific_articles: BTreeSet<u32> = chosen.iter().map(|id| id.0).collect();
    let penalty_interval = interval_hull(&chosen_intervals);
    let point_sentence_months = if chosen_intervals.is_empty() {
        None
    } else {
        Some(choose_point_sentence(&chosen_intervals, config.point_policy)?)
    };

    // Explanations for every activated clause: the chosen specific clauses
    // first, then the general-provision modifiers.
    let mut explanation = Vec::new();
    for &idx in &sat_problem_index {
        let problem = &problems[idx];
        let is_chosen = chosen.contains(&problem.clause_id);
        let is_general = crate::case::is_general_article(problem.clause_id.0);
        if is_chosen || is_general {
            explanation.push(explanation_for(problem));
        }
    }
    explanation.sort_by_key(|e| e.clause_id);

    let consequence = if chosen.is_empty() {
        "No applicable clause".to_string()
    } else {
        let labels: Vec<String> = explanation
            .iter()
            .filter(|e| chosen.contains(&e.clause_id))
            .map(|e| e.consequence_label.clone())
            .collect();
        labels.join("; ")
    };

    let valid = match (&penalty_interval, point_sentence_months) {
        (Some(_), Some(point)) => chosen_intervals.iter().any(|i| i.contains(point)),
        _ => false,
    };

    Ok(Judgment {
        case_id: case.case_id.clone(),
        suspect_id: suspect_id.map(|s| s.to_string()),
        specific_articles,
        general_articles,
        chosen_clauses: chosen,
        penalty_interval,
        point_sentence_months,
        consequence,
        valid,
        explanation,
        diagnostics,
        repairs_used,
    })
}
