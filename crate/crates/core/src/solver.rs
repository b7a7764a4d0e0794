//! Ground decision procedure over compiled constraint problems.
//!
//! After encoding, a problem is a Boolean guard structure plus interval
//! bounds on one integer sentence variable, so satisfiability is decidable
//! by direct evaluation: a clause is admissible iff its article guard and
//! clause guard resolve true (exceptions are negated atoms inside the
//! guards), the referenced facts are mutually consistent, and the adjusted
//! penalty interval is nonempty. The canonical witness is the interval
//! minimum, which keeps outputs deterministic.
//!
//! Unsat cores are minimized by deletion: constraints are dropped one at a
//! time and a drop is kept whenever unsatisfiability survives, looping to a
//! fixpoint so that removing any member of the final core restores
//! satisfiability. Constraint items are guard requirements (case-level
//! atoms and whole quantified subtrees), fact/default assignments, penalty
//! bounds, and triggered adjustments; exclusivity axioms are ambient and
//! never enter a core.
//!
//! [`implies`] decides guard implication by exhaustive enumeration over the
//! propositional abstraction (see [`crate::prop`]) up to a configurable
//! atom cap; beyond the cap callers fall back to syntactic subsumption.
//!
//! A pluggable [`SolverBackend`] lets an external SMT process be wired in
//! via a line-oriented subprocess protocol; the builtin backend is the
//! default and the external one is never used unless explicitly
//! constructed.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compile::{resolve_guard, GroundProblem, ResolveCtx, ResolvedGuard, Tri};
use crate::kb::{AtomTest, ExclusiveGroup, GuardExpr, PenaltySpec};
use crate::prop::PropSpace;

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SatStatus {
    Sat,
    Unsat,
}

/// Why a constraint set is unsatisfiable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoreKind {
    ConflictingFacts,
    MissingElement,
    IncompatibleGuards,
    EmptyPenaltyInterval,
}

/// Minimal set of constraint/fact source ids that are jointly
/// unsatisfiable: removing any member makes the remainder satisfiable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnsatCore {
    pub members: BTreeSet<String>,
    pub kind: CoreKind,
}

/// Outcome of one clause-level satisfiability check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SatStatus,
    /// Canonical sentence witness: the minimum of the adjusted interval.
    pub model: Option<i64>,
    pub satisfied_interval: Option<PenaltySpec>,
    pub core: Option<UnsatCore>,
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("unsat core requested for a satisfiable problem")]
    NotUnsat,
}

// ---------------------------------------------------------------------------
// Constraint items and evaluation under drops
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
enum ItemKind {
    GuardOcc,
    Fact,
    Bound,
    Adjustment,
}

fn item_universe(problem: &GroundProblem) -> Vec<(String, ItemKind)> {
    let mut items = Vec::new();
    for occ in problem.article_guard.occurrences() {
        items.push((occ.to_string(), ItemKind::GuardOcc));
    }
    for occ in problem.guard_formula.occurrences() {
        items.push((occ.to_string(), ItemKind::GuardOcc));
    }
    for assignments in problem.slice.values.values() {
        for a in assignments {
            items.push((a.source.clone(), ItemKind::Fact));
        }
    }
    for bound in &problem.penalty_constraints {
        items.push((bound.id.clone(), ItemKind::Bound));
    }
    for adj in &problem.adjustment_constraints {
        if adj.trigger_value == Tri::True {
            items.push((adj.id.clone(), ItemKind::Adjustment));
        }
    }
    items
}

/// Evaluates a problem with the given items dropped. Guard occurrences in
/// `dropped` are relaxed to true literals, fact sources are removed before
/// re-resolution, bounds and adjustments are excluded from the interval.
fn eval_with_drops(
    problem: &GroundProblem,
    exclusivity: &[ExclusiveGroup],
    dropped: &BTreeSet<String>,
) -> bool {
    // Fact consistency over the clause's referenced predicates.
    for assignments in problem.slice.values.values() {
        let live: Vec<_> = assignments
            .iter()
            .filter(|a| !dropped.contains(&a.source))
            .cloned()
            .collect();
        if live.len() > 1 {
            let predicate = live[0]
                .source
                .rsplit(':')
                .next()
                .unwrap_or_default()
                .to_string();
            if crate::compile::assignments_incompatible(&predicate, &live, exclusivity) {
                return false;
            }
        }
    }

    let ctx = ResolveCtx {
        slice: &problem.slice,
        inventory: &problem.inventory,
        exclusivity,
        removed_sources: dropped,
    };
    let article = resolve_guard(&problem.article_guard_src, "ag", &ctx);
    if article.eval(dropped) != Tri::True {
        return false;
    }
    let guard = resolve_guard(&problem.guard_src, "g", &ctx);
    if guard.eval(dropped) != Tri::True {
        return false;
    }

    // Interval feasibility. Each triggered aggravator asserts the
    // statutory floor plus its own delta; the cumulative sum bound holds
    // whenever the base bound is active.
    let base_min = problem.base_penalty.min_months();
    let base_max = problem.base_penalty.max_months();
    let lower_active = !dropped.contains(&format!("{}:penalty-lower", problem.clause_id));
    let upper_active = !dropped.contains(&format!("{}:penalty-upper", problem.clause_id));

    let mut triggered_agg: Vec<i64> = Vec::new();
    let mut triggered_mit: Vec<i64> = Vec::new();
    for adj in &problem.adjustment_constraints {
        if dropped.contains(&adj.id) {
            continue;
        }
        // Re-evaluate the trigger under the removal mask.
        let def = problem.adjustments.iter().find(|d| d.id == adj.id);
        let triggered = match def {
            Some(def) => {
                let tree = resolve_guard(&def.trigger, &format!("t:{}", def.id), &ctx);
                tree.eval(dropped) == Tri::True
            }
            None => false,
        };
        if triggered {
            match adj.direction {
                crate::kb::AdjustDirection::RaiseLower => {
                    triggered_agg.push(adj.delta_months as i64)
                }
                crate::kb::AdjustDirection::LowerUpper => {
                    triggered_mit.push(adj.delta_months as i64)
                }
            }
        }
    }

    let mut eff_lower: i64 = 0;
    if lower_active {
        eff_lower = eff_lower.max(base_min + triggered_agg.iter().sum::<i64>());
    } else {
        eff_lower = eff_lower.max(triggered_agg.iter().sum::<i64>());
    }
    for delta in &triggered_agg {
        eff_lower = eff_lower.max(base_min + delta);
    }

    let mut eff_upper: Option<i64> = None;
    if upper_active {
        if let Some(max) = base_max {
            eff_upper = Some(max - triggered_mit.iter().sum::<i64>());
        }
    }
    if let Some(max) = base_max {
        for delta in &triggered_mit {
            let bound = max - delta;
            eff_upper = Some(eff_upper.map_or(bound, |u| u.min(bound)));
        }
    }

    match eff_upper {
        Some(upper) => eff_lower <= upper && upper >= 0,
        None => true,
    }
}

// ---------------------------------------------------------------------------
// check_sat / unsat_core
// ---------------------------------------------------------------------------

/// Decides one ground problem: admissible iff article guard and clause
/// guard hold, referenced facts are consistent, and the adjusted interval
/// is nonempty. On Unsat the minimal core is attached.
pub fn check_sat(problem: &GroundProblem, exclusivity: &[ExclusiveGroup]) -> SolveResult {
    let none = BTreeSet::new();
    if eval_with_drops(problem, exclusivity, &none) {
        let interval = problem
            .adjusted_interval
            .as_ref()
            .expect("satisfiable problem must carry an adjusted interval")
            .to_owned();
        SolveResult {
            status: SatStatus::Sat,
            model: Some(interval.min_months()),
            satisfied_interval: Some(interval),
            core: None,
        }
    } else {
        let core = minimize_core(problem, exclusivity);
        SolveResult {
            status: SatStatus::Unsat,
            model: None,
            satisfied_interval: None,
            core: Some(core),
        }
    }
}

/// Extracts the minimal unsat core of an unsatisfiable problem.
pub fn unsat_core(
    problem: &GroundProblem,
    exclusivity: &[ExclusiveGroup],
) -> Result<UnsatCore, SolveError> {
    let none = BTreeSet::new();
    if eval_with_drops(problem, exclusivity, &none) {
        return Err(SolveError::NotUnsat);
    }
    Ok(minimize_core(problem, exclusivity))
}

fn minimize_core(problem: &GroundProblem, exclusivity: &[ExclusiveGroup]) -> UnsatCore {
    let universe = item_universe(problem);
    let mut dropped: BTreeSet<String> = BTreeSet::new();

    // Deletion-based minimization to a fixpoint: afterwards, dropping any
    // surviving item restores satisfiability.
    loop {
        let mut changed = false;
        for (id, _) in &universe {
            if dropped.contains(id) {
                continue;
            }
            dropped.insert(id.clone());
            if eval_with_drops(problem, exclusivity, &dropped) {
                dropped.remove(id);
            } else {
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let members: Vec<(String, ItemKind)> = universe
        .into_iter()
        .filter(|(id, _)| !dropped.contains(id))
        .collect();
    let kind = classify_core(problem, exclusivity, &members);
    UnsatCore {
        members: members.into_iter().map(|(id, _)| id).collect(),
        kind,
    }
}

fn classify_core(
    problem: &GroundProblem,
    exclusivity: &[ExclusiveGroup],
    members: &[(String, ItemKind)],
) -> CoreKind {
    // Conflicting facts: two or more core fact sources assigning
    // incompatible values to the same predicate.
    let fact_ids: BTreeSet<&str> = members
        .iter()
        .filter(|(_, k)| *k == ItemKind::Fact)
        .map(|(id, _)| id.as_str())
        .collect();
    if fact_ids.len() >= 2 {
        for (predicate, assignments) in &problem.slice.values {
            let in_core: Vec<_> = assignments
                .iter()
                .filter(|a| fact_ids.contains(a.source.as_str()))
                .cloned()
                .collect();
            if in_core.len() >= 2
                && crate::compile::assignments_incompatible(predicate, &in_core, exclusivity)
            {
                return CoreKind::ConflictingFacts;
            }
        }
    }

    if members
        .iter()
        .any(|(_, k)| matches!(k, ItemKind::Bound | ItemKind::Adjustment))
    {
        return CoreKind::EmptyPenaltyInterval;
    }

    // An exception fires when a negated guard requirement is established
    // true by the facts.
    for (id, kind) in members {
        if *kind != ItemKind::GuardOcc {
            continue;
        }
        let occ = problem
            .article_guard
            .find(id)
            .or_else(|| problem.guard_formula.find(id));
        if let Some(node) = occ {
            let (negated, value) = match node {
                ResolvedGuard::Atom(a) => (a.negated, a.value),
                ResolvedGuard::Exists(e) => (e.negated, e.value),
                _ => continue,
            };
            if negated && value == Tri::True {
                return CoreKind::IncompatibleGuards;
            }
        }
    }

    CoreKind::MissingElement
}

// ---------------------------------------------------------------------------
// Guard implication
// ---------------------------------------------------------------------------

/// Outcome of an implication check between two guards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Implication {
    Implies,
    NotImplies,
    Undecided,
}

/// Decides whether `g1` implies `g2` by enumerating all assignments to the
/// union of their atoms (respecting exclusivity axioms). Returns
/// `Undecided` when the union exceeds `atom_cap` atoms.
pub fn implies(
    g1: &GuardExpr,
    g2: &GuardExpr,
    exclusivity: &[ExclusiveGroup],
    atom_cap: usize,
) -> Implication {
    let space = PropSpace::build(&[g1, g2], exclusivity);
    if space.atom_key_count() > atom_cap || space.assignment_count(1 << 22).is_none() {
        return Implication::Undecided;
    }
    let mut counterexample = false;
    space.for_each_assignment(|assignment| {
        if space.eval(g1, assignment) && !space.eval(g2, assignment) {
            counterexample = true;
            return false;
        }
        true
    });
    if counterexample {
        Implication::NotImplies
    } else {
        Implication::Implies
    }
}

/// Syntactic fallback for guards beyond the atom cap: `g1` subsumes `g2`
/// when every atom of `g2` (with polarity) also occurs in `g1`.
pub fn syntactic_subsumes(g1: &GuardExpr, g2: &GuardExpr) -> bool {
    fn literals(expr: &GuardExpr, negated: bool, out: &mut BTreeSet<(bool, String, AtomTest)>) {
        match expr {
            GuardExpr::Atom { predicate, test } => {
                out.insert((negated, predicate.clone(), test.clone()));
            }
            GuardExpr::Not(inner) => literals(inner, !negated, out),
            GuardExpr::And(items) | GuardExpr::Or(items) => {
                for item in items {
                    literals(item, negated, out);
                }
            }
            GuardExpr::ExistsAct(inner) | GuardExpr::ExistsResult(inner) => {
                literals(inner, negated, out)
            }
            GuardExpr::Const(_) | GuardExpr::CausesLink => {}
        }
    }
    let mut of1 = BTreeSet::new();
    let mut of2 = BTreeSet::new();
    literals(g1, false, &mut of1);
    literals(g2, false, &mut of2);
    of2.is_subset(&of1)
}

// ---------------------------------------------------------------------------
// Pluggable backend
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("failed to launch external solver: {0}")]
    Spawn(std::io::Error),
    #[error("external solver i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("external solver protocol violation: {0}")]
    Protocol(String),
}

/// A decision-procedure backend: submit one constraint problem, receive
/// sat-with-model or unsat-with-core.
pub trait SolverBackend: Send + Sync {
    fn submit(
        &self,
        problem: &GroundProblem,
        exclusivity: &[ExclusiveGroup],
    ) -> Result<SolveResult, BackendError>;
}

/// The built-in ground evaluator; always available.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinSolver;

impl SolverBackend for BuiltinSolver {
    fn submit(
        &self,
        problem: &GroundProblem,
        exclusivity: &[ExclusiveGroup],
    ) -> Result<SolveResult, BackendError> {
        Ok(check_sat(problem, exclusivity))
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    problem: &'a GroundProblem,
    exclusivity: &'a [ExclusiveGroup],
}

#[derive(Deserialize)]
struct WireResponse {
    status: String,
    #[serde(default)]
    model: Option<i64>,
    #[serde(default)]
    interval: Option<PenaltySpec>,
    #[serde(default)]
    core: Option<UnsatCore>,
}

/// Adapter for an external solver process speaking a line-oriented JSON
/// protocol: one request object per line on stdin
/// (`{"problem": ..., "exclusivity": ...}`), one response object per line
/// on stdout (`{"status":"sat","model":N,"interval":{...}}` or
/// `{"status":"unsat","core":{"members":[...],"kind":"..."}}`). The
/// process is spawned per submission and is disabled unless explicitly
/// constructed.
pub struct ExternalProcessSolver {
    pub command: String,
    pub args: Vec<String>,
}

impl ExternalProcessSolver {
    pub fn new(command: &str, args: &[&str]) -> Self {
        ExternalProcessSolver {
            command: command.to_string(),
            args: args.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl SolverBackend for ExternalProcessSolver {
    fn submit(
        &self,
        problem: &GroundProblem,
        exclusivity: &[ExclusiveGroup],
    ) -> Result<SolveResult, BackendError> {
        let mut child = Command::new(&self.command)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(BackendError::Spawn)?;

        let request = serde_json::to_string(&WireRequest {
            problem,
            exclusivity,
        })
        .map_err(|e| BackendError::Protocol(e.to_string()))?;
        {
            let stdin = child.stdin.as_mut().expect("child stdin is piped");
            stdin.write_all(request.as_bytes())?;
            stdin.write_all(b"\n")?;
        }
        drop(child.stdin.take());

        let stdout = child.stdout.take().expect("child stdout is piped");
        let mut line = String::new();
        BufReader::new(stdout).read_line(&mut line)?;
        let _ = child.wait();

        let response: WireResponse = serde_json::from_str(line.trim())
            .map_err(|e| BackendError::Protocol(format!("{e}: {line:?}")))?;
        match response.status.as_str() {
            "sat" => {
                let model = response
                    .model
                    .ok_or_else(|| BackendError::Protocol("sat response without model".into()))?;
                Ok(SolveResult {
                    status: SatStatus::Sat,
                    model: Some(model),
                    satisfied_interval: response.interval,
                    core: None,
                })
            }
            "unsat" => {
                let core = response
                    .core
                    .ok_or_else(|| BackendError::Protocol("unsat response without core".into()))?;
                Ok(SolveResult {
                    status: SatStatus::Unsat,
                    model: None,
                    satisfied_interval: None,
                    core: Some(core),
                })
            }
            other => Err(BackendError::Protocol(format!("unknown status {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::{ElementKind, FactAtom, FactValue};
    use crate::compile::{encode, refine_facts};
    use crate::kb::{parse_kb, Clause, StatuteArticle, StatuteKB};

    fn kb_with_adjustment(delta: u32) -> StatuteKB {
        parse_kb(&format!(
            r#"
            exclusive mental_state {{ Intentional, Negligent, Knowing, Unknown }}
            article 12 {{
              guard: true
              clause 1 "bracket" {{
                guard: convicted
                penalty [36, 120]
                aggravate "repeat" when true delta {delta}
                mitigate "surrender" when surrendered delta 24
              }}
            }}
            "#
        ))
        .unwrap()
    }

    fn problems(kb: &StatuteKB, article_no: u32, facts: &[FactAtom]) -> Vec<GroundProblem> {
        let article = &kb.articles[&article_no];
        let constraints: Vec<(&StatuteArticle, &Clause)> =
            article.clauses.iter().map(|c| (article, c)).collect();
        let slice = refine_facts(facts, &constraints, &kb.exclusivity);
        encode(&slice, &constraints, &kb.exclusivity)
    }

    #[test]
    fn sat_witness_is_interval_minimum() {
        let kb = kb_with_adjustment(12);
        let facts = vec![FactAtom::new(
            ElementKind::Qualifier,
            "s1",
            "convicted",
            FactValue::Bool(true),
        )];
        let result = check_sat(&problems(&kb, 12, &facts)[0], &kb.exclusivity);
        assert_eq!(result.status, SatStatus::Sat);
        // base lower 36 raised by the unconditionally triggered delta 12
        assert_eq!(result.model, Some(48));
        assert_eq!(result.satisfied_interval.unwrap(), PenaltySpec::closed(48, 120));
    }

    #[test]
    fn empty_adjusted_interval_core_names_aggravator_and_upper() {
        let kb = kb_with_adjustment(90);
        let facts = vec![FactAtom::new(
            ElementKind::Qualifier,
            "s1",
            "convicted",
            FactValue::Bool(true),
        )];
        let problem = &problems(&kb, 12, &facts)[0];
        let result = check_sat(problem, &kb.exclusivity);
        assert_eq!(result.status, SatStatus::Unsat);
        let core = result.core.unwrap();
        assert_eq!(core.kind, CoreKind::EmptyPenaltyInterval);
        assert_eq!(
            core.members,
            ["12.1/repeat".to_string(), "12.1:penalty-upper".to_string()]
                .into_iter()
                .collect()
        );
    }

    #[test]
    fn conflicting_facts_core_is_the_fact_pair() {
        let kb = parse_kb(
            r#"
            exclusive mental_state { Intentional, Negligent, Knowing, Unknown }
            article 5 {
              guard: true
              clause 1 { guard: mental_state == Intentional penalty [0, 36] }
            }
            "#,
        )
        .unwrap();
        let facts = vec![
            FactAtom::new(
                ElementKind::MentalState,
                "s1",
                "mental_state",
                FactValue::token("Intentional"),
            ),
            FactAtom::new(
                ElementKind::MentalState,
                "s1",
                "mental_state",
                FactValue::token("Negligent"),
            ),
        ];
        let problem = &problems(&kb, 5, &facts)[0];
        let core = unsat_core(problem, &kb.exclusivity).unwrap();
        assert_eq!(core.kind, CoreKind::ConflictingFacts);
        assert_eq!(
            core.members,
            ["fact#0:mental_state".to_string(), "fact#1:mental_state".to_string()]
                .into_iter()
                .collect()
        );
    }

    #[test]
    fn missing_element_core_names_the_blocking_atom() {
        let kb = parse_kb(
            r#"
            article 347 {
              guard: true
              clause 1 { guard: drug_quantity_g >= 50 penalty [180, 240] }
            }
            "#,
        )
        .unwrap();
        let facts = vec![FactAtom::new(
            ElementKind::Amount,
            "s1",
            "drug_quantity_g",
            FactValue::Int(2),
        )];
        let problem = &problems(&kb, 347, &facts)[0];
        let result = check_sat(problem, &kb.exclusivity);
        assert_eq!(result.status, SatStatus::Unsat);
        let core = result.core.unwrap();
        assert_eq!(core.kind, CoreKind::MissingElement);
        assert_eq!(core.members.len(), 1);
        assert!(core.members.iter().next().unwrap().contains("drug_quantity_g"));
    }

    #[test]
    fn triggered_exception_classifies_incompatible_guards() {
        let kb = parse_kb(
            r#"
            article 8 {
              guard: true
              clause 1 { guard: convicted and not self_defense penalty [0, 36] }
            }
            "#,
        )
        .unwrap();
        let facts = vec![
            FactAtom::new(ElementKind::Qualifier, "s1", "convicted", FactValue::Bool(true)),
            FactAtom::new(ElementKind::Exception, "s1", "self_defense", FactValue::Bool(true)),
        ];
        let problem = &problems(&kb, 8, &facts)[0];
        let core = unsat_core(problem, &kb.exclusivity).unwrap();
        assert_eq!(core.kind, CoreKind::IncompatibleGuards);
    }

    #[test]
    fn unsat_core_on_sat_problem_is_error() {
        let kb = kb_with_adjustment(12);
        let facts = vec![FactAtom::new(
            ElementKind::Qualifier,
            "s1",
            "convicted",
            FactValue::Bool(true),
        )];
        let problem = &problems(&kb, 12, &facts)[0];
        assert!(matches!(
            unsat_core(problem, &kb.exclusivity),
            Err(SolveError::NotUnsat)
        ));
    }

    #[test]
    fn implies_handles_conjunction_weakening() {
        let a = GuardExpr::atom("a", AtomTest::Bool(true));
        let b = GuardExpr::atom("b", AtomTest::Bool(true));
        let ab = GuardExpr::And(vec![a.clone(), b.clone()]);
        assert_eq!(implies(&ab, &a, &[], 16), Implication::Implies);
        assert_eq!(implies(&a, &ab, &[], 16), Implication::NotImplies);
    }

    #[test]
    fn implies_is_reflexive() {
        let g = GuardExpr::Or(vec![
            GuardExpr::atom("x", AtomTest::Token("A".to_string())),
            GuardExpr::Not(Box::new(GuardExpr::atom("y", AtomTest::Bool(true)))),
        ]);
        assert_eq!(implies(&g, &g, &[], 16), Implication::Implies);
    }

    #[test]
    fn implies_beyond_cap_is_undecided() {
        let wide = GuardExpr::And(
            (0..20)
                .map(|i| GuardExpr::atom(&format!("p{i}"), AtomTest::Bool(true)))
                .collect(),
        );
        let single = GuardExpr::atom("p0", AtomTest::Bool(true));
        assert_eq!(implies(&wide, &single, &[], 16), Implication::Undecided);
        assert!(syntactic_subsumes(&wide, &single));
        assert!(!syntactic_subsumes(&single, &wide));
    }

    #[test]
    fn admissible_formula_implies_its_article_guard() {
        let kb = parse_kb(
            r#"
            exclusive severity { Minor, Serious, EspeciallySerious }
            exclusive mental_state { Intentional, Negligent, Knowing, Unknown }
            article 234 {
              guard: actor_type == person
                 and exists act (action == assault)
                 and exists result (result_type == injury)
              clause 2 "serious" {
                guard: (mental_state == Intentional
                        and exists act (exists result (causes and severity == Serious)))
                    or especially_serious_circumstance
                penalty (36, 120]
              }
            }
            "#,
        )
        .unwrap();
        let article = &kb.articles[&234];
        let clause = &article.clauses[0];
        let admissible = GuardExpr::And(vec![
            article.article_guard.clone(),
            clause.guard.clone(),
        ]);
        assert_eq!(
            implies(&admissible, &article.article_guard, &kb.exclusivity, 16),
            Implication::Implies
        );
        // The clause guard alone does not: the circumstance disjunct can
        // hold without the article scope.
        assert_eq!(
            implies(&clause.guard, &article.article_guard, &kb.exclusivity, 16),
            Implication::NotImplies
        );
    }

    #[test]
    fn external_backend_round_trips_a_canned_response() {
        let kb = kb_with_adjustment(12);
        let facts = vec![FactAtom::new(
            ElementKind::Qualifier,
            "s1",
            "convicted",
            FactValue::Bool(true),
        )];
        let problem = &problems(&kb, 12, &facts)[0];

        let solver = ExternalProcessSolver::new(
            "sh",
            &["-c", r#"read line; echo '{"status":"sat","model":48}'"#],
        );
        let result = solver.submit(problem, &kb.exclusivity).unwrap();
        assert_eq!(result.status, SatStatus::Sat);
        assert_eq!(result.model, Some(48));

        let bad = ExternalProcessSolver::new("sh", &["-c", "echo not-json"]);
        assert!(matches!(
            bad.submit(problem, &kb.exclusivity),
            Err(BackendError::Protocol(_))
        ));
    }
}
