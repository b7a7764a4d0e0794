//! Compilation of a case against candidate statutory constraints.
//!
//! The stage is pure and in-memory: [`refine_facts`] matches typed facts to
//! the legal elements each candidate clause requires (folding in article
//! defaults and reporting conflicting facts), [`adjust_interval`] applies
//! aggravating/mitigating deltas to a base penalty interval, and [`encode`]
//! produces one [`GroundProblem`] per clause with every guard atom resolved
//! to a three-valued verdict and every bound tagged with its source id.
//!
//! Three-valued semantics: an element that no fact or default establishes
//! resolves to `Unknown`; a guard is satisfied only when it evaluates to
//! `True`, so unproven elements block applicability.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::case::{FactAtom, FactValue, Span};
use crate::kb::{
    AdjustDirection, AdjustmentDelta, AtomTest, Clause, ClauseId, ExclusiveGroup, GuardExpr,
    PenaltySpec, StatuteArticle, UpperBound,
};

// ---------------------------------------------------------------------------
// Three-valued logic
// ---------------------------------------------------------------------------

/// Kleene three-valued truth value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tri {
    True,
    False,
    Unknown,
}

impl Tri {
    pub fn from_bool(b: bool) -> Tri {
        if b {
            Tri::True
        } else {
            Tri::False
        }
    }

    pub fn not(self) -> Tri {
        match self {
            Tri::True => Tri::False,
            Tri::False => Tri::True,
            Tri::Unknown => Tri::Unknown,
        }
    }

    pub fn and(self, other: Tri) -> Tri {
        match (self, other) {
            (Tri::False, _) | (_, Tri::False) => Tri::False,
            (Tri::True, Tri::True) => Tri::True,
            _ => Tri::Unknown,
        }
    }

    pub fn or(self, other: Tri) -> Tri {
        match (self, other) {
            (Tri::True, _) | (_, Tri::True) => Tri::True,
            (Tri::False, Tri::False) => Tri::False,
            _ => Tri::Unknown,
        }
    }
}

// ---------------------------------------------------------------------------
// Fact table and refined slices
// ---------------------------------------------------------------------------

/// One value assignment contributed by a fact or a default.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub value: FactValue,
    /// Stable source id, e.g. `fact#3:severity` or `default:347:age`.
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<Span>,
}

/// Structured view of a case's facts, split by scope.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactTable {
    /// Suspect/case-level predicate assignments.
    pub case_level: BTreeMap<String, Vec<Assignment>>,
    /// Per-act fields, keyed by declared act id.
    pub acts: BTreeMap<String, BTreeMap<String, Vec<Assignment>>>,
    /// Per-result fields, keyed by declared result id.
    pub results: BTreeMap<String, BTreeMap<String, Vec<Assignment>>>,
    /// Causation links `(act_id, result_id)`.
    pub causes: BTreeSet<(String, String)>,
}

impl FactTable {
    /// Builds the table from raw fact atoms. Atoms whose subject is a
    /// declared act or result id become scoped fields; everything else is
    /// case-level.
    pub fn build(facts: &[FactAtom]) -> FactTable {
        use crate::case::ElementKind;
        let act_ids: BTreeSet<&str> = facts
            .iter()
            .filter(|f| f.element_kind == ElementKind::Act)
            .map(|f| f.subject_id.as_str())
            .collect();
        let result_ids: BTreeSet<&str> = facts
            .iter()
            .filter(|f| f.element_kind == ElementKind::Result)
            .map(|f| f.subject_id.as_str())
            .collect();

        let mut table = FactTable::default();
        for (idx, fact) in facts.iter().enumerate() {
            if fact.element_kind == ElementKind::Causes {
                if let FactValue::Link(act, result) = &fact.value {
                    table.causes.insert((act.clone(), result.clone()));
                }
                continue;
            }
            let assignment = Assignment {
                value: fact.value.clone(),
                source: format!("fact#{idx}:{}", fact.predicate_name),
                span: fact.span,
            };
            let bucket = if act_ids.contains(fact.subject_id.as_str()) {
                table.acts.entry(fact.subject_id.clone()).or_default()
            } else if result_ids.contains(fact.subject_id.as_str()) {
                table.results.entry(fact.subject_id.clone()).or_default()
            } else {
                table
                    .case_level
                    .entry(fact.predicate_name.clone())
                    .or_default();
                table
                    .case_level
                    .get_mut(&fact.predicate_name)
                    .unwrap()
                    .push(assignment);
                continue;
            };
            bucket
                .entry(fact.predicate_name.clone())
                .or_default()
                .push(assignment);
        }
        table
    }
}

/// Where a slice value came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    FromFact {
        source: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        span: Option<Span>,
    },
    FromDefault,
    Missing,
}

/// Two facts assigning incompatible values to the same predicate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactConflict {
    pub predicate: String,
    /// `(rendered value, source id)` for each clashing assignment.
    pub values: Vec<(String, String)>,
}

/// The case-level element assignment one clause sees.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClauseSlice {
    pub values: BTreeMap<String, Vec<Assignment>>,
    pub provenance: BTreeMap<String, Provenance>,
}

/// Output of [`refine_facts`]: per-clause element slices plus the shared
/// act/result inventory and any conflicting facts (reported, not resolved;
/// the solver surfaces them as unsat cores).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinedFactSlice {
    pub per_clause: BTreeMap<ClauseId, ClauseSlice>,
    pub inventory: Arc<FactTable>,
    pub conflicts: Vec<FactConflict>,
}

/// Whether two distinct values for one predicate are incompatible: token
/// predicates clash only under an exclusivity axiom; boolean and integer
/// predicates are single-valued by nature.
pub fn assignments_incompatible(
    predicate: &str,
    values: &[Assignment],
    exclusivity: &[ExclusiveGroup],
) -> bool {
    let distinct: BTreeSet<&FactValue> = values.iter().map(|a| &a.value).collect();
    if distinct.len() <= 1 {
        return false;
    }
    let exclusive = exclusivity.iter().any(|g| g.predicate == predicate);
    let any_token = distinct
        .iter()
        .any(|v| matches!(v, FactValue::Token(_)));
    if any_token {
        exclusive
    } else {
        // bool / int predicates are functions of the subject
        true
    }
}

/// Predicates referenced by the article guard, clause guard, and adjustment
/// triggers of a clause, restricted to case-level (unquantified) atoms.
fn clause_case_level_predicates(article: &StatuteArticle, clause: &Clause) -> BTreeSet<String> {
    let mut needed = article.article_guard.case_level_predicates();
    needed.extend(clause.guard.case_level_predicates());
    for adj in &clause.adjustments {
        needed.extend(adj.trigger.case_level_predicates());
    }
    // Quantified subtrees may fall back to case-level resolution for
    // predicates absent from the bound act/result, so include those too.
    needed.extend(article.article_guard.predicates());
    needed.extend(clause.guard.predicates());
    for adj in &clause.adjustments {
        needed.extend(adj.trigger.predicates());
    }
    needed
}

/// Matches facts to the legal elements required by each candidate clause.
///
/// Every predicate appearing in any guard of the constraint list is
/// assigned `FromFact` when a matching atom exists, else `FromDefault` when
/// the article declares one, else `Missing`. Facts whose predicate appears
/// in no guard are excluded from the slice.
pub fn refine_facts(
    facts: &[FactAtom],
    constraints: &[(&StatuteArticle, &Clause)],
    exclusivity: &[ExclusiveGroup],
) -> RefinedFactSlice {
    let table = Arc::new(FactTable::build(facts));
    let mut per_clause = BTreeMap::new();
    let mut conflicts: BTreeMap<String, FactConflict> = BTreeMap::new();

    for (article, clause) in constraints {
        let needed = clause_case_level_predicates(article, clause);
        let mut slice = ClauseSlice::default();
        for predicate in needed {
            if let Some(assignments) = table.case_level.get(&predicate) {
                if assignments_incompatible(&predicate, assignments, exclusivity) {
                    conflicts.entry(predicate.clone()).or_insert_with(|| FactConflict {
                        predicate: predicate.clone(),
                        values: assignments
                            .iter()
                            .map(|a| (a.value.display(), a.source.clone()))
                            .collect(),
                    });
                }
                let first = &assignments[0];
                slice.provenance.insert(
                    predicate.clone(),
                    Provenance::FromFact {
                        source: first.source.clone(),
                        span: first.span,
                    },
                );
                slice.values.insert(predicate.clone(), assignments.clone());
            } else if let Some(default) = article.field_defaults.get(&predicate) {
                slice.values.insert(
                    predicate.clone(),
                    vec![Assignment {
                        value: default.clone(),
                        source: format!("default:{}:{}", article.article_no, predicate),
                        span: None,
                    }],
                );
                slice
                    .provenance
                    .insert(predicate.clone(), Provenance::FromDefault);
            } else {
                slice.provenance.insert(predicate.clone(), Provenance::Missing);
            }
        }
        per_clause.insert(clause.clause_id, slice);
    }

    RefinedFactSlice {
        per_clause,
        inventory: table,
        conflicts: conflicts.into_values().collect(),
    }
}

// ---------------------------------------------------------------------------
// Interval adjustment
// ---------------------------------------------------------------------------

/// The adjusted interval admits no sentence; carries the offending bound
/// sources so the solver can report them as a core.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmptyInterval {
    pub lower_value: i64,
    pub upper_value: i64,
    pub lower_sources: Vec<String>,
    pub upper_sources: Vec<String>,
}

/// Applies triggered deltas to a base interval: aggravators raise the
/// effective lower bound, mitigators lower the effective upper bound, and
/// the sums are additive. Returns `EmptyInterval` when the adjusted bounds
/// cross (the statutory interpretation must be rejected).
///
/// Reserved `Life`/`Death` uppers sit above any finite month count and are
/// unaffected by mitigating deltas.
pub fn adjust_interval(
    base: &PenaltySpec,
    triggered_aggravators: &[&AdjustmentDelta],
    triggered_mitigators: &[&AdjustmentDelta],
) -> Result<PenaltySpec, EmptyInterval> {
    debug_assert!(triggered_aggravators
        .iter()
        .all(|a| a.direction == AdjustDirection::RaiseLower));
    debug_assert!(triggered_mitigators
        .iter()
        .all(|m| m.direction == AdjustDirection::LowerUpper));

    let raise: i64 = triggered_aggravators.iter().map(|a| a.delta_months as i64).sum();
    let cut: i64 = triggered_mitigators.iter().map(|m| m.delta_months as i64).sum();

    let lower = base.lower_months as i64 + raise;
    let upper = match base.upper {
        UpperBound::Months(u) => Some(u as i64 - cut),
        UpperBound::Life | UpperBound::Death => None,
    };

    let adjusted = PenaltySpec {
        lower_months: lower.max(0) as u32,
        upper: match upper {
            Some(u) if u >= 0 => UpperBound::Months(u as u32),
            Some(_) => UpperBound::Months(0),
            None => base.upper,
        },
        lower_strict: base.lower_strict,
        upper_strict: base.upper_strict,
    };

    let crossed = match upper {
        Some(u) => u < 0 || lower > u || adjusted.is_empty(),
        None => false,
    };
    if crossed {
        let mut lower_sources = vec!["penalty-lower".to_string()];
        lower_sources.extend(triggered_aggravators.iter().map(|a| a.id.clone()));
        let mut upper_sources = vec!["penalty-upper".to_string()];
        upper_sources.extend(triggered_mitigators.iter().map(|m| m.id.clone()));
        return Err(EmptyInterval {
            lower_value: lower,
            upper_value: upper.unwrap_or(i64::MAX),
            lower_sources,
            upper_sources,
        });
    }
    Ok(adjusted)
}

// ---------------------------------------------------------------------------
// Guard resolution
// ---------------------------------------------------------------------------

/// A case-level guard atom resolved against the slice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedAtom {
    /// Stable occurrence id within the problem, e.g. `g2:severity`.
    pub occ_id: String,
    pub predicate: String,
    pub test: AtomTest,
    pub value: Tri,
    /// Negation parity of the occurrence (odd number of enclosing `not`s).
    pub negated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<Span>,
    /// Sources of conflicting assignments when the predicate is conflicted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conflict_sources: Vec<String>,
}

/// A fully evaluated quantified subtree, treated as one relaxable unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedExists {
    pub occ_id: String,
    /// Human-readable description of the quantified requirement.
    pub description: String,
    pub value: Tri,
    pub negated: bool,
    /// Binding id and resolved inner tree of the first satisfying witness.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<(String, Box<ResolvedGuard>)>,
}

/// Guard expression with every atom resolved to a three-valued verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResolvedGuard {
    Const(bool),
    Atom(ResolvedAtom),
    Exists(ResolvedExists),
    /// `causes` link verdict for the bindings in scope.
    Causes(Tri),
    Not(Box<ResolvedGuard>),
    And(Vec<ResolvedGuard>),
    Or(Vec<ResolvedGuard>),
}

impl ResolvedGuard {
    /// Kleene evaluation, honoring the relaxation set: a relaxed occurrence
    /// contributes a true literal regardless of its resolved value.
    pub fn eval(&self, relaxed: &BTreeSet<String>) -> Tri {
        match self {
            ResolvedGuard::Const(b) => Tri::from_bool(*b),
            ResolvedGuard::Causes(v) => *v,
            ResolvedGuard::Atom(atom) => {
                if relaxed.contains(&atom.occ_id) {
                    if atom.negated {
                        Tri::False
                    } else {
                        Tri::True
                    }
                } else {
                    atom.value
                }
            }
            ResolvedGuard::Exists(unit) => {
                if relaxed.contains(&unit.occ_id) {
                    if unit.negated {
                        Tri::False
                    } else {
                        Tri::True
                    }
                } else {
                    unit.value
                }
            }
            ResolvedGuard::Not(inner) => inner.eval(relaxed).not(),
            ResolvedGuard::And(items) => items
                .iter()
                .fold(Tri::True, |acc, item| acc.and(item.eval(relaxed))),
            ResolvedGuard::Or(items) => items
                .iter()
                .fold(Tri::False, |acc, item| acc.or(item.eval(relaxed))),
        }
    }

    /// Collects every relaxable occurrence (case-level atoms and exists
    /// units) in pre-order.
    pub fn occurrences(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_occurrences(&mut out);
        out
    }

    fn collect_occurrences<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            ResolvedGuard::Atom(a) => out.push(a.occ_id.as_str()),
            ResolvedGuard::Exists(e) => out.push(e.occ_id.as_str()),
            ResolvedGuard::Not(inner) => inner.collect_occurrences(out),
            ResolvedGuard::And(items) | ResolvedGuard::Or(items) => {
                for item in items {
                    item.collect_occurrences(out);
                }
            }
            ResolvedGuard::Const(_) | ResolvedGuard::Causes(_) => {}
        }
    }

    /// Looks up an occurrence by id.
    pub fn find(&self, occ_id: &str) -> Option<&ResolvedGuard> {
        match self {
            ResolvedGuard::Atom(a) if a.occ_id == occ_id => Some(self),
            ResolvedGuard::Exists(e) if e.occ_id == occ_id => Some(self),
            ResolvedGuard::Not(inner) => inner.find(occ_id),
            ResolvedGuard::And(items) | ResolvedGuard::Or(items) => {
                items.iter().find_map(|i| i.find(occ_id))
            }
            _ => None,
        }
    }
}

/// Resolution context: the clause slice, the shared inventory, and the set
/// of fact/default sources to ignore (used by core minimization).
pub struct ResolveCtx<'a> {
    pub slice: &'a ClauseSlice,
    pub inventory: &'a FactTable,
    pub exclusivity: &'a [ExclusiveGroup],
    pub removed_sources: &'a BTreeSet<String>,
}

struct Resolver<'a> {
    ctx: &'a ResolveCtx<'a>,
    prefix: &'a str,
    counter: usize,
}

#[derive(Clone, Copy)]
struct Binding<'a> {
    act: Option<(&'a str, &'a BTreeMap<String, Vec<Assignment>>)>,
    result: Option<(&'a str, &'a BTreeMap<String, Vec<Assignment>>)>,
}

impl<'a> Resolver<'a> {
    fn next_id(&mut self, predicate: &str) -> String {
        let id = format!("{}#{}:{}", self.prefix, self.counter, predicate);
        self.counter += 1;
        id
    }

    fn live<'v>(&self, assignments: &'v [Assignment]) -> Vec<&'v Assignment> {
        assignments
            .iter()
            .filter(|a| !self.ctx.removed_sources.contains(&a.source))
            .collect()
    }

    /// Resolves one atom against the innermost scope that knows the
    /// predicate: result fields, then act fields, then the case slice.
    fn resolve_atom(
        &mut self,
        predicate: &str,
        test: &AtomTest,
        negated: bool,
        binding: Binding<'_>,
    ) -> ResolvedAtom {
        let occ_id = self.next_id(predicate);
        let scoped = binding
            .result
            .and_then(|(_, fields)| fields.get(predicate))
            .or_else(|| binding.act.and_then(|(_, fields)| fields.get(predicate)));

        let (assignments, from_case) = match scoped {
            Some(list) => (Some(list.as_slice()), false),
            None => (
                self.ctx.slice.values.get(predicate).map(|v| v.as_slice()),
                true,
            ),
        };

        let live = assignments.map(|a| self.live(a)).unwrap_or_default();
        if live.is_empty() {
            return ResolvedAtom {
                occ_id,
                predicate: predicate.to_string(),
                test: test.clone(),
                value: Tri::Unknown,
                negated,
                source: None,
                span: None,
                conflict_sources: Vec::new(),
            };
        }

        // Conflicting case-level assignments leave the element unprovable.
        if from_case {
            let owned: Vec<Assignment> = live.iter().map(|a| (*a).clone()).collect();
            if assignments_incompatible(predicate, &owned, self.ctx.exclusivity) {
                return ResolvedAtom {
                    occ_id,
                    predicate: predicate.to_string(),
                    test: test.clone(),
                    value: Tri::Unknown,
                    negated,
                    source: None,
                    span: None,
                    conflict_sources: live.iter().map(|a| a.source.clone()).collect(),
                };
            }
        }

        let hit = live.iter().find(|a| test.accepts(&a.value));
        match hit {
            Some(a) => ResolvedAtom {
                occ_id,
                predicate: predicate.to_string(),
                test: test.clone(),
                value: Tri::True,
                negated,
                source: Some(a.source.clone()),
                span: a.span,
                conflict_sources: Vec::new(),
            },
            None => ResolvedAtom {
                occ_id,
                predicate: predicate.to_string(),
                test: test.clone(),
                value: Tri::False,
                negated,
                source: Some(live[0].source.clone()),
                span: live[0].span,
                conflict_sources: Vec::new(),
            },
        }
    }

    fn resolve(&mut self, expr: &GuardExpr, negated: bool, binding: Binding<'_>) -> ResolvedGuard {
        match expr {
            GuardExpr::Const(b) => ResolvedGuard::Const(*b),
            GuardExpr::Atom { predicate, test } => {
                ResolvedGuard::Atom(self.resolve_atom(predicate, test, negated, binding))
            }
            GuardExpr::CausesLink => {
                let value = match (binding.act, binding.result) {
                    (Some((act, _)), Some((result, _))) => Tri::from_bool(
                        self.ctx
                            .inventory
                            .causes
                            .contains(&(act.to_string(), result.to_string())),
                    ),
                    // `causes` outside a full act+result scope is undecidable.
                    _ => Tri::Unknown,
                };
                ResolvedGuard::Causes(value)
            }
            GuardExpr::Not(inner) => {
                ResolvedGuard::Not(Box::new(self.resolve(inner, !negated, binding)))
            }
            GuardExpr::And(items) => ResolvedGuard::And(
                items
                    .iter()
                    .map(|item| self.resolve(item, negated, binding))
                    .collect(),
            ),
            GuardExpr::Or(items) => ResolvedGuard::Or(
                items
                    .iter()
                    .map(|item| self.resolve(item, negated, binding))
                    .collect(),
            ),
            GuardExpr::ExistsAct(inner) => {
                let occ_id = self.next_id("exists-act");
                let description = {
                    let mut s = String::new();
                    s.push_str("exists act (");
                    s.push_str(&format!("{}", GuardDisplay(inner)));
                    s.push(')');
                    s
                };
                let mut value = Tri::False;
                let mut witness = None;
                let acts: Vec<(&String, &BTreeMap<String, Vec<Assignment>>)> =
                    self.ctx.inventory.acts.iter().collect();
                for (act_id, fields) in acts {
                    let mut sub = Resolver {
                        ctx: self.ctx,
                        prefix: self.prefix,
                        counter: self.counter,
                    };
                    let resolved = sub.resolve(
                        inner,
                        negated,
                        Binding {
                            act: Some((act_id.as_str(), fields)),
                            result: binding.result,
                        },
                    );
                    let v = resolved.eval(&BTreeSet::new());
                    if v == Tri::True && witness.is_none() {
                        witness = Some((act_id.clone(), Box::new(resolved)));
                    }
                    value = value.or(v);
                }
                ResolvedGuard::Exists(ResolvedExists {
                    occ_id,
                    description,
                    value,
                    negated,
                    witness,
                })
            }
            GuardExpr::ExistsResult(inner) => {
                let occ_id = self.next_id("exists-result");
                let description = {
                    let mut s = String::new();
                    s.push_str("exists result (");
                    s.push_str(&format!("{}", GuardDisplay(inner)));
                    s.push(')');
                    s
                };
                let mut value = Tri::False;
                let mut witness = None;
                let results: Vec<(&String, &BTreeMap<String, Vec<Assignment>>)> =
                    self.ctx.inventory.results.iter().collect();
                for (result_id, fields) in results {
                    let mut sub = Resolver {
                        ctx: self.ctx,
                        prefix: self.prefix,
                        counter: self.counter,
                    };
                    let resolved = sub.resolve(
                        inner,
                        negated,
                        Binding {
                            act: binding.act,
                            result: Some((result_id.as_str(), fields)),
                        },
                    );
                    let v = resolved.eval(&BTreeSet::new());
                    if v == Tri::True && witness.is_none() {
                        witness = Some((result_id.clone(), Box::new(resolved)));
                    }
                    value = value.or(v);
                }
                ResolvedGuard::Exists(ResolvedExists {
                    occ_id,
                    description,
                    value,
                    negated,
                    witness,
                })
            }
        }
    }
}

/// Compact single-line rendering of a guard expression for descriptions.
pub struct GuardDisplay<'a>(pub &'a GuardExpr);

impl std::fmt::Display for GuardDisplay<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.0 {
            GuardExpr::Const(b) => write!(f, "{b}"),
            GuardExpr::CausesLink => write!(f, "causes"),
            GuardExpr::Atom { predicate, test } => match test {
                AtomTest::Bool(true) => write!(f, "{predicate}"),
                AtomTest::Bool(false) => write!(f, "{predicate} == false"),
                AtomTest::Token(t) => write!(f, "{predicate} == {t}"),
                AtomTest::Cmp(op, n) => write!(f, "{predicate} {} {n}", op.symbol()),
            },
            GuardExpr::Not(inner) => write!(f, "not ({})", GuardDisplay(inner)),
            GuardExpr::And(items) => {
                let parts: Vec<String> =
                    items.iter().map(|i| GuardDisplay(i).to_string()).collect();
                write!(f, "{}", parts.join(" and "))
            }
            GuardExpr::Or(items) => {
                let parts: Vec<String> =
                    items.iter().map(|i| GuardDisplay(i).to_string()).collect();
                write!(f, "({})", parts.join(" or "))
            }
            GuardExpr::ExistsAct(inner) => write!(f, "exists act ({})", GuardDisplay(inner)),
            GuardExpr::ExistsResult(inner) => {
                write!(f, "exists result ({})", GuardDisplay(inner))
            }
        }
    }
}

/// Resolves one guard expression against a clause slice.
pub fn resolve_guard(expr: &GuardExpr, prefix: &str, ctx: &ResolveCtx<'_>) -> ResolvedGuard {
    let mut resolver = Resolver {
        ctx,
        prefix,
        counter: 0,
    };
    resolver.resolve(
        expr,
        false,
        Binding {
            act: None,
            result: None,
        },
    )
}

// ---------------------------------------------------------------------------
// Ground problems
// ---------------------------------------------------------------------------

/// A penalty bound constraint with its source id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundConstraint {
    pub id: String,
    /// True for a lower bound (`y >= months`), false for an upper bound.
    pub is_lower: bool,
    pub months: i64,
}

/// One adjustment whose trigger was evaluated during encoding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedAdjustment {
    pub id: String,
    pub direction: AdjustDirection,
    pub delta_months: u32,
    pub trigger_value: Tri,
}

/// The compiled constraint problem for one case–clause pairing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundProblem {
    pub clause_id: ClauseId,
    pub consequence_label: String,
    pub article_guard: ResolvedGuard,
    pub article_guard_value: Tri,
    pub guard_formula: ResolvedGuard,
    /// Unresolved guard sources, kept so the solver can re-resolve under
    /// fact-removal masks during core minimization.
    pub article_guard_src: GuardExpr,
    pub guard_src: GuardExpr,
    pub base_penalty: PenaltySpec,
    /// Bound constraints on the sentence variable, each with a source id.
    pub penalty_constraints: Vec<BoundConstraint>,
    pub adjustment_constraints: Vec<AppliedAdjustment>,
    /// Triggered deltas folded through interval adjustment.
    pub adjusted_interval: Result<PenaltySpec, EmptyInterval>,
    /// Case-level slice the guards were resolved against.
    pub slice: ClauseSlice,
    pub inventory: Arc<FactTable>,
    /// Conflicts refine reported for predicates this clause references.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conflicts: Vec<FactConflict>,
    /// Adjustment definitions, kept for re-solving under masks.
    pub adjustments: Vec<AdjustmentDelta>,
}

/// Compiles one ground problem per candidate clause. Guard atoms are
/// resolved through the slice (missing elements become `Unknown`),
/// existential atoms by finite enumeration over the case's act/result
/// inventory, and adjustment triggers are folded through
/// [`adjust_interval`].
pub fn encode(
    slice: &RefinedFactSlice,
    constraints: &[(&StatuteArticle, &Clause)],
    exclusivity: &[ExclusiveGroup],
) -> Vec<GroundProblem> {
    let empty_slice = ClauseSlice::default();
    let no_removed = BTreeSet::new();
    let mut out = Vec::new();

    for (article, clause) in constraints {
        let clause_slice = slice.per_clause.get(&clause.clause_id).unwrap_or(&empty_slice);
        let ctx = ResolveCtx {
            slice: clause_slice,
            inventory: &slice.inventory,
            exclusivity,
            removed_sources: &no_removed,
        };

        let article_guard = resolve_guard(&article.article_guard, "ag", &ctx);
        let guard_formula = resolve_guard(&clause.guard, "g", &ctx);
        let article_guard_value = article_guard.eval(&no_removed);

        let mut applied = Vec::new();
        let mut triggered_aggravators = Vec::new();
        let mut triggered_mitigators = Vec::new();
        for adj in &clause.adjustments {
            let resolved = resolve_guard(&adj.trigger, &format!("t:{}", adj.id), &ctx);
            let trigger_value = resolved.eval(&no_removed);
            applied.push(AppliedAdjustment {
                id: adj.id.clone(),
                direction: adj.direction,
                delta_months: adj.delta_months,
                trigger_value,
            });
            if trigger_value == Tri::True {
                match adj.direction {
                    AdjustDirection::RaiseLower => triggered_aggravators.push(adj),
                    AdjustDirection::LowerUpper => triggered_mitigators.push(adj),
                }
            }
        }
        let adjusted_interval = adjust_interval(
            &clause.penalty,
            &triggered_aggravators.iter().map(|a| &**a).collect::<Vec<_>>(),
            &triggered_mitigators.iter().map(|m| &**m).collect::<Vec<_>>(),
        );

        let mut penalty_constraints = vec![BoundConstraint {
            id: format!("{}:penalty-lower", clause.clause_id),
            is_lower: true,
            months: clause.penalty.min_months(),
        }];
        if let Some(max) = clause.penalty.max_months() {
            penalty_constraints.push(BoundConstraint {
                id: format!("{}:penalty-upper", clause.clause_id),
                is_lower: false,
                months: max,
            });
        }

        let referenced: BTreeSet<String> = clause_slice.values.keys().cloned().collect();
        let conflicts: Vec<FactConflict> = slice
            .conflicts
            .iter()
            .filter(|c| referenced.contains(&c.predicate))
            .cloned()
            .collect();

        out.push(GroundProblem {
            clause_id: clause.clause_id,
            consequence_label: clause.consequence_label.clone(),
            article_guard,
            article_guard_value,
            guard_formula,
            article_guard_src: article.article_guard.clone(),
            guard_src: clause.guard.clone(),
            base_penalty: clause.penalty,
            penalty_constraints,
            adjustment_constraints: applied,
            adjusted_interval,
            slice: clause_slice.clone(),
            inventory: Arc::clone(&slice.inventory),
            conflicts,
            adjustments: clause.adjustments.clone(),
        });
    }
    out
}
