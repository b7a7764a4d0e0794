//! Formal statutory knowledge base: guard expressions, penalty intervals,
//! adjustment deltas, and the article/clause index.
//!
//! A knowledge base is parsed from the rule-language document format (see
//! [`parse`]) and must pass [`validate`] before it can back adjudication.
//! Guards never mention extra-legal attribute names; that exclusion is what
//! makes decisions provably invariant to them.

pub mod parse;
pub mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::case::FactValue;

pub use parse::{parse_kb, serialize_kb, KbParseError};
pub use validate::{validate_kb, ProbeCase, ValidationIssue, ValidationReport, ValidatorConfig};

// ---------------------------------------------------------------------------
// Guard expressions
// ---------------------------------------------------------------------------

/// Comparison operator of a threshold guard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
}

impl CmpOp {
    pub fn eval(&self, lhs: i64, rhs: i64) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Gt => lhs > rhs,
        }
    }

    pub fn symbol(&self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "==",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
        }
    }
}

/// Test applied by a guard atom to the value of its predicate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AtomTest {
    /// Boolean predicate must equal the given flag.
    Bool(bool),
    /// Enum-token predicate must equal the given token.
    Token(String),
    /// Integer predicate compared against a constant threshold.
    Cmp(CmpOp, i64),
}

impl AtomTest {
    /// Whether a concrete fact value satisfies this test.
    pub fn accepts(&self, value: &FactValue) -> bool {
        match (self, value) {
            (AtomTest::Bool(b), FactValue::Bool(v)) => v == b,
            (AtomTest::Token(t), FactValue::Token(v)) => v == t,
            (AtomTest::Cmp(op, rhs), FactValue::Int(v)) => op.eval(*v, *rhs),
            _ => false,
        }
    }
}

/// Recursive guard expression over typed case facts.
///
/// Atoms outside any quantifier resolve against suspect/case-level
/// predicates. Inside `ExistsAct` / `ExistsResult` the innermost matching
/// scope wins: result fields shadow act fields shadow case-level fields.
/// `CausesLink` holds iff the acts/results bound by the enclosing
/// quantifiers are linked by a causation fact.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GuardExpr {
    Const(bool),
    Atom { predicate: String, test: AtomTest },
    CausesLink,
    Not(Box<GuardExpr>),
    And(Vec<GuardExpr>),
    Or(Vec<GuardExpr>),
    ExistsAct(Box<GuardExpr>),
    ExistsResult(Box<GuardExpr>),
}

impl GuardExpr {
    pub fn atom(predicate: &str, test: AtomTest) -> Self {
        GuardExpr::Atom {
            predicate: predicate.to_string(),
            test,
        }
    }

    /// All predicate names referenced anywhere in the expression.
    pub fn predicates(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit_atoms(&mut |predicate, _| {
            out.insert(predicate.to_string());
        });
        out
    }

    /// Predicate names of atoms outside any quantifier (the ones resolved
    /// from the case-level fact slice).
    pub fn case_level_predicates(&self) -> BTreeSet<String> {
        fn walk(expr: &GuardExpr, out: &mut BTreeSet<String>) {
            match expr {
                GuardExpr::Atom { predicate, .. } => {
                    out.insert(predicate.clone());
                }
                GuardExpr::Not(inner) => walk(inner, out),
                GuardExpr::And(items) | GuardExpr::Or(items) => {
                    for item in items {
                        walk(item, out);
                    }
                }
                // Quantified subtrees resolve against act/result inventories.
                GuardExpr::ExistsAct(_) | GuardExpr::ExistsResult(_) => {}
                GuardExpr::Const(_) | GuardExpr::CausesLink => {}
            }
        }
        let mut out = BTreeSet::new();
        walk(self, &mut out);
        out
    }

    pub fn visit_atoms(&self, f: &mut impl FnMut(&str, &AtomTest)) {
        match self {
            GuardExpr::Atom { predicate, test } => f(predicate, test),
            GuardExpr::Not(inner) => inner.visit_atoms(f),
            GuardExpr::And(items) | GuardExpr::Or(items) => {
                for item in items {
                    item.visit_atoms(f);
                }
            }
            GuardExpr::ExistsAct(inner) | GuardExpr::ExistsResult(inner) => inner.visit_atoms(f),
            GuardExpr::Const(_) | GuardExpr::CausesLink => {}
        }
    }

    /// Number of atom occurrences (Const and CausesLink excluded).
    pub fn atom_count(&self) -> usize {
        let mut n = 0;
        self.visit_atoms(&mut |_, _| n += 1);
        n
    }
}

// ---------------------------------------------------------------------------
// Penalty intervals and adjustments
// ---------------------------------------------------------------------------

/// Upper bound of a penalty interval; reserved symbols sit above every
/// finite month count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum UpperBound {
    Months(u32),
    Life,
    Death,
}

impl UpperBound {
    pub fn months(&self) -> Option<u32> {
        match self {
            UpperBound::Months(m) => Some(*m),
            _ => None,
        }
    }
}

impl fmt::Display for UpperBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UpperBound::Months(m) => write!(f, "{m}"),
            UpperBound::Life => write!(f, "Life"),
            UpperBound::Death => write!(f, "Death"),
        }
    }
}

/// A statutory sentence interval in months, with open/closed endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub lower_months: u32,
    pub upper: UpperBound,
    pub lower_strict: bool,
    pub upper_strict: bool,
}

impl PenaltySpec {
    pub fn closed(lower: u32, upper: u32) -> Self {
        PenaltySpec {
            lower_months: lower,
            upper: UpperBound::Months(upper),
            lower_strict: false,
            upper_strict: false,
        }
    }

    /// Smallest admissible integer month count.
    pub fn min_months(&self) -> i64 {
        self.lower_months as i64 + if self.lower_strict { 1 } else { 0 }
    }

    /// Largest admissible integer month count; `None` when unbounded
    /// (Life/Death upper).
    pub fn max_months(&self) -> Option<i64> {
        match self.upper {
            UpperBound::Months(u) => Some(u as i64 - if self.upper_strict { 1 } else { 0 }),
            UpperBound::Life | UpperBound::Death => None,
        }
    }

    /// Whether the interval contains no integer month count.
    pub fn is_empty(&self) -> bool {
        match self.max_months() {
            Some(max) => self.min_months() > max,
            None => false,
        }
    }

    pub fn contains(&self, months: i64) -> bool {
        months >= self.min_months() && self.max_months().map_or(true, |max| months <= max)
    }
}

impl fmt::Display for PenaltySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let open = if self.lower_strict { "(" } else { "[" };
        let close = if self.upper_strict { ")" } else { "]" };
        write!(f, "{}{}, {}{}", open, self.lower_months, self.upper, close)
    }
}

/// Direction of a sentencing adjustment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AdjustDirection {
    /// Aggravating factor: raises the effective lower bound.
    RaiseLower,
    /// Mitigating factor: lowers the effective upper bound.
    LowerUpper,
}

/// A conditional aggravating or mitigating delta attached to a clause.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjustmentDelta {
    /// Stable identifier used in unsat cores and explanations.
    pub id: String,
    pub trigger: GuardExpr,
    pub direction: AdjustDirection,
    pub delta_months: u32,
}

// ---------------------------------------------------------------------------
// Clauses, articles, knowledge base
// ---------------------------------------------------------------------------

/// Clause identity: `(article_no, clause_index)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClauseId(pub u32, pub u32);

impl fmt::Display for ClauseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.0, self.1)
    }
}

/// One penalty bracket of an article, gated by its clause guard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    pub clause_id: ClauseId,
    pub guard: GuardExpr,
    pub penalty: PenaltySpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub adjustments: Vec<AdjustmentDelta>,
    pub consequence_label: String,
}

/// A statutory article: scope guard, clauses, and per-article defaults for
/// predicates that cases commonly leave implicit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatuteArticle {
    pub article_no: u32,
    pub article_guard: GuardExpr,
    pub clauses: Vec<Clause>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub field_defaults: BTreeMap<String, FactValue>,
}

/// A group of mutually exclusive token values for one predicate: at most
/// one may hold for a given subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusiveGroup {
    pub predicate: String,
    pub tokens: BTreeSet<String>,
}

/// The validated knowledge base: indexed articles plus exclusivity axioms
/// and the banned extra-legal vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatuteKB {
    pub articles: BTreeMap<u32, StatuteArticle>,
    pub exclusivity: Vec<ExclusiveGroup>,
    /// Attribute names that must never appear in any guard.
    pub extra_legal_names: BTreeSet<String>,
    /// Set by [`validate_kb`] when no errors were found.
    pub validated: bool,
}

impl StatuteKB {
    pub fn empty() -> Self {
        StatuteKB {
            articles: BTreeMap::new(),
            exclusivity: Vec::new(),
            extra_legal_names: BTreeSet::new(),
            validated: false,
        }
    }

    pub fn exclusive_group_for(&self, predicate: &str) -> Option<&ExclusiveGroup> {
        self.exclusivity.iter().find(|g| g.predicate == predicate)
    }

    /// Every guard expression of the KB paired with a stable location label.
    pub fn all_guards(&self) -> Vec<(String, &GuardExpr)> {
        let mut out = Vec::new();
        for article in self.articles.values() {
            out.push((format!("article {}", article.article_no), &article.article_guard));
            for clause in &article.clauses {
                out.push((format!("clause {}", clause.clause_id), &clause.guard));
                for adj in &clause.adjustments {
                    out.push((format!("adjustment {}", adj.id), &adj.trigger));
                }
            }
        }
        out
    }
}

/// Errors from KB-level lookups.
#[derive(Debug, thiserror::Error)]
pub enum KbError {
    #[error("knowledge base has not been validated")]
    NotValidated,
}

/// Result of [`search_constraints`]: the clauses of every known candidate
/// article, plus the candidate numbers that are absent from the KB.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchResult<'kb> {
    pub constraints: Vec<(&'kb StatuteArticle, &'kb Clause)>,
    pub unknown_articles: BTreeSet<u32>,
}

/// Retrieves all clauses of the candidate articles from a validated KB.
/// Unknown article numbers are reported, never silently dropped.
pub fn search_constraints<'kb>(
    candidates: &BTreeSet<u32>,
    kb: &'kb StatuteKB,
) -> Result<SearchResult<'kb>, KbError> {
    if !kb.validated {
        return Err(KbError::NotValidated);
    }
    let mut constraints = Vec::new();
    let mut unknown = BTreeSet::new();
    for &candidate in candidates {
        match kb.articles.get(&candidate) {
            Some(article) => {
                for clause in &article.clauses {
                    constraints.push((article, clause));
                }
            }
            None => {
                unknown.insert(candidate);
            }
        }
    }
    Ok(SearchResult {
        constraints,
        unknown_articles: unknown,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn penalty_interval_endpoint_semantics() {
        let closed = PenaltySpec::closed(0, 36);
        assert_eq!(closed.min_months(), 0);
        assert_eq!(closed.max_months(), Some(36));
        assert!(!closed.is_empty());

        let lower_open = PenaltySpec {
            lower_months: 36,
            upper: UpperBound::Months(120),
            lower_strict: true,
            upper_strict: false,
        };
        assert_eq!(lower_open.min_months(), 37);
        assert!(lower_open.contains(37));
        assert!(!lower_open.contains(36));

        let unbounded = PenaltySpec {
            lower_months: 180,
            upper: UpperBound::Death,
            lower_strict: false,
            upper_strict: false,
        };
        assert_eq!(unbounded.max_months(), None);
        assert!(unbounded.contains(100_000));
        assert!(!unbounded.is_empty());
    }

    #[test]
    fn search_requires_validation() {
        let kb = StatuteKB::empty();
        let candidates = [347].into_iter().collect();
        assert!(matches!(
            search_constraints(&candidates, &kb),
            Err(KbError::NotValidated)
        ));
    }

    #[test]
    fn search_reports_unknown_articles() {
        let mut kb = StatuteKB::empty();
        kb.validated = true;
        let candidates = [9999].into_iter().collect();
        let result = search_constraints(&candidates, &kb).unwrap();
        assert!(result.constraints.is_empty());
        assert_eq!(result.unknown_articles, [9999].into_iter().collect());
    }

    #[test]
    fn empty_candidates_give_empty_constraints() {
        let mut kb = StatuteKB::empty();
        kb.validated = true;
        let result = search_constraints(&BTreeSet::new(), &kb).unwrap();
        assert!(result.constraints.is_empty());
        assert!(result.unknown_articles.is_empty());
    }
}
