//! Three-stage knowledge-base validation.
//!
//! 1. Syntactic: guards are well-formed — no extra-legal attribute names,
//!    `causes` only under both quantifier scopes, defaults inside their
//!    declared domains.
//! 2. Semantic: no clause is vacuous (guard unsatisfiable under the
//!    exclusivity axioms), contradictory (some satisfying assignment
//!    triggers adjustments that empty the penalty interval), or overly
//!    broad (guard fired by at least the configured share of probe cases).
//! 3. Case-level: every probe case activates exactly the statute and
//!    clause guards it is annotated with.
//!
//! Only a knowledge base that passes with zero errors is marked validated.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Clause, ClauseId, GuardExpr, StatuteArticle, StatuteKB};
use crate::case::CaseRecord;
use crate::compile::{encode, refine_facts};
use crate::prop::{satisfiable, PropSpace};
use crate::solver::{check_sat, SatStatus};

/// Validator tunables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidatorConfig {
    /// A clause fired by at least this share of probes is overly broad.
    pub broad_threshold: f64,
    /// Enumeration cap for vacuity/contradiction checks.
    pub atom_cap: usize,
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        ValidatorConfig {
            broad_threshold: 0.95,
            atom_cap: 16,
        }
    }
}

/// A probe case annotated with the clauses it must activate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeCase {
    pub case: CaseRecord,
    pub expected_activations: BTreeSet<ClauseId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IssueSection {
    Syntactic,
    Semantic,
    CaseLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IssueSeverity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub section: IssueSection,
    pub severity: IssueSeverity,
    pub location: String,
    pub message: String,
}

/// Full validation outcome; issues are data, never exceptions.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
    pub probes_run: usize,
}

impl ValidationReport {
    pub fn error_count(&self) -> usize {
        self.issues
            .iter()
            .filter(|i| i.severity == IssueSeverity::Error)
            .count()
    }

    pub fn is_clean(&self) -> bool {
        self.error_count() == 0
    }

    fn error(&mut self, section: IssueSection, location: &str, message: String) {
        self.issues.push(ValidationIssue {
            section,
            severity: IssueSeverity::Error,
            location: location.to_string(),
            message,
        });
    }

    fn warning(&mut self, section: IssueSection, location: &str, message: String) {
        self.issues.push(ValidationIssue {
            section,
            severity: IssueSeverity::Warning,
            location: location.to_string(),
            message,
        });
    }
}

// ---------------------------------------------------------------------------
// Syntactic checks
// ---------------------------------------------------------------------------

fn causes_well_scoped(expr: &GuardExpr, in_act: bool, in_result: bool) -> bool {
    match expr {
        GuardExpr::CausesLink => in_act && in_result,
        GuardExpr::Not(inner) => causes_well_scoped(inner, in_act, in_result),
        GuardExpr::And(items) | GuardExpr::Or(items) => items
            .iter()
            .all(|item| causes_well_scoped(item, in_act, in_result)),
        GuardExpr::ExistsAct(inner) => causes_well_scoped(inner, true, in_result),
        GuardExpr::ExistsResult(inner) => causes_well_scoped(inner, in_act, true),
        GuardExpr::Atom { .. } | GuardExpr::Const(_) => true,
    }
}

fn syntactic_checks(kb: &StatuteKB, report: &mut ValidationReport) {
    for (location, guard) in kb.all_guards() {
        for predicate in guard.predicates() {
            if kb.extra_legal_names.contains(&predicate) {
                report.error(
                    IssueSection::Syntactic,
                    &location,
                    format!("guard references extra-legal attribute `{predicate}`"),
                );
            }
        }
        if !causes_well_scoped(guard, false, false) {
            report.error(
                IssueSection::Syntactic,
                &location,
                "`causes` used outside an act+result quantifier scope".to_string(),
            );
        }
    }

    let mut seen = BTreeSet::new();
    for group in &kb.exclusivity {
        if !seen.insert(group.predicate.as_str()) {
            report.error(
                IssueSection::Syntactic,
                "exclusivity axioms",
                format!("duplicate exclusive group for `{}`", group.predicate),
            );
        }
        if group.tokens.len() < 2 {
            report.warning(
                IssueSection::Syntactic,
                "exclusivity axioms",
                format!("exclusive group `{}` has fewer than two tokens", group.predicate),
            );
        }
    }

    for article in kb.articles.values() {
        for (name, value) in &article.field_defaults {
            if let Some(group) = kb.exclusive_group_for(name) {
                if let crate::case::FactValue::Token(token) = value {
                    if !group.tokens.contains(token) {
                        report.error(
                            IssueSection::Syntactic,
                            &format!("article {}", article.article_no),
                            format!(
                                "default `{name} = {token}` is outside the exclusive domain"
                            ),
                        );
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Semantic checks
// ---------------------------------------------------------------------------

fn admissible_guard(article: &StatuteArticle, clause: &Clause) -> GuardExpr {
    GuardExpr::And(vec![article.article_guard.clone(), clause.guard.clone()])
}

fn semantic_checks(kb: &StatuteKB, config: &ValidatorConfig, report: &mut ValidationReport) {
    for article in kb.articles.values() {
        for clause in &article.clauses {
            let location = format!("clause {}", clause.clause_id);
            let guard = admissible_guard(article, clause);

            match satisfiable(&guard, &kb.exclusivity, config.atom_cap) {
                Some(false) => report.error(
                    IssueSection::Semantic,
                    &location,
                    "vacuous: guard is unsatisfiable under the exclusivity axioms".to_string(),
                ),
                Some(true) => {}
                None => report.warning(
                    IssueSection::Semantic,
                    &location,
                    format!("vacuity undecided: guard exceeds {} atoms", config.atom_cap),
                ),
            }

            if !clause.adjustments.is_empty() {
                check_contradictory(kb, article, clause, config, report, &location);
            }
        }
    }
}

/// A clause is contradictory when some assignment satisfying its guard
/// triggers adjustments whose deltas force the adjusted lower bound above
/// the adjusted upper bound.
fn check_contradictory(
    kb: &StatuteKB,
    article: &StatuteArticle,
    clause: &Clause,
    config: &ValidatorConfig,
    report: &mut ValidationReport,
    location: &str,
) {
    let guard = admissible_guard(article, clause);
    let mut exprs: Vec<&GuardExpr> = vec![&guard];
    for adj in &clause.adjustments {
        exprs.push(&adj.trigger);
    }
    let space = PropSpace::build(&exprs, &kb.exclusivity);
    if space.atom_key_count() > config.atom_cap
        || space.assignment_count(1 << 22).is_none()
    {
        report.warning(
            IssueSection::Semantic,
            location,
            format!(
                "contradiction check undecided: more than {} atoms",
                config.atom_cap
            ),
        );
        return;
    }

    let max = match clause.penalty.max_months() {
        Some(m) => m,
        // Unbounded uppers can never be crossed.
        None => return,
    };
    let min = clause.penalty.min_months();

    let mut witness: Option<Vec<String>> = None;
    space.for_each_assignment(|assignment| {
        if !space.eval(&guard, assignment) {
            return true;
        }
        let mut raise = 0i64;
        let mut cut = 0i64;
        let mut triggered = Vec::new();
        for adj in &clause.adjustments {
            if space.eval(&adj.trigger, assignment) {
                match adj.direction {
                    super::AdjustDirection::RaiseLower => raise += adj.delta_months as i64,
                    super::AdjustDirection::LowerUpper => cut += adj.delta_months as i64,
                }
                triggered.push(adj.id.clone());
            }
        }
        if min + raise > max - cut {
            witness = Some(triggered);
            false
        } else {
            true
        }
    });

    if let Some(triggered) = witness {
        report.error(
            IssueSection::Semantic,
            location,
            format!(
                "contradictory: triggering [{}] forces an empty penalty interval",
                triggered.join(", ")
            ),
        );
    }
}

// ---------------------------------------------------------------------------
// Probe checks
// ---------------------------------------------------------------------------

/// Clauses of the KB admissible for the given case.
pub fn admissible_clauses(kb: &StatuteKB, case: &CaseRecord) -> BTreeSet<ClauseId> {
    let constraints: Vec<(&StatuteArticle, &Clause)> = kb
        .articles
        .values()
        .flat_map(|a| a.clauses.iter().map(move |c| (a, c)))
        .collect();
    let slice = refine_facts(&case.facts, &constraints, &kb.exclusivity);
    let problems = encode(&slice, &constraints, &kb.exclusivity);
    problems
        .iter()
        .filter(|p| check_sat(p, &kb.exclusivity).status == SatStatus::Sat)
        .map(|p| p.clause_id)
        .collect()
}

fn probe_checks(
    kb: &StatuteKB,
    probes: &[ProbeCase],
    config: &ValidatorConfig,
    report: &mut ValidationReport,
) {
    if probes.is_empty() {
        report.warning(
            IssueSection::CaseLevel,
            "probe corpus",
            "no probe cases supplied; case-level and breadth checks skipped".to_string(),
        );
        return;
    }

    let mut fire_counts: BTreeMap<ClauseId, usize> = BTreeMap::new();
    for probe in probes {
        let admissible = admissible_clauses(kb, &probe.case);
        for id in &admissible {
            *fire_counts.entry(*id).or_default() += 1;
        }
        if admissible != probe.expected_activations {
            let missing: Vec<String> = probe
                .expected_activations
                .difference(&admissible)
                .map(|c| c.to_string())
                .collect();
            let unexpected: Vec<String> = admissible
                .difference(&probe.expected_activations)
                .map(|c| c.to_string())
                .collect();
            report.error(
                IssueSection::CaseLevel,
                &format!("probe {}", probe.case.case_id),
                format!(
                    "activation mismatch: missing [{}], unexpected [{}]",
                    missing.join(", "),
                    unexpected.join(", ")
                ),
            );
        }
    }

    for article in kb.articles.values() {
        for clause in &article.clauses {
            let fired = fire_counts.get(&clause.clause_id).copied().unwrap_or(0);
            let rate = fired as f64 / probes.len() as f64;
            if rate >= config.broad_threshold {
                report.error(
                    IssueSection::Semantic,
                    &format!("clause {}", clause.clause_id),
                    format!(
                        "overly broad: guard fires on {fired}/{} probes ({:.0}%)",
                        probes.len(),
                        rate * 100.0
                    ),
                );
            }
        }
    }
}

/// Runs all three validation stages; marks the KB validated iff no errors.
pub fn validate_kb(
    kb: &mut StatuteKB,
    probes: &[ProbeCase],
    config: &ValidatorConfig,
) -> ValidationReport {
    let mut report = ValidationReport {
        issues: Vec::new(),
        probes_run: probes.len(),
    };
    syntactic_checks(kb, &mut report);
    semantic_checks(kb, config, &mut report);
    probe_checks(kb, probes, config, &mut report);
    kb.validated = report.is_clean();
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::{CaseRecord, ElementKind, FactAtom, FactValue};
    use crate::kb::parse_kb;

    fn probe(case_id: &str, facts: Vec<FactAtom>, expected: &[(u32, u32)]) -> ProbeCase {
        let mut case = CaseRecord::new(case_id);
        case.suspect_ids = vec!["s1".to_string()];
        case.facts = facts;
        ProbeCase {
            case,
            expected_activations: expected.iter().map(|&(a, c)| ClauseId(a, c)).collect(),
        }
    }

    #[test]
    fn vacuous_exclusive_conjunction_is_flagged() {
        let mut kb = parse_kb(
            r#"
            exclusive mental_state { Intentional, Negligent, Knowing, Unknown }
            article 7 {
              guard: true
              clause 1 {
                guard: mental_state == Intentional and mental_state == Negligent
                penalty [0, 12]
              }
            }
            "#,
        )
        .unwrap();
        let report = validate_kb(&mut kb, &[], &ValidatorConfig::default());
        assert!(!kb.validated);
        assert!(report
            .issues
            .iter()
            .any(|i| i.message.starts_with("vacuous") && i.location == "clause 7.1"));
    }

    #[test]
    fn contradictory_adjustment_is_flagged() {
        let mut kb = parse_kb(
            r#"
            article 7 {
              guard: true
              clause 1 {
                guard: convicted
                penalty [0, 12]
                aggravate "heavy" when harmed delta 20
              }
            }
            "#,
        )
        .unwrap();
        let report = validate_kb(&mut kb, &[], &ValidatorConfig::default());
        assert!(report
            .issues
            .iter()
            .any(|i| i.message.starts_with("contradictory") && i.message.contains("heavy")));
    }

    #[test]
    fn guard_referencing_extra_legal_name_is_rejected() {
        let mut kb = parse_kb(
            r#"
            extralegal { gender }
            article 7 {
              guard: gender == male
              clause 1 { guard: convicted penalty [0, 12] }
            }
            "#,
        )
        .unwrap();
        let report = validate_kb(&mut kb, &[], &ValidatorConfig::default());
        assert!(report
            .issues
            .iter()
            .any(|i| i.section == IssueSection::Syntactic && i.message.contains("gender")));
        assert!(!kb.validated);
    }

    #[test]
    fn overly_broad_clause_fires_on_all_probes() {
        let mut kb = parse_kb(
            r#"
            article 7 {
              guard: true
              clause 1 "catch-all" { guard: true penalty [0, 12] }
              clause 2 "narrow" { guard: convicted penalty [0, 12] }
            }
            "#,
        )
        .unwrap();
        let probes: Vec<ProbeCase> = (0..4)
            .map(|i| {
                let facts = if i == 0 {
                    vec![FactAtom::new(
                        ElementKind::Qualifier,
                        "s1",
                        "convicted",
                        FactValue::Bool(true),
                    )]
                } else {
                    Vec::new()
                };
                let expected: &[(u32, u32)] =
                    if i == 0 { &[(7, 1), (7, 2)] } else { &[(7, 1)] };
                probe(&format!("p{i}"), facts, expected)
            })
            .collect();
        let report = validate_kb(&mut kb, &probes, &ValidatorConfig::default());
        let broad: Vec<_> = report
            .issues
            .iter()
            .filter(|i| i.message.starts_with("overly broad"))
            .collect();
        assert_eq!(broad.len(), 1);
        assert_eq!(broad[0].location, "clause 7.1");
    }

    #[test]
    fn probe_activation_mismatch_is_reported() {
        let mut kb = parse_kb(
            r#"
            article 7 {
              guard: true
              clause 1 { guard: convicted penalty [0, 12] }
            }
            "#,
        )
        .unwrap();
        // expected to activate, but the probe lacks the conviction fact
        let probes = vec![probe("p0", Vec::new(), &[(7, 1)])];
        let report = validate_kb(&mut kb, &probes, &ValidatorConfig::default());
        assert!(report
            .issues
            .iter()
            .any(|i| i.section == IssueSection::CaseLevel && i.message.contains("missing [7.1]")));
    }

    #[test]
    fn clean_kb_with_matching_probes_validates() {
        let mut kb = parse_kb(
            r#"
            exclusive severity { Minor, Serious, EspeciallySerious }
            article 7 {
              guard: true
              clause 1 { guard: severity == Minor penalty [0, 12] }
              clause 2 { guard: severity == Serious penalty (12, 36] }
            }
            "#,
        )
        .unwrap();
        let sev = |case_id: &str, token: &str, clause: u32| {
            probe(
                case_id,
                vec![FactAtom::new(
                    ElementKind::Severity,
                    "s1",
                    "severity",
                    FactValue::token(token),
                )],
                &[(7, clause)],
            )
        };
        let probes = vec![
            sev("p0", "Minor", 1),
            sev("p1", "Serious", 2),
            probe("p2", Vec::new(), &[]),
        ];
        let report = validate_kb(&mut kb, &probes, &ValidatorConfig::default());
        assert!(report.is_clean(), "unexpected issues: {:?}", report.issues);
        assert!(kb.validated);
    }
}
