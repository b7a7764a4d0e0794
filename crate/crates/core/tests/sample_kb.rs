//! Integration coverage over the shipped sample knowledge base: candidate
//! search, fact refinement with defaults, and end-to-end should-change
//! behavior.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use gavel_core::adjudicate::{adjudicate, AdjudicateConfig};
use gavel_core::case::{CaseRecord, ElementKind, FactValue};
use gavel_core::compile::{refine_facts, Provenance};
use gavel_core::io::read_records;
use gavel_core::kb::{
    parse_kb, search_constraints, validate_kb, ClauseId, ProbeCase, StatuteKB, ValidatorConfig,
};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn sample_kb() -> StatuteKB {
    let text = std::fs::read_to_string(fixtures().join("kb/sample.kb")).unwrap();
    let mut kb = parse_kb(&text).unwrap();
    let probes: Vec<ProbeCase> = read_records(&fixtures().join("kb/probes.jsonl")).unwrap();
    assert!(validate_kb(&mut kb, &probes, &ValidatorConfig::default()).is_clean());
    kb
}

fn load_case(name: &str) -> CaseRecord {
    serde_json::from_str(&std::fs::read_to_string(fixtures().join("cases").join(name)).unwrap())
        .unwrap()
}

#[test]
fn search_returns_all_clauses_of_known_candidates() {
    let kb = sample_kb();
    let candidates: BTreeSet<u32> = [347, 64, 65, 67].into_iter().collect();
    let result = search_constraints(&candidates, &kb).unwrap();
    assert!(result.unknown_articles.is_empty());
    let clause_ids: BTreeSet<ClauseId> =
        result.constraints.iter().map(|(_, c)| c.clause_id).collect();
    let expected: BTreeSet<ClauseId> = [
        ClauseId(64, 1),
        ClauseId(65, 1),
        ClauseId(67, 1),
        ClauseId(347, 1),
        ClauseId(347, 2),
        ClauseId(347, 3),
        ClauseId(347, 4),
    ]
    .into_iter()
    .collect();
    assert_eq!(clause_ids, expected);
}

#[test]
fn refine_assigns_facts_and_age_default_for_drug_case() {
    let kb = sample_kb();
    let case = load_case("c_drug_sale.json");
    let candidates: BTreeSet<u32> = [347].into_iter().collect();
    let search = search_constraints(&candidates, &kb).unwrap();
    let slice = refine_facts(&case.facts, &search.constraints, &kb.exclusivity);

    let clause = &slice.per_clause[&ClauseId(347, 4)];
    for predicate in ["drug_quantity_g", "circumstance", "actor_type"] {
        assert!(
            matches!(clause.provenance[predicate], Provenance::FromFact { .. }),
            "{predicate} must come from a fact"
        );
    }
    assert_eq!(clause.provenance["age"], Provenance::FromDefault);
    assert_eq!(
        clause.values["age"][0].value,
        FactValue::Int(18),
        "age defaults to adulthood"
    );
    assert!(slice.conflicts.is_empty());
}

#[test]
fn irrelevant_fact_predicates_are_filtered_from_slices() {
    let kb = sample_kb();
    let mut case = load_case("c_drug_sale.json");
    case.facts.push(gavel_core::case::FactAtom::new(
        ElementKind::Qualifier,
        "s1",
        "favorite_dish",
        FactValue::token("noodles"),
    ));
    let candidates: BTreeSet<u32> = [347].into_iter().collect();
    let search = search_constraints(&candidates, &kb).unwrap();
    let slice = refine_facts(&case.facts, &search.constraints, &kb.exclusivity);
    for clause_slice in slice.per_clause.values() {
        assert!(!clause_slice.values.contains_key("favorite_dish"));
        assert!(!clause_slice.provenance.contains_key("favorite_dish"));
    }
}

#[test]
fn severity_flip_moves_between_offense_definitions() {
    let kb = sample_kb();
    let config = AdjudicateConfig::new();
    let none = BTreeSet::new();

    // negligent minor harm is no offense in the sample KB
    let base = load_case("b_assault_negligent_minor.json");
    let judgment = adjudicate(&base, &kb, &none, &config).unwrap();
    assert!(judgment.chosen_clauses.is_empty());
    assert_eq!(judgment.consequence, "No applicable clause");

    // flipping the harm to serious activates the negligent-injury article
    let mut serious = base.clone();
    for fact in &mut serious.facts {
        if fact.element_kind == ElementKind::Severity {
            fact.value = FactValue::token("Serious");
        }
    }
    let judgment = adjudicate(&serious, &kb, &none, &config).unwrap();
    assert_eq!(judgment.chosen_clauses, [ClauseId(235, 1)].into_iter().collect());
}

#[test]
fn exception_blocks_the_whole_offense() {
    let kb = sample_kb();
    let config = AdjudicateConfig::new();
    let none = BTreeSet::new();

    let mut case = load_case("b_assault_minor.json");
    case.facts.push(gavel_core::case::FactAtom::new(
        ElementKind::Exception,
        "s1",
        "self_defense",
        FactValue::Bool(true),
    ));
    let judgment = adjudicate(&case, &kb, &none, &config).unwrap();
    assert!(judgment.chosen_clauses.is_empty());
    assert!(judgment
        .diagnostics
        .iter()
        .any(|d| d.clause_id.0 == 234
            && d.core.kind == gavel_core::solver::CoreKind::IncompatibleGuards));
}

#[test]
fn aggravator_and_mitigator_shift_the_serious_bracket() {
    let kb = sample_kb();
    let config = AdjudicateConfig::new();
    let none = BTreeSet::new();

    let mut case = load_case("b_assault_serious.json");
    case.facts.push(gavel_core::case::FactAtom::new(
        ElementKind::Qualifier,
        "s1",
        "cruel_means",
        FactValue::Bool(true),
    ));
    case.facts.push(gavel_core::case::FactAtom::new(
        ElementKind::Qualifier,
        "s1",
        "victim_forgiveness",
        FactValue::Bool(true),
    ));
    let judgment = adjudicate(&case, &kb, &none, &config).unwrap();
    let interval = judgment.penalty_interval.unwrap();
    // base (36,120] raised by 24 and cut by 12: (60,108]
    assert_eq!(interval.min_months(), 61);
    assert_eq!(interval.max_months(), Some(108));
}
