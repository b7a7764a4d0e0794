//! Property tests over the structural invariants of the engine.

use std::collections::BTreeSet;

use proptest::prelude::*;

use gavel_core::agents::{merge_arguments, ArgumentTuple, Role};
use gavel_core::case::{
    extra_legal_equivalent, split_articles, CaseRecord, ElementKind, ExtraLegalAttr, FactAtom,
    FactValue,
};
use gavel_core::compile::adjust_interval;
use gavel_core::kb::{
    parse_kb, serialize_kb, AdjustDirection, AdjustmentDelta, AtomTest, Clause, ClauseId, CmpOp,
    ExclusiveGroup, GuardExpr, PenaltySpec, StatuteArticle, StatuteKB, UpperBound,
};
use gavel_core::metrics::{invariance, provision_prf1, PredictionRecord};
use gavel_core::solver::{implies, Implication};

fn base_case() -> CaseRecord {
    let mut case = CaseRecord::new("c1");
    case.suspect_ids = vec!["s1".to_string()];
    case.facts = vec![
        FactAtom::new(ElementKind::Actor, "s1", "actor_type", FactValue::token("person")),
        FactAtom::new(
            ElementKind::MentalState,
            "s1",
            "mental_state",
            FactValue::token("Intentional"),
        ),
    ];
    case
}

fn attrs_strategy() -> impl Strategy<Value = Vec<ExtraLegalAttr>> {
    proptest::collection::vec(
        (
            prop_oneof![
                Just("gender".to_string()),
                Just("ethnicity".to_string()),
                Just("wealth".to_string()),
                Just("court_level".to_string())
            ],
            "[a-z]{1,8}",
        )
            .prop_map(|(name, value)| ExtraLegalAttr { name, value }),
        0..4,
    )
}

proptest! {
    /// The relation over extra-legal deletion is an equivalence relation.
    #[test]
    fn extra_legal_equivalence_relation(
        a in attrs_strategy(),
        b in attrs_strategy(),
        c in attrs_strategy(),
    ) {
        let mut x = base_case();
        x.extra_legal = a;
        let mut y = base_case();
        y.extra_legal = b;
        let mut z = base_case();
        z.extra_legal = c;

        prop_assert!(extra_legal_equivalent(&x, &x));
        prop_assert_eq!(extra_legal_equivalent(&x, &y), extra_legal_equivalent(&y, &x));
        if extra_legal_equivalent(&x, &y) && extra_legal_equivalent(&y, &z) {
            prop_assert!(extra_legal_equivalent(&x, &z));
        }
    }

    /// Every article lands in exactly one side of the general/specific
    /// split.
    #[test]
    fn article_split_is_a_partition(articles in proptest::collection::vec(1u32..600, 0..12)) {
        let (general, specific) = split_articles(&articles);
        prop_assert!(general.intersection(&specific).next().is_none());
        let union: BTreeSet<u32> = general.union(&specific).copied().collect();
        let input: BTreeSet<u32> = articles.iter().copied().collect();
        prop_assert_eq!(union, input);
        for g in &general {
            prop_assert!(*g <= 101);
        }
        for s in &specific {
            prop_assert!(*s >= 102);
        }
    }

    /// Aggravators never lower the adjusted floor; mitigators never raise
    /// the adjusted ceiling.
    #[test]
    fn adjustment_monotonicity(
        lower in 0u32..100,
        width in 0u32..200,
        deltas in proptest::collection::vec((1u32..40, proptest::bool::ANY), 0..5),
    ) {
        let base = PenaltySpec::closed(lower, lower + width);
        let mk = |months, dir| AdjustmentDelta {
            id: "t/a".to_string(),
            trigger: GuardExpr::Const(true),
            direction: dir,
            delta_months: months,
        };
        let aggs: Vec<AdjustmentDelta> = deltas
            .iter()
            .filter(|(_, agg)| *agg)
            .map(|(m, _)| mk(*m, AdjustDirection::RaiseLower))
            .collect();
        let mits: Vec<AdjustmentDelta> = deltas
            .iter()
            .filter(|(_, agg)| !*agg)
            .map(|(m, _)| mk(*m, AdjustDirection::LowerUpper))
            .collect();
        let all_aggs: Vec<&AdjustmentDelta> = aggs.iter().collect();
        let all_mits: Vec<&AdjustmentDelta> = mits.iter().collect();

        if let Ok(adjusted) = adjust_interval(&base, &all_aggs, &all_mits) {
            prop_assert!(adjusted.min_months() >= base.min_months());
            prop_assert!(adjusted.max_months().unwrap() <= base.max_months().unwrap());
            // dropping one aggravator can only relax the floor
            if !all_aggs.is_empty() {
                let fewer = adjust_interval(&base, &all_aggs[1..], &all_mits).unwrap();
                prop_assert!(fewer.min_months() <= adjusted.min_months());
            }
        }
    }

    /// Candidate merging is commutative and idempotent over candidate
    /// sets.
    #[test]
    fn merge_candidates_commutative_idempotent(
        p_general in proptest::collection::btree_set(1u32..101, 0..5),
        p_specific in proptest::collection::btree_set(102u32..500, 0..5),
        d_general in proptest::collection::btree_set(1u32..101, 0..5),
        d_specific in proptest::collection::btree_set(102u32..500, 0..5),
    ) {
        let p = ArgumentTuple {
            role: Role::Prosecutor,
            facts: Vec::new(),
            candidate_general: p_general,
            candidate_specific: p_specific,
        };
        let d = ArgumentTuple {
            role: Role::Defense,
            facts: Vec::new(),
            candidate_general: d_general,
            candidate_specific: d_specific,
        };
        let pd = merge_arguments(&p, &d);
        let dp = merge_arguments(&d, &p);
        prop_assert_eq!(&pd.candidate_general, &dp.candidate_general);
        prop_assert_eq!(&pd.candidate_specific, &dp.candidate_specific);

        let pp = merge_arguments(&p, &p);
        prop_assert_eq!(&pp.candidate_general, &p.candidate_general);
        prop_assert_eq!(&pp.candidate_specific, &p.candidate_specific);
    }

    /// Metric values are invariant under permutation of the input order.
    #[test]
    fn metrics_permutation_invariant(flips in proptest::collection::vec(proptest::bool::ANY, 1..20)) {
        let preds: Vec<(PredictionRecord, PredictionRecord)> = flips
            .iter()
            .enumerate()
            .map(|(i, flip)| {
                let base = PredictionRecord {
                    case_id: format!("b{i}"),
                    predicted_general: BTreeSet::new(),
                    predicted_specific: [264].into_iter().collect(),
                    predicted_sentence_months: None,
                    valid: true,
                    paired_with: None,
                };
                let mut pert = base.clone();
                if *flip {
                    pert.predicted_specific = [266].into_iter().collect();
                }
                (base, pert)
            })
            .collect();
        let forward: Vec<(&PredictionRecord, &PredictionRecord)> =
            preds.iter().map(|(a, b)| (a, b)).collect();
        let mut reversed = forward.clone();
        reversed.reverse();
        let a = invariance(&forward).unwrap();
        let b = invariance(&reversed).unwrap();
        prop_assert_eq!(a.numerator, b.numerator);
        prop_assert_eq!(a.denominator, b.denominator);
    }

    /// F1 always satisfies the harmonic identity when defined.
    #[test]
    fn f1_identity(sets in proptest::collection::vec(
        (
            proptest::collection::btree_set(1u32..20, 0..5),
            proptest::collection::btree_set(1u32..20, 0..5),
        ),
        1..10,
    )) {
        let items: Vec<(&BTreeSet<u32>, &BTreeSet<u32>)> =
            sets.iter().map(|(p, g)| (p, g)).collect();
        let prf = provision_prf1(&items).unwrap();
        if let (Some(p), Some(r)) = (prf.precision, prf.recall) {
            if p.value + r.value > 0.0 {
                let expected = 2.0 * p.value * r.value / (p.value + r.value);
                prop_assert!((prf.f1.unwrap() - expected).abs() < 1e-12);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Randomized KB round-trip
// ---------------------------------------------------------------------------

fn guard_strategy() -> impl Strategy<Value = GuardExpr> {
    let leaf = prop_oneof![
        (0u8..4).prop_map(|i| GuardExpr::atom(&format!("flag{i}"), AtomTest::Bool(true))),
        (0u8..3).prop_map(|i| GuardExpr::atom(
            "mental_state",
            AtomTest::Token(["Intentional", "Negligent", "Knowing"][i as usize].to_string())
        )),
        (0i64..100, 0u8..5).prop_map(|(n, op)| GuardExpr::atom(
            "amount",
            AtomTest::Cmp([CmpOp::Lt, CmpOp::Le, CmpOp::Eq, CmpOp::Ge, CmpOp::Gt][op as usize], n)
        )),
    ];
    leaf.prop_recursive(3, 12, 3, |inner| {
        prop_oneof![
            proptest::collection::vec(inner.clone(), 2..4).prop_map(GuardExpr::And),
            proptest::collection::vec(inner.clone(), 2..4).prop_map(GuardExpr::Or),
            inner.clone().prop_map(|g| GuardExpr::Not(Box::new(g))),
            inner.prop_map(|g| GuardExpr::ExistsAct(Box::new(g))),
        ]
    })
}

fn kb_from_guards(guards: Vec<GuardExpr>) -> StatuteKB {
    let mut kb = StatuteKB::empty();
    kb.exclusivity.push(ExclusiveGroup {
        predicate: "mental_state".to_string(),
        tokens: ["Intentional", "Negligent", "Knowing", "Unknown"]
            .into_iter()
            .map(String::from)
            .collect(),
    });
    for (i, guard) in guards.into_iter().enumerate() {
        let article_no = 200 + i as u32;
        kb.articles.insert(
            article_no,
            StatuteArticle {
                article_no,
                article_guard: GuardExpr::Const(true),
                clauses: vec![Clause {
                    clause_id: ClauseId(article_no, 1),
                    guard,
                    penalty: PenaltySpec {
                        lower_months: 3,
                        upper: UpperBound::Months(40),
                        lower_strict: false,
                        upper_strict: true,
                    },
                    adjustments: vec![AdjustmentDelta {
                        id: format!("{}.1/bump", article_no),
                        trigger: GuardExpr::atom("flag0", AtomTest::Bool(true)),
                        direction: AdjustDirection::RaiseLower,
                        delta_months: 5,
                    }],
                    consequence_label: format!("bracket {article_no}"),
                }],
                field_defaults: [("amount".to_string(), FactValue::Int(0))].into(),
            },
        );
    }
    kb
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The canonical serializer and the parser are mutually inverse on
    /// generated knowledge bases.
    #[test]
    fn kb_serialization_round_trip(guards in proptest::collection::vec(guard_strategy(), 1..4)) {
        let kb = kb_from_guards(guards);
        let text = serialize_kb(&kb);
        let reparsed = parse_kb(&text).unwrap();
        prop_assert_eq!(&kb.articles, &reparsed.articles);
        prop_assert_eq!(&kb.exclusivity, &reparsed.exclusivity);
        // and the text form is canonical
        prop_assert_eq!(text, serialize_kb(&reparsed));
    }

    /// Implication is reflexive for every generated guard.
    #[test]
    fn implies_reflexive(guard in guard_strategy()) {
        prop_assume!(guard.atom_count() <= 12);
        prop_assert_eq!(implies(&guard, &guard, &[], 16), Implication::Implies);
    }
}
