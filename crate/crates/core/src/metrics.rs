//! Metric battery over predictions paired with gold labels and
//! perturbation metadata.
//!
//! Every rate carries its numerator and denominator so results can be
//! recounted by hand. Statute comparisons follow two conventions,
//! stated in the report: "prediction changed" (invariance, change
//! alignment, attack invariance) compares the union of the general and
//! specific sets, while "correct" (statute correctness, ASR, CRR)
//! requires exact equality on both granularities. Precision/recall/F1 are
//! micro-averaged. Sentencing RMSE excludes Life/Death gold sentences
//! (months are undefined for them); their count is reported separately,
//! and an ASR with no clean-correct pair is reported as absent rather
//! than zero.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::ClusterTable;
use crate::case::SentenceLabel;
use crate::perturb::{PerturbFamily, PerturbationPair};

// ---------------------------------------------------------------------------
// Records and primitives
// ---------------------------------------------------------------------------

/// One model prediction for one case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub case_id: String,
    #[serde(default)]
    pub predicted_general: BTreeSet<u32>,
    #[serde(default)]
    pub predicted_specific: BTreeSet<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_sentence_months: Option<i64>,
    #[serde(default)]
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paired_with: Option<String>,
}

impl PredictionRecord {
    /// Union of the predicted statute sets.
    pub fn statute_union(&self) -> BTreeSet<u32> {
        self.predicted_general
            .union(&self.predicted_specific)
            .copied()
            .collect()
    }
}

impl From<&crate::adjudicate::Judgment> for PredictionRecord {
    fn from(judgment: &crate::adjudicate::Judgment) -> Self {
        PredictionRecord {
            case_id: judgment.case_id.clone(),
            predicted_general: judgment.general_articles.clone(),
            predicted_specific: judgment.specific_articles.clone(),
            predicted_sentence_months: judgment.point_sentence_months,
            valid: judgment.valid,
            paired_with: None,
        }
    }
}

/// A rate with its integer counts, so every value can be recounted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub numerator: u64,
    pub denominator: u64,
    pub value: f64,
}

impl Rate {
    pub fn new(numerator: u64, denominator: u64) -> Rate {
        Rate {
            numerator,
            denominator,
            value: if denominator == 0 {
                0.0
            } else {
                numerator as f64 / denominator as f64
            },
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("metric over an empty input")]
    EmptyInput,
    #[error("baseline group `{0}` missing from group scores")]
    MissingBaseline(String),
}

/// Gold statute sets for one case.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GoldSets {
    pub general: BTreeSet<u32>,
    pub specific: BTreeSet<u32>,
}

impl GoldSets {
    pub fn union(&self) -> BTreeSet<u32> {
        self.general.union(&self.specific).copied().collect()
    }
}

fn exact_correct(pred: &PredictionRecord, gold: &GoldSets) -> bool {
    pred.predicted_general == gold.general && pred.predicted_specific == gold.specific
}

/// Set-level F1 between two statute sets; two empty sets match perfectly.
pub fn set_f1(pred: &BTreeSet<u32>, gold: &BTreeSet<u32>) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    let tp = pred.intersection(gold).count() as f64;
    let total = (pred.len() + gold.len()) as f64;
    2.0 * tp / total
}

// ---------------------------------------------------------------------------
// Core metrics
// ---------------------------------------------------------------------------

/// Fraction of label-preserving pairs whose predicted statute set
/// (general union specific) is unchanged.
pub fn invariance(
    pairs: &[(&PredictionRecord, &PredictionRecord)],
) -> Result<Rate, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let unchanged = pairs
        .iter()
        .filter(|(base, pert)| base.statute_union() == pert.statute_union())
        .count() as u64;
    Ok(Rate::new(unchanged, pairs.len() as u64))
}

/// Fraction of label-changing pairs whose prediction changed.
pub fn change_alignment(
    pairs: &[(&PredictionRecord, &PredictionRecord)],
) -> Result<Rate, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let changed = pairs
        .iter()
        .filter(|(base, pert)| base.statute_union() != pert.statute_union())
        .count() as u64;
    Ok(Rate::new(changed, pairs.len() as u64))
}

/// Exact statute-set correctness against the post-perturbation gold.
pub fn statute_correctness(
    items: &[(&PredictionRecord, &GoldSets)],
) -> Result<Rate, MetricError> {
    if items.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let exact = items
        .iter()
        .filter(|(pred, gold)| exact_correct(pred, gold))
        .count() as u64;
    Ok(Rate::new(exact, items.len() as u64))
}

/// Mean per-case statute matching score: the average of the general-set
/// F1 and the specific-set F1, averaged over cases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreStat {
    pub mean: f64,
    pub count: u64,
}

pub fn overall_score(items: &[(&PredictionRecord, &GoldSets)]) -> Result<ScoreStat, MetricError> {
    if items.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let total: f64 = items
        .iter()
        .map(|(pred, gold)| {
            (set_f1(&pred.predicted_general, &gold.general)
                + set_f1(&pred.predicted_specific, &gold.specific))
                / 2.0
        })
        .sum();
    Ok(ScoreStat {
        mean: total / items.len() as f64,
        count: items.len() as u64,
    })
}

/// Attack robustness metrics over clean/attacked prediction pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackMetrics {
    /// Clean-correct pairs broken by the attack; absent when no pair is
    /// clean-correct (undefined, not zero).
    pub asr: Option<Rate>,
    /// Correct before attack and still correct after.
    pub crr: Rate,
    /// Prediction (statute-union) unchanged under attack.
    pub attack_invariance: Rate,
    pub attack_precision: Option<Rate>,
    pub attack_recall: Option<Rate>,
    pub attack_f1: Option<f64>,
}

pub fn attack_metrics(
    items: &[(&PredictionRecord, &PredictionRecord, &GoldSets)],
) -> Result<AttackMetrics, MetricError> {
    if items.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let total = items.len() as u64;
    let clean_correct: Vec<_> = items
        .iter()
        .filter(|(clean, _, gold)| exact_correct(clean, gold))
        .collect();
    let broken = clean_correct
        .iter()
        .filter(|(_, attacked, gold)| !exact_correct(attacked, gold))
        .count() as u64;
    let retained = clean_correct.len() as u64 - broken;

    let unchanged = items
        .iter()
        .filter(|(clean, attacked, _)| clean.statute_union() == attacked.statute_union())
        .count() as u64;

    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for (_, attacked, gold) in items {
        let pred = attacked.statute_union();
        let gold = gold.union();
        tp += pred.intersection(&gold).count() as u64;
        fp += pred.difference(&gold).count() as u64;
        fn_ += gold.difference(&pred).count() as u64;
    }
    let precision = (tp + fp > 0).then(|| Rate::new(tp, tp + fp));
    let recall = (tp + fn_ > 0).then(|| Rate::new(tp, tp + fn_));
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p.value + r.value > 0.0 => {
            Some(2.0 * p.value * r.value / (p.value + r.value))
        }
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };

    Ok(AttackMetrics {
        asr: (!clean_correct.is_empty())
            .then(|| Rate::new(broken, clean_correct.len() as u64)),
        crr: Rate::new(retained, total),
        attack_invariance: Rate::new(unchanged, total),
        attack_precision: precision,
        attack_recall: recall,
        attack_f1: f1,
    })
}

/// Weighted performance shift across groups relative to a baseline group:
/// `sum_g w_g * |score_g - score_baseline|` with `w_g` proportional to
/// group size over the non-baseline total.
pub fn bias_magnitude(
    group_scores: &BTreeMap<String, (f64, u64)>,
    baseline_group: &str,
) -> Result<f64, MetricError> {
    let (baseline_score, _) = group_scores
        .get(baseline_group)
        .ok_or_else(|| MetricError::MissingBaseline(baseline_group.to_string()))?;
    let non_baseline: Vec<_> = group_scores
        .iter()
        .filter(|(name, _)| name.as_str() != baseline_group)
        .collect();
    let total: u64 = non_baseline.iter().map(|(_, (_, size))| size).sum();
    if total == 0 {
        return Ok(0.0);
    }
    Ok(non_baseline
        .iter()
        .map(|(_, (score, size))| {
            (*size as f64 / total as f64) * (score - baseline_score).abs()
        })
        .sum())
}

/// Micro-averaged precision/recall/F1 over statute set membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: Option<Rate>,
    pub recall: Option<Rate>,
    pub f1: Option<f64>,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
}

pub fn provision_prf1(
    items: &[(&BTreeSet<u32>, &BTreeSet<u32>)],
) -> Result<Prf1, MetricError> {
    if items.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for (pred, gold) in items {
        tp += pred.intersection(gold).count() as u64;
        fp += pred.difference(gold).count() as u64;
        fn_ += gold.difference(pred).count() as u64;
    }
    let precision = (tp + fp > 0).then(|| Rate::new(tp, tp + fp));
    let recall = (tp + fn_ > 0).then(|| Rate::new(tp, tp + fn_));
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p.value + r.value > 0.0 => {
            Some(2.0 * p.value * r.value / (p.value + r.value))
        }
        (Some(_), Some(_)) => Some(0.0),
        (None, Some(_)) => Some(0.0),
        _ => None,
    };
    Ok(Prf1 {
        precision,
        recall,
        f1,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
    })
}

/// Sentencing error and legal validity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentencingMetrics {
    /// RMSE in months over cases with numeric gold and a predicted
    /// sentence; absent when no case qualifies.
    pub rmse_months: Option<f64>,
    pub rmse_cases: u64,
    /// Gold sentences excluded because they are Life/Death.
    pub excluded_special: u64,
    /// Cases without a comparable (gold, predicted) sentence pair.
    pub excluded_missing: u64,
    pub valid_ratio: Rate,
}

pub fn sentencing_metrics(
    items: &[(Option<i64>, Option<SentenceLabel>, bool)],
) -> Result<SentencingMetrics, MetricError> {
    if items.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut sum_sq = 0.0f64;
    let mut counted = 0u64;
    let mut excluded_special = 0u64;
    let mut excluded_missing = 0u64;
    let mut valid_count = 0u64;
    for (pred, gold, valid) in items {
        if *valid {
            valid_count += 1;
        }
        match gold {
            Some(SentenceLabel::Special(_)) => excluded_special += 1,
            Some(SentenceLabel::Months(months)) => match pred {
                Some(pred) => {
                    let err = *pred as f64 - *months as f64;
                    sum_sq += err * err;
                    counted += 1;
                }
                None => excluded_missing += 1,
            },
            None => excluded_missing += 1,
        }
    }
    Ok(SentencingMetrics {
        rmse_months: (counted > 0).then(|| (sum_sq / counted as f64).sqrt()),
        rmse_cases: counted,
        excluded_special,
        excluded_missing,
        valid_ratio: Rate::new(valid_count, items.len() as u64),
    })
}

/// Per-cluster breakdown row (rates over the cluster's positive cases,
/// false activation over its negative cases).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub evaluated: u64,
    pub positives: u64,
    pub hit: Option<Rate>,
    pub exact: Option<Rate>,
    pub miss: Option<Rate>,
    pub wrong: Option<Rate>,
    pub false_activation: Option<Rate>,
}

/// Confusing-statute discrimination metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetrics {
    /// Exact cluster-article match over (case, cluster) pairs where the
    /// cluster contains at least one gold article.
    pub positive_exactness: Option<Rate>,
    /// Mean of per-cluster exactness over clusters with positives.
    pub macro_exactness: Option<f64>,
    /// At least one gold cluster article missed.
    pub gold_omission: Option<Rate>,
    /// A non-gold article selected from the same cluster.
    pub wrong_similar_selection: Option<Rate>,
    /// Cluster article selected although the cluster holds no gold
    /// article.
    pub false_activation: Option<Rate>,
    pub per_cluster: BTreeMap<String, ClusterRow>,
}

pub fn cluster_metrics(
    items: &[(&PredictionRecord, &GoldSets)],
    clusters: &ClusterTable,
) -> Result<ClusterMetrics, MetricError> {
    if items.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut pos_total = 0u64;
    let mut pos_exact = 0u64;
    let mut omission = 0u64;
    let mut wrong = 0u64;
    let mut neg_total = 0u64;
    let mut neg_activated = 0u64;
    let mut per_cluster: BTreeMap<String, (u64, u64, u64, u64, u64, u64, u64)> = BTreeMap::new();

    for (pred, gold) in items {
        let pred_union = pred.statute_union();
        let gold_union = gold.union();
        for (name, members) in &clusters.clusters {
            let gold_in: BTreeSet<u32> = gold_union.intersection(members).copied().collect();
            let pred_in: BTreeSet<u32> = pred_union.intersection(members).copied().collect();
            let row = per_cluster.entry(name.clone()).or_default();
            row.0 += 1; // evaluated
            if gold_in.is_empty() {
                neg_total += 1;
                if !pred_in.is_empty() {
                    neg_activated += 1;
                    row.6 += 1;
                }
            } else {
                pos_total += 1;
                row.1 += 1;
                if !pred_in.is_disjoint(&gold_in) {
                    row.2 += 1;
                }
                if pred_in == gold_in {
                    pos_exact += 1;
                    row.3 += 1;
                }
                if !gold_in.is_subset(&pred_in) {
                    omission += 1;
                    row.4 += 1;
                }
                if !pred_in.is_subset(&gold_in) {
                    wrong += 1;
                    row.5 += 1;
                }
            }
        }
    }

    let per_cluster: BTreeMap<String, ClusterRow> = per_cluster
        .into_iter()
        .map(|(name, (evaluated, positives, hit, exact, miss, wrong, activated))| {
            let negatives = evaluated - positives;
            (
                name,
                ClusterRow {
                    evaluated,
                    positives,
                    hit: (positives > 0).then(|| Rate::new(hit, positives)),
                    exact: (positives > 0).then(|| Rate::new(exact, positives)),
                    miss: (positives > 0).then(|| Rate::new(miss, positives)),
                    wrong: (positives > 0).then(|| Rate::new(wrong, positives)),
                    false_activation: (negatives > 0).then(|| Rate::new(activated, negatives)),
                },
            )
        })
        .collect();

    let exact_rates: Vec<f64> = per_cluster
        .values()
        .filter_map(|row| row.exact.map(|r| r.value))
        .collect();

    Ok(ClusterMetrics {
        positive_exactness: (pos_total > 0).then(|| Rate::new(pos_exact, pos_total)),
        macro_exactness: (!exact_rates.is_empty())
            .then(|| exact_rates.iter().sum::<f64>() / exact_rates.len() as f64),
        gold_omission: (pos_total > 0).then(|| Rate::new(omission, pos_total)),
        wrong_similar_selection: (pos_total > 0).then(|| Rate::new(wrong, pos_total)),
        false_activation: (neg_total > 0).then(|| Rate::new(neg_activated, neg_total)),
        per_cluster,
    })
}

// ---------------------------------------------------------------------------
// Family dispatch and corpus evaluation
// ---------------------------------------------------------------------------

/// Metric names attached to each perturbation family (the evaluation-axis
/// rows of the framework).
pub fn metrics_for_family(family: PerturbFamily) -> &'static [&'static str] {
    match family {
        PerturbFamily::JudicialFairness => &["invariance", "bias_magnitude"],
        PerturbFamily::BenignRobustness => &["overall_score", "invariance", "bias_magnitude"],
        PerturbFamily::MajorPremise | PerturbFamily::ConclusionLevel => {
            &["asr", "crr", "attack_invariance", "attack_f1"]
        }
        PerturbFamily::MinorPremise => &["overall_score", "invariance", "bias_magnitude"],
        PerturbFamily::StatutoryElement
        | PerturbFamily::MentalState
        | PerturbFamily::ExceptionCondition => &[
            "overall_score",
            "change_alignment",
            "statute_correctness",
            "bias_magnitude",
        ],
        PerturbFamily::StatuteConfusion => &[
            "positive_exactness",
            "macro_exactness",
            "gold_omission",
            "wrong_similar_selection",
        ],
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("predictions missing for {0} case id(s): {1}")]
    MissingPredictions(usize, String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Per-category breakdown row (mirrors the category table shape).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub instances: u64,
    pub changed_rate: f64,
    pub overall: f64,
    pub general_score: f64,
    pub specific_score: f64,
}

/// Per-attack-template breakdown row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackTemplateRow {
    pub pairs: u64,
    pub clean_accuracy: f64,
    pub attack_accuracy: f64,
    pub asr: Option<f64>,
    pub invariance: f64,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub value: f64,
    pub baseline_group: String,
    /// group -> (overall score, size)
    pub groups: BTreeMap<String, (f64, u64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub pairs: u64,
    pub label_preserving: u64,
    pub label_changing: u64,
    pub attack_pairs: u64,
}

/// The full metric report computed by [`evaluate_corpus`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub counts: ReportCounts,
    pub invariance: Option<Rate>,
    pub change_alignment: Option<Rate>,
    pub statute_correctness: Option<Rate>,
    pub overall_score: Option<ScoreStat>,
    pub bias_magnitude: Option<BiasReport>,
    pub attack: Option<AttackMetrics>,
    pub provision_general: Option<Prf1>,
    pub provision_specific: Option<Prf1>,
    pub sentencing: Option<SentencingMetrics>,
    pub cluster: Option<ClusterMetrics>,
    pub by_family: BTreeMap<String, BTreeMap<String, serde_json::Value>>,
    pub by_category: BTreeMap<String, CategoryRow>,
    pub by_attack_template: BTreeMap<String, AttackTemplateRow>,
    pub notes: Vec<String>,
}

struct EvalRow<'a> {
    pair: &'a PerturbationPair,
    base_pred: &'a PredictionRecord,
    pert_pred: &'a PredictionRecord,
    pert_gold: GoldSets,
    categories: Vec<String>,
}

fn attack_template_name(pair: &PerturbationPair) -> Option<String> {
    if let Some(template) = pair.spec.attack_template {
        return Some(template.name().to_string());
    }
    pair.spec.rules.iter().find_map(|rule| {
        rule.strip_prefix("inject_attack(")
            .and_then(|rest| rest.strip_suffix(')'))
            .map(|name| name.to_string())
    })
}

fn is_attack_family(family: PerturbFamily) -> bool {
    matches!(
        family,
        PerturbFamily::MajorPremise | PerturbFamily::ConclusionLevel
    )
}

/// Evaluates a pair corpus against a prediction table. Prediction ids
/// must cover both sides of every pair.
pub fn evaluate_corpus(
    pairs: &[PerturbationPair],
    predictions: &BTreeMap<String, PredictionRecord>,
    clusters: &ClusterTable,
    baseline_group: Option<&str>,
) -> Result<MetricReport, EvalError> {
    let mut missing: BTreeSet<String> = BTreeSet::new();
    for pair in pairs {
        for id in [&pair.base_case.case_id, &pair.perturbed_case.case_id] {
            if !predictions.contains_key(id) {
                missing.insert(id.clone());
            }
        }
    }
    if !missing.is_empty() {
        let listed: Vec<String> = missing.iter().cloned().collect();
        return Err(EvalError::MissingPredictions(listed.len(), listed.join(", ")));
    }

    let rows: Vec<EvalRow> = pairs
        .iter()
        .map(|pair| EvalRow {
            pair,
            base_pred: &predictions[&pair.base_case.case_id],
            pert_pred: &predictions[&pair.perturbed_case.case_id],
            pert_gold: GoldSets {
                general: pair.perturbed_case.gold_general_articles.clone(),
                specific: pair.perturbed_case.gold_specific_articles.clone(),
            },
            categories: crate::perturb::categories_for(&pair.spec),
        })
        .collect();

    let preserving: Vec<&EvalRow> = rows.iter().filter(|r| !r.pair.spec.changed_label).collect();
    let changing: Vec<&EvalRow> = rows.iter().filter(|r| r.pair.spec.changed_label).collect();
    let attacks: Vec<&EvalRow> = rows
        .iter()
        .filter(|r| is_attack_family(r.pair.spec.family))
        .collect();

    let mut notes = vec![
        "prediction change compares the union of general and specific sets".to_string(),
        "correctness requires exact equality on both granularities".to_string(),
        "precision/recall/F1 are micro-averaged".to_string(),
        "overall score is the mean of per-case general/specific set F1".to_string(),
    ];

    let invariance_rate = {
        let input: Vec<_> = preserving.iter().map(|r| (r.base_pred, r.pert_pred)).collect();
        invariance(&input).ok()
    };
    let alignment_rate = {
        let input: Vec<_> = changing.iter().map(|r| (r.base_pred, r.pert_pred)).collect();
        change_alignment(&input).ok()
    };
    let correctness_rate = {
        let input: Vec<_> = changing.iter().map(|r| (r.pert_pred, &r.pert_gold)).collect();
        statute_correctness(&input).ok()
    };
    let overall = {
        let input: Vec<_> = rows.iter().map(|r| (r.pert_pred, &r.pert_gold)).collect();
        overall_score(&input).ok()
    };

    // Category table over all pairs, scored post-perturbation.
    let mut by_category: BTreeMap<String, Vec<&EvalRow>> = BTreeMap::new();
    for row in &rows {
        for category in &row.categories {
            by_category.entry(category.clone()).or_default().push(row);
        }
    }
    let category_rows: BTreeMap<String, CategoryRow> = by_category
        .iter()
        .map(|(name, rows)| {
            let n = rows.len() as u64;
            let changed = rows
                .iter()
                .filter(|r| r.base_pred.statute_union() != r.pert_pred.statute_union())
                .count() as u64;
            let general: f64 = rows
                .iter()
                .map(|r| set_f1(&r.pert_pred.predicted_general, &r.pert_gold.general))
                .sum::<f64>()
                / n as f64;
            let specific: f64 = rows
                .iter()
                .map(|r| set_f1(&r.pert_pred.predicted_specific, &r.pert_gold.specific))
                .sum::<f64>()
                / n as f64;
            (
                name.clone(),
                CategoryRow {
                    instances: n,
                    changed_rate: changed as f64 / n as f64,
                    overall: (general + specific) / 2.0,
                    general_score: general,
                    specific_score: specific,
                },
            )
        })
        .collect();

    let bias = baseline_group.and_then(|baseline| {
        let groups: BTreeMap<String, (f64, u64)> = category_rows
            .iter()
            .map(|(name, row)| (name.clone(), (row.overall, row.instances)))
            .collect();
        match bias_magnitude(&groups, baseline) {
            Ok(value) => Some(BiasReport {
                value,
                baseline_group: baseline.to_string(),
                groups,
            }),
            Err(e) => {
                notes.push(format!("bias magnitude unavailable: {e}"));
                None
            }
        }
    });

    let attack = {
        let input: Vec<_> = attacks
            .iter()
            .map(|r| (r.base_pred, r.pert_pred, &r.pert_gold))
            .collect();
        attack_metrics(&input).ok()
    };

    let by_attack_template: BTreeMap<String, AttackTemplateRow> = {
        let mut grouped: BTreeMap<String, Vec<&EvalRow>> = BTreeMap::new();
        for row in &attacks {
            let name = attack_template_name(row.pair).unwrap_or_else(|| "untagged".to_string());
            grouped.entry(name).or_default().push(row);
        }
        grouped
            .into_iter()
            .map(|(name, rows)| {
                let input: Vec<_> = rows
                    .iter()
                    .map(|r| (r.base_pred, r.pert_pred, &r.pert_gold))
                    .collect();
                let metrics = attack_metrics(&input).expect("grouped rows are nonempty");
                let clean_correct = rows
                    .iter()
                    .filter(|r| exact_correct(r.base_pred, &r.pert_gold))
                    .count() as f64;
                let attack_correct = rows
                    .iter()
                    .filter(|r| exact_correct(r.pert_pred, &r.pert_gold))
                    .count() as f64;
                (
                    name,
                    AttackTemplateRow {
                        pairs: rows.len() as u64,
                        clean_accuracy: clean_correct / rows.len() as f64,
                        attack_accuracy: attack_correct / rows.len() as f64,
                        asr: metrics.asr.map(|r| r.value),
                        invariance: metrics.attack_invariance.value,
                        f1: metrics.attack_f1,
                    },
                )
            })
            .collect()
    };

    let provision_general = {
        let input: Vec<_> = rows
            .iter()
            .map(|r| (&r.pert_pred.predicted_general, &r.pert_gold.general))
            .collect();
        provision_prf1(&input).ok()
    };
    let provision_specific = {
        let input: Vec<_> = rows
            .iter()
            .map(|r| (&r.pert_pred.predicted_specific, &r.pert_gold.specific))
            .collect();
        provision_prf1(&input).ok()
    };

    let sentencing = {
        let input: Vec<_> = rows
            .iter()
            .map(|r| {
                (
                    r.pert_pred.predicted_sentence_months,
                    r.pair.perturbed_case.gold_sentence_months,
                    r.pert_pred.valid,
                )
            })
            .collect();
        sentencing_metrics(&input).ok()
    };

    let cluster = {
        let input: Vec<_> = rows.iter().map(|r| (r.pert_pred, &r.pert_gold)).collect();
        cluster_metrics(&input, clusters).ok()
    };

    // Per-family sections, restricted to each family's dispatch list.
    let mut by_family: BTreeMap<String, BTreeMap<String, serde_json::Value>> = BTreeMap::new();
    let mut families: BTreeSet<PerturbFamily> =
        rows.iter().map(|r| r.pair.spec.family).collect();
    for family in std::mem::take(&mut families) {
        let subset: Vec<&EvalRow> = rows
            .iter()
            .filter(|r| r.pair.spec.family == family)
            .collect();
        let mut section = BTreeMap::new();
        for metric in metrics_for_family(family) {
            let value: Option<serde_json::Value> = match *metric {
                "invariance" => {
                    let input: Vec<_> =
                        subset.iter().map(|r| (r.base_pred, r.pert_pred)).collect();
                    invariance(&input).ok().map(|r| serde_json::to_value(r).unwrap())
                }
                "change_alignment" => {
                    let input: Vec<_> =
                        subset.iter().map(|r| (r.base_pred, r.pert_pred)).collect();
                    change_alignment(&input).ok().map(|r| serde_json::to_value(r).unwrap())
                }
                "statute_correctness" => {
                    let input: Vec<_> =
                        subset.iter().map(|r| (r.pert_pred, &r.pert_gold)).collect();
                    statute_correctness(&input)
                        .ok()
                        .map(|r| serde_json::to_value(r).unwrap())
                }
                "overall_score" => {
                    let input: Vec<_> =
                        subset.iter().map(|r| (r.pert_pred, &r.pert_gold)).collect();
                    overall_score(&input).ok().map(|r| serde_json::to_value(r).unwrap())
                }
                "bias_magnitude" => bias
                    .as_ref()
                    .map(|b| serde_json::to_value(b.value).unwrap()),
                "asr" | "crr" | "attack_invariance" | "attack_f1" => {
                    let input: Vec<_> = subset
                        .iter()
                        .map(|r| (r.base_pred, r.pert_pred, &r.pert_gold))
                        .collect();
                    attack_metrics(&input).ok().and_then(|m| match *metric {
                        "asr" => m.asr.map(|r| serde_json::to_value(r).unwrap()),
                        "crr" => Some(serde_json::to_value(m.crr).unwrap()),
                        "attack_invariance" => {
                            Some(serde_json::to_value(m.attack_invariance).unwrap())
                        }
                        _ => m.attack_f1.map(|v| serde_json::to_value(v).unwrap()),
                    })
                }
                "positive_exactness" | "macro_exactness" | "gold_omission"
                | "wrong_similar_selection" => {
                    let input: Vec<_> =
                        subset.iter().map(|r| (r.pert_pred, &r.pert_gold)).collect();
                    cluster_metrics(&input, clusters).ok().and_then(|m| match *metric {
                        "positive_exactness" => {
                            m.positive_exactness.map(|r| serde_json::to_value(r).unwrap())
                        }
                        "macro_exactness" => {
                            m.macro_exactness.map(|v| serde_json::to_value(v).unwrap())
                        }
                        "gold_omission" => {
                            m.gold_omission.map(|r| serde_json::to_value(r).unwrap())
                        }
                        _ => m
                            .wrong_similar_selection
                            .map(|r| serde_json::to_value(r).unwrap()),
                    })
                }
                _ => None,
            };
            if let Some(value) = value {
                section.insert(metric.to_string(), value);
            }
        }
        by_family.insert(family.name().to_string(), section);
    }

    Ok(MetricReport {
        counts: ReportCounts {
            pairs: rows.len() as u64,
            label_preserving: preserving.len() as u64,
            label_changing: changing.len() as u64,
            attack_pairs: attacks.len() as u64,
        },
        invariance: invariance_rate,
        change_alignment: alignment_rate,
        statute_correctness: correctness_rate,
        overall_score: overall,
        bias_magnitude: bias,
        attack,
        provision_general,
        provision_specific,
        sentencing,
        cluster,
        by_family,
        by_category: category_rows,
        by_attack_template,
        notes,
    })
}

/// Flat CSV rendering of a report for spreadsheets:
/// `section,group,metric,value,numerator,denominator`.
pub fn report_to_flat_table(report: &MetricReport) -> String {
    fn push(
        out: &mut String,
        section: &str,
        group: &str,
        metric: &str,
        value: f64,
        num: Option<u64>,
        den: Option<u64>,
    ) {
        let fmt_count = |c: Option<u64>| c.map(|c| c.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{section},{group},{metric},{value},{},{}\n",
            fmt_count(num),
            fmt_count(den)
        ));
    }
    fn rate(out: &mut String, section: &str, group: &str, metric: &str, r: &Rate) {
        push(
            out,
            section,
            group,
            metric,
            r.value,
            Some(r.numerator),
            Some(r.denominator),
        );
    }
    let mut out = String::from("section,group,metric,value,numerator,denominator\n");

    if let Some(r) = &report.invariance {
        rate(&mut out, "summary", "", "invariance", r);
    }
    if let Some(r) = &report.change_alignment {
        rate(&mut out, "summary", "", "change_alignment", r);
    }
    if let Some(r) = &report.statute_correctness {
        rate(&mut out, "summary", "", "statute_correctness", r);
    }
    if let Some(s) = &report.overall_score {
        push(&mut out, "summary", "", "overall_score", s.mean, None, Some(s.count));
    }
    if let Some(b) = &report.bias_magnitude {
        push(&mut out, "summary", &b.baseline_group, "bias_magnitude", b.value, None, None);
    }
    if let Some(a) = &report.attack {
        if let Some(r) = &a.asr {
            rate(&mut out, "attack", "", "asr", r);
        }
        rate(&mut out, "attack", "", "crr", &a.crr);
        rate(&mut out, "attack", "", "attack_invariance", &a.attack_invariance);
        if let Some(f1) = a.attack_f1 {
            push(&mut out, "attack", "", "attack_f1", f1, None, None);
        }
    }
    for (granularity, prf) in [
        ("general", &report.provision_general),
        ("specific", &report.provision_specific),
    ] {
        if let Some(prf) = prf {
            if let Some(p) = &prf.precision {
                rate(&mut out, "provision", granularity, "precision", p);
            }
            if let Some(r) = &prf.recall {
                rate(&mut out, "provision", granularity, "recall", r);
            }
            if let Some(f1) = prf.f1 {
                push(&mut out, "provision", granularity, "f1", f1, None, None);
            }
        }
    }
    if let Some(s) = &report.sentencing {
        if let Some(rmse) = s.rmse_months {
            push(&mut out, "sentencing", "", "rmse_months", rmse, None, Some(s.rmse_cases));
        }
        rate(&mut out, "sentencing", "", "valid_ratio", &s.valid_ratio);
    }
    if let Some(c) = &report.cluster {
        if let Some(r) = &c.positive_exactness {
            rate(&mut out, "cluster", "", "positive_exactness", r);
        }
        if let Some(v) = c.macro_exactness {
            push(&mut out, "cluster", "", "macro_exactness", v, None, None);
        }
        if let Some(r) = &c.gold_omission {
            rate(&mut out, "cluster", "", "gold_omission", r);
        }
        if let Some(r) = &c.wrong_similar_selection {
            rate(&mut out, "cluster", "", "wrong_similar_selection", r);
        }
        if let Some(r) = &c.false_activation {
            rate(&mut out, "cluster", "", "false_activation", r);
        }
        for (name, row) in &c.per_cluster {
            if let Some(r) = &row.exact {
                rate(&mut out, "cluster_breakdown", name, "exact", r);
            }
            if let Some(r) = &row.miss {
                rate(&mut out, "cluster_breakdown", name, "miss", r);
            }
            if let Some(r) = &row.wrong {
                rate(&mut out, "cluster_breakdown", name, "wrong", r);
            }
        }
    }
    for (category, row) in &report.by_category {
        push(&mut out, "category", category, "instances", row.instances as f64, None, None);
        push(&mut out, "category", category, "changed_rate", row.changed_rate, None, None);
        push(&mut out, "category", category, "overall", row.overall, None, None);
        push(&mut out, "category", category, "general_score", row.general_score, None, None);
        push(&mut out, "category", category, "specific_score", row.specific_score, None, None);
    }
    for (template, row) in &report.by_attack_template {
        push(&mut out, "attack_template", template, "pairs", row.pairs as f64, None, None);
        push(&mut out, "attack_template", template, "clean_accuracy", row.clean_accuracy, None, None);
        push(&mut out, "attack_template", template, "attack_accuracy", row.attack_accuracy, None, None);
        if let Some(asr) = row.asr {
            push(&mut out, "attack_template", template, "asr", asr, None, None);
        }
        push(&mut out, "attack_template", template, "invariance", row.invariance, None, None);
        if let Some(f1) = row.f1 {
            push(&mut out, "attack_template", template, "f1", f1, None, None);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(id: &str, general: &[u32], specific: &[u32]) -> PredictionRecord {
        PredictionRecord {
            case_id: id.to_string(),
            predicted_general: general.iter().copied().collect(),
            predicted_specific: specific.iter().copied().collect(),
            predicted_sentence_months: None,
            valid: true,
            paired_with: None,
        }
    }

    fn gold(general: &[u32], specific: &[u32]) -> GoldSets {
        GoldSets {
            general: general.iter().copied().collect(),
            specific: specific.iter().copied().collect(),
        }
    }

    #[test]
    fn invariance_counts_unchanged_unions() {
        let a = pred("a", &[64], &[347]);
        let b = pred("b", &[64], &[347]);
        let c = pred("c", &[], &[264]);
        let pairs = vec![(&a, &b), (&a, &b), (&a, &b), (&a, &c)];
        let rate = invariance(&pairs).unwrap();
        assert_eq!((rate.numerator, rate.denominator), (3, 4));
        assert!((rate.value - 0.75).abs() < 1e-12);

        // invariance + changed fraction is exactly 1
        let changed = change_alignment(&pairs).unwrap();
        assert_eq!(rate.numerator + changed.numerator, 4);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert_eq!(invariance(&[]), Err(MetricError::EmptyInput));
        assert_eq!(change_alignment(&[]), Err(MetricError::EmptyInput));
        assert!(matches!(
            sentencing_metrics(&[]),
            Err(MetricError::EmptyInput)
        ));
    }

    #[test]
    fn change_alignment_counts() {
        let base = pred("a", &[], &[264]);
        let changed = pred("b", &[], &[266]);
        let same = pred("c", &[], &[264]);
        let pairs = vec![
            (&base, &changed),
            (&base, &changed),
            (&base, &changed),
            (&base, &same),
            (&base, &same),
        ];
        let rate = change_alignment(&pairs).unwrap();
        assert!((rate.value - 0.6).abs() < 1e-12);
    }

    #[test]
    fn statute_correctness_requires_exactness() {
        let g = gold(&[64], &[347]);
        let exact = pred("a", &[64], &[347]);
        let superset = pred("b", &[64, 65], &[347]);
        let items = vec![(&exact, &g), (&superset, &g)];
        let rate = statute_correctness(&items).unwrap();
        assert_eq!((rate.numerator, rate.denominator), (1, 2));
    }

    #[test]
    fn attack_metrics_hand_count() {
        // 10 pairs: 4 clean-correct, 2 of those break under attack.
        let g = gold(&[], &[347]);
        let correct = pred("c", &[], &[347]);
        let wrong = pred("w", &[], &[264]);
        let mut items = Vec::new();
        for _ in 0..2 {
            items.push((&correct, &correct, &g)); // stays correct
        }
        for _ in 0..2 {
            items.push((&correct, &wrong, &g)); // broken
        }
        for _ in 0..6 {
            items.push((&wrong, &wrong, &g)); // never correct
        }
        let m = attack_metrics(&items).unwrap();
        let asr = m.asr.unwrap();
        assert_eq!((asr.numerator, asr.denominator), (2, 4));
        assert_eq!((m.crr.numerator, m.crr.denominator), (2, 10));
    }

    #[test]
    fn asr_absent_without_clean_correct() {
        let g = gold(&[], &[347]);
        let wrong = pred("w", &[], &[264]);
        let items = vec![(&wrong, &wrong, &g)];
        let m = attack_metrics(&items).unwrap();
        assert!(m.asr.is_none());
        assert_eq!(m.attack_invariance.value, 1.0);
    }

    #[test]
    fn bias_magnitude_weighted_sum() {
        let mut groups = BTreeMap::new();
        groups.insert("noise".to_string(), (0.8, 4));
        groups.insert("gender".to_string(), (0.6, 3));
        groups.insert("wealth".to_string(), (0.8, 1));
        let value = bias_magnitude(&groups, "noise").unwrap();
        // weights 3/4 and 1/4; shifts 0.2 and 0.0
        assert!((value - 0.15).abs() < 1e-12);

        let equal: BTreeMap<String, (f64, u64)> =
            [("noise".to_string(), (0.5, 2)), ("g".to_string(), (0.5, 6))]
                .into_iter()
                .collect();
        assert_eq!(bias_magnitude(&equal, "noise").unwrap(), 0.0);

        assert!(matches!(
            bias_magnitude(&groups, "absent"),
            Err(MetricError::MissingBaseline(_))
        ));
    }

    #[test]
    fn prf1_hand_count() {
        // TP=3, FP=1, FN=2 micro-aggregated
        let pred_a: BTreeSet<u32> = [1, 2, 9].into_iter().collect();
        let gold_a: BTreeSet<u32> = [1, 2, 3].into_iter().collect();
        let pred_b: BTreeSet<u32> = [4].into_iter().collect();
        let gold_b: BTreeSet<u32> = [4, 5].into_iter().collect();
        let items = vec![(&pred_a, &gold_a), (&pred_b, &gold_b)];
        let prf = provision_prf1(&items).unwrap();
        assert_eq!(prf.true_positives, 3);
        assert_eq!(prf.false_positives, 1);
        assert_eq!(prf.false_negatives, 2);
        assert!((prf.precision.unwrap().value - 0.75).abs() < 1e-12);
        assert!((prf.recall.unwrap().value - 0.6).abs() < 1e-12);
        assert!((prf.f1.unwrap() - 2.0 / 3.0).abs() < 1e-9);

        // F1 identity: F1 = 2PR/(P+R)
        let p = prf.precision.unwrap().value;
        let r = prf.recall.unwrap().value;
        assert!((prf.f1.unwrap() - 2.0 * p * r / (p + r)).abs() < 1e-12);
    }

    #[test]
    fn empty_prediction_against_gold_zeroes_recall() {
        let empty: BTreeSet<u32> = BTreeSet::new();
        let gold: BTreeSet<u32> = [1].into_iter().collect();
        let items = vec![(&empty, &gold)];
        let prf = provision_prf1(&items).unwrap();
        assert!(prf.precision.is_none());
        assert_eq!(prf.recall.unwrap().value, 0.0);
        assert_eq!(prf.f1, Some(0.0));
    }

    #[test]
    fn rmse_hand_values() {
        let items = vec![
            (Some(10), Some(SentenceLabel::Months(13)), true),
            (Some(20), Some(SentenceLabel::Months(16)), true),
        ];
        let m = sentencing_metrics(&items).unwrap();
        // errors 3 and 4: sqrt((9+16)/2)
        assert!((m.rmse_months.unwrap() - (25.0f64 / 2.0).sqrt()).abs() < 1e-12);

        let exact = vec![(Some(10), Some(SentenceLabel::Months(10)), true)];
        assert_eq!(sentencing_metrics(&exact).unwrap().rmse_months, Some(0.0));

        let off_by_12 = vec![(Some(24), Some(SentenceLabel::Months(12)), false)];
        let m = sentencing_metrics(&off_by_12).unwrap();
        assert_eq!(m.rmse_months, Some(12.0));
        assert_eq!(m.valid_ratio.numerator, 0);
    }

    #[test]
    fn life_sentences_excluded_from_rmse() {
        let items = vec![
            (Some(10), Some(SentenceLabel::Months(10)), true),
            (
                Some(600),
                Some(SentenceLabel::Special(crate::case::SpecialSentence::Life)),
                true,
            ),
        ];
        let m = sentencing_metrics(&items).unwrap();
        assert_eq!(m.rmse_cases, 1);
        assert_eq!(m.excluded_special, 1);
        assert_eq!(m.rmse_months, Some(0.0));
    }

    #[test]
    fn cluster_metrics_smuggling_confusion() {
        let clusters = ClusterTable::builtin();
        // gold 151, predicted 152: hit=0, exact=0, omission and wrong both count
        let p = pred("a", &[], &[152]);
        let g = gold(&[], &[151]);
        let items = vec![(&p, &g)];
        let m = cluster_metrics(&items, &clusters).unwrap();
        assert_eq!(m.positive_exactness.unwrap().value, 0.0);
        assert_eq!(m.gold_omission.unwrap().value, 1.0);
        assert_eq!(m.wrong_similar_selection.unwrap().value, 1.0);
        // no other cluster is activated
        assert_eq!(m.false_activation.unwrap().numerator, 0);
    }

    #[test]
    fn cluster_macro_is_mean_of_cluster_exactness() {
        let clusters = ClusterTable {
            clusters: [
                ("a".to_string(), [1001, 1002].into_iter().collect()),
                ("b".to_string(), [2001, 2002].into_iter().collect()),
            ]
            .into_iter()
            .collect(),
        };
        let exact_a = pred("x", &[], &[1001]);
        let gold_a = gold(&[], &[1001]);
        let exact_b = pred("y", &[], &[2001]);
        let wrong_b = pred("z", &[], &[2002]);
        let gold_b = gold(&[], &[2001]);
        let items = vec![(&exact_a, &gold_a), (&exact_b, &gold_b), (&wrong_b, &gold_b)];
        let m = cluster_metrics(&items, &clusters).unwrap();
        // cluster a exact 1/1, cluster b exact 1/2, macro 0.75
        assert!((m.macro_exactness.unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(m.positive_exactness.unwrap().value, 2.0 / 3.0);
    }

    #[test]
    fn family_dispatch_covers_every_family() {
        use PerturbFamily::*;
        for family in [
            JudicialFairness,
            BenignRobustness,
            MajorPremise,
            MinorPremise,
            ConclusionLevel,
            StatutoryElement,
            MentalState,
            ExceptionCondition,
            StatuteConfusion,
        ] {
            assert!(!metrics_for_family(family).is_empty());
        }
        assert!(metrics_for_family(JudicialFairness).contains(&"invariance"));
        assert!(metrics_for_family(StatutoryElement).contains(&"change_alignment"));
        assert!(metrics_for_family(ConclusionLevel).contains(&"asr"));
        assert!(metrics_for_family(StatuteConfusion).contains(&"positive_exactness"));
    }
}
