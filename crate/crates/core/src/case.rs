//! Typed, suspect-centric case representation.
//!
//! A [`CaseRecord`] holds the structured facts of one criminal case: typed
//! fact atoms, extra-legal attributes that must never influence adjudication,
//! gold statute labels split into general and specific provisions, and an
//! optional gold sentence. Records are immutable after parsing and safe to
//! share across threads.
//!
//! Three interchange schemas are supported by [`parse_case`]: the processed
//! LeCaRDv2 case format, the suspect-level LEEC format, and the perturbation
//! pair format (for which the perturbed case is returned). The native
//! serde representation of [`CaseRecord`] itself is used inside perturbation
//! records and for structured fixtures.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Article numbers `1..=GENERAL_ARTICLE_MAX` are general-part provisions
/// (liability modifiers such as recidivism or surrender); everything above
/// is a specific-part offense definition.
pub const GENERAL_ARTICLE_MAX: u32 = 101;

/// Splits one article number into the general or the specific bucket.
pub fn is_general_article(article: u32) -> bool {
    article <= GENERAL_ARTICLE_MAX
}

// ---------------------------------------------------------------------------
// Fact atoms
// ---------------------------------------------------------------------------

/// The legal element a fact atom instantiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ElementKind {
    Actor,
    Victim,
    Act,
    Result,
    Causes,
    MentalState,
    ProtectedInterest,
    Amount,
    Severity,
    Qualifier,
    Exception,
}

/// Byte range into the case narrative supporting a fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    /// The substring of `text` covered by this span, if in bounds.
    pub fn slice<'a>(&self, text: &'a str) -> Option<&'a str> {
        text.get(self.start..self.end)
    }
}

/// Value carried by a fact atom.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FactValue {
    Bool(bool),
    Int(i64),
    Token(String),
    /// Pair of identifiers; used by `Causes` atoms as `(act_id, result_id)`.
    Link(String, String),
}

impl FactValue {
    pub fn token(s: &str) -> Self {
        FactValue::Token(s.to_string())
    }

    /// Render for reports and explanations.
    pub fn display(&self) -> String {
        match self {
            FactValue::Bool(b) => b.to_string(),
            FactValue::Int(n) => n.to_string(),
            FactValue::Token(t) => t.clone(),
            FactValue::Link(a, b) => format!("({a},{b})"),
        }
    }
}

/// One typed legal fact about a subject of the case.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FactAtom {
    pub element_kind: ElementKind,
    pub subject_id: String,
    pub predicate_name: String,
    pub value: FactValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<Span>,
}

impl FactAtom {
    pub fn new(kind: ElementKind, subject: &str, predicate: &str, value: FactValue) -> Self {
        FactAtom {
            element_kind: kind,
            subject_id: subject.to_string(),
            predicate_name: predicate.to_string(),
            value,
            span: None,
        }
    }

    pub fn with_span(mut self, start: usize, end: usize) -> Self {
        self.span = Some(Span::new(start, end));
        self
    }
}

/// Demographic or procedural attribute excluded from all legal reasoning.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExtraLegalAttr {
    pub name: String,
    pub value: String,
}

/// Admissible mental-state tokens.
pub const MENTAL_STATE_TOKENS: [&str; 4] = ["Intentional", "Negligent", "Knowing", "Unknown"];
/// Admissible severity tokens.
pub const SEVERITY_TOKENS: [&str; 3] = ["Minor", "Serious", "EspeciallySerious"];

// ---------------------------------------------------------------------------
// Sentences and case records
// ---------------------------------------------------------------------------

/// Reserved non-numeric sentence outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SpecialSentence {
    Life,
    Death,
}

/// A gold or predicted sentence: a month count or a reserved symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SentenceLabel {
    Months(u32),
    Special(SpecialSentence),
}

impl SentenceLabel {
    /// Month count when numeric; `None` for Life/Death.
    pub fn months(&self) -> Option<u32> {
        match self {
            SentenceLabel::Months(m) => Some(*m),
            SentenceLabel::Special(_) => None,
        }
    }
}

/// Per-suspect labels recovered from multi-defendant corpora (LEEC).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuspectLabel {
    pub suspect_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charge: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub general_articles: BTreeSet<u32>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub specific_articles: BTreeSet<u32>,
}

/// One structured case: narrative, typed facts, extra-legal attributes,
/// and gold labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    #[serde(default)]
    pub suspect_ids: Vec<String>,
    #[serde(default)]
    pub narrative: String,
    #[serde(default)]
    pub facts: Vec<FactAtom>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_legal: Vec<ExtraLegalAttr>,
    #[serde(default)]
    pub gold_general_articles: BTreeSet<u32>,
    #[serde(default)]
    pub gold_specific_articles: BTreeSet<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_sentence_months: Option<SentenceLabel>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub suspect_labels: Vec<SuspectLabel>,
}

impl CaseRecord {
    pub fn new(case_id: &str) -> Self {
        CaseRecord {
            case_id: case_id.to_string(),
            suspect_ids: Vec::new(),
            narrative: String::new(),
            facts: Vec::new(),
            extra_legal: Vec::new(),
            gold_general_articles: BTreeSet::new(),
            gold_specific_articles: BTreeSet::new(),
            gold_sentence_months: None,
            suspect_labels: Vec::new(),
        }
    }

    /// Ids declared by atoms of the given kind (acts declare act ids,
    /// results declare result ids, victims declare victim ids).
    pub fn declared_ids(&self, kind: ElementKind) -> BTreeSet<&str> {
        self.facts
            .iter()
            .filter(|f| f.element_kind == kind)
            .map(|f| f.subject_id.as_str())
            .collect()
    }

    /// Facts relevant when adjudicating one suspect of a multi-suspect case:
    /// suspect-scoped atoms of other suspects are dropped; act/result/victim
    /// atoms are kept unless an act carries an explicit `actor` link to a
    /// different suspect.
    pub fn facts_for_suspect(&self, suspect_id: &str) -> Vec<FactAtom> {
        let suspects: BTreeSet<&str> = self.suspect_ids.iter().map(|s| s.as_str()).collect();
        let foreign_acts: BTreeSet<&str> = self
            .facts
            .iter()
            .filter(|f| {
                f.element_kind == ElementKind::Act
                    && f.predicate_name == "actor"
                    && matches!(&f.value, FactValue::Token(t) if t != suspect_id)
            })
            .map(|f| f.subject_id.as_str())
            .collect();
        self.facts
            .iter()
            .filter(|f| {
                if suspects.contains(f.subject_id.as_str()) {
                    f.subject_id == suspect_id
                } else {
                    !foreign_acts.contains(f.subject_id.as_str())
                }
            })
            .cloned()
            .collect()
    }
}

/// True iff the two records coincide on everything except extra-legal
/// attributes, case id, and narrative surface: facts, suspect structure,
/// and gold labels are compared exactly.
pub fn extra_legal_equivalent(a: &CaseRecord, b: &CaseRecord) -> bool {
    a.suspect_ids == b.suspect_ids
        && a.facts == b.facts
        && a.gold_general_articles == b.gold_general_articles
        && a.gold_specific_articles == b.gold_specific_articles
        && a.gold_sentence_months == b.gold_sentence_months
        && a.suspect_labels == b.suspect_labels
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// Checks every structural invariant of a [`CaseRecord`]; violations are
/// returned as data, one description per broken rule.
pub fn validate_case(case: &CaseRecord) -> Vec<String> {
    let mut out = Vec::new();

    for n in case.gold_general_articles.intersection(&case.gold_specific_articles) {
        out.push(format!("general/specific overlap: {n}"));
    }
    for n in &case.gold_general_articles {
        if !is_general_article(*n) {
            out.push(format!("article {n} filed as general but is above the general range"));
        }
        if *n == 0 {
            out.push("article number 0 is not a valid statute reference".to_string());
        }
    }
    for n in &case.gold_specific_articles {
        if is_general_article(*n) {
            out.push(format!("article {n} filed as specific but is in the general range"));
        }
    }

    let suspects: BTreeSet<&str> = case.suspect_ids.iter().map(|s| s.as_str()).collect();
    let victims = case.declared_ids(ElementKind::Victim);
    let acts = case.declared_ids(ElementKind::Act);
    let results = case.declared_ids(ElementKind::Result);

    let mut declared: BTreeSet<&str> = suspects.clone();
    declared.extend(victims.iter());
    declared.extend(acts.iter());
    declared.extend(results.iter());

    for fact in &case.facts {
        match fact.element_kind {
            ElementKind::Amount => {
                // Amounts may sit on a result or at case level, but must be
                // non-negative integers.
                match &fact.value {
                    FactValue::Int(n) if *n >= 0 => {}
                    other => out.push(format!(
                        "amount fact {} must be a non-negative integer, got {}",
                        fact.predicate_name,
                        other.display()
                    )),
                }
            }
            ElementKind::Severity => match &fact.value {
                FactValue::Token(t) if SEVERITY_TOKENS.contains(&t.as_str()) => {}
                other => out.push(format!(
                    "severity fact {} has value {} outside {:?}",
                    fact.predicate_name,
                    other.display(),
                    SEVERITY_TOKENS
                )),
            },
            ElementKind::MentalState => match &fact.value {
                FactValue::Token(t) if MENTAL_STATE_TOKENS.contains(&t.as_str()) => {}
                other => out.push(format!(
                    "mental-state fact {} has value {} outside {:?}",
                    fact.predicate_name,
                    other.display(),
                    MENTAL_STATE_TOKENS
                )),
            },
            ElementKind::Causes => match &fact.value {
                FactValue::Link(act, result) => {
                    if !acts.contains(act.as_str()) || !results.contains(result.as_str()) {
                        out.push("dangling causation reference".to_string());
                    }
                }
                _ => out.push(format!(
                    "causes fact on {} must carry an (act, result) identifier pair",
                    fact.subject_id
                )),
            },
            _ => {}
        }

        if !declared.contains(fact.subject_id.as_str()) {
            out.push(format!(
                "fact subject {} is neither a suspect nor a declared victim/act/result id",
                fact.subject_id
            ));
        }
        if let Some(span) = &fact.span {
            if span.start > span.end || span.slice(&case.narrative).is_none() {
                out.push(format!(
                    "fact {} span [{},{}) does not address the narrative",
                    fact.predicate_name, span.start, span.end
                ));
            }
        }
    }

    let fact_predicates: BTreeSet<&str> =
        case.facts.iter().map(|f| f.predicate_name.as_str()).collect();
    for attr in &case.extra_legal {
        if fact_predicates.contains(attr.name.as_str()) {
            out.push(format!(
                "extra-legal attribute name {} collides with a fact predicate",
                attr.name
            ));
        }
    }

    out
}

/// Corpus-level uniqueness check over case ids.
pub fn validate_corpus(cases: &[CaseRecord]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for case in cases {
        if !seen.insert(case.case_id.as_str()) {
            out.push(format!("duplicate case_id: {}", case.case_id));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Interchange schemas
// ---------------------------------------------------------------------------

/// The interchange schema a structured-text record conforms to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseSchema {
    LeCaRDv2,
    Leec,
    Perturbation,
}

/// Errors raised while decoding a case record.
#[derive(Debug, Error)]
pub enum CaseError {
    #[error("schema error: missing or malformed required field `{0}`")]
    Schema(String),
    #[error("value error: {0}")]
    Value(String),
    #[error("malformed record: {0}")]
    Json(#[from] serde_json::Error),
}

fn as_article(v: &serde_json::Value) -> Result<u32, CaseError> {
    match v.as_u64() {
        Some(n) if n >= 1 && n <= u32::MAX as u64 => Ok(n as u32),
        _ => Err(CaseError::Value(format!("non-integer or out-of-range article: {v}"))),
    }
}

/// Splits a flat article list into (general, specific) per the statutory
/// part boundary.
pub fn split_articles(articles: &[u32]) -> (BTreeSet<u32>, BTreeSet<u32>) {
    let mut general = BTreeSet::new();
    let mut specific = BTreeSet::new();
    for &a in articles {
        if is_general_article(a) {
            general.insert(a);
        } else {
            specific.insert(a);
        }
    }
    (general, specific)
}

fn parse_sentence(v: &serde_json::Value) -> Result<SentenceLabel, CaseError> {
    if let Some(n) = v.as_i64() {
        if n < 0 {
            return Err(CaseError::Value(format!("negative sentence: {n}")));
        }
        if v.as_u64().is_none() || v.is_f64() {
            return Err(CaseError::Value(format!("non-integer sentence: {v}")));
        }
        return Ok(SentenceLabel::Months(n as u32));
    }
    match v.as_str() {
        Some("Life") => Ok(SentenceLabel::Special(SpecialSentence::Life)),
        Some("Death") => Ok(SentenceLabel::Special(SpecialSentence::Death)),
        _ => Err(CaseError::Value(format!("unparseable sentence: {v}"))),
    }
}

fn parse_article_list(v: &serde_json::Value, field: &str) -> Result<Vec<u32>, CaseError> {
    let arr = v
        .as_array()
        .ok_or_else(|| CaseError::Schema(field.to_string()))?;
    arr.iter().map(as_article).collect()
}

/// Decodes one structured-text record under the named schema.
///
/// For the perturbation schema the perturbed case (the evaluation target)
/// is returned; use the perturbation module to decode the full pair.
pub fn parse_case(record: &str, schema: CaseSchema) -> Result<CaseRecord, CaseError> {
    let json: serde_json::Value = serde_json::from_str(record)?;
    parse_case_value(&json, schema)
}

/// Same as [`parse_case`] over an already-decoded JSON value.
pub fn parse_case_value(
    json: &serde_json::Value,
    schema: CaseSchema,
) -> Result<CaseRecord, CaseError> {
    match schema {
        CaseSchema::LeCaRDv2 => parse_lecardv2(json),
        CaseSchema::Leec => parse_leec(json),
        CaseSchema::Perturbation => {
            let perturbed = json
                .get("perturbed_case")
                .ok_or_else(|| CaseError::Schema("perturbed_case".to_string()))?;
            Ok(serde_json::from_value(perturbed.clone())?)
        }
    }
}

/// Guesses the schema of a record from its discriminating fields. Native
/// `CaseRecord` documents are reported as `None` and decode directly.
pub fn detect_schema(json: &serde_json::Value) -> Option<CaseSchema> {
    let obj = json.as_object()?;
    if obj.contains_key("perturbation_id") && obj.contains_key("perturbed_case") {
        Some(CaseSchema::Perturbation)
    } else if obj.contains_key("pid") || obj.contains_key("qw") {
        Some(CaseSchema::Leec)
    } else if obj.contains_key("case_id") {
        None
    } else if obj.contains_key("fact") {
        Some(CaseSchema::LeCaRDv2)
    } else {
        None
    }
}

fn parse_lecardv2(json: &serde_json::Value) -> Result<CaseRecord, CaseError> {
    let obj = json
        .as_object()
        .ok_or_else(|| CaseError::Schema("record must be an object".to_string()))?;
    let fact = obj
        .get("fact")
        .and_then(|v| v.as_str())
        .ok_or_else(|| CaseError::Schema("fact".to_string()))?;

    let case_id = obj
        .get("filename")
        .and_then(|v| v.as_str())
        .map(|s| s.to_string())
        .unwrap_or_else(|| "case".to_string());

    let mut case = CaseRecord::new(&case_id);
    case.narrative = fact.to_string();

    if let Some(articles) = obj.get("article") {
        let list = parse_article_list(articles, "article")?;
        let (general, specific) = split_articles(&list);
        case.gold_general_articles = general;
        case.gold_specific_articles = specific;
    } else {
        if let Some(v) = obj.get("true_general_articles") {
            case.gold_general_articles =
                parse_article_list(v, "true_general_articles")?.into_iter().collect();
        }
        if let Some(v) = obj.get("true_specific_articles") {
            case.gold_specific_articles =
                parse_article_list(v, "true_specific_articles")?.into_iter().collect();
        }
    }
    if let Some(v) = obj.get("true_sentence_months") {
        if !v.is_null() {
            case.gold_sentence_months = Some(parse_sentence(v)?);
        }
    }
    Ok(case)
}

fn parse_leec(json: &serde_json::Value) -> Result<CaseRecord, CaseError> {
    let obj = json
        .as_object()
        .ok_or_else(|| CaseError::Schema("record must be an object".to_string()))?;
    let pid = obj.get("pid").ok_or_else(|| CaseError::Schema("pid".to_string()))?;
    let pid = match (pid.as_u64(), pid.as_str()) {
        (Some(n), _) => n.to_string(),
        (None, Some(s)) => s.to_string(),
        _ => return Err(CaseError::Value(format!("unparseable pid: {pid}"))),
    };
    let fact = obj
        .get("fact")
        .and_then(|v| v.as_str())
        .ok_or_else(|| CaseError::Schema("fact".to_string()))?;

    let mut case = CaseRecord::new(&format!("leec_{pid}"));
    case.narrative = fact.to_string();

    let charges: BTreeMap<String, String> = match obj.get("charge") {
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|_| CaseError::Schema("charge".to_string()))?,
        None => BTreeMap::new(),
    };
    let articles: BTreeMap<String, Vec<serde_json::Value>> = match obj.get("article") {
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|_| CaseError::Schema("article".to_string()))?,
        None => BTreeMap::new(),
    };

    let mut suspects: BTreeSet<String> = charges.keys().cloned().collect();
    suspects.extend(articles.keys().cloned());
    case.suspect_ids = suspects.into_iter().collect();

    for suspect in &case.suspect_ids {
        let list = match articles.get(suspect) {
            Some(raw) => raw.iter().map(as_article).collect::<Result<Vec<_>, _>>()?,
            None => Vec::new(),
        };
        let (general, specific) = split_articles(&list);
        case.gold_general_articles.extend(general.iter().copied());
        case.gold_specific_articles.extend(specific.iter().copied());
        case.suspect_labels.push(SuspectLabel {
            suspect_id: suspect.clone(),
            charge: charges.get(suspect).cloned(),
            general_articles: general,
            specific_articles: specific,
        });
    }
    Ok(case)
}

/// Re-encodes a record in the named schema. Composing
/// `parse -> serialize -> parse` is a fixed point on all three schemas.
pub fn serialize_case(case: &CaseRecord, schema: CaseSchema) -> serde_json::Value {
    match schema {
        CaseSchema::LeCaRDv2 => {
            let mut articles: Vec<u32> = case.gold_general_articles.iter().copied().collect();
            articles.extend(case.gold_specific_articles.iter().copied());
            articles.sort_unstable();
            serde_json::json!({
                "filename": case.case_id,
                "fact": case.narrative,
                "article": articles,
                "true_sentence_months": case.gold_sentence_months,
                "true_general_articles": case.gold_general_articles,
                "true_specific_articles": case.gold_specific_articles,
            })
        }
        CaseSchema::Leec => {
            let pid = case.case_id.strip_prefix("leec_").unwrap_or(&case.case_id);
            let charge: BTreeMap<&str, &str> = case
                .suspect_labels
                .iter()
                .filter_map(|l| l.charge.as_deref().map(|c| (l.suspect_id.as_str(), c)))
                .collect();
            let article: BTreeMap<&str, Vec<u32>> = case
                .suspect_labels
                .iter()
                .map(|l| {
                    let mut v: Vec<u32> = l.general_articles.iter().copied().collect();
                    v.extend(l.specific_articles.iter().copied());
                    v.sort_unstable();
                    (l.suspect_id.as_str(), v)
                })
                .collect();
            serde_json::json!({
                "pid": pid,
                "fact": case.narrative,
                "charge": charge,
                "article": article,
            })
        }
        CaseSchema::Perturbation => {
            serde_json::json!({ "perturbed_case": case })
        }
    }
}
