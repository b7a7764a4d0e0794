//! Prosecutor/defense argument extraction.
//!
//! Both agents read the same narrative and produce a structured argument:
//! typed facts grounded in text spans plus candidate general/specific
//! statutes. Two backends implement the interface: a deterministic
//! rule-based extractor (pure function of narrative and role, used for
//! tests and reproducible runs) and a client for an external chat-style
//! text-generation service. Externally claimed facts are never trusted
//! as-is: each must re-ground to a narrative span or it is dropped with a
//! warning.
//!
//! Candidate proposals are not conclusions. [`cluster_debate`] expands any
//! candidate inside a confusable-statute cluster to the whole cluster so
//! the solver can discriminate among them, and [`merge_arguments`] unions
//! the two agents' outputs while forwarding conflicting facts for the
//! solver to surface as cores.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::sync::{Condvar, LazyLock, Mutex};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::{is_general_article, CaseRecord, ElementKind, FactAtom, FactValue};

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Prosecutor,
    Defense,
}

/// One agent's structured argument: facts with spans plus candidate
/// statute sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgumentTuple {
    pub role: Role,
    pub facts: Vec<FactAtom>,
    pub candidate_general: BTreeSet<u32>,
    pub candidate_specific: BTreeSet<u32>,
}

/// Extraction result plus non-fatal warnings (e.g. dropped ungrounded
/// facts).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extraction {
    pub tuple: ArgumentTuple,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Backend {
    #[default]
    Deterministic,
    External,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub backend: Backend,
    pub endpoint_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token; the key
    /// itself never appears in configuration or on the command line.
    pub api_key_env_var: String,
    pub prompt_template_id: String,
    pub timeout_seconds: u64,
    pub max_retries: u32,
    /// Cap on concurrent in-flight requests to the external service.
    pub max_in_flight: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            backend: Backend::Deterministic,
            endpoint_url: String::new(),
            model_name: String::new(),
            api_key_env_var: String::new(),
            prompt_template_id: "statute_selector".to_string(),
            timeout_seconds: 30,
            max_retries: 2,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("service error: {0}")]
    Service(String),
    #[error("response shape violation: {0}")]
    Parse(String),
    #[error("external backend requires {0}")]
    Config(String),
}

// ---------------------------------------------------------------------------
// Prompt template assets
// ---------------------------------------------------------------------------

/// Named prompt templates shipped with the crate; placeholders use
/// `{name}` syntax.
pub static PROMPT_TEMPLATES: LazyLock<BTreeMap<&'static str, &'static str>> =
    LazyLock::new(|| {
        BTreeMap::from([
            (
                "statute_selector_prosecutor",
                include_str!("../assets/prompts/statute_selector_prosecutor.txt"),
            ),
            (
                "statute_selector_defense",
                include_str!("../assets/prompts/statute_selector_defense.txt"),
            ),
            (
                "fact_extractor_prosecutor",
                include_str!("../assets/prompts/fact_extractor_prosecutor.txt"),
            ),
            (
                "fact_extractor_defense",
                include_str!("../assets/prompts/fact_extractor_defense.txt"),
            ),
            (
                "schema_extraction",
                include_str!("../assets/prompts/schema_extraction.txt"),
            ),
            (
                "law_specific_fact_slicing",
                include_str!("../assets/prompts/law_specific_fact_slicing.txt"),
            ),
            (
                "final_judgment_explanation",
                include_str!("../assets/prompts/final_judgment_explanation.txt"),
            ),
        ])
    });

/// Renders a named template, substituting `{key}` placeholders.
pub fn render_template(template_id: &str, substitutions: &[(&str, &str)]) -> Option<String> {
    let mut text = (*PROMPT_TEMPLATES.get(template_id)?).to_string();
    for (key, value) in substitutions {
        text = text.replace(&format!("{{{key}}}"), value);
    }
    Some(text)
}

// ---------------------------------------------------------------------------
// Deterministic rule-based extractor
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq)]
enum RoleFilter {
    Both,
    ProsecutorOnly,
    DefenseOnly,
}

impl RoleFilter {
    fn admits(&self, role: Role) -> bool {
        match self {
            RoleFilter::Both => true,
            RoleFilter::ProsecutorOnly => role == Role::Prosecutor,
            RoleFilter::DefenseOnly => role == Role::Defense,
        }
    }
}

#[derive(Clone, Copy)]
enum SubjectSpec {
    Suspect,
    FreshAct,
    FreshResult,
}

#[derive(Clone)]
enum ValueSpec {
    Fixed(FactValue),
    IntCapture(usize),
}

struct FactSpec {
    kind: ElementKind,
    subject: SubjectSpec,
    predicate: &'static str,
    value: ValueSpec,
}

struct PatternRule {
    name: &'static str,
    pattern: &'static str,
    roles: RoleFilter,
    facts: Vec<FactSpec>,
    general: &'static [u32],
    specific: &'static [u32],
}

fn fixed(kind: ElementKind, subject: SubjectSpec, predicate: &'static str, value: FactValue) -> FactSpec {
    FactSpec {
        kind,
        subject,
        predicate,
        value: ValueSpec::Fixed(value),
    }
}

/// The rule table of the deterministic extractor. Prosecutor-only rules
/// surface liability and aggravation; defense-only rules surface
/// mitigation, dispositions, and exceptions; the rest are shared.
static RULES: LazyLock<Vec<(PatternRule, Regex)>> = LazyLock::new(|| {
    use ElementKind::*;
    use SubjectSpec::*;
    let rules = vec![
        PatternRule {
            name: "drug_sale",
            pattern: r"(?i)(?:sold|selling|sells|delivered|trafficked)\s+(?:about\s+)?(\d+)\s*grams?\s+of\s+(?:methamphetamine|heroin|opium|narcotics?|drugs)",
            roles: RoleFilter::Both,
            facts: vec![
                fixed(Actor, Suspect, "actor_type", FactValue::token("person")),
                fixed(Act, FreshAct, "action", FactValue::token("selling")),
                FactSpec {
                    kind: Amount,
                    subject: Suspect,
                    predicate: "drug_quantity_g",
                    value: ValueSpec::IntCapture(1),
                },
                // trafficking language implies intent
                fixed(MentalState, Suspect, "mental_state", FactValue::token("Intentional")),
            ],
            general: &[],
            specific: &[347],
        },
        PatternRule {
            name: "drug_mention",
            pattern: r"(?i)methamphetamine|heroin|opium|narcotics?|drug\s+trafficking",
            roles: RoleFilter::Both,
            facts: vec![],
            general: &[],
            specific: &[347],
        },
        PatternRule {
            name: "surrender",
            pattern: r"(?i)voluntar(?:y|ily)\s+surrender(?:ed)?|turned\s+(?:him|her)self\s+in",
            roles: RoleFilter::Both,
            facts: vec![fixed(
                Qualifier,
                Suspect,
                "voluntary_surrender",
                FactValue::Bool(true),
            )],
            general: &[67],
            specific: &[],
        },
        PatternRule {
            name: "confession",
            pattern: r"(?i)confessed\s+truthfully|truthful(?:ly)?\s+confess(?:ed|ion)?|confessed\s+to\s+the",
            roles: RoleFilter::Both,
            facts: vec![fixed(
                Qualifier,
                Suspect,
                "truthful_confession",
                FactValue::Bool(true),
            )],
            general: &[67],
            specific: &[],
        },
        PatternRule {
            name: "recidivism",
            pattern: r"(?i)previously\s+convicted|prior\s+conviction|within\s+five\s+years\s+of\s+(?:completing|serving)|recidivist",
            roles: RoleFilter::ProsecutorOnly,
            facts: vec![
                fixed(Qualifier, Suspect, "prior_sentence_served", FactValue::Bool(true)),
                fixed(
                    Qualifier,
                    Suspect,
                    "reoffense_within_5_years",
                    FactValue::Bool(true),
                ),
            ],
            general: &[65],
            specific: &[],
        },
        PatternRule {
            name: "proceeds",
            pattern: r"(?i)paid|payment|proceeds|[\d,]+\s*yuan",
            roles: RoleFilter::DefenseOnly,
            facts: vec![fixed(
                Qualifier,
                Suspect,
                "illegal_proceeds_obtained",
                FactValue::Bool(true),
            )],
            general: &[64],
            specific: &[],
        },
        PatternRule {
            name: "assault",
            pattern: r"(?i)assaulted|beat|struck|attacked",
            roles: RoleFilter::Both,
            facts: vec![
                fixed(Actor, Suspect, "actor_type", FactValue::token("person")),
                fixed(Act, FreshAct, "action", FactValue::token("assault")),
            ],
            general: &[],
            specific: &[234],
        },
        PatternRule {
            name: "serious_injury",
            pattern: r"(?i)serious(?:ly)?\s+injur(?:ed|y|ies)",
            roles: RoleFilter::Both,
            facts: vec![
                fixed(Result, FreshResult, "result_type", FactValue::token("injury")),
                fixed(Severity, FreshResult, "severity", FactValue::token("Serious")),
            ],
            general: &[],
            specific: &[234, 235],
        },
        PatternRule {
            name: "minor_injury",
            pattern: r"(?i)minor\s+injur(?:ed|y|ies)",
            roles: RoleFilter::Both,
            facts: vec![
                fixed(Result, FreshResult, "result_type", FactValue::token("injury")),
                fixed(Severity, FreshResult, "severity", FactValue::token("Minor")),
            ],
            general: &[],
            specific: &[234],
        },
        PatternRule {
            name: "intent",
            pattern: r"(?i)intentional(?:ly)?|deliberately",
            roles: RoleFilter::Both,
            facts: vec![fixed(
                MentalState,
                Suspect,
                "mental_state",
                FactValue::token("Intentional"),
            )],
            general: &[],
            specific: &[],
        },
        PatternRule {
            name: "negligence",
            pattern: r"(?i)negligen(?:t|ce|tly)|accidentally",
            roles: RoleFilter::Both,
            facts: vec![fixed(
                MentalState,
                Suspect,
                "mental_state",
                FactValue::token("Negligent"),
            )],
            general: &[],
            specific: &[],
        },
        PatternRule {
            name: "self_defense",
            pattern: r"(?i)self[- ]defen[cs]e|defending\s+(?:him|her)self",
            roles: RoleFilter::DefenseOnly,
            facts: vec![fixed(
                Exception,
                Suspect,
                "self_defense",
                FactValue::Bool(true),
            )],
            general: &[],
            specific: &[],
        },
        PatternRule {
            name: "article_mention",
            pattern: r"(?i)article\s+(\d{1,4})",
            roles: RoleFilter::Both,
            facts: vec![],
            general: &[],
            specific: &[],
        },
    ];
    rules
        .into_iter()
        .map(|rule| {
            let regex = Regex::new(rule.pattern).expect("rule patterns are valid");
            (rule, regex)
        })
        .collect()
});

fn deterministic_extract(narrative: &str, suspect: &str, role: Role) -> ArgumentTuple {
    let mut facts: Vec<FactAtom> = Vec::new();
    let mut seen: BTreeSet<(ElementKind, String, String, String)> = BTreeSet::new();
    let mut general = BTreeSet::new();
    let mut specific = BTreeSet::new();
    let mut act_counter = 0usize;
    let mut result_counter = 0usize;

    for (rule, regex) in RULES.iter() {
        if !rule.roles.admits(role) {
            continue;
        }
        for captures in regex.captures_iter(narrative) {
            let whole = captures.get(0).expect("match has a whole group");

            general.extend(rule.general.iter().copied());
            specific.extend(rule.specific.iter().copied());
            if rule.name == "article_mention" {
                if let Some(n) = captures.get(1).and_then(|m| m.as_str().parse::<u32>().ok()) {
                    if n >= 1 {
                        if is_general_article(n) {
                            general.insert(n);
                        } else {
                            specific.insert(n);
                        }
                    }
                }
            }

            let mut fresh_act: Option<String> = None;
            let mut fresh_result: Option<String> = None;
            for spec in &rule.facts {
                let subject = match spec.subject {
                    SubjectSpec::Suspect => suspect.to_string(),
                    SubjectSpec::FreshAct => fresh_act
                        .get_or_insert_with(|| {
                            act_counter += 1;
                            format!("xa{act_counter}")
                        })
                        .clone(),
                    SubjectSpec::FreshResult => fresh_result
                        .get_or_insert_with(|| {
                            result_counter += 1;
                            format!("xr{result_counter}")
                        })
                        .clone(),
                };
                let value = match &spec.value {
                    ValueSpec::Fixed(v) => v.clone(),
                    ValueSpec::IntCapture(group) => {
                        match captures.get(*group).and_then(|m| m.as_str().parse::<i64>().ok()) {
                            Some(n) => FactValue::Int(n),
                            None => continue,
                        }
                    }
                };
                // the first textual occurrence grounds the fact
                let key = (
                    spec.kind,
                    subject_kind_key(spec.subject).to_string(),
                    spec.predicate.to_string(),
                    value.display(),
                );
                if !seen.insert(key) {
                    continue;
                }
                facts.push(
                    FactAtom::new(spec.kind, &subject, spec.predicate, value)
                        .with_span(whole.start(), whole.end()),
                );
            }
        }
    }

    // Synthesize the causation link when exactly one act and one result
    // were extracted and nothing links them yet.
    let acts: Vec<String> = facts
        .iter()
        .filter(|f| f.element_kind == ElementKind::Act)
        .map(|f| f.subject_id.clone())
        .collect();
    let results: Vec<String> = facts
        .iter()
        .filter(|f| f.element_kind == ElementKind::Result)
        .map(|f| f.subject_id.clone())
        .collect();
    if acts.len() == 1 && results.len() == 1 {
        facts.push(FactAtom::new(
            ElementKind::Causes,
            &acts[0],
            "causes",
            FactValue::Link(acts[0].clone(), results[0].clone()),
        ));
    }

    ArgumentTuple {
        role,
        facts,
        candidate_general: general,
        candidate_specific: specific,
    }
}

fn subject_kind_key(spec: SubjectSpec) -> &'static str {
    match spec {
        SubjectSpec::Suspect => "suspect",
        SubjectSpec::FreshAct => "act",
        SubjectSpec::FreshResult => "result",
    }
}

// ---------------------------------------------------------------------------
// External client
// ---------------------------------------------------------------------------

struct Gate {
    permits: Mutex<usize>,
    available: Condvar,
}

/// Process-wide in-flight request limiter for the external backend.
static GATE: LazyLock<Gate> = LazyLock::new(|| Gate {
    permits: Mutex::new(0),
    available: Condvar::new(),
});

struct GatePermit<'a> {
    gate: &'a Gate,
}

impl Gate {
    fn acquire(&self, cap: usize) -> GatePermit<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits >= cap.max(1) {
            permits = self.available.wait(permits).unwrap();
        }
        *permits += 1;
        GatePermit { gate: self }
    }
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        let mut permits = self.gate.permits.lock().unwrap();
        *permits -= 1;
        self.gate.available.notify_one();
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
}

fn post_chat(config: &ExtractorConfig, prompt: &str) -> Result<String, AgentError> {
    if config.endpoint_url.is_empty() {
        return Err(AgentError::Config("endpoint_url".to_string()));
    }
    if config.api_key_env_var.is_empty() {
        return Err(AgentError::Config("api_key_env_var".to_string()));
    }
    let token = std::env::var(&config.api_key_env_var)
        .map_err(|_| AgentError::Config(format!("environment variable {}", config.api_key_env_var)))?;

    let _permit = GATE.acquire(config.max_in_flight);
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(config.timeout_seconds.max(1)))
        .build()
        .map_err(|e| AgentError::Service(e.to_string()))?;
    let body = ChatRequest {
        model: &config.model_name,
        messages: vec![ChatMessage {
            role: "user",
            content: prompt,
        }],
    };

    let mut last_error = String::new();
    for attempt in 0..=config.max_retries {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(50 << attempt.min(6)));
        }
        let response = client
            .post(&config.endpoint_url)
            .bearer_auth(&token)
            .json(&body)
            .send();
        match response {
            Ok(resp) if resp.status().is_success() => {
                let json: serde_json::Value = resp
                    .json()
                    .map_err(|e| AgentError::Parse(format!("non-JSON response body: {e}")))?;
                // first candidate message of a chat-style response
                let content = json
                    .pointer("/choices/0/message/content")
                    .and_then(|v| v.as_str())
                    .ok_or_else(|| {
                        AgentError::Parse("response lacks choices[0].message.content".to_string())
                    })?;
                return Ok(content.to_string());
            }
            Ok(resp) if resp.status().is_server_error() => {
                last_error = format!("HTTP {}", resp.status());
            }
            Ok(resp) => {
                return Err(AgentError::Service(format!("HTTP {}", resp.status())));
            }
            Err(e) => {
                last_error = e.to_string();
            }
        }
    }
    Err(AgentError::Service(format!(
        "request failed after {} retries: {last_error}",
        config.max_retries
    )))
}

#[derive(Deserialize)]
struct StatuteSelection {
    general_articles: Vec<u32>,
    specific_articles: Vec<u32>,
}

/// Extracts the mandated statute-selection JSON from free-form response
/// text (the first balanced object containing the required keys).
fn parse_statute_selection(text: &str) -> Result<StatuteSelection, AgentError> {
    let bytes = text.as_bytes();
    for (start, _) in text.char_indices().filter(|(_, c)| *c == '{') {
        let mut depth = 0usize;
        for end in start..bytes.len() {
            match bytes[end] {
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        let candidate = &text[start..=end];
                        if let Ok(parsed) = serde_json::from_str::<StatuteSelection>(candidate) {
                            return Ok(parsed);
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
    }
    Err(AgentError::Parse(
        "no JSON object with general_articles and specific_articles".to_string(),
    ))
}

fn external_extract(
    case: &CaseRecord,
    suspect: &str,
    role: Role,
    config: &ExtractorConfig,
) -> Result<Extraction, AgentError> {
    let role_suffix = match role {
        Role::Prosecutor => "prosecutor",
        Role::Defense => "defense",
    };
    let selector_id = format!("statute_selector_{role_suffix}");
    let selector_prompt = render_template(&selector_id, &[("case_text", &case.narrative)])
        .ok_or_else(|| AgentError::Config(format!("template {selector_id}")))?;
    let selection_text = post_chat(config, &selector_prompt)?;
    let selection = parse_statute_selection(&selection_text)?;

    let extractor_id = format!("fact_extractor_{role_suffix}");
    let extractor_prompt = render_template(&extractor_id, &[("case_text", &case.narrative)])
        .ok_or_else(|| AgentError::Config(format!("template {extractor_id}")))?;
    let fact_text = post_chat(config, &extractor_prompt)?;

    // Re-ground each claimed fact line against the original narrative;
    // anything without a supporting span is dropped with a warning.
    let mut warnings = Vec::new();
    let mut facts: Vec<FactAtom> = Vec::new();
    let mut seen = BTreeSet::new();
    for line in fact_text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let claimed = deterministic_extract(line, suspect, role);
        if claimed.facts.is_empty() {
            continue;
        }
        let grounded = deterministic_extract(&case.narrative, suspect, role);
        for fact in claimed.facts {
            match grounded.facts.iter().find(|g| {
                g.element_kind == fact.element_kind
                    && g.predicate_name == fact.predicate_name
                    && g.value == fact.value
            }) {
                Some(support) => {
                    let key = (
                        support.element_kind,
                        support.predicate_name.clone(),
                        support.value.display(),
                    );
                    if seen.insert(key) {
                        facts.push(support.clone());
                    }
                }
                None => warnings.push(format!(
                    "ungrounded fact dropped: {}={} (claimed: {line})",
                    fact.predicate_name,
                    fact.value.display()
                )),
            }
        }
    }

    let (general, specific) = {
        let mut general = BTreeSet::new();
        let mut specific = BTreeSet::new();
        for n in selection.general_articles {
            general.insert(n);
        }
        for n in selection.specific_articles {
            specific.insert(n);
        }
        (general, specific)
    };

    Ok(Extraction {
        tuple: ArgumentTuple {
            role,
            facts,
            candidate_general: general,
            candidate_specific: specific,
        },
        warnings,
    })
}

/// Produces one agent's argument tuple from the case narrative.
pub fn extract_argument(
    case: &CaseRecord,
    role: Role,
    config: &ExtractorConfig,
) -> Result<Extraction, AgentError> {
    let suspect = case
        .suspect_ids
        .first()
        .map(|s| s.as_str())
        .unwrap_or("s1")
        .to_string();
    match config.backend {
        Backend::Deterministic => Ok(Extraction {
            tuple: deterministic_extract(&case.narrative, &suspect, role),
            warnings: Vec::new(),
        }),
        Backend::External => external_extract(case, &suspect, role, config),
    }
}

/// Runs prosecutor and defense extraction concurrently.
pub fn extract_both(
    case: &CaseRecord,
    config: &ExtractorConfig,
) -> Result<(Extraction, Extraction), AgentError> {
    std::thread::scope(|scope| {
        let prosecutor =
            scope.spawn(|| extract_argument(case, Role::Prosecutor, config));
        let defense = extract_argument(case, Role::Defense, config);
        let prosecutor = prosecutor.join().expect("extraction thread must not panic");
        Ok((prosecutor?, defense?))
    })
}

// ---------------------------------------------------------------------------
// Merging and cluster debate
// ---------------------------------------------------------------------------

/// Merged prosecutor/defense arguments; conflicts are forwarded, never
/// silently resolved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergedArguments {
    pub facts: Vec<FactAtom>,
    pub candidate_general: BTreeSet<u32>,
    pub candidate_specific: BTreeSet<u32>,
    pub conflicts: Vec<(FactAtom, FactAtom)>,
}

impl MergedArguments {
    pub fn candidates(&self) -> BTreeSet<u32> {
        self.candidate_general
            .union(&self.candidate_specific)
            .copied()
            .collect()
    }
}

/// Unions the two argument tuples. Facts are deduplicated exactly;
/// distinct values claimed for one `(subject, predicate)` pair are
/// reported as conflicts for the solver to adjudicate.
pub fn merge_arguments(p: &ArgumentTuple, d: &ArgumentTuple) -> MergedArguments {
    let mut facts: Vec<FactAtom> = Vec::new();
    for fact in p.facts.iter().chain(d.facts.iter()) {
        if !facts.contains(fact) {
            facts.push(fact.clone());
        }
    }

    let mut by_slot: BTreeMap<(String, String), Vec<&FactAtom>> = BTreeMap::new();
    for fact in &facts {
        if matches!(fact.value, FactValue::Link(_, _)) {
            continue;
        }
        by_slot
            .entry((fact.subject_id.clone(), fact.predicate_name.clone()))
            .or_default()
            .push(fact);
    }
    let mut conflicts = Vec::new();
    for (_, group) in by_slot {
        if group.len() < 2 {
            continue;
        }
        let first = group[0];
        for other in &group[1..] {
            if other.value != first.value {
                conflicts.push(((*first).clone(), (*other).clone()));
            }
        }
    }

    MergedArguments {
        facts,
        candidate_general: p
            .candidate_general
            .union(&d.candidate_general)
            .copied()
            .collect(),
        candidate_specific: p
            .candidate_specific
            .union(&d.candidate_specific)
            .copied()
            .collect(),
        conflicts,
    }
}

/// Table of confusable-statute clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ClusterTable {
    pub clusters: BTreeMap<String, BTreeSet<u32>>,
}

impl ClusterTable {
    /// The cluster table shipped with the crate.
    pub fn builtin() -> ClusterTable {
        let clusters: BTreeMap<String, BTreeSet<u32>> =
            serde_json::from_str(include_str!("../assets/clusters.json"))
                .expect("embedded cluster table is valid");
        ClusterTable { clusters }
    }

    pub fn from_json(text: &str) -> Result<ClusterTable, serde_json::Error> {
        let clusters: BTreeMap<String, BTreeSet<u32>> = serde_json::from_str(text)?;
        Ok(ClusterTable { clusters })
    }

    /// Name of the cluster containing an article, if any.
    pub fn cluster_of(&self, article: u32) -> Option<&str> {
        self.clusters
            .iter()
            .find(|(_, members)| members.contains(&article))
            .map(|(name, _)| name.as_str())
    }
}

/// Expands candidates to full clusters: whenever a candidate falls inside
/// a confusable cluster, every member joins the candidate set so the
/// solver can discriminate among them. Pure expansion, never removal.
pub fn cluster_debate(candidates: &BTreeSet<u32>, clusters: &ClusterTable) -> BTreeSet<u32> {
    let mut out = candidates.clone();
    for candidate in candidates {
        for members in clusters.clusters.values() {
            if members.contains(candidate) {
                out.extend(members.iter().copied());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    fn drug_case() -> CaseRecord {
        let mut case = CaseRecord::new("c1");
        case.suspect_ids = vec!["s1".to_string()];
        case.narrative = "The defendant received 1,000 yuan by mobile payment and that \
                          afternoon sold 2 grams of methamphetamine to the buyer. He had been \
                          previously convicted of the same offense within five years of serving \
                          his sentence. On 7 November he voluntarily surrendered at the police \
                          station and confessed truthfully."
            .to_string();
        case
    }

    #[test]
    fn prosecutor_extracts_liability_candidates() {
        let config = ExtractorConfig::default();
        let extraction = extract_argument(&drug_case(), Role::Prosecutor, &config).unwrap();
        let tuple = &extraction.tuple;
        assert!(tuple.candidate_general.is_superset(&[65, 67].into_iter().collect()));
        assert_eq!(tuple.candidate_specific, [347].into_iter().collect());
        assert!(tuple
            .facts
            .iter()
            .any(|f| f.predicate_name == "drug_quantity_g" && f.value == FactValue::Int(2)));
        assert!(tuple
            .facts
            .iter()
            .any(|f| f.predicate_name == "prior_sentence_served"));
    }

    #[test]
    fn defense_extracts_mitigation_candidates() {
        let config = ExtractorConfig::default();
        let extraction = extract_argument(&drug_case(), Role::Defense, &config).unwrap();
        let tuple = &extraction.tuple;
        assert!(tuple.candidate_general.contains(&67));
        assert!(tuple.candidate_general.contains(&64));
        assert!(!tuple.candidate_general.contains(&65));
        assert_eq!(tuple.candidate_specific, [347].into_iter().collect());
    }

    #[test]
    fn extraction_is_deterministic() {
        let config = ExtractorConfig::default();
        let a = extract_argument(&drug_case(), Role::Prosecutor, &config).unwrap();
        let b = extract_argument(&drug_case(), Role::Prosecutor, &config).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn no_keywords_no_output() {
        let mut case = CaseRecord::new("c0");
        case.narrative = "An uneventful afternoon with no legal significance.".to_string();
        let extraction =
            extract_argument(&case, Role::Prosecutor, &ExtractorConfig::default()).unwrap();
        assert!(extraction.tuple.facts.is_empty());
        assert!(extraction.tuple.candidate_general.is_empty());
        assert!(extraction.tuple.candidate_specific.is_empty());
    }

    #[test]
    fn spans_support_their_facts() {
        let case = drug_case();
        let extraction =
            extract_argument(&case, Role::Prosecutor, &ExtractorConfig::default()).unwrap();
        for fact in &extraction.tuple.facts {
            if let Some(span) = &fact.span {
                let text = span.slice(&case.narrative).expect("span in bounds");
                assert!(!text.is_empty());
            }
        }
    }

    #[test]
    fn merge_unions_candidates_and_reports_conflicts() {
        let config = ExtractorConfig::default();
        let p = extract_argument(&drug_case(), Role::Prosecutor, &config).unwrap().tuple;
        let d = extract_argument(&drug_case(), Role::Defense, &config).unwrap().tuple;
        let merged = merge_arguments(&p, &d);
        assert!(merged.candidates().is_superset(&[64, 65, 67, 347].into_iter().collect()));
        assert!(merged.conflicts.is_empty());

        // idempotent on identical tuples
        let same = merge_arguments(&p, &p);
        assert_eq!(same.candidate_general, p.candidate_general);
        assert_eq!(same.facts, p.facts);

        // commutative on candidate sets
        let ab = merge_arguments(&p, &d);
        let ba = merge_arguments(&d, &p);
        assert_eq!(ab.candidate_general, ba.candidate_general);
        assert_eq!(ab.candidate_specific, ba.candidate_specific);
    }

    #[test]
    fn merge_reports_mental_state_conflict() {
        let mut p = ArgumentTuple {
            role: Role::Prosecutor,
            facts: vec![FactAtom::new(
                ElementKind::MentalState,
                "s1",
                "mental_state",
                FactValue::token("Intentional"),
            )],
            candidate_general: BTreeSet::new(),
            candidate_specific: BTreeSet::new(),
        };
        let d = ArgumentTuple {
            role: Role::Defense,
            facts: vec![FactAtom::new(
                ElementKind::MentalState,
                "s1",
                "mental_state",
                FactValue::token("Negligent"),
            )],
            candidate_general: BTreeSet::new(),
            candidate_specific: BTreeSet::new(),
        };
        let merged = merge_arguments(&p, &d);
        assert_eq!(merged.conflicts.len(), 1);
        p.facts.clear();
        assert!(merge_arguments(&p, &d).conflicts.is_empty());
    }

    #[test]
    fn cluster_debate_expands_but_never_removes() {
        let clusters = ClusterTable::builtin();
        let expanded = cluster_debate(&[151].into_iter().collect(), &clusters);
        assert_eq!(expanded, [151, 152].into_iter().collect());

        let untouched = cluster_debate(&[999].into_iter().collect(), &clusters);
        assert_eq!(untouched, [999].into_iter().collect());

        assert!(cluster_debate(&BTreeSet::new(), &clusters).is_empty());
    }

    #[test]
    fn statute_selection_parses_from_noisy_text() {
        let text = "Sure. Here is the answer:\n```json\n{\"general_articles\": [65, 67], \
                    \"specific_articles\": [347]}\n```";
        let parsed = parse_statute_selection(text).unwrap();
        assert_eq!(parsed.general_articles, vec![65, 67]);
        assert_eq!(parsed.specific_articles, vec![347]);

        let missing = "{\"general_articles\": [65]}";
        assert!(matches!(
            parse_statute_selection(missing),
            Err(AgentError::Parse(_))
        ));
    }

    /// Minimal canned-response HTTP server for client tests.
    fn spawn_server(responses: Vec<String>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for response in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = vec![0u8; 65536];
                let mut read = 0usize;
                let body_start;
                loop {
                    let n = stream.read(&mut buf[read..]).unwrap();
                    read += n;
                    if let Some(pos) = find_headers_end(&buf[..read]) {
                        body_start = pos;
                        break;
                    }
                }
                let headers = String::from_utf8_lossy(&buf[..body_start]).to_string();
                let content_length: usize = headers
                    .lines()
                    .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(str::trim).map(String::from))
                    .and_then(|v| v.parse().ok())
                    .unwrap_or(0);
                while read < body_start + content_length {
                    let n = stream.read(&mut buf[read..]).unwrap();
                    read += n;
                }
                bodies.push(String::from_utf8_lossy(&buf[body_start..read]).to_string());
                stream.write_all(response.as_bytes()).unwrap();
            }
            bodies
        });
        (format!("http://{addr}/v1/chat"), handle)
    }

    fn find_headers_end(buf: &[u8]) -> Option<usize> {
        buf.windows(4).position(|w| w == b"\r\n\r\n").map(|p| p + 4)
    }

    fn http_ok(payload: &str) -> String {
        format!(
            "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
            payload.len(),
            payload
        )
    }

    #[test]
    fn external_backend_round_trip() {
        let selector_reply = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content":
                "{\"general_articles\": [67], \"specific_articles\": [347]}"}}]
        })
        .to_string();
        let facts_reply = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content":
                "- sold 2 grams of methamphetamine\n- sold 500 grams of heroin"}}]
        })
        .to_string();
        let (endpoint, handle) =
            spawn_server(vec![http_ok(&selector_reply), http_ok(&facts_reply)]);

        std::env::set_var("AGENT_TEST_KEY_RT", "secret-token");
        let config = ExtractorConfig {
            backend: Backend::External,
            endpoint_url: endpoint,
            model_name: "test-model".to_string(),
            api_key_env_var: "AGENT_TEST_KEY_RT".to_string(),
            max_in_flight: 1,
            ..ExtractorConfig::default()
        };
        let extraction = extract_argument(&drug_case(), Role::Prosecutor, &config).unwrap();
        assert_eq!(extraction.tuple.candidate_specific, [347].into_iter().collect());
        assert!(extraction
            .tuple
            .facts
            .iter()
            .any(|f| f.predicate_name == "drug_quantity_g" && f.value == FactValue::Int(2)));
        // the fabricated 500-gram claim grounds nowhere and is dropped
        assert_eq!(extraction.warnings.len(), 1);
        assert!(!extraction
            .tuple
            .facts
            .iter()
            .any(|f| f.value == FactValue::Int(500)));

        let bodies = handle.join().unwrap();
        assert_eq!(bodies.len(), 2);
        let request: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(request["model"], "test-model");
        assert!(request["messages"][0]["content"]
            .as_str()
            .unwrap()
            .contains("methamphetamine"));
    }

    #[test]
    fn external_backend_missing_key_shape_is_parse_error() {
        let reply = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content":
                "{\"general_articles\": [67]}"}}]
        })
        .to_string();
        let (endpoint, handle) = spawn_server(vec![http_ok(&reply)]);
        std::env::set_var("AGENT_TEST_KEY_PE", "secret-token");
        let config = ExtractorConfig {
            backend: Backend::External,
            endpoint_url: endpoint,
            api_key_env_var: "AGENT_TEST_KEY_PE".to_string(),
            max_in_flight: 1,
            ..ExtractorConfig::default()
        };
        let err = extract_argument(&drug_case(), Role::Prosecutor, &config).unwrap_err();
        assert!(matches!(err, AgentError::Parse(_)));
        drop(handle);
    }

    #[test]
    fn external_backend_retries_on_server_error() {
        let selector_reply = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content":
                "{\"general_articles\": [], \"specific_articles\": [347]}"}}]
        })
        .to_string();
        let facts_reply = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": ""}}]
        })
        .to_string();
        let error = "HTTP/1.1 500 Internal Server Error\r\nContent-Length: 0\r\nConnection: close\r\n\r\n".to_string();
        let (endpoint, handle) = spawn_server(vec![
            error,
            http_ok(&selector_reply),
            http_ok(&facts_reply),
        ]);
        std::env::set_var("AGENT_TEST_KEY_RETRY", "secret");
        let config = ExtractorConfig {
            backend: Backend::External,
            endpoint_url: endpoint,
            api_key_env_var: "AGENT_TEST_KEY_RETRY".to_string(),
            max_retries: 2,
            max_in_flight: 1,
            ..ExtractorConfig::default()
        };
        let extraction = extract_argument(&drug_case(), Role::Prosecutor, &config).unwrap();
        assert_eq!(extraction.tuple.candidate_specific, [347].into_iter().collect());
        handle.join().unwrap();
    }
}
