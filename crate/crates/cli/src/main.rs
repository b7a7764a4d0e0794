//! Command-line entry point.
//!
//! Subcommands: `kb-validate`, `adjudicate`, `extract`, `perturb`,
//! `evaluate`. Bulk files are line-delimited JSON records; single-document
//! JSON is accepted for small fixtures. Exit codes are a stable contract:
//! 0 success, 1 domain error (validation failures, unknown rules, id
//! mismatches), 2 usage or I/O error (unreadable files, malformed input).
//!
//! Every command with a seed and the deterministic backend is
//! byte-reproducible, independent of the parallelism level. The external
//! text-generation backend reads its bearer token from the `GAVEL_API_KEY`
//! environment variable; the key never appears on the command line.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gavel_core::adjudicate::{adjudicate_suspect, AdjudicateConfig, Judgment, PointPolicy};
use gavel_core::agents::{
    cluster_debate, extract_both, merge_arguments, Backend, ClusterTable, ExtractorConfig,
};
use gavel_core::case::{detect_schema, parse_case_value, CaseRecord};
use gavel_core::io::{read_records, write_bytes, write_records};
use gavel_core::kb::{parse_kb, validate_kb, KbParseError, ProbeCase, StatuteKB, ValidatorConfig};
use gavel_core::metrics::{evaluate_corpus, report_to_flat_table, EvalError, PredictionRecord};
use gavel_core::perturb::{build_pair_corpus, PairRecord, PerturbationPair, PerturbationSpec};

/// Environment variable holding the bearer token for the external
/// backend.
const API_KEY_ENV: &str = "GAVEL_API_KEY";

#[derive(Parser)]
#[command(
    name = "gavel",
    about = "Solver-grounded statutory adjudication and legal-relevance evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Deterministic,
    External,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CandidatesArg {
    /// Candidates proposed by the prosecutor/defense extractors, expanded
    /// over confusable-statute clusters.
    Extractor,
    /// Every article of the knowledge base (exhaustive mode).
    All,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PointPolicyArg {
    Min,
    Mid,
}

#[derive(Args)]
struct CommonExtractorArgs {
    /// Argument extractor backend.
    #[arg(long, value_enum, default_value = "deterministic")]
    backend: BackendArg,
    /// Chat endpoint URL for the external backend.
    #[arg(long, default_value = "")]
    endpoint: String,
    /// Model name passed to the external backend.
    #[arg(long, default_value = "")]
    model: String,
}

impl CommonExtractorArgs {
    fn config(&self) -> ExtractorConfig {
        ExtractorConfig {
            backend: match self.backend {
                BackendArg::Deterministic => Backend::Deterministic,
                BackendArg::External => Backend::External,
            },
            endpoint_url: self.endpoint.clone(),
            model_name: self.model.clone(),
            api_key_env_var: API_KEY_ENV.to_string(),
            ..ExtractorConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse a rule-language document and run the three-stage validator.
    KbValidate {
        /// Rule-language document.
        #[arg(long)]
        kb: PathBuf,
        /// Probe cases with expected activations (JSONL).
        #[arg(long = "in")]
        input: PathBuf,
        /// Report output path (JSON); defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Adjudicate cases against a validated knowledge base.
    Adjudicate {
        #[arg(long)]
        kb: PathBuf,
        /// Case file: native structured records, processed LeCaRDv2, LEEC,
        /// or perturbation pairs (schema auto-detected per record).
        #[arg(long = "in")]
        input: PathBuf,
        /// Judgments output (JSONL).
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        extractor: CommonExtractorArgs,
        /// Candidate statute source.
        #[arg(long, value_enum, default_value = "extractor")]
        candidates: CandidatesArg,
        /// Point-sentence policy.
        #[arg(long, value_enum, default_value = "mid")]
        point_policy: PointPolicyArg,
        /// Statute-cluster table (JSON); defaults to the built-in table.
        #[arg(long)]
        clusters: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker cap; defaults to the logical core count.
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Run prosecutor/defense argument extraction over case narratives.
    Extract {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        extractor: CommonExtractorArgs,
        #[arg(long)]
        clusters: Option<PathBuf>,
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Build a paired perturbation corpus from base cases and specs.
    Perturb {
        /// Base cases (JSONL of structured case records).
        #[arg(long = "in")]
        input: PathBuf,
        /// Perturbation specs (JSONL).
        #[arg(long)]
        specs: PathBuf,
        /// Pairs output (JSONL, perturbation record schema).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Compute the metric battery over a pair corpus and predictions.
    Evaluate {
        /// Perturbation pairs (JSONL, perturbation record schema).
        #[arg(long = "in")]
        input: PathBuf,
        /// Prediction records or judgment records (JSONL).
        #[arg(long)]
        predictions: PathBuf,
        /// Metric report output (JSON); a flat CSV table is written next
        /// to it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        clusters: Option<PathBuf>,
        /// Category serving as the form/noise baseline for bias
        /// magnitude.
        #[arg(long)]
        baseline_group: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::KbValidate { kb, input, out } => cmd_kb_validate(&kb, &input, out.as_deref()),
        Command::Adjudicate {
            kb,
            input,
            out,
            extractor,
            candidates,
            point_policy,
            clusters,
            seed,
            parallelism,
        } => cmd_adjudicate(
            &kb,
            &input,
            &out,
            &extractor,
            candidates,
            point_policy,
            clusters.as_deref(),
            seed,
            parallelism,
        ),
        Command::Extract {
            input,
            out,
            extractor,
            clusters,
            parallelism,
        } => cmd_extract(&input, &out, &extractor, clusters.as_deref(), parallelism),
        Command::Perturb {
            input,
            specs,
            out,
            seed,
            parallelism,
        } => cmd_perturb(&input, &specs, &out, seed, parallelism),
        Command::Evaluate {
            input,
            predictions,
            out,
            clusters,
            baseline_group,
        } => cmd_evaluate(
            &input,
            &predictions,
            &out,
            clusters.as_deref(),
            baseline_group.as_deref(),
        ),
    };
    match outcome {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            failure.code
        }
    }
}

struct Failure {
    code: ExitCode,
    message: String,
}

fn usage_error(message: impl Into<String>) -> Failure {
    Failure {
        code: ExitCode::from(2),
        message: message.into(),
    }
}

fn domain_error(message: impl Into<String>) -> Failure {
    Failure {
        code: ExitCode::from(1),
        message: message.into(),
    }
}

// ---------------------------------------------------------------------------
// Shared loading helpers
// ---------------------------------------------------------------------------

fn load_kb(path: &Path) -> Result<StatuteKB, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage_error(format!("cannot read {}: {e}", path.display())))?;
    parse_kb(&text).map_err(|e| match e {
        KbParseError::Syntax { .. } => {
            usage_error(format!("{}: {e}", path.display()))
        }
        other => usage_error(format!("{}: {other}", path.display())),
    })
}

fn load_clusters(path: Option<&Path>) -> Result<ClusterTable, Failure> {
    match path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage_error(format!("cannot read {}: {e}", path.display())))?;
            ClusterTable::from_json(&text)
                .map_err(|e| usage_error(format!("{}: malformed cluster table: {e}", path.display())))
        }
        None => Ok(ClusterTable::builtin()),
    }
}

/// Reads a case file of any supported schema. Perturbation records
/// contribute both sides of the pair; duplicate case ids keep their first
/// occurrence.
fn load_cases(path: &Path) -> Result<Vec<CaseRecord>, Failure> {
    let raw: Vec<serde_json::Value> =
        read_records(path).map_err(|e| usage_error(e.to_string()))?;
    let mut cases: Vec<CaseRecord> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut push = |case: CaseRecord, cases: &mut Vec<CaseRecord>| {
        if seen.insert(case.case_id.clone()) {
            cases.push(case);
        }
    };
    for (idx, value) in raw.iter().enumerate() {
        let line = idx + 1;
        match detect_schema(value) {
            Some(gavel_core::case::CaseSchema::Perturbation) => {
                let record: PairRecord = serde_json::from_value(value.clone()).map_err(|e| {
                    usage_error(format!("{}:{line}: malformed pair record: {e}", path.display()))
                })?;
                let pair = PerturbationPair::from(record);
                push(pair.base_case, &mut cases);
                push(pair.perturbed_case, &mut cases);
            }
            Some(schema) => {
                let case = parse_case_value(value, schema).map_err(|e| {
                    usage_error(format!("{}:{line}: {e}", path.display()))
                })?;
                push(case, &mut cases);
            }
            None => {
                let case: CaseRecord = serde_json::from_value(value.clone()).map_err(|e| {
                    usage_error(format!("{}:{line}: malformed case record: {e}", path.display()))
                })?;
                push(case, &mut cases);
            }
        }
    }
    Ok(cases)
}

fn thread_pool(parallelism: Option<usize>) -> Result<rayon::ThreadPool, Failure> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(threads) = parallelism {
        builder = builder.num_threads(threads.max(1));
    }
    builder
        .build()
        .map_err(|e| usage_error(format!("cannot build thread pool: {e}")))
}

// ---------------------------------------------------------------------------
// kb-validate
// ---------------------------------------------------------------------------

fn cmd_kb_validate(
    kb_path: &Path,
    probes_path: &Path,
    out: Option<&Path>,
) -> Result<ExitCode, Failure> {
    let mut kb = load_kb(kb_path)?;
    let probes: Vec<ProbeCase> =
        read_records(probes_path).map_err(|e| usage_error(e.to_string()))?;
    let report = validate_kb(&mut kb, &probes, &ValidatorConfig::default());

    let rendered = serde_json::to_string_pretty(&report).expect("report serializes");
    match out {
        Some(path) => write_bytes(path, rendered.as_bytes())
            .map_err(|e| usage_error(e.to_string()))?,
        None => println!("{rendered}"),
    }
    for issue in &report.issues {
        eprintln!("[{:?}/{:?}] {}: {}", issue.section, issue.severity, issue.location, issue.message);
    }
    if report.is_clean() {
        eprintln!("kb-validate: ok ({} probes)", report.probes_run);
        Ok(ExitCode::SUCCESS)
    } else {
        Err(domain_error(format!(
            "knowledge base failed validation with {} error(s)",
            report.error_count()
        )))
    }
}

// ---------------------------------------------------------------------------
// adjudicate
// ---------------------------------------------------------------------------

/// A judgment or a per-case error record; the pipeline continues past
/// case-level failures.
#[derive(Serialize)]
#[serde(untagged)]
enum CaseOutcome {
    Judgment(Box<Judgment>),
    Error { case_id: String, error: String },
}

#[allow(clippy::too_many_arguments)]
fn cmd_adjudicate(
    kb_path: &Path,
    input: &Path,
    out: &Path,
    extractor_args: &CommonExtractorArgs,
    candidates_mode: CandidatesArg,
    point_policy: PointPolicyArg,
    clusters: Option<&Path>,
    _seed: u64,
    parallelism: Option<usize>,
) -> Result<ExitCode, Failure> {
    let mut kb = load_kb(kb_path)?;
    let report = validate_kb(&mut kb, &[], &ValidatorConfig::default());
    if !kb.validated {
        return Err(domain_error(format!(
            "knowledge base failed validation with {} error(s); run kb-validate for details",
            report.error_count()
        )));
    }
    let clusters = load_clusters(clusters)?;
    let cases = load_cases(input)?;
    let extractor_config = extractor_args.config();

    let mut config = AdjudicateConfig::new();
    config.point_policy = match point_policy {
        PointPolicyArg::Min => PointPolicy::Min,
        PointPolicyArg::Mid => PointPolicy::Mid,
    };
    // Conflicting facts surface as solver cores in the judgment
    // diagnostics; the repair loop is a library hook for agent-driven
    // re-grounding and stays off in batch mode.
    config.max_repairs = 0;

    let pool = thread_pool(parallelism)?;
    let outcomes: Vec<CaseOutcome> = pool.install(|| {
        use rayon::prelude::*;
        cases
            .par_iter()
            .flat_map(|case| {
                let suspects: Vec<Option<&str>> = if case.suspect_ids.len() > 1 {
                    case.suspect_ids.iter().map(|s| Some(s.as_str())).collect()
                } else {
                    vec![None]
                };
                suspects
                    .into_iter()
                    .map(|suspect| adjudicate_one(case, suspect, &kb, &clusters, candidates_mode, &extractor_config, &config))
                    .collect::<Vec<_>>()
            })
            .collect()
    });

    write_records(out, &outcomes).map_err(|e| usage_error(e.to_string()))?;
    eprintln!("adjudicate: {} record(s) written to {}", outcomes.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn adjudicate_one(
    case: &CaseRecord,
    suspect: Option<&str>,
    kb: &StatuteKB,
    clusters: &ClusterTable,
    candidates_mode: CandidatesArg,
    extractor_config: &ExtractorConfig,
    config: &AdjudicateConfig,
) -> CaseOutcome {
    let result = (|| -> Result<Judgment, String> {
        let mut case = case.clone();
        let candidates: BTreeSet<u32> = match candidates_mode {
            CandidatesArg::All => BTreeSet::new(),
            CandidatesArg::Extractor => {
                let (prosecutor, defense) =
                    extract_both(&case, extractor_config).map_err(|e| e.to_string())?;
                let merged = merge_arguments(&prosecutor.tuple, &defense.tuple);
                let expanded = cluster_debate(&merged.candidates(), clusters);
                if case.facts.is_empty() {
                    case.facts = merged.facts;
                }
                expanded
            }
        };
        adjudicate_suspect(&case, suspect, kb, &candidates, config).map_err(|e| e.to_string())
    })();
    match result {
        Ok(judgment) => CaseOutcome::Judgment(Box::new(judgment)),
        Err(error) => CaseOutcome::Error {
            case_id: case.case_id.clone(),
            error,
        },
    }
}

// ---------------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ExtractionRecord {
    case_id: String,
    prosecutor: gavel_core::agents::Extraction,
    defense: gavel_core::agents::Extraction,
    merged: gavel_core::agents::MergedArguments,
    cluster_expanded_candidates: BTreeSet<u32>,
}

fn cmd_extract(
    input: &Path,
    out: &Path,
    extractor_args: &CommonExtractorArgs,
    clusters: Option<&Path>,
    parallelism: Option<usize>,
) -> Result<ExitCode, Failure> {
    let clusters = load_clusters(clusters)?;
    let cases = load_cases(input)?;
    let config = extractor_args.config();

    let pool = thread_pool(parallelism)?;
    let records: Vec<Result<ExtractionRecord, Failure>> = pool.install(|| {
        use rayon::prelude::*;
        cases
            .par_iter()
            .map(|case| {
                let (prosecutor, defense) = extract_both(case, &config)
                    .map_err(|e| domain_error(format!("{}: {e}", case.case_id)))?;
                let merged = merge_arguments(&prosecutor.tuple, &defense.tuple);
                let cluster_expanded_candidates = cluster_debate(&merged.candidates(), &clusters);
                Ok(ExtractionRecord {
                    case_id: case.case_id.clone(),
                    prosecutor,
                    defense,
                    merged,
                    cluster_expanded_candidates,
                })
            })
            .collect()
    });
    let records: Vec<ExtractionRecord> = records.into_iter().collect::<Result<_, _>>()?;
    write_records(out, &records).map_err(|e| usage_error(e.to_string()))?;
    eprintln!("extract: {} record(s) written to {}", records.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// perturb
// ---------------------------------------------------------------------------

fn cmd_perturb(
    input: &Path,
    specs_path: &Path,
    out: &Path,
    seed: u64,
    parallelism: Option<usize>,
) -> Result<ExitCode, Failure> {
    let bases = load_cases(input)?;
    let specs: Vec<PerturbationSpec> =
        read_records(specs_path).map_err(|e| usage_error(e.to_string()))?;

    // Corpus assembly parallelizes over specs; per-pair seeds make the
    // output independent of scheduling.
    let pool = thread_pool(parallelism)?;
    let chunks: Vec<Result<Vec<PerturbationPair>, Failure>> = pool.install(|| {
        use rayon::prelude::*;
        specs
            .par_iter()
            .map(|spec| {
                build_pair_corpus(&bases, std::slice::from_ref(spec), seed)
                    .map_err(|e| domain_error(e.to_string()))
            })
            .collect()
    });
    let mut pairs = Vec::new();
    for chunk in chunks {
        pairs.extend(chunk?);
    }

    let records: Vec<PairRecord> = pairs.iter().map(PairRecord::from).collect();
    write_records(out, &records).map_err(|e| usage_error(e.to_string()))?;
    eprintln!("perturb: {} pair(s) written to {}", records.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

fn load_predictions(path: &Path) -> Result<BTreeMap<String, PredictionRecord>, Failure> {
    let raw: Vec<serde_json::Value> =
        read_records(path).map_err(|e| usage_error(e.to_string()))?;
    let mut out = BTreeMap::new();
    for (idx, value) in raw.iter().enumerate() {
        let record: PredictionRecord = if value.get("predicted_general").is_some()
            || value.get("predicted_specific").is_some()
        {
            serde_json::from_value(value.clone()).map_err(|e| {
                usage_error(format!("{}:{}: malformed prediction: {e}", path.display(), idx + 1))
            })?
        } else if value.get("chosen_clauses").is_some() {
            let judgment: Judgment = serde_json::from_value(value.clone()).map_err(|e| {
                usage_error(format!("{}:{}: malformed judgment: {e}", path.display(), idx + 1))
            })?;
            PredictionRecord::from(&judgment)
        } else {
            return Err(usage_error(format!(
                "{}:{}: record is neither a prediction nor a judgment",
                path.display(),
                idx + 1
            )));
        };
        out.insert(record.case_id.clone(), record);
    }
    Ok(out)
}

fn cmd_evaluate(
    input: &Path,
    predictions_path: &Path,
    out: &Path,
    clusters: Option<&Path>,
    baseline_group: Option<&str>,
) -> Result<ExitCode, Failure> {
    let records: Vec<PairRecord> = read_records(input).map_err(|e| usage_error(e.to_string()))?;
    let pairs: Vec<PerturbationPair> = records.into_iter().map(PerturbationPair::from).collect();
    let predictions = load_predictions(predictions_path)?;
    let clusters = load_clusters(clusters)?;

    let report = evaluate_corpus(&pairs, &predictions, &clusters, baseline_group)
        .map_err(|e| match e {
            EvalError::MissingPredictions(_, _) => domain_error(e.to_string()),
            EvalError::Metric(m) => domain_error(m.to_string()),
        })?;

    let rendered = serde_json::to_string_pretty(&report).expect("report serializes");
    write_bytes(out, rendered.as_bytes()).map_err(|e| usage_error(e.to_string()))?;
    let csv_path = out.with_extension("csv");
    write_bytes(&csv_path, report_to_flat_table(&report).as_bytes())
        .map_err(|e| usage_error(e.to_string()))?;
    eprintln!(
        "evaluate: report written to {} (flat table: {})",
        out.display(),
        csv_path.display()
    );
    Ok(ExitCode::SUCCESS)
}
