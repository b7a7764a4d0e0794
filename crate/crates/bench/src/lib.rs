//! Shared fixture construction for the benchmark suite.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use gavel_core::case::CaseRecord;
use gavel_core::io::read_records;
use gavel_core::kb::{parse_kb, validate_kb, ProbeCase, StatuteKB, ValidatorConfig};

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

/// The validated sample knowledge base shipped with the fixtures.
pub fn sample_kb() -> StatuteKB {
    let text = std::fs::read_to_string(fixtures_dir().join("kb/sample.kb"))
        .expect("sample KB readable");
    let mut kb = parse_kb(&text).expect("sample KB parses");
    let probes: Vec<ProbeCase> =
        read_records(&fixtures_dir().join("kb/probes.jsonl")).expect("probes readable");
    let report = validate_kb(&mut kb, &probes, &ValidatorConfig::default());
    assert!(report.is_clean(), "sample KB must validate");
    kb
}

pub fn sample_kb_text() -> String {
    std::fs::read_to_string(fixtures_dir().join("kb/sample.kb")).expect("sample KB readable")
}

pub fn drug_case() -> CaseRecord {
    let text = std::fs::read_to_string(fixtures_dir().join("cases/c_drug_sale.json"))
        .expect("case readable");
    serde_json::from_str(&text).expect("case parses")
}

pub fn drug_candidates() -> BTreeSet<u32> {
    [64, 65, 67, 347].into_iter().collect()
}

// re-export so benches don't need a serde_json dependency of their own
pub use serde_json;
