//! Solver-grounded statutory adjudication engine and legal-relevance
//! evaluation harness.
//!
//! Statutes are expressed in a formal rule language ([`kb`]), compiled with
//! typed case facts ([`case`]) into ground constraint problems
//! ([`compile`]), and decided by a ground decision procedure with
//! unsat-core diagnostics and priority resolution ([`solver`],
//! [`adjudicate`]). Argument extraction agents propose candidate facts and
//! statutes ([`agents`]), a perturbation harness constructs paired
//! should-change / should-not-change cases ([`perturb`]), and the metrics
//! module scores predictions under the full battery ([`metrics`]).

pub mod adjudicate;
pub mod agents;
pub mod case;
pub mod compile;
pub mod io;
pub mod kb;
pub mod metrics;
pub mod perturb;
pub mod prop;
pub mod solver;

pub use adjudicate::{adjudicate, AdjudicateConfig, Judgment};
pub use case::{CaseRecord, CaseSchema, ExtraLegalAttr, FactAtom, FactValue, SentenceLabel};
pub use compile::{adjust_interval, encode, refine_facts, GroundProblem, RefinedFactSlice, Tri};
pub use kb::{parse_kb, search_constraints, serialize_kb, validate_kb, StatuteKB};
pub use metrics::{MetricError, MetricReport};
pub use perturb::{apply_perturbation, build_pair_corpus, inject_attack, PerturbationPair, PerturbationSpec};
pub use solver::{check_sat, implies, unsat_core, Implication, SolveResult, UnsatCore};
