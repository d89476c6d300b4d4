//! Validation engine for multi-agent LLM execution traces.
//!
//! The crate ingests JSONL traces of per-agent LLM calls, runs a suite of
//! deterministic rule detectors and LLM-as-a-judge detectors over every call,
//! performs root-cause analysis over raw trajectories and aggregated findings,
//! and renders the results as a canonical JSON report plus a self-contained
//! HTML dashboard. Judge replies are recovered through a sequential parsing
//! cascade that falls back from strict parsing to block extraction to bounded
//! heuristic repair.

pub mod backend;
pub mod cascade;
pub mod diag;
pub mod judges;
pub mod report;
pub mod rootcause;
pub mod rules;
pub mod text;
pub mod trace;

pub use backend::{CompletionParams, JudgeBackend, MockJudge, MockScript};
pub use cascade::{CascadeReport, SchemaSpec, Stage};
pub use diag::{DiagnosticEvent, DiagnosticKind};
pub use judges::{JudgeToolKind, Verdict};
pub use report::{FrequencyTable, OutcomeDiff, ReportDocument};
pub use rootcause::{Criticality, DiagnosisReport, FindingsDigest, RootCauseReport};
pub use rules::{Finding, IssueKind, MismatchReport};
pub use trace::{AgentId, LLMCall, TaskRecord, TraceSet};
