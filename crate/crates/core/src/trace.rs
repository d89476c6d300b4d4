//! Trace data model and JSONL ingestion.
//!
//! A trace file is UTF-8 JSON-Lines: one object per `\n`-terminated line with
//! a `"kind"` discriminator of either `"call"` or `"task"`. Call lines record
//! a single LLM invocation by one agent; task lines record task metadata and
//! outcome per model. Ingestion is eager (the whole file is held in memory)
//! and either strict (first bad line aborts) or lenient (bad lines are
//! skipped and reported).

use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::fmt;
use thiserror::Error;

/// Name of the agent that executed an LLM call.
///
/// Non-empty and free of line breaks; both are enforced at construction and
/// on deserialization.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AgentId(String);

impl AgentId {
    pub fn new(name: impl Into<String>) -> Result<Self, InvalidAgentId> {
        let name = name.into();
        if name.is_empty() {
            return Err(InvalidAgentId::Empty);
        }
        if name.contains(['\n', '\r']) {
            return Err(InvalidAgentId::LineBreak);
        }
        Ok(AgentId(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for AgentId {
    type Error = InvalidAgentId;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        AgentId::new(value)
    }
}

impl From<AgentId> for String {
    fn from(id: AgentId) -> String {
        id.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvalidAgentId {
    #[error("agent name is empty")]
    Empty,
    #[error("agent name contains a line break")]
    LineBreak,
}

/// One agent step: a single LLM invocation and its surrounding context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LLMCall {
    pub call_id: String,
    pub task_id: String,
    /// Position within the task trajectory; strictly increasing per
    /// (task_id, model_id).
    pub seq: u64,
    pub agent: AgentId,
    pub model_id: String,
    pub system_prompt: String,
    pub user_input: String,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

/// Task metadata and outcome for one model run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    pub task_id: String,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub succeeded: Option<bool>,
}

/// An ingested trace: ordered calls plus the tasks they belong to.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceSet {
    pub calls: Vec<LLMCall>,
    pub tasks: Vec<TaskRecord>,
}

impl TraceSet {
    /// Calls belonging to one (task, model) trajectory, in trace order.
    pub fn trajectory(&self, task_id: &str, model_id: &str) -> Vec<&LLMCall> {
        self.calls
            .iter()
            .filter(|c| c.task_id == task_id && c.model_id == model_id)
            .collect()
    }

    pub fn call_ids(&self) -> HashSet<&str> {
        self.calls.iter().map(|c| c.call_id.as_str()).collect()
    }
}

/// Wire form of one trace line. The discriminator is the `kind` field.
#[derive(Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TraceLine<'a> {
    Call(&'a LLMCall),
    Task(&'a TaskRecord),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IngestMode {
    #[default]
    Strict,
    Lenient,
}

/// A line dropped during lenient ingestion, with the 1-based line number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

/// Result of parsing a trace file: the trace plus any lenient-mode skips.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTrace {
    pub trace: TraceSet,
    pub skipped: Vec<SkippedLine>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace file is not valid UTF-8")]
    NotUtf8,
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: duplicate call_id {call_id:?}")]
    DuplicateCallId { line: usize, call_id: String },
    #[error("line {line}: call {call_id:?} references unknown task_id {task_id:?}")]
    UnknownTaskId {
        line: usize,
        call_id: String,
        task_id: String,
    },
}

/// Parse a JSONL trace file.
///
/// Strict mode aborts on the first malformed or invariant-breaking line;
/// lenient mode drops such lines and reports them in `skipped`. In both
/// modes the returned `TraceSet` satisfies every type invariant, so
/// [`validate_trace_set`] reports at most warning-level violations on it.
/// Blank lines are ignored. Parsing is deterministic and preserves line
/// order within calls and within tasks.
pub fn parse_trace_file(bytes: &[u8], mode: IngestMode) -> Result<ParsedTrace, TraceError> {
    let text = std::str::from_utf8(bytes).map_err(|_| TraceError::NotUtf8)?;

    let mut calls: Vec<(usize, LLMCall)> = Vec::new();
    let mut tasks: Vec<TaskRecord> = Vec::new();
    let mut skipped = Vec::new();
    let mut seen_call_ids: HashSet<String> = HashSet::new();
    let mut seen_tasks: HashSet<(String, String)> = HashSet::new();
    let mut last_seq: HashMap<(String, String), u64> = HashMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        match parse_line(raw) {
            Ok(ParsedLine::Call(call)) => {
                if !seen_call_ids.insert(call.call_id.clone()) {
                    match mode {
                        IngestMode::Strict => {
                            return Err(TraceError::DuplicateCallId {
                                line: line_no,
                                call_id: call.call_id,
                            });
                        }
                        IngestMode::Lenient => {
                            skipped.push(SkippedLine {
                                line: line_no,
                                reason: format!("duplicate call_id {:?}", call.call_id),
                            });
                            continue;
                        }
                    }
                }
                let key = (call.task_id.clone(), call.model_id.clone());
                if let Some(&prev) = last_seq.get(&key) {
                    if call.seq <= prev {
                        let reason = format!(
                            "seq {} not strictly increasing within task {:?} (previous {})",
                            call.seq, call.task_id, prev
                        );
                        match mode {
                            IngestMode::Strict => {
                                return Err(TraceError::MalformedLine {
                                    line: line_no,
                                    reason,
                                });
                            }
                            IngestMode::Lenient => {
                                seen_call_ids.remove(&call.call_id);
                                skipped.push(SkippedLine {
                                    line: line_no,
                                    reason,
                                });
                                continue;
                            }
                        }
                    }
                }
                last_seq.insert(key, call.seq);
                calls.push((line_no, call));
            }
            Ok(ParsedLine::Task(task)) => {
                let key = (task.task_id.clone(), task.model_id.clone());
                if !seen_tasks.insert(key) {
                    let reason = format!(
                        "duplicate task {:?} for model {:?}",
                        task.task_id, task.model_id
                    );
                    match mode {
                        IngestMode::Strict => {
                            return Err(TraceError::MalformedLine {
                                line: line_no,
                                reason,
                            });
                        }
                        IngestMode::Lenient => {
                            skipped.push(SkippedLine {
                                line: line_no,
                                reason,
                            });
                            continue;
                        }
                    }
                }
                tasks.push(task);
            }
            Err(reason) => match mode {
                IngestMode::Strict => {
                    return Err(TraceError::MalformedLine {
                        line: line_no,
                        reason,
                    });
                }
                IngestMode::Lenient => {
                    skipped.push(SkippedLine {
                        line: line_no,
                        reason,
                    });
                }
            },
        }
    }

    // Cross-reference pass: every call must point at a known task.
    let task_ids: HashSet<&str> = tasks.iter().map(|t| t.task_id.as_str()).collect();
    let mut kept = Vec::with_capacity(calls.len());
    for (line_no, call) in calls {
        if task_ids.contains(call.task_id.as_str()) {
            kept.push(call);
        } else {
            match mode {
                IngestMode::Strict => {
                    return Err(TraceError::UnknownTaskId {
                        line: line_no,
                        call_id: call.call_id,
                        task_id: call.task_id,
                    });
                }
                IngestMode::Lenient => {
                    skipped.push(SkippedLine {
                        line: line_no,
                        reason: format!(
                            "call {:?} references unknown task_id {:?}",
                            call.call_id, call.task_id
                        ),
                    });
                }
            }
        }
    }
    skipped.sort_by_key(|s| s.line);

    Ok(ParsedTrace {
        trace: TraceSet {
            calls: kept,
            tasks,
        },
        skipped,
    })
}

enum ParsedLine {
    Call(LLMCall),
    Task(TaskRecord),
}

fn parse_line(raw: &str) -> Result<ParsedLine, String> {
    let mut value: serde_json::Value =
        serde_json::from_str(raw).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| "line is not a JSON object".to_string())?;
    let kind = obj
        .remove("kind")
        .ok_or_else(|| "missing \"kind\" field".to_string())?;
    match kind.as_str() {
        Some("call") => {
            let call: LLMCall =
                serde_json::from_value(value).map_err(|e| format!("bad call line: {e}"))?;
            Ok(ParsedLine::Call(call))
        }
        Some("task") => {
            let task: TaskRecord =
                serde_json::from_value(value).map_err(|e| format!("bad task line: {e}"))?;
            Ok(ParsedLine::Task(task))
        }
        Some(other) => Err(format!("unknown kind {other:?}")),
        None => Err("\"kind\" is not a string".to_string()),
    }
}

/// Serialize a trace back to JSONL (task lines first, then call lines).
///
/// Re-parsing the output yields a `TraceSet` equal to the input.
pub fn serialize_trace_set(ts: &TraceSet) -> String {
    let mut out = String::new();
    for task in &ts.tasks {
        out.push_str(&serde_json::to_string(&TraceLine::Task(task)).expect("serializable"));
        out.push('\n');
    }
    for call in &ts.calls {
        out.push_str(&serde_json::to_string(&TraceLine::Call(call)).expect("serializable"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationSeverity {
    Warning,
    Error,
}

/// A break of a `TraceSet` invariant. Violations are data, not errors:
/// a set that fails validation is still usable, the caller decides policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum IntegrityViolation {
    DuplicateCallId { call_id: String },
    UnknownTaskId { call_id: String, task_id: String },
    SeqOutOfOrder { call_id: String, task_id: String },
    DuplicateTask { task_id: String, model_id: String },
    /// Empty prompt/input/output text. Admitted, but worth surfacing:
    /// erratic runs tend to show up as streams of empty calls.
    EmptyCallText { call_id: String, field: String },
}

impl IntegrityViolation {
    pub fn severity(&self) -> ViolationSeverity {
        match self {
            IntegrityViolation::EmptyCallText { .. } => ViolationSeverity::Warning,
            _ => ViolationSeverity::Error,
        }
    }
}

/// Check every `TraceSet` invariant; empty iff they all hold.
pub fn validate_trace_set(ts: &TraceSet) -> Vec<IntegrityViolation> {
    let mut violations = Vec::new();

    let mut seen_calls: HashSet<&str> = HashSet::new();
    for call in &ts.calls {
        if !seen_calls.insert(&call.call_id) {
            violations.push(IntegrityViolation::DuplicateCallId {
                call_id: call.call_id.clone(),
            });
        }
    }

    let task_ids: HashSet<&str> = ts.tasks.iter().map(|t| t.task_id.as_str()).collect();
    for call in &ts.calls {
        if !task_ids.contains(call.task_id.as_str()) {
            violations.push(IntegrityViolation::UnknownTaskId {
                call_id: call.call_id.clone(),
                task_id: call.task_id.clone(),
            });
        }
    }

    let mut last_seq: HashMap<(&str, &str), u64> = HashMap::new();
    for call in &ts.calls {
        let key = (call.task_id.as_str(), call.model_id.as_str());
        if let Some(&prev) = last_seq.get(&key) {
            if call.seq <= prev {
                violations.push(IntegrityViolation::SeqOutOfOrder {
                    call_id: call.call_id.clone(),
                    task_id: call.task_id.clone(),
                });
            }
        }
        last_seq.insert(key, call.seq);
    }

    let mut seen_tasks: HashSet<(&str, &str)> = HashSet::new();
    for task in &ts.tasks {
        if !seen_tasks.insert((&task.task_id, &task.model_id)) {
            violations.push(IntegrityViolation::DuplicateTask {
                task_id: task.task_id.clone(),
                model_id: task.model_id.clone(),
            });
        }
    }

    for call in &ts.calls {
        for (field, value) in [
            ("system_prompt", &call.system_prompt),
            ("user_input", &call.user_input),
            ("output", &call.output),
        ] {
            if value.is_empty() {
                violations.push(IntegrityViolation::EmptyCallText {
                    call_id: call.call_id.clone(),
                    field: field.to_string(),
                });
            }
        }
    }

    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call_line(call_id: &str, task_id: &str, seq: u64) -> String {
        format!(
            r#"{{"kind":"call","call_id":"{call_id}","task_id":"{task_id}","seq":{seq},"agent":"PlannerAgent","model_id":"gpt-4o","system_prompt":"sp","user_input":"ui","output":"out"}}"#
        )
    }

    fn task_line(task_id: &str) -> String {
        format!(r#"{{"kind":"task","task_id":"{task_id}","model_id":"gpt-4o"}}"#)
    }

    #[test]
    fn minimal_valid_file() {
        let file = format!("{}\n{}\n{}\n", call_line("c1", "t1", 0), call_line("c2", "t1", 1), task_line("t1"));
        let parsed = parse_trace_file(file.as_bytes(), IngestMode::Strict).unwrap();
        assert_eq!(parsed.trace.calls.len(), 2);
        assert_eq!(parsed.trace.tasks.len(), 1);
        assert!(parsed.skipped.is_empty());
        assert!(validate_trace_set(&parsed.trace).is_empty());
    }

    #[test]
    fn empty_file_is_empty_trace() {
        let parsed = parse_trace_file(b"", IngestMode::Strict).unwrap();
        assert_eq!(parsed.trace, TraceSet::default());
    }

    #[test]
    fn missing_field_strict_vs_lenient() {
        let bad = r#"{"kind":"call","call_id":"c2","task_id":"t1","seq":1,"model_id":"m","system_prompt":"s","user_input":"u","output":"o"}"#;
        let file = format!("{}\n{bad}\n{}\n", call_line("c1", "t1", 0), task_line("t1"));

        let err = parse_trace_file(file.as_bytes(), IngestMode::Strict).unwrap_err();
        match err {
            TraceError::MalformedLine { line, reason } => {
                assert_eq!(line, 2);
                assert!(reason.contains("agent"), "reason should name the field: {reason}");
            }
            other => panic!("unexpected error: {other:?}"),
        }

        let parsed = parse_trace_file(file.as_bytes(), IngestMode::Lenient).unwrap();
        assert_eq!(parsed.trace.calls.len(), 1);
        assert_eq!(parsed.skipped.len(), 1);
        assert_eq!(parsed.skipped[0].line, 2);
    }

    #[test]
    fn duplicate_call_id_rejected() {
        let file = format!("{}\n{}\n{}\n", call_line("c1", "t1", 0), call_line("c1", "t1", 1), task_line("t1"));
        let err = parse_trace_file(file.as_bytes(), IngestMode::Strict).unwrap_err();
        assert!(matches!(err, TraceError::DuplicateCallId { line: 2, .. }));

        let parsed = parse_trace_file(file.as_bytes(), IngestMode::Lenient).unwrap();
        assert_eq!(parsed.trace.calls.len(), 1);
        assert_eq!(parsed.skipped.len(), 1);
    }

    #[test]
    fn unknown_task_id_rejected() {
        let file = format!("{}\n{}\n", call_line("c1", "t9", 0), task_line("t1"));
        let err = parse_trace_file(file.as_bytes(), IngestMode::Strict).unwrap_err();
        assert!(matches!(err, TraceError::UnknownTaskId { .. }));
    }

    #[test]
    fn seq_must_increase_within_trajectory() {
        let file = format!("{}\n{}\n{}\n", call_line("c1", "t1", 3), call_line("c2", "t1", 3), task_line("t1"));
        assert!(parse_trace_file(file.as_bytes(), IngestMode::Strict).is_err());

        // Same task id under a different model is a separate trajectory.
        let other_model = r#"{"kind":"call","call_id":"c2","task_id":"t1","seq":0,"agent":"A","model_id":"llama-4","system_prompt":"s","user_input":"u","output":"o"}"#;
        let file = format!(
            "{}\n{other_model}\n{}\n{}\n",
            call_line("c1", "t1", 5),
            task_line("t1"),
            r#"{"kind":"task","task_id":"t1","model_id":"llama-4"}"#
        );
        assert!(parse_trace_file(file.as_bytes(), IngestMode::Strict).is_ok());
    }

    #[test]
    fn not_utf8() {
        assert!(matches!(
            parse_trace_file(&[0xff, 0xfe, b'{'], IngestMode::Lenient),
            Err(TraceError::NotUtf8)
        ));
    }

    #[test]
    fn unknown_fields_rejected() {
        let line = r#"{"kind":"call","call_id":"c1","task_id":"t1","seq":0,"agent":"A","model_id":"m","system_prompt":"s","user_input":"u","output":"o","extra":1}"#;
        let file = format!("{line}\n{}\n", task_line("t1"));
        assert!(parse_trace_file(file.as_bytes(), IngestMode::Strict).is_err());
    }

    #[test]
    fn agent_id_invariants() {
        assert!(AgentId::new("APIPlannerAgent").is_ok());
        assert_eq!(AgentId::new(""), Err(InvalidAgentId::Empty));
        assert_eq!(AgentId::new("a\nb"), Err(InvalidAgentId::LineBreak));
        // Deserialization goes through the same validation.
        assert!(serde_json::from_str::<AgentId>("\"a\\nb\"").is_err());
    }

    #[test]
    fn validate_reports_violations() {
        let call = LLMCall {
            call_id: "c1".into(),
            task_id: "t9".into(),
            seq: 0,
            agent: AgentId::new("A").unwrap(),
            model_id: "m".into(),
            system_prompt: "s".into(),
            user_input: "u".into(),
            output: "o".into(),
            timestamp: None,
        };
        let ts = TraceSet {
            calls: vec![call.clone(), call],
            tasks: vec![],
        };
        let violations = validate_trace_set(&ts);
        assert!(violations.contains(&IntegrityViolation::DuplicateCallId { call_id: "c1".into() }));
        assert!(violations
            .iter()
            .any(|v| matches!(v, IntegrityViolation::UnknownTaskId { task_id, .. } if task_id == "t9")));
    }

    #[test]
    fn empty_text_is_warning_level() {
        let ts = TraceSet {
            calls: vec![LLMCall {
                call_id: "c1".into(),
                task_id: "t1".into(),
                seq: 0,
                agent: AgentId::new("A").unwrap(),
                model_id: "m".into(),
                system_prompt: "s".into(),
                user_input: String::new(),
                output: "o".into(),
                timestamp: None,
            }],
            tasks: vec![TaskRecord {
                task_id: "t1".into(),
                model_id: "m".into(),
                description: None,
                succeeded: None,
            }],
        };
        let violations = validate_trace_set(&ts);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].severity(), ViolationSeverity::Warning);
    }

    #[test]
    fn round_trip_preserves_trace() {
        let file = format!(
            "{}\n{}\n{}\n{}\n",
            task_line("t1"),
            call_line("c1", "t1", 0),
            r#"{"kind":"call","call_id":"c2","task_id":"t1","seq":4,"agent":"B","model_id":"gpt-4o","system_prompt":"","user_input":"x","output":"y","timestamp":"2025-01-01T00:00:00Z"}"#,
            r#"{"kind":"task","task_id":"t2","model_id":"m2","description":"d","succeeded":true}"#
        );
        let parsed = parse_trace_file(file.as_bytes(), IngestMode::Strict).unwrap();
        let serialized = serialize_trace_set(&parsed.trace);
        let reparsed = parse_trace_file(serialized.as_bytes(), IngestMode::Strict).unwrap();
        assert_eq!(parsed.trace, reparsed.trace);
    }
}
