//! Sequential parsing cascade for structured model output.
//!
//! Model replies rarely arrive as clean JSON. The cascade recovers a
//! schema-valid object by trying strategies in a fixed order:
//!
//! 1. **Strict** — the whole reply parses as a JSON object and validates.
//! 2. **Extracted** — candidate blocks (fenced code blocks, then maximal
//!    balanced `{...}` spans) are tried in priority order.
//! 3. **Repaired** — a bounded set of rewrite rules (trailing commas, quote
//!    style, bare keys, Python literals, unterminated strings, unclosed
//!    brackets) is applied to each candidate and the result re-parsed.
//!
//! The first success wins and the report records every attempt and every
//! repair applied. The cascade never synthesizes field values: repairs are
//! purely syntactic rewrites. A fourth stage exists only as an extension
//! hook and is disabled by default.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fmt;
use thiserror::Error;

/// Field types a [`SchemaSpec`] can demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldType {
    Boolean,
    Number,
    String,
    StringArray,
    Object,
}

impl fmt::Display for FieldType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FieldType::Boolean => "boolean",
            FieldType::Number => "number",
            FieldType::String => "string",
            FieldType::StringArray => "array of strings",
            FieldType::Object => "object",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub ty: FieldType,
    /// Inclusive numeric bounds; only meaningful for number fields.
    pub bounds: Option<(f64, f64)>,
}

/// Target shape for the cascade: required and optional fields with types,
/// plus optional numeric bounds. Field names are unique across both lists.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemaSpec {
    pub required: Vec<FieldSpec>,
    pub optional: Vec<FieldSpec>,
}

impl SchemaSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn required(mut self, name: &str, ty: FieldType) -> Self {
        self.push(name, ty, None, true);
        self
    }

    pub fn optional(mut self, name: &str, ty: FieldType) -> Self {
        self.push(name, ty, None, false);
        self
    }

    pub fn required_number_bounded(mut self, name: &str, lo: f64, hi: f64) -> Self {
        self.push(name, FieldType::Number, Some((lo, hi)), true);
        self
    }

    pub fn optional_number_bounded(mut self, name: &str, lo: f64, hi: f64) -> Self {
        self.push(name, FieldType::Number, Some((lo, hi)), false);
        self
    }

    fn push(&mut self, name: &str, ty: FieldType, bounds: Option<(f64, f64)>, required: bool) {
        debug_assert!(
            !self.field(name).is_some(),
            "duplicate field {name:?} in schema"
        );
        let spec = FieldSpec {
            name: name.to_string(),
            ty,
            bounds,
        };
        if required {
            self.required.push(spec);
        } else {
            self.optional.push(spec);
        }
    }

    fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.required
            .iter()
            .chain(self.optional.iter())
            .find(|f| f.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemaViolation {
    NotAnObject,
    MissingField { field: String },
    WrongType { field: String, expected: FieldType },
    OutOfBounds { field: String, value: f64, lo: f64, hi: f64 },
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaViolation::NotAnObject => write!(f, "value is not a JSON object"),
            SchemaViolation::MissingField { field } => write!(f, "missing field {field:?}"),
            SchemaViolation::WrongType { field, expected } => {
                write!(f, "field {field:?} is not a {expected}")
            }
            SchemaViolation::OutOfBounds { field, value, lo, hi } => {
                write!(f, "field {field:?} = {value} outside [{lo}, {hi}]")
            }
        }
    }
}

/// Outcome of checking a value against a schema. Extra fields are warnings,
/// never violations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SchemaCheck {
    pub violations: Vec<SchemaViolation>,
    pub warnings: Vec<String>,
}

impl SchemaCheck {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check `value` against `schema`. `violations` is empty iff every required
/// field is present with its declared type and bounds. Optional fields may
/// be absent or `null`; when present they are type- and bounds-checked.
pub fn validate_against_schema(value: &Value, schema: &SchemaSpec) -> SchemaCheck {
    let mut check = SchemaCheck::default();
    let obj = match value.as_object() {
        Some(obj) => obj,
        None => {
            check.violations.push(SchemaViolation::NotAnObject);
            return check;
        }
    };

    for (spec, required) in schema
        .required
        .iter()
        .map(|s| (s, true))
        .chain(schema.optional.iter().map(|s| (s, false)))
    {
        match obj.get(&spec.name) {
            None | Some(Value::Null) => {
                if required {
                    check.violations.push(SchemaViolation::MissingField {
                        field: spec.name.clone(),
                    });
                }
            }
            Some(v) => {
                if !type_matches(v, spec.ty) {
                    check.violations.push(SchemaViolation::WrongType {
                        field: spec.name.clone(),
                        expected: spec.ty,
                    });
                } else if let (Some((lo, hi)), Some(n)) = (spec.bounds, v.as_f64()) {
                    if n < lo || n > hi {
                        check.violations.push(SchemaViolation::OutOfBounds {
                            field: spec.name.clone(),
                            value: n,
                            lo,
                            hi,
                        });
                    }
                }
            }
        }
    }

    for key in obj.keys() {
        if schema.field(key).is_none() {
            check.warnings.push(format!("unexpected field {key:?}"));
        }
    }
    check
}

fn type_matches(v: &Value, ty: FieldType) -> bool {
    match ty {
        FieldType::Boolean => v.is_boolean(),
        FieldType::Number => v.is_number(),
        FieldType::String => v.is_string(),
        FieldType::StringArray => v
            .as_array()
            .is_some_and(|a| a.iter().all(Value::is_string)),
        FieldType::Object => v.is_object(),
    }
}

/// Which strategy produced the value (or `Failed` if none did).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Strict,
    Extracted,
    Repaired,
    Failed,
}

/// Syntactic rewrite rules `repair_json` may apply, in catalog order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairKind {
    TrailingComma,
    SingleQuotes,
    BareKeys,
    PythonLiterals,
    UnterminatedString,
    UnbalancedBrackets,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptOutcome {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub stage: Stage,
    pub outcome: AttemptOutcome,
    pub detail: String,
}

/// What the cascade tried and how the value was recovered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeReport {
    pub stage_used: Stage,
    pub attempts: Vec<Attempt>,
    pub repairs: Vec<RepairKind>,
}

#[derive(Debug, Clone, Error)]
#[error("parsing cascade exhausted after {} attempts", report.attempts.len())]
pub struct CascadeExhausted {
    pub report: CascadeReport,
}

/// At most this many candidate blocks are examined per reply.
pub const CANDIDATE_CAP: usize = 8;

/// Recover a schema-valid object from free-form model text.
///
/// Stages run in fixed order and short-circuit on the first success; the
/// report lists every attempt. On failure the full report is returned in
/// the error.
pub fn parse_structured(
    text: &str,
    schema: &SchemaSpec,
) -> Result<(Value, CascadeReport), CascadeExhausted> {
    let mut attempts = Vec::new();

    // Stage 1: the whole reply is the object.
    match serde_json::from_str::<Value>(text.trim()) {
        Ok(value) if value.is_object() => {
            let check = validate_against_schema(&value, schema);
            if check.is_valid() {
                attempts.push(attempt(Stage::Strict, AttemptOutcome::Success, "parsed whole text"));
                return Ok((
                    value,
                    CascadeReport {
                        stage_used: Stage::Strict,
                        attempts,
                        repairs: vec![],
                    },
                ));
            }
            attempts.push(attempt(
                Stage::Strict,
                AttemptOutcome::Failure,
                &format!("schema: {}", describe(&check)),
            ));
        }
        Ok(_) => attempts.push(attempt(Stage::Strict, AttemptOutcome::Failure, "not an object")),
        Err(e) => attempts.push(attempt(Stage::Strict, AttemptOutcome::Failure, &format!("parse: {e}"))),
    }

    // Stage 2: candidate blocks, first valid one wins.
    let candidates = extract_candidate_blocks(text);
    for (i, cand) in candidates.iter().enumerate() {
        match serde_json::from_str::<Value>(cand) {
            Ok(value) if value.is_object() => {
                let check = validate_against_schema(&value, schema);
                if check.is_valid() {
                    attempts.push(attempt(
                        Stage::Extracted,
                        AttemptOutcome::Success,
                        &format!("candidate {i}"),
                    ));
                    return Ok((
                        value,
                        CascadeReport {
                            stage_used: Stage::Extracted,
                            attempts,
                            repairs: vec![],
                        },
                    ));
                }
                attempts.push(attempt(
                    Stage::Extracted,
                    AttemptOutcome::Failure,
                    &format!("candidate {i} schema: {}", describe(&check)),
                ));
            }
            Ok(_) => attempts.push(attempt(
                Stage::Extracted,
                AttemptOutcome::Failure,
                &format!("candidate {i} not an object"),
            )),
            Err(e) => attempts.push(attempt(
                Stage::Extracted,
                AttemptOutcome::Failure,
                &format!("candidate {i} parse: {e}"),
            )),
        }
    }

    // Stage 3: bounded repair over the candidates, then the whole text.
    let mut repair_inputs: Vec<&str> = candidates.iter().map(String::as_str).collect();
    let trimmed = text.trim();
    if !trimmed.is_empty() && !repair_inputs.contains(&trimmed) {
        repair_inputs.push(trimmed);
    }
    repair_inputs.truncate(CANDIDATE_CAP);
    for (i, input) in repair_inputs.iter().enumerate() {
        let Some(repair) = repair_json(input) else {
            attempts.push(attempt(
                Stage::Repaired,
                AttemptOutcome::Failure,
                &format!("candidate {i} unrepairable"),
            ));
            continue;
        };
        let value: Value = serde_json::from_str(&repair.text).expect("repair output parses");
        if !value.is_object() {
            attempts.push(attempt(
                Stage::Repaired,
                AttemptOutcome::Failure,
                &format!("candidate {i} repaired to non-object"),
            ));
            continue;
        }
        let check = validate_against_schema(&value, schema);
        if check.is_valid() {
            attempts.push(attempt(
                Stage::Repaired,
                AttemptOutcome::Success,
                &format!("candidate {i}, {} repair(s)", repair.applied.len()),
            ));
            return Ok((
                value,
                CascadeReport {
                    stage_used: Stage::Repaired,
                    attempts,
                    repairs: repair.applied,
                },
            ));
        }
        attempts.push(attempt(
            Stage::Repaired,
            AttemptOutcome::Failure,
            &format!("candidate {i} schema: {}", describe(&check)),
        ));
    }

    Err(CascadeExhausted {
        report: CascadeReport {
            stage_used: Stage::Failed,
            attempts,
            repairs: vec![],
        },
    })
}

/// Extension point for a fourth recovery stage. Not wired into any default
/// path; callers opt in via [`parse_structured_with_hook`].
pub trait RecoveryHook {
    fn name(&self) -> &str;
    fn recover(&self, text: &str, schema: &SchemaSpec) -> Option<Value>;
}

/// Outcome of the extended cascade. `HookRecovered` carries the exhausted
/// cascade report so callers can still see what the fixed stages tried.
pub enum CascadeOutcome {
    Parsed {
        value: Value,
        report: CascadeReport,
    },
    HookRecovered {
        value: Value,
        report: CascadeReport,
        hook: String,
    },
    Exhausted {
        report: CascadeReport,
    },
}

pub fn parse_structured_with_hook(
    text: &str,
    schema: &SchemaSpec,
    hook: Option<&dyn RecoveryHook>,
) -> CascadeOutcome {
    match parse_structured(text, schema) {
        Ok((value, report)) => CascadeOutcome::Parsed { value, report },
        Err(exhausted) => {
            if let Some(hook) = hook {
                if let Some(value) = hook.recover(text, schema) {
                    if validate_against_schema(&value, schema).is_valid() {
                        return CascadeOutcome::HookRecovered {
                            value,
                            report: exhausted.report,
                            hook: hook.name().to_string(),
                        };
                    }
                }
            }
            CascadeOutcome::Exhausted {
                report: exhausted.report,
            }
        }
    }
}

fn attempt(stage: Stage, outcome: AttemptOutcome, detail: &str) -> Attempt {
    Attempt {
        stage,
        outcome,
        detail: detail.to_string(),
    }
}

fn describe(check: &SchemaCheck) -> String {
    check
        .violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Candidate blocks in priority order: fenced code blocks first, then
/// maximal balanced `{...}` spans found by a bracket scan that respects
/// string literals. Exact duplicates are dropped; at most
/// [`CANDIDATE_CAP`] candidates are returned.
pub fn extract_candidate_blocks(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();

    // Fenced blocks. The opening fence may carry an info string.
    let mut in_fence = false;
    let mut buf = String::new();
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            if in_fence {
                let block = buf.trim().to_string();
                if !block.is_empty() && !out.contains(&block) {
                    out.push(block);
                }
                buf.clear();
            }
            in_fence = !in_fence;
            continue;
        }
        if in_fence {
            buf.push_str(line);
            buf.push('\n');
        }
    }

    for span in balanced_brace_spans(text) {
        if out.len() >= CANDIDATE_CAP {
            break;
        }
        let span = span.trim().to_string();
        if !out.contains(&span) {
            out.push(span);
        }
    }

    out.truncate(CANDIDATE_CAP);
    out
}

/// Maximal balanced `{...}` spans: a span opens when depth goes 0 -> 1 and
/// closes when it returns to 0. Quote-delimited literals inside a span do
/// not affect depth. Unclosed spans are discarded.
fn balanced_brace_spans(text: &str) -> Vec<&str> {
    let mut spans = Vec::new();
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut start = 0usize;
    let mut in_string: Option<u8> = None;
    let mut escaped = false;

    for (i, &b) in bytes.iter().enumerate() {
        if let Some(quote) = in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == quote {
                in_string = None;
            }
            continue;
        }
        match b {
            b'"' | b'\'' if depth > 0 => in_string = Some(b),
            b'{' => {
                if depth == 0 {
                    start = i;
                }
                depth += 1;
            }
            b'}' => {
                if depth > 0 {
                    depth -= 1;
                    if depth == 0 {
                        spans.push(&text[start..=i]);
                    }
                }
            }
            _ => {}
        }
    }
    spans
}

/// A successful repair: the rewritten text (guaranteed to parse as JSON)
/// and the rules that were applied, in catalog order.
#[derive(Debug, Clone, PartialEq)]
pub struct JsonRepair {
    pub text: String,
    pub applied: Vec<RepairKind>,
}

/// Apply the bounded repair rules to quasi-JSON text. Returns the rewritten
/// text iff the result parses as JSON; `None` means unrepairable. The rules
/// are purely syntactic — no field or value is ever invented.
pub fn repair_json(text: &str) -> Option<JsonRepair> {
    let mut rewriter = Rewriter::new(text.trim());
    rewriter.run();
    let out = rewriter.finish();
    if serde_json::from_str::<Value>(&out.text).is_ok() {
        Some(out)
    } else {
        None
    }
}

enum Ctx {
    Object { expect_key: bool },
    Array,
}

struct Rewriter<'a> {
    src: &'a [u8],
    pos: usize,
    out: String,
    stack: Vec<Ctx>,
    applied: std::collections::BTreeSet<RepairKind>,
}

impl<'a> Rewriter<'a> {
    fn new(src: &'a str) -> Self {
        Rewriter {
            src: src.as_bytes(),
            pos: 0,
            out: String::with_capacity(src.len() + 8),
            stack: Vec::new(),
            applied: std::collections::BTreeSet::new(),
        }
    }

    fn run(&mut self) {
        while self.pos < self.src.len() {
            let b = self.src[self.pos];
            match b {
                b'"' => self.copy_string(b'"'),
                b'\'' => {
                    self.applied.insert(RepairKind::SingleQuotes);
                    self.copy_string(b'\'');
                }
                b'{' => {
                    self.stack.push(Ctx::Object { expect_key: true });
                    self.push_byte(b);
                }
                b'[' => {
                    self.stack.push(Ctx::Array);
                    self.push_byte(b);
                }
                b'}' | b']' => {
                    self.stack.pop();
                    self.push_byte(b);
                }
                b',' => {
                    if self.next_significant_is_closer() {
                        self.applied.insert(RepairKind::TrailingComma);
                        self.pos += 1;
                    } else {
                        if let Some(Ctx::Object { expect_key }) = self.stack.last_mut() {
                            *expect_key = true;
                        }
                        self.push_byte(b);
                    }
                }
                b':' => {
                    if let Some(Ctx::Object { expect_key }) = self.stack.last_mut() {
                        *expect_key = false;
                    }
                    self.push_byte(b);
                }
                c if c.is_ascii_alphabetic() || c == b'_' => self.copy_identifier(),
                _ => self.push_byte(b),
            }
        }

        // End-of-text balancing: drop a dangling comma, then close whatever
        // is still open.
        let trimmed_len = self.out.trim_end().len();
        self.out.truncate(trimmed_len);
        if self.out.ends_with(',') {
            self.applied.insert(RepairKind::TrailingComma);
            self.out.pop();
        }
        while let Some(ctx) = self.stack.pop() {
            self.applied.insert(RepairKind::UnbalancedBrackets);
            self.out.push(match ctx {
                Ctx::Object { .. } => '}',
                Ctx::Array => ']',
            });
        }
    }

    fn finish(self) -> JsonRepair {
        JsonRepair {
            text: self.out,
            applied: self.applied.into_iter().collect(),
        }
    }

    fn push_byte(&mut self, b: u8) {
        self.out.push(b as char);
        self.pos += 1;
    }

    /// Copy a quoted string, always emitting double quotes. Handles escape
    /// sequences; an unterminated string is closed at end of text.
    fn copy_string(&mut self, quote: u8) {
        self.out.push('"');
        self.pos += 1;
        loop {
            if self.pos >= self.src.len() {
                self.applied.insert(RepairKind::UnterminatedString);
                self.out.push('"');
                return;
            }
            let b = self.src[self.pos];
            if b == b'\\' {
                if self.pos + 1 < self.src.len() {
                    let next = self.src[self.pos + 1];
                    if quote == b'\'' && next == b'\'' {
                        // \' has no meaning in JSON; unescape it.
                        self.out.push('\'');
                    } else {
                        self.out.push('\\');
                        self.out.push(next as char);
                    }
                    self.pos += 2;
                } else {
                    // Lone trailing backslash inside an unterminated string.
                    self.applied.insert(RepairKind::UnterminatedString);
                    self.pos += 1;
                    self.out.push('"');
                    return;
                }
            } else if b == quote {
                self.out.push('"');
                self.pos += 1;
                return;
            } else if b == b'"' {
                // A double quote inside a single-quoted string must be escaped.
                self.out.push('\\');
                self.out.push('"');
                self.pos += 1;
            } else if b == b'\n' || b == b'\r' {
                // JSON strings cannot contain raw line breaks; treat the
                // string as unterminated rather than swallow the rest.
                self.applied.insert(RepairKind::UnterminatedString);
                self.out.push('"');
                return;
            } else {
                self.copy_utf8_char();
            }
        }
    }

    fn copy_utf8_char(&mut self) {
        let b = self.src[self.pos];
        let len = match b {
            0x00..=0x7f => 1,
            0xc0..=0xdf => 2,
            0xe0..=0xef => 3,
            _ => 4,
        };
        let end = (self.pos + len).min(self.src.len());
        self.out
            .push_str(std::str::from_utf8(&self.src[self.pos..end]).unwrap_or(""));
        self.pos = end;
    }

    fn copy_identifier(&mut self) {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let word = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        let in_key_position = matches!(self.stack.last(), Some(Ctx::Object { expect_key: true }));
        if in_key_position {
            self.applied.insert(RepairKind::BareKeys);
            self.out.push('"');
            self.out.push_str(word);
            self.out.push('"');
        } else {
            match word {
                "True" => {
                    self.applied.insert(RepairKind::PythonLiterals);
                    self.out.push_str("true");
                }
                "False" => {
                    self.applied.insert(RepairKind::PythonLiterals);
                    self.out.push_str("false");
                }
                "None" => {
                    self.applied.insert(RepairKind::PythonLiterals);
                    self.out.push_str("null");
                }
                _ => self.out.push_str(word),
            }
        }
    }

    fn next_significant_is_closer(&self) -> bool {
        let mut i = self.pos + 1;
        while i < self.src.len() && self.src[i].is_ascii_whitespace() {
            i += 1;
        }
        i < self.src.len() && (self.src[i] == b'}' || self.src[i] == b']')
    }
}
