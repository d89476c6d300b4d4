//! Deterministic rule-based detectors and the shared finding model.
//!
//! Four detectors run without any model in the loop: unusual tokens and
//! token repetition over outputs, Python syntax checking gated by a code
//! segment detector, and cross-stage information consistency over
//! (system prompt, user input, output). All of them are pure functions of
//! their text inputs.

mod consistency;
mod python;
mod tokens;

pub use consistency::check_information_consistency;
pub use python::{check_python_syntax, detect_python_segment, GateViolation, PythonSegment};
pub use tokens::{detect_token_repetition, detect_unusual_tokens};

use crate::trace::{AgentId, LLMCall};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Every issue category a detector can raise. Each maps to exactly one
/// criticality level (see [`crate::report::severity_of`]) and to exactly
/// one reporting tool name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    InputSchemaNonCompliance,
    InputInstructionsNonCompliance,
    InputFormatViolation,
    PromptInternalContradiction,
    PromptExampleMisalignment,
    MissingEdgeCaseInstructions,
    FewShotCoverageGap,
    OutputSchemaNonCompliance,
    OutputInstructionsNonCompliance,
    OutputFormatViolation,
    UnusualToken,
    ExcessiveRepetition,
    PythonSyntaxError,
    InformationInconsistency,
    ReasoningActionMismatch,
}

impl IssueKind {
    pub const ALL: [IssueKind; 15] = [
        IssueKind::InputSchemaNonCompliance,
        IssueKind::InputInstructionsNonCompliance,
        IssueKind::InputFormatViolation,
        IssueKind::PromptInternalContradiction,
        IssueKind::PromptExampleMisalignment,
        IssueKind::MissingEdgeCaseInstructions,
        IssueKind::FewShotCoverageGap,
        IssueKind::OutputSchemaNonCompliance,
        IssueKind::OutputInstructionsNonCompliance,
        IssueKind::OutputFormatViolation,
        IssueKind::UnusualToken,
        IssueKind::ExcessiveRepetition,
        IssueKind::PythonSyntaxError,
        IssueKind::InformationInconsistency,
        IssueKind::ReasoningActionMismatch,
    ];

    /// Reporting tool this issue belongs to. The nine tool names are the
    /// grouping used for meta-analysis and frequency tables.
    pub fn tool_name(self) -> &'static str {
        match self {
            IssueKind::InputSchemaNonCompliance
            | IssueKind::InputInstructionsNonCompliance
            | IssueKind::InputFormatViolation => "LLMInputValidator",
            IssueKind::OutputSchemaNonCompliance
            | IssueKind::OutputInstructionsNonCompliance
            | IssueKind::OutputFormatViolation => "LLMOutputValidator",
            IssueKind::InformationInconsistency => "InformationConsistencyChecker",
            IssueKind::MissingEdgeCaseInstructions => "EdgeCaseInstructionChecker",
            IssueKind::FewShotCoverageGap => "FewShotCoverageChecker",
            IssueKind::PromptInternalContradiction | IssueKind::PromptExampleMisalignment => {
                "PromptConsistencyChecker"
            }
            IssueKind::ReasoningActionMismatch => "ReasoningActionMismatchDetector",
            IssueKind::UnusualToken | IssueKind::ExcessiveRepetition => "TokenAnomalyDetector",
            IssueKind::PythonSyntaxError => "PythonCodeSyntaxChecker",
        }
    }
}

impl IssueKind {
    /// The serde snake_case name, shared by Display and the wire encoding.
    pub fn name(self) -> &'static str {
        match self {
            IssueKind::InputSchemaNonCompliance => "input_schema_non_compliance",
            IssueKind::InputInstructionsNonCompliance => "input_instructions_non_compliance",
            IssueKind::InputFormatViolation => "input_format_violation",
            IssueKind::PromptInternalContradiction => "prompt_internal_contradiction",
            IssueKind::PromptExampleMisalignment => "prompt_example_misalignment",
            IssueKind::MissingEdgeCaseInstructions => "missing_edge_case_instructions",
            IssueKind::FewShotCoverageGap => "few_shot_coverage_gap",
            IssueKind::OutputSchemaNonCompliance => "output_schema_non_compliance",
            IssueKind::OutputInstructionsNonCompliance => "output_instructions_non_compliance",
            IssueKind::OutputFormatViolation => "output_format_violation",
            IssueKind::UnusualToken => "unusual_token",
            IssueKind::ExcessiveRepetition => "excessive_repetition",
            IssueKind::PythonSyntaxError => "python_syntax_error",
            IssueKind::InformationInconsistency => "information_inconsistency",
            IssueKind::ReasoningActionMismatch => "reasoning_action_mismatch",
        }
    }
}

impl fmt::Display for IssueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How an observed value relates to the value the input provided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MismatchRelation {
    Truncated,
    Modified,
    Hallucinated,
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchEntry {
    pub attribute: String,
    pub expected: String,
    pub observed: String,
    pub relation: MismatchRelation,
}

/// Attribute-level description of input/output mismatches. Non-empty when
/// attached to a finding; `observed` is empty for missing values and
/// `expected` is empty for hallucinated ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub entries: Vec<MismatchEntry>,
}

/// Structured payload attached to a violated finding, varying by detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "detail", rename_all = "snake_case")]
pub enum FindingDetail {
    Mismatch(MismatchReport),
    Repetition { unit: String, run: usize },
    SyntaxError { line: usize, message: String },
    UnusualTokens { codepoints: Vec<String>, count: usize },
}

/// One detector verdict on one call.
///
/// `severity_score` is present only for reasoning-action mismatch;
/// recommendations are non-empty only for judge-produced findings; `detail`
/// is absent when `violated` is false.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub call_id: String,
    pub agent: AgentId,
    pub model_id: String,
    pub tool: String,
    pub issue: IssueKind,
    pub violated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub recommendations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<FindingDetail>,
}

/// Detector-local violation, before it is stamped with call identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub issue: IssueKind,
    pub reasoning: String,
    pub detail: Option<FindingDetail>,
}

impl Detection {
    pub fn into_finding(self, call: &LLMCall) -> Finding {
        Finding {
            call_id: call.call_id.clone(),
            agent: call.agent.clone(),
            model_id: call.model_id.clone(),
            tool: self.issue.tool_name().to_string(),
            issue: self.issue,
            violated: true,
            severity_score: None,
            reasoning: Some(self.reasoning),
            recommendations: vec![],
            detail: self.detail,
        }
    }
}

/// Thresholds for the token repetition detector: a unit of length `L`
/// repeated consecutively at least `threshold(L)` times is excessive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionThresholds {
    pub r1: usize,
    pub r2_4: usize,
    pub r5_16: usize,
}

impl Default for RepetitionThresholds {
    fn default() -> Self {
        RepetitionThresholds {
            r1: 30,
            r2_4: 10,
            r5_16: 5,
        }
    }
}

impl RepetitionThresholds {
    pub fn threshold(&self, unit_len: usize) -> usize {
        match unit_len {
            0 => usize::MAX,
            1 => self.r1,
            2..=4 => self.r2_4,
            _ => self.r5_16,
        }
    }
}

/// Weighted scoring for the Python code segment gate. Conservative by
/// default: precision is favored over recall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentWeights {
    pub keyword_line: i64,
    pub indented_block: i64,
    pub assignment_call: i64,
    pub json_line: i64,
    pub prose_line: i64,
    pub threshold: i64,
    pub min_categories: usize,
}

impl Default for SegmentWeights {
    fn default() -> Self {
        SegmentWeights {
            keyword_line: 3,
            indented_block: 2,
            assignment_call: 1,
            json_line: -2,
            prose_line: -1,
            threshold: 5,
            min_categories: 2,
        }
    }
}

/// Tunable parameters for the whole rule suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleParams {
    pub repetition: RepetitionThresholds,
    pub segment: SegmentWeights,
    /// Normalized Levenshtein similarity threshold for fuzzy matching.
    pub consistency_tau: f64,
    /// Zero-width characters tolerated before they count as anomalous.
    pub zero_width_max: usize,
}

impl Default for RuleParams {
    fn default() -> Self {
        RuleParams {
            repetition: RepetitionThresholds::default(),
            segment: SegmentWeights::default(),
            consistency_tau: 0.85,
            zero_width_max: 2,
        }
    }
}

/// Run every rule detector over one call and stamp the results.
///
/// Token detectors and the gated Python pair look at the output; the
/// consistency check spans (system prompt, user input, output). Only
/// violations are returned; a clean call yields an empty list.
pub fn run_rule_suite(call: &LLMCall, params: &RuleParams) -> Vec<Finding> {
    let mut findings = Vec::new();

    if let Some(d) = detect_unusual_tokens(&call.output, params) {
        findings.push(d.into_finding(call));
    }
    if let Some(d) = detect_token_repetition(&call.output, params) {
        findings.push(d.into_finding(call));
    }
    let segment = detect_python_segment(&call.output, params);
    if segment.is_python {
        if let Ok(Some(d)) = check_python_syntax(&call.output, params) {
            findings.push(d.into_finding(call));
        }
    }
    if let Some(d) =
        check_information_consistency(&call.system_prompt, &call.user_input, &call.output, params)
    {
        findings.push(d.into_finding(call));
    }

    findings
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::AgentId;

    fn call_with_output(output: &str) -> LLMCall {
        LLMCall {
            call_id: "c1".into(),
            task_id: "t1".into(),
            seq: 0,
            agent: AgentId::new("CodeAgent").unwrap(),
            model_id: "gpt-4o".into(),
            system_prompt: "You write Python.".into(),
            user_input: "Compute the sum.".into(),
            output: output.into(),
            timestamp: None,
        }
    }

    #[test]
    fn issue_kinds_cover_exactly_fifteen() {
        assert_eq!(IssueKind::ALL.len(), 15);
        let tools: std::collections::BTreeSet<&str> =
            IssueKind::ALL.iter().map(|k| k.tool_name()).collect();
        assert_eq!(tools.len(), 9);
    }

    #[test]
    fn clean_output_yields_no_findings() {
        let call = call_with_output("The cart total is 42.50 dollars.");
        assert!(run_rule_suite(&call, &RuleParams::default()).is_empty());
    }

    #[test]
    fn broken_python_in_segment_yields_one_syntax_finding() {
        let call = call_with_output("import math\ndef f(:\n    return math.pi\n");
        let findings = run_rule_suite(&call, &RuleParams::default());
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].issue, IssueKind::PythonSyntaxError);
        assert_eq!(findings[0].tool, "PythonCodeSyntaxChecker");
        assert_eq!(findings[0].call_id, "c1");
    }

    #[test]
    fn replacement_char_plus_run_yields_two_findings() {
        let output = format!("res\u{FFFD}ult {}", "}".repeat(50));
        let call = call_with_output(&output);
        let findings = run_rule_suite(&call, &RuleParams::default());
        let issues: Vec<IssueKind> = findings.iter().map(|f| f.issue).collect();
        assert_eq!(
            issues,
            vec![IssueKind::UnusualToken, IssueKind::ExcessiveRepetition]
        );
    }

    #[test]
    fn rule_findings_carry_no_recommendations() {
        let call = call_with_output(&"a".repeat(64));
        let findings = run_rule_suite(&call, &RuleParams::default());
        assert!(findings.iter().all(|f| f.recommendations.is_empty()));
        assert!(findings.iter().all(|f| f.severity_score.is_none()));
    }
}
