//! Diagnostic events: operational incidents that are worth reporting but
//! are not findings (judge transport failures, unparseable verdicts,
//! dropped evidence ids, skipped trace lines).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    JudgeUnavailable,
    UnparseableVerdict,
    MissingArtifact,
    SeverityClamped,
    UnknownEvidenceDropped,
    InvalidAgentDropped,
    SkippedTraceLine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticEvent {
    pub kind: DiagnosticKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
    pub detail: String,
}

impl DiagnosticEvent {
    pub fn new(kind: DiagnosticKind, detail: impl Into<String>) -> Self {
        DiagnosticEvent {
            kind,
            call_id: None,
            tool: None,
            detail: detail.into(),
        }
    }

    pub fn with_call(mut self, call_id: impl Into<String>) -> Self {
        self.call_id = Some(call_id.into());
        self
    }

    pub fn with_tool(mut self, tool: impl Into<String>) -> Self {
        self.tool = Some(tool.into());
        self
    }
}
