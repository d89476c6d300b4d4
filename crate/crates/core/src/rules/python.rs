//! Python code segment gating and syntax validation.
//!
//! The segment detector decides whether an output contains Python at all,
//! using weighted line patterns with conservative thresholds and context
//! filters that exclude JSON and prose regions. The syntax checker runs
//! only on gated outputs: it parses each detected span against the Python 3
//! grammar and additionally applies structural rules (bracket balance,
//! unterminated strings) regardless of what the parser reports.

use super::{Detection, FindingDetail, IssueKind, RuleParams};
use regex::Regex;
use std::sync::LazyLock;
use thiserror::Error;

static KEYWORD_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?x)^\s*(
            def\s+\w+\s*\(
          | class\s+\w+\s*[:(]
          | import\s+\w
          | from\s+\w[\w.]*\s+import\s
          | return(\s|$|\()
          | @\w+
        )",
    )
    .expect("valid regex")
});

static ASSIGN_CALL_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*[A-Za-z_]\w*(\.\w+)*(\[[^\]]*\])?\s*=\s*.*[A-Za-z_]\w*\(").expect("valid regex")
});

// Membership-only patterns: they keep a span contiguous but score nothing.
static CONTROL_COLON_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*(for|while|if|elif|else|try|except|finally|with)\b.*:\s*$")
        .expect("valid regex")
});
static PLAIN_ASSIGN_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*[A-Za-z_][\w.\[\]]*\s*=\s*\S").expect("valid regex"));
static BARE_CALL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*\w+(\.\w+)*\(.*\)\s*$").expect("valid regex"));

const CODE_TOKENS: [char; 9] = ['(', ')', '[', ']', '{', '}', '=', ':', ';'];

/// Segment gate verdict: whether downstream Python analysis should run,
/// where the code lives, and the raw evidence score.
#[derive(Debug, Clone, PartialEq)]
pub struct PythonSegment {
    pub is_python: bool,
    /// Byte ranges `[start, end)` of detected code spans.
    pub spans: Vec<(usize, usize)>,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Category {
    Keyword,
    IndentedBlock,
    AssignmentCall,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum LineClass {
    Json,
    Prose,
    Blank,
    Code,
    Neutral,
}

/// Decide whether `text` contains Python code.
///
/// Positive iff the weighted score reaches the threshold and at least two
/// distinct pattern categories matched, after excluding JSON and prose
/// regions.
pub fn detect_python_segment(text: &str, params: &RuleParams) -> PythonSegment {
    let w = &params.segment;
    let lines = line_ranges(text);
    let json_spans = json_regions(text);

    let mut score: i64 = 0;
    let mut categories = std::collections::BTreeSet::new();
    let mut classes = Vec::with_capacity(lines.len());

    for &(start, end) in &lines {
        let content = text[start..end].trim_end_matches(['\n', '\r']);
        let class = if content.trim().is_empty() {
            LineClass::Blank
        } else if json_spans
            .iter()
            .any(|&(js, je)| start < je && js < end)
        {
            score += w.json_line;
            LineClass::Json
        } else if KEYWORD_RE.is_match(content) {
            score += w.keyword_line;
            categories.insert(Category::Keyword);
            LineClass::Code
        } else if ASSIGN_CALL_RE.is_match(content) {
            score += w.assignment_call;
            categories.insert(Category::AssignmentCall);
            LineClass::Code
        } else if is_prose(content) {
            score += w.prose_line;
            LineClass::Prose
        } else if CONTROL_COLON_RE.is_match(content)
            || PLAIN_ASSIGN_RE.is_match(content)
            || BARE_CALL_RE.is_match(content)
        {
            LineClass::Code
        } else {
            LineClass::Neutral
        };
        classes.push(class);
    }

    // Indented blocks: a code line ending in ':' followed by a more deeply
    // indented line scores once per block, and the indented lines join the
    // enclosing span.
    let mut i = 0;
    while i < lines.len() {
        let (start, end) = lines[i];
        let content = text[start..end].trim_end_matches(['\n', '\r']);
        let opens_block = classes[i] != LineClass::Json
            && classes[i] != LineClass::Prose
            && content.trim_end().ends_with(':')
            && !content.trim().is_empty();
        if opens_block {
            let header_indent = indent_width(content);
            let mut j = i + 1;
            let mut block_lines = 0;
            while j < lines.len() {
                let (s, e) = lines[j];
                let c = text[s..e].trim_end_matches(['\n', '\r']);
                if c.trim().is_empty() {
                    j += 1;
                    continue;
                }
                if indent_width(c) > header_indent && classes[j] != LineClass::Json {
                    if classes[j] == LineClass::Neutral || classes[j] == LineClass::Prose {
                        classes[j] = LineClass::Code;
                    }
                    block_lines += 1;
                    j += 1;
                } else {
                    break;
                }
            }
            if block_lines > 0 {
                score += w.indented_block;
                categories.insert(Category::IndentedBlock);
                if classes[i] == LineClass::Neutral {
                    classes[i] = LineClass::Code;
                }
            }
        }
        i += 1;
    }

    // Spans: maximal runs of code lines, blanks allowed inside.
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    let mut last_code_end = 0usize;
    for (idx, &(start, end)) in lines.iter().enumerate() {
        match classes[idx] {
            LineClass::Code => {
                if open.is_none() {
                    open = Some(start);
                }
                last_code_end = end;
            }
            LineClass::Blank => {}
            _ => {
                if let Some(s) = open.take() {
                    spans.push((s, last_code_end));
                }
            }
        }
    }
    if let Some(s) = open {
        spans.push((s, last_code_end));
    }

    let is_python =
        score >= w.threshold && categories.len() >= w.min_categories && !spans.is_empty();
    PythonSegment {
        is_python,
        spans,
        score: score.max(0) as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("python syntax check invoked on text the segment detector rejected")]
pub struct GateViolation;

/// Validate the Python spans of a gated output.
///
/// Returns `Err(GateViolation)` if the segment detector is negative for
/// this text — calling the checker then is a programming error, not a
/// finding. Otherwise returns a finding with the first error location iff
/// any span fails the Python 3 grammar or a structural rule.
pub fn check_python_syntax(
    text: &str,
    params: &RuleParams,
) -> Result<Option<Detection>, GateViolation> {
    let segment = detect_python_segment(text, params);
    if !segment.is_python {
        return Err(GateViolation);
    }

    for &(start, end) in &segment.spans {
        let snippet = dedent(&text[start..end]);
        let span_first_line = text[..start].matches('\n').count() + 1;

        let parse_error = match rustpython_parser::parse(
            &snippet,
            rustpython_parser::Mode::Module,
            "<output>",
        ) {
            Ok(_) => None,
            Err(e) => {
                let line_in_snippet = snippet[..e.offset.to_usize().min(snippet.len())]
                    .matches('\n')
                    .count();
                Some((span_first_line + line_in_snippet, e.error.to_string()))
            }
        };
        let structural = structural_issue(&snippet)
            .map(|(line, msg)| (span_first_line + line - 1, msg));

        if let Some((line, message)) = parse_error.or(structural) {
            return Ok(Some(Detection {
                issue: IssueKind::PythonSyntaxError,
                reasoning: format!("python syntax error at line {line}: {message}"),
                detail: Some(FindingDetail::SyntaxError { line, message }),
            }));
        }
    }
    Ok(None)
}

/// Structural scan independent of the grammar parser: bracket balance and
/// string termination, with comments and triple-quoted strings understood.
/// Returns the 1-based line within the snippet and a description.
fn structural_issue(snippet: &str) -> Option<(usize, String)> {
    let chars: Vec<char> = snippet.chars().collect();
    let mut stack: Vec<(char, usize)> = Vec::new();
    let mut line = 1usize;
    let mut i = 0usize;

    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            line += 1;
            i += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '"' || c == '\'' {
            let quote = c;
            let triple = chars.get(i + 1) == Some(&quote) && chars.get(i + 2) == Some(&quote);
            let start_line = line;
            i += if triple { 3 } else { 1 };
            loop {
                if i >= chars.len() {
                    return Some((start_line, format!("unterminated string ({quote})")));
                }
                let s = chars[i];
                if s == '\\' {
                    i += 2;
                    continue;
                }
                if s == '\n' {
                    if !triple {
                        return Some((start_line, format!("unterminated string ({quote})")));
                    }
                    line += 1;
                    i += 1;
                    continue;
                }
                if s == quote {
                    if triple {
                        if chars.get(i + 1) == Some(&quote) && chars.get(i + 2) == Some(&quote) {
                            i += 3;
                            break;
                        }
                        i += 1;
                    } else {
                        i += 1;
                        break;
                    }
                } else {
                    i += 1;
                }
            }
            continue;
        }
        match c {
            '(' | '[' | '{' => stack.push((c, line)),
            ')' | ']' | '}' => {
                let expected = match c {
                    ')' => '(',
                    ']' => '[',
                    _ => '{',
                };
                match stack.pop() {
                    Some((open, _)) if open == expected => {}
                    _ => return Some((line, format!("unbalanced {c:?}"))),
                }
            }
            _ => {}
        }
        i += 1;
    }

    stack
        .first()
        .map(|&(open, l)| (l, format!("unbalanced {open:?}")))
}

fn line_ranges(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        out.push((pos, pos + line.len()));
        pos += line.len();
    }
    out
}

/// Byte ranges of balanced `{...}`/`[...]` spans that parse as JSON.
fn json_regions(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut regions = Vec::new();
    let mut stack: Vec<u8> = Vec::new();
    let mut start = 0usize;
    let mut in_string = false;
    let mut escaped = false;

    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' if !stack.is_empty() => in_string = true,
            b'{' | b'[' => {
                if stack.is_empty() {
                    start = i;
                }
                stack.push(b);
            }
            b'}' | b']' => {
                let expected = if b == b'}' { b'{' } else { b'[' };
                if stack.last() == Some(&expected) {
                    stack.pop();
                    if stack.is_empty() {
                        let candidate = &text[start..=i];
                        if serde_json::from_str::<serde_json::Value>(candidate).is_ok() {
                            regions.push((start, i + 1));
                        }
                    }
                } else {
                    stack.clear();
                    in_string = false;
                }
            }
            _ => {}
        }
    }
    regions
}

fn is_prose(content: &str) -> bool {
    let trimmed = content.trim_end();
    trimmed.ends_with(['.', '!', '?']) && !trimmed.contains(CODE_TOKENS)
}

fn indent_width(content: &str) -> usize {
    content.chars().take_while(|c| *c == ' ' || *c == '\t').count()
}

fn dedent(snippet: &str) -> String {
    let common = snippet
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(indent_width)
        .min()
        .unwrap_or(0);
    if common == 0 {
        return snippet.to_string();
    }
    snippet
        .lines()
        .map(|l| if l.trim().is_empty() { "" } else { &l[common.min(l.len())..] })
        .collect::<Vec<_>>()
        .join("\n")
}
