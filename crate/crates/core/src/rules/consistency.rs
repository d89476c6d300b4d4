//! Cross-stage information consistency: values stated in the user input
//! must survive into the output unaltered. Attribute extraction is regex
//! based; value comparison uses fuzzy string matching.

use super::{Detection, FindingDetail, IssueKind, MismatchEntry, MismatchRelation, MismatchReport, RuleParams};
use crate::text::{normalize, similarity};
use regex::Regex;
use std::sync::LazyLock;

static QUOTED_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#""([A-Za-z_][A-Za-z0-9_]*)"[ \t]*:[ \t]*"([^"\n]{1,80})""#).expect("valid regex")
});
static COLON_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b([A-Za-z_][A-Za-z0-9_]*)[ \t]*:[ \t]*([^\n,}\]]{1,80})").expect("valid regex")
});
static EQUALS_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b([A-Za-z_][A-Za-z0-9_]*)[ \t]*=[ \t]*([^\n,})\]]{1,80})").expect("valid regex")
});

/// An attribute extracted from free text: `key: value`, `key = value`, or
/// `"key": "value"` with an identifier key and a value of at most 80 chars.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Attribute {
    pub key: String,
    pub value: String,
}

pub(crate) fn extract_attributes(text: &str) -> Vec<Attribute> {
    let mut claimed: Vec<(usize, usize)> = Vec::new();
    let mut out = Vec::new();

    for re in [&*QUOTED_RE, &*COLON_RE, &*EQUALS_RE] {
        for cap in re.captures_iter(text) {
            let whole = cap.get(0).expect("match");
            if claimed
                .iter()
                .any(|&(s, e)| whole.start() < e && s < whole.end())
            {
                continue;
            }
            let key = cap[1].to_string();
            let raw = cap[2].trim();
            // URLs produce junk "key: //host" extractions; a leading '='
            // means the separator was really a comparison operator.
            if raw.starts_with("//") || raw.starts_with('=') {
                continue;
            }
            let value = clean_value(raw);
            if value.is_empty() {
                continue;
            }
            claimed.push((whole.start(), whole.end()));
            out.push(Attribute { key, value });
        }
    }

    // Restore document order across the three patterns.
    let mut indexed: Vec<(usize, Attribute)> = claimed
        .iter()
        .map(|&(s, _)| s)
        .zip(out)
        .collect();
    indexed.sort_by_key(|&(s, _)| s);
    indexed.into_iter().map(|(_, a)| a).collect()
}

fn clean_value(raw: &str) -> String {
    let mut v = raw.trim();
    for quote in ['"', '\''] {
        if v.len() >= 2 && v.starts_with(quote) && v.ends_with(quote) {
            v = &v[1..v.len() - 1];
        }
    }
    v.trim_end_matches(['.', ';', '!', '?']).trim().to_string()
}

/// A value still counts as present when the output's extracted value is the
/// expected value followed by trailing prose at a word boundary
/// ("12345 is confirmed" carries "12345" intact).
fn value_consistent(expected_norm: &str, observed_norm: &str) -> bool {
    if expected_norm == observed_norm {
        return true;
    }
    if let Some(rest) = observed_norm.strip_prefix(expected_norm) {
        return rest.chars().next().is_some_and(|c| !c.is_alphanumeric());
    }
    false
}

/// Compare attributes stated in the user input against the output.
///
/// For each input attribute the output is searched for the same key and the
/// values are compared by normalized edit-distance similarity: identical
/// values are consistent; a shorter prefix above the fuzzy threshold is a
/// truncation; anything else that differs is a modification; an absent key
/// is missing. Output attributes whose key is a near-variant (similarity at
/// or above the threshold, but not equal) of a provided key are flagged as
/// hallucinated. With no extractable input attributes the check is vacuous.
pub fn check_information_consistency(
    _system_prompt: &str,
    user_input: &str,
    output: &str,
    params: &RuleParams,
) -> Option<Detection> {
    let tau = params.consistency_tau;

    let mut input_attrs: Vec<Attribute> = Vec::new();
    for attr in extract_attributes(user_input) {
        if !input_attrs
            .iter()
            .any(|a| normalize(&a.key) == normalize(&attr.key))
        {
            input_attrs.push(attr);
        }
    }
    if input_attrs.is_empty() {
        return None;
    }

    let output_attrs = extract_attributes(output);
    let output_norm = normalize(output);
    let mut entries = Vec::new();

    for attr in &input_attrs {
        let key_norm = normalize(&attr.key);
        let matches: Vec<&Attribute> = output_attrs
            .iter()
            .filter(|o| normalize(&o.key) == key_norm)
            .collect();

        if matches.is_empty() {
            if !output_norm.contains(&key_norm) {
                entries.push(MismatchEntry {
                    attribute: attr.key.clone(),
                    expected: attr.value.clone(),
                    observed: String::new(),
                    relation: MismatchRelation::Missing,
                });
            }
            // Key mentioned without an extractable value: nothing to compare.
            continue;
        }

        let expected_norm = normalize(&attr.value);
        if matches
            .iter()
            .any(|o| value_consistent(&expected_norm, &normalize(&o.value)))
        {
            continue;
        }

        let best = matches
            .iter()
            .max_by(|a, b| {
                let sa = similarity(&expected_norm, &normalize(&a.value));
                let sb = similarity(&expected_norm, &normalize(&b.value));
                sa.partial_cmp(&sb).unwrap_or(std::cmp::Ordering::Equal)
            })
            .expect("non-empty");
        let observed_norm = normalize(&best.value);
        let s = similarity(&expected_norm, &observed_norm);

        let relation = if expected_norm.starts_with(&observed_norm)
            && observed_norm.chars().count() < expected_norm.chars().count()
            && s >= tau
        {
            MismatchRelation::Truncated
        } else {
            MismatchRelation::Modified
        };
        entries.push(MismatchEntry {
            attribute: attr.key.clone(),
            expected: attr.value.clone(),
            observed: best.value.clone(),
            relation,
        });
    }

    // Near-variants of provided keys appearing only in the output.
    let mut seen: Vec<(String, String)> = Vec::new();
    for out_attr in &output_attrs {
        let out_key_norm = normalize(&out_attr.key);
        if input_attrs
            .iter()
            .any(|a| normalize(&a.key) == out_key_norm)
        {
            continue;
        }
        let close = input_attrs
            .iter()
            .any(|a| similarity(&normalize(&a.key), &out_key_norm) >= tau);
        let dedup_key = (out_key_norm.clone(), normalize(&out_attr.value));
        if close && !seen.contains(&dedup_key) {
            seen.push(dedup_key);
            entries.push(MismatchEntry {
                attribute: out_attr.key.clone(),
                expected: String::new(),
                observed: out_attr.value.clone(),
                relation: MismatchRelation::Hallucinated,
            });
        }
    }

    if entries.is_empty() {
        return None;
    }
    let summary: Vec<String> = entries
        .iter()
        .take(5)
        .map(|e| format!("{} ({:?})", e.attribute, e.relation).to_lowercase())
        .collect();
    Some(Detection {
        issue: IssueKind::InformationInconsistency,
        reasoning: format!(
            "{} attribute(s) inconsistent between input and output: {}",
            entries.len(),
            summary.join(", ")
        ),
        detail: Some(FindingDetail::Mismatch(MismatchReport { entries })),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> RuleParams {
        RuleParams::default()
    }

    fn check(input: &str, output: &str) -> Option<Detection> {
        check_information_consistency("", input, output, &params())
    }

    fn entries(d: &Detection) -> &[MismatchEntry] {
        match d.detail {
            Some(FindingDetail::Mismatch(ref r)) => &r.entries,
            ref other => panic!("unexpected detail {other:?}"),
        }
    }

    #[test]
    fn extraction_covers_all_three_patterns() {
        let attrs = extract_attributes(
            "order_id: 12345\nlimit = 10\n{\"city\": \"Haifa\"}\nsee https://example.com for more",
        );
        let pairs: Vec<(&str, &str)> = attrs.iter().map(|a| (a.key.as_str(), a.value.as_str())).collect();
        assert!(pairs.contains(&("order_id", "12345")));
        assert!(pairs.contains(&("limit", "10")));
        assert!(pairs.contains(&("city", "Haifa")));
        assert!(!pairs.iter().any(|(k, _)| *k == "https"));
    }

    #[test]
    fn value_length_is_bounded() {
        let long = format!("note: {}", "x".repeat(200));
        let attrs = extract_attributes(&long);
        assert!(attrs.iter().all(|a| a.value.chars().count() <= 80));
    }

    #[test]
    fn exact_echo_is_consistent() {
        assert!(check("order_id: 12345", "The order order_id: 12345 is confirmed").is_none());
    }

    #[test]
    fn mutated_value_is_modified() {
        let d = check("order_id: 12345", "order_id: 12354").expect("should flag");
        let e = entries(&d);
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].relation, MismatchRelation::Modified);
        assert_eq!(e[0].expected, "12345");
        assert_eq!(e[0].observed, "12354");
    }

    #[test]
    fn no_input_attributes_is_vacuous() {
        assert!(check("just some words without structure", "anything: at all").is_none());
    }

    #[test]
    fn absent_key_is_missing() {
        let d = check("tracking_code: ABC123", "We shipped your package.").expect("should flag");
        let e = entries(&d);
        assert_eq!(e[0].relation, MismatchRelation::Missing);
        assert!(e[0].observed.is_empty());
    }

    #[test]
    fn near_prefix_is_truncated() {
        // Observed is a strict prefix with similarity above the threshold.
        let d = check(
            "serial_number: 1234567890123456789",
            "serial_number: 12345678901234567",
        )
        .expect("should flag");
        assert_eq!(entries(&d)[0].relation, MismatchRelation::Truncated);
    }

    #[test]
    fn near_variant_key_is_hallucinated() {
        let d = check("order_id: 12345", "order_id: 12345\norder_idx: 99999").expect("should flag");
        let e = entries(&d);
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].relation, MismatchRelation::Hallucinated);
        assert_eq!(e[0].attribute, "order_idx");
        assert!(e[0].expected.is_empty());
    }

    #[test]
    fn unrelated_output_attributes_are_ignored() {
        assert!(check("order_id: 12345", "order_id: 12345\nstatus: done").is_none());
    }

    #[test]
    fn case_and_whitespace_differences_are_consistent() {
        assert!(check("city: New   York", "city: new york").is_none());
    }
}
