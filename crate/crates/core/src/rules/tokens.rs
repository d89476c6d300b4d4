//! Token-level anomaly detectors: unusual characters and excessive
//! consecutive repetition.

use super::{Detection, FindingDetail, IssueKind, RuleParams};
use std::collections::BTreeMap;

const ZERO_WIDTH: [char; 4] = ['\u{200B}', '\u{200C}', '\u{200D}', '\u{FEFF}'];

/// True for codepoints in the anomaly set: control characters other than
/// tab/newline/carriage return, the replacement character, private-use
/// areas, and the wholly unassigned planes 4-13.
fn is_anomalous(c: char) -> bool {
    let cp = c as u32;
    (c.is_control() && !matches!(c, '\t' | '\n' | '\r'))
        || c == '\u{FFFD}'
        || (0xE000..=0xF8FF).contains(&cp)
        || (0x40000..0xE0000).contains(&cp)
        || cp >= 0xF0000
}

/// Flag non-standard characters and encoding casualties. Printable ASCII
/// plus tab/newline/carriage return never triggers this. Zero-width
/// characters are tolerated up to `params.zero_width_max` occurrences
/// (legitimate in emoji sequences), anomalous beyond that.
pub fn detect_unusual_tokens(text: &str, params: &RuleParams) -> Option<Detection> {
    let mut counts: BTreeMap<char, usize> = BTreeMap::new();
    let mut zero_width = 0usize;
    for c in text.chars() {
        if is_anomalous(c) {
            *counts.entry(c).or_insert(0) += 1;
        } else if ZERO_WIDTH.contains(&c) {
            zero_width += 1;
        }
    }
    if zero_width > params.zero_width_max {
        counts.insert('\u{200B}', zero_width);
    }
    if counts.is_empty() {
        return None;
    }

    let total: usize = counts.values().sum();
    let codepoints: Vec<String> = counts.keys().map(|c| format!("U+{:04X}", *c as u32)).collect();
    let shown = codepoints.iter().take(8).cloned().collect::<Vec<_>>().join(", ");
    Some(Detection {
        issue: IssueKind::UnusualToken,
        reasoning: format!("output contains {total} unusual character(s): {shown}"),
        detail: Some(FindingDetail::UnusualTokens {
            codepoints,
            count: total,
        }),
    })
}

/// Flag a unit of 1..=16 characters repeated consecutively at least
/// `threshold(len)` times. Reports the shortest violating unit and its
/// longest run. Monotone: appending text never un-flags a violation.
pub fn detect_token_repetition(text: &str, params: &RuleParams) -> Option<Detection> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();

    for unit_len in 1..=16usize.min(n) {
        let threshold = params.repetition.threshold(unit_len);
        if n < unit_len * threshold {
            // Even a text-wide run cannot reach the threshold.
            continue;
        }

        // ext[i] = how many consecutive positions j >= i satisfy
        // chars[j] == chars[j + unit_len]. A run of the unit starting at i
        // then spans ext[i]/unit_len + 1 full repeats.
        let m = n - unit_len;
        let mut ext = vec![0usize; m + 1];
        for i in (0..m).rev() {
            if chars[i] == chars[i + unit_len] {
                ext[i] = ext[i + 1] + 1;
            }
        }

        // Any unit present at all is a run of one.
        let mut best_run = 1usize;
        let mut best_pos = 0usize;
        for i in 0..m {
            let run = ext[i] / unit_len + 1;
            if run > best_run {
                best_run = run;
                best_pos = i;
            }
        }

        if best_run >= threshold {
            let unit: String = chars[best_pos..best_pos + unit_len].iter().collect();
            return Some(Detection {
                issue: IssueKind::ExcessiveRepetition,
                reasoning: format!(
                    "unit {:?} repeated {} times consecutively (threshold {})",
                    unit, best_run, threshold
                ),
                detail: Some(FindingDetail::Repetition {
                    unit,
                    run: best_run,
                }),
            });
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> RuleParams {
        RuleParams::default()
    }

    #[test]
    fn plain_ascii_is_never_unusual() {
        assert!(detect_unusual_tokens("hello world\n", &params()).is_none());
        let all_printable: String = (0x20u8..0x7f).map(|b| b as char).collect();
        assert!(detect_unusual_tokens(&all_printable, &params()).is_none());
        assert!(detect_unusual_tokens("tab\t cr\r nl\n", &params()).is_none());
    }

    #[test]
    fn replacement_char_is_flagged() {
        let d = detect_unusual_tokens("res\u{FFFD}ult", &params()).unwrap();
        assert_eq!(d.issue, IssueKind::UnusualToken);
        assert!(d.reasoning.contains("U+FFFD"));
    }

    #[test]
    fn every_c0_control_except_whitespace_is_flagged() {
        for cp in 0x00u32..0x20 {
            let c = char::from_u32(cp).unwrap();
            let text = format!("a{c}b");
            let flagged = detect_unusual_tokens(&text, &params()).is_some();
            let whitespace = matches!(c, '\t' | '\n' | '\r');
            assert_eq!(flagged, !whitespace, "codepoint U+{cp:04X}");
        }
        // DEL and C1 range.
        assert!(detect_unusual_tokens("x\u{7F}", &params()).is_some());
        assert!(detect_unusual_tokens("x\u{85}", &params()).is_some());
    }

    #[test]
    fn private_use_and_unassigned_planes() {
        assert!(detect_unusual_tokens("\u{E000}", &params()).is_some());
        assert!(detect_unusual_tokens("\u{F0000}", &params()).is_some());
        assert!(detect_unusual_tokens("\u{45000}", &params()).is_some());
        // Ordinary non-ASCII text is fine.
        assert!(detect_unusual_tokens("héllo wörld — ok", &params()).is_none());
    }

    #[test]
    fn zero_width_tolerated_up_to_limit() {
        assert!(detect_unusual_tokens("a\u{200D}b\u{200D}c", &params()).is_none());
        assert!(detect_unusual_tokens("a\u{200B}b\u{200B}c\u{200B}d", &params()).is_some());
    }

    #[test]
    fn short_runs_are_fine() {
        assert!(detect_token_repetition("abc abc", &params()).is_none());
        assert!(detect_token_repetition("", &params()).is_none());
        assert!(detect_token_repetition(&"a".repeat(29), &params()).is_none());
    }

    #[test]
    fn newline_escape_run_is_flagged() {
        let text = "\\n".repeat(40);
        let d = detect_token_repetition(&text, &params()).unwrap();
        match d.detail {
            Some(FindingDetail::Repetition { ref unit, run }) => {
                assert_eq!(unit, "\\n");
                assert_eq!(run, 40);
            }
            ref other => panic!("unexpected detail {other:?}"),
        }
    }

    #[test]
    fn single_char_run_is_flagged() {
        let d = detect_token_repetition(&"a".repeat(64), &params()).unwrap();
        match d.detail {
            Some(FindingDetail::Repetition { ref unit, run }) => {
                assert_eq!(unit, "a");
                assert_eq!(run, 64);
            }
            ref other => panic!("unexpected detail {other:?}"),
        }
    }

    #[test]
    fn run_must_be_consecutive() {
        let text = "ab ".repeat(20);
        // "ab" appears 20 times but separated by spaces; only "ab " itself
        // repeats consecutively, and 20 >= 5 for a 3-char unit.
        let d = detect_token_repetition(&text, &params()).unwrap();
        match d.detail {
            Some(FindingDetail::Repetition { ref unit, .. }) => assert_eq!(unit, "ab "),
            ref other => panic!("unexpected detail {other:?}"),
        }
        // Interleaved, no unit reaches its threshold.
        assert!(detect_token_repetition("abcabcab abcabcab", &params()).is_none());
    }

    #[test]
    fn appending_text_preserves_violation() {
        let base = "}".repeat(12);
        assert!(detect_token_repetition(&base, &params()).is_some());
        let extended = format!("{base} and then some prose");
        assert!(detect_token_repetition(&extended, &params()).is_some());
    }
}
