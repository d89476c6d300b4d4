//! Small text primitives shared by the detectors and analyzers.

/// Levenshtein distance over Unicode scalar values, two-row DP.
pub fn levenshtein(a: &str, b: &str) -> usize {
    if a == b {
        return 0;
    }
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }

    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let cost = usize::from(ca != cb);
            curr[j + 1] = (prev[j + 1] + 1).min(curr[j] + 1).min(prev[j] + cost);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Normalized similarity in [0, 1]: `1 - d / max(|a|, |b|)`.
/// Two empty strings are identical (similarity 1).
pub fn similarity(a: &str, b: &str) -> f64 {
    let la = a.chars().count();
    let lb = b.chars().count();
    let max = la.max(lb);
    if max == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / max as f64
}

/// Case-fold and collapse whitespace runs to single spaces, trimming ends.
pub fn normalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for c in s.trim().chars() {
        if c.is_whitespace() {
            pending_space = true;
        } else {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            for lc in c.to_lowercase() {
                out.push(lc);
            }
        }
    }
    out
}

/// Similarity of the whitespace/case-normalized forms.
pub fn normalized_similarity(a: &str, b: &str) -> f64 {
    similarity(&normalize(a), &normalize(b))
}

/// Keep the first `head` and last `tail` characters of long text, joined by
/// an ellipsis marker. Text short enough to fit is returned unchanged.
pub fn truncate_head_tail(s: &str, head: usize, tail: usize) -> String {
    let chars: Vec<char> = s.chars().collect();
    if chars.len() <= head + tail {
        return s.to_string();
    }
    let mut out: String = chars[..head].iter().collect();
    out.push_str(" ...[truncated]... ");
    out.extend(&chars[chars.len() - tail..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_basics() {
        assert_eq!(levenshtein("", ""), 0);
        assert_eq!(levenshtein("abc", ""), 3);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("12345", "12354"), 2);
    }

    #[test]
    fn similarity_is_symmetric_and_bounded() {
        let cases = [("a", "b"), ("abc", "abd"), ("", "xyz"), ("same", "same")];
        for (a, b) in cases {
            let s = similarity(a, b);
            assert!((0.0..=1.0).contains(&s));
            assert_eq!(s, similarity(b, a));
        }
        assert_eq!(similarity("12345", "12354"), 0.6);
    }

    #[test]
    fn normalize_collapses_whitespace_and_case() {
        assert_eq!(normalize("  Hello \t  World\n"), "hello world");
        assert_eq!(normalize(""), "");
        assert_eq!(normalized_similarity("A  B", "a b"), 1.0);
    }

    #[test]
    fn truncation_keeps_head_and_tail() {
        let s = "x".repeat(50);
        assert_eq!(truncate_head_tail(&s, 30, 20), s);
        let long = format!("{}{}", "a".repeat(100), "z".repeat(100));
        let cut = truncate_head_tail(&long, 10, 10);
        assert!(cut.starts_with("aaaaaaaaaa"));
        assert!(cut.ends_with("zzzzzzzzzz"));
        assert!(cut.contains("...[truncated]..."));
    }
}
