//! String-search baselines: case-sensitive or case-insensitive exact
//! substring matching of an entity's canonical name, optionally expanded with
//! its aliases.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StringMode {
    pub case_sensitive: bool,
    pub expanded: bool,
}

impl StringMode {
    pub const CS_CANONICAL: StringMode = StringMode { case_sensitive: true, expanded: false };
    pub const CS_EXPANDED: StringMode = StringMode { case_sensitive: true, expanded: true };
    pub const CI_CANONICAL: StringMode = StringMode { case_sensitive: false, expanded: false };
    pub const CI_EXPANDED: StringMode = StringMode { case_sensitive: false, expanded: true };

    pub const ALL: [StringMode; 4] = [
        StringMode::CS_CANONICAL,
        StringMode::CS_EXPANDED,
        StringMode::CI_CANONICAL,
        StringMode::CI_EXPANDED,
    ];
}

impl fmt::Display for StringMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let case = if self.case_sensitive { "cs" } else { "ci" };
        let names = if self.expanded { "expanded" } else { "canonical" };
        write!(f, "{case}-{names}")
    }
}

impl FromStr for StringMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        StringMode::ALL
            .into_iter()
            .find(|m| m.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown string mode {s:?}")))
    }
}

/// Per-character lowercase mapping.
pub fn fold_case(s: &str) -> String {
    s.chars().flat_map(char::to_lowercase).collect()
}

/// Folded text plus, for every folded byte, the index of the source character.
struct FoldMap {
    folded: String,
    source_char: Vec<u32>,
}

impl FoldMap {
    fn new(text: &str) -> Self {
        let mut folded = String::with_capacity(text.len());
        let mut source_char = Vec::with_capacity(text.len());
        for (i, ch) in text.chars().enumerate() {
            for lc in ch.to_lowercase() {
                folded.push(lc);
                source_char.extend(std::iter::repeat_n(i as u32, lc.len_utf8()));
            }
        }
        FoldMap { folded, source_char }
    }
}

/// Every (possibly overlapping) occurrence of `needle` in `hay`, as byte ranges.
fn occurrences(hay: &str, needle: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if needle.is_empty() {
        return out;
    }
    let mut from = 0;
    while let Some(p) = hay[from..].find(needle) {
        let start = from + p;
        out.push((start, start + needle.len()));
        let step = hay[start..].chars().next().map_or(1, char::len_utf8);
        from = start + step;
    }
    out
}

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(char::is_alphanumeric)
}

/// Character spans in `text` matching any of `names` under `mode`, sorted and
/// deduplicated. `folded` must be `fold_case(text)` when matching
/// case-insensitively.
pub fn match_spans(
    text: &str,
    folded: &str,
    names: &[&str],
    case_sensitive: bool,
    word_boundary: bool,
) -> Vec<(usize, usize)> {
    let hay = if case_sensitive { text } else { folded };
    let mut byte_hits: Vec<(usize, usize)> = Vec::new();
    for name in names {
        let needle = if case_sensitive { name.to_string() } else { fold_case(name) };
        byte_hits.extend(occurrences(hay, &needle));
    }
    if byte_hits.is_empty() {
        return Vec::new();
    }
    let mut spans: Vec<(usize, usize)> = if case_sensitive {
        let idx = crate::model::CharIndex::new(text);
        byte_hits
            .into_iter()
            .map(|(s, e)| (idx.char_at_byte(s), idx.char_at_byte(e)))
            .collect()
    } else {
        let map = FoldMap::new(text);
        debug_assert_eq!(map.folded, folded);
        byte_hits
            .into_iter()
            .map(|(s, e)| (map.source_char[s] as usize, map.source_char[e - 1] as usize + 1))
            .collect()
    };
    if word_boundary {
        let chars: Vec<char> = text.chars().collect();
        spans.retain(|&(s, e)| {
            let before = s.checked_sub(1).map(|i| chars[i]);
            !is_word_char(before) && !is_word_char(chars.get(e).copied())
        });
    }
    spans.sort_unstable();
    spans.dedup();
    spans
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ci(text: &str, names: &[&str]) -> Vec<(usize, usize)> {
        match_spans(text, &fold_case(text), names, false, false)
    }

    #[test]
    fn case_insensitive_canonical() {
        assert_eq!(ci("in Buffalo, New York today", &["buffalo, new york"]), vec![(3, 20)]);
    }

    #[test]
    fn case_sensitive_rejects_mismatch() {
        let text = "buffalo, new york";
        assert!(match_spans(text, &fold_case(text), &["Buffalo, New York"], true, false).is_empty());
    }

    #[test]
    fn overlapping_occurrences() {
        assert_eq!(ci("aaaa", &["aa"]), vec![(0, 2), (1, 3), (2, 4)]);
    }

    #[test]
    fn substring_versus_word_boundary() {
        let text = "Buffaloes and Buffalo.";
        assert_eq!(ci(text, &["buffalo"]), vec![(0, 7), (14, 21)]);
        assert_eq!(match_spans(text, &fold_case(text), &["buffalo"], false, true), vec![(14, 21)]);
    }

    #[test]
    fn expanding_fold_maps_back() {
        // 'İ' lowercases to two chars.
        let text = "xİstanbul y";
        assert_eq!(ci(text, &["stanbul"]), vec![(2, 9)]);
        assert_eq!(ci(text, &["i̇stanbul"]), vec![(1, 9)]);
    }

    #[test]
    fn mode_names() {
        for m in StringMode::ALL {
            assert_eq!(m.to_string().parse::<StringMode>().unwrap(), m);
        }
        assert_eq!("CI-Expanded".parse::<StringMode>().unwrap(), StringMode::CI_EXPANDED);
        assert!("fuzzy".parse::<StringMode>().is_err());
    }
}
