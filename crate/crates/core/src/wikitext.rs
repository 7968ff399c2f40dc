//! Hyperlink extraction from wikitext (`[[Target|anchor]]`) and HTML
//! (`<a href="...">anchor</a>`) markup, and title → QID resolution.

use std::collections::HashMap;
use std::path::Path;

use percent_encoding::percent_decode_str;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::read_tsv;
use crate::model::{CandidateScore, Mention, MentionSpan, Qid, RawMention, Scores};

/// A link in the flattened text. `start`/`end` are character offsets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub start: usize,
    pub end: usize,
    pub anchor: String,
    pub target: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Extraction {
    pub clean_text: String,
    pub links: Vec<Link>,
    pub warnings: Vec<String>,
}

struct Flattener {
    out: String,
    out_chars: usize,
    links: Vec<Link>,
    warnings: Vec<String>,
}

impl Flattener {
    fn push_text(&mut self, s: &str) {
        self.out.push_str(s);
        self.out_chars += s.chars().count();
    }

    fn push_link(&mut self, anchor: &str, target: &str) {
        let start = self.out_chars;
        self.push_text(anchor);
        self.links.push(Link {
            start,
            end: self.out_chars,
            anchor: anchor.to_string(),
            target: target.to_string(),
        });
    }
}

fn find_from(hay: &str, needle: &str, from: usize) -> Option<usize> {
    hay[from..].find(needle).map(|p| p + from)
}

/// Next `<a` that opens an anchor tag (followed by whitespace or `>`).
fn find_anchor_open(lower: &str, from: usize) -> Option<usize> {
    let bytes = lower.as_bytes();
    let mut at = from;
    while let Some(p) = find_from(lower, "<a", at) {
        match bytes.get(p + 2) {
            Some(b) if b.is_ascii_whitespace() || *b == b'>' => return Some(p),
            _ => at = p + 2,
        }
    }
    None
}

fn href_value(tag: &str) -> Option<String> {
    let lower = tag.to_ascii_lowercase();
    let mut at = 0;
    while let Some(p) = find_from(&lower, "href", at) {
        at = p + 4;
        let before_ok = p == 0 || lower.as_bytes()[p - 1].is_ascii_whitespace();
        let rest = tag[at..].trim_start();
        if !before_ok || !rest.starts_with('=') {
            continue;
        }
        let value = rest[1..].trim_start();
        let v = match value.chars().next() {
            Some(q @ ('"' | '\'')) => value[1..].split(q).next().unwrap_or(""),
            _ => value
                .split(|c: char| c.is_whitespace() || c == '>')
                .next()
                .unwrap_or(""),
        };
        return Some(v.to_string());
    }
    None
}

/// Turns an href into an article title: `/wiki/Title`, `./Title` and full
/// wiki URLs are reduced to `Title`; anything else is returned unchanged.
fn href_to_title(href: &str) -> String {
    if let Some(p) = href.find("/wiki/") {
        return href[p + 6..].to_string();
    }
    href.strip_prefix("./").unwrap_or(href).to_string()
}

/// Flattens link markup and records each link's span in the clean text.
///
/// Markup other than links passes through verbatim. When a link opens inside
/// another unclosed link, the inner one is kept and the outer markup is
/// emitted as text. Unclosed markup is emitted as text with a warning.
pub fn extract_hyperlinks(raw_markup: &str) -> Extraction {
    let lower = raw_markup.to_ascii_lowercase();
    let mut f = Flattener {
        out: String::with_capacity(raw_markup.len()),
        out_chars: 0,
        links: Vec::new(),
        warnings: Vec::new(),
    };
    let mut i = 0;
    while i < raw_markup.len() {
        let wiki = find_from(raw_markup, "[[", i);
        let html = find_anchor_open(&lower, i);
        let (pos, is_wiki) = match (wiki, html) {
            (None, None) => {
                f.push_text(&raw_markup[i..]);
                break;
            }
            (Some(w), Some(h)) if h < w => (h, false),
            (Some(w), _) => (w, true),
            (None, Some(h)) => (h, false),
        };
        f.push_text(&raw_markup[i..pos]);

        if is_wiki {
            let body_start = pos + 2;
            let close = find_from(raw_markup, "]]", body_start);
            let inner = find_from(raw_markup, "[[", body_start);
            let Some(close) = close else {
                f.warnings.push(format!("unclosed wiki link at byte {pos}"));
                f.push_text("[[");
                i = body_start;
                continue;
            };
            if matches!(inner, Some(n) if n < close) {
                f.push_text("[[");
                i = body_start;
                continue;
            }
            let body = &raw_markup[body_start..close];
            let (target, anchor) = match body.split_once('|') {
                Some((t, a)) if !a.is_empty() => (t, a),
                Some((t, _)) => (t, t),
                None => (body, body),
            };
            i = close + 2;
            if target.trim().is_empty() {
                f.warnings.push(format!("empty link target at byte {pos}"));
                f.push_text(&raw_markup[pos..i]);
                continue;
            }
            // link trail: [[bus]]es renders as one link over "buses"
            let trail_len = raw_markup[i..]
                .bytes()
                .take_while(|b| b.is_ascii_lowercase())
                .count();
            let mut rendered = anchor.to_string();
            rendered.push_str(&raw_markup[i..i + trail_len]);
            i += trail_len;
            f.push_link(&rendered, target);
        } else {
            let Some(tag_end) = find_from(raw_markup, ">", pos) else {
                f.warnings.push(format!("unterminated <a> tag at byte {pos}"));
                f.push_text(&raw_markup[pos..pos + 1]);
                i = pos + 1;
                continue;
            };
            let content_start = tag_end + 1;
            let close = find_from(&lower, "</a>", content_start);
            let inner = find_anchor_open(&lower, content_start);
            let Some(close) = close else {
                f.warnings.push(format!("unclosed <a> tag at byte {pos}"));
                f.push_text(&raw_markup[pos..content_start]);
                i = content_start;
                continue;
            };
            if matches!(inner, Some(n) if n < close) {
                f.push_text(&raw_markup[pos..content_start]);
                i = content_start;
                continue;
            }
            let anchor = &raw_markup[content_start..close];
            i = close + 4;
            match href_value(&raw_markup[pos..content_start]) {
                Some(href) if !href.is_empty() && !anchor.is_empty() => {
                    f.push_link(anchor, &href_to_title(&href));
                }
                _ => f.push_text(anchor),
            }
        }
    }
    Extraction {
        clean_text: f.out,
        links: f.links,
        warnings: f.warnings,
    }
}

/// Wiki-style title normalization: percent-decode, drop `#section`,
/// underscores and whitespace runs become single spaces, trim, and upper-case
/// the first character only.
pub fn normalize_title(title: &str) -> String {
    let decoded = percent_decode_str(title).decode_utf8_lossy();
    let without_section = decoded.split('#').next().unwrap_or("");
    let without_colon = without_section.trim().trim_start_matches(':');
    let collapsed = without_colon
        .split(|c: char| c.is_whitespace() || c == '_')
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ");
    let mut chars = collapsed.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

#[derive(Clone, Debug, Default)]
pub struct TitleQidMap {
    entries: HashMap<String, Qid>,
}

impl TitleQidMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, title: &str, qid: impl Into<Qid>) {
        self.entries.insert(normalize_title(title), qid.into());
    }

    pub fn get(&self, title: &str) -> Option<&Qid> {
        self.entries.get(&normalize_title(title))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Loads `title<TAB>qid` rows.
    pub fn load(path: &Path) -> Result<Self> {
        let mut map = TitleQidMap::new();
        for row in read_tsv(path, 2)? {
            map.insert(&row[0], row[1].trim());
        }
        Ok(map)
    }
}

impl<'a> FromIterator<(&'a str, &'a str)> for TitleQidMap {
    fn from_iter<I: IntoIterator<Item = (&'a str, &'a str)>>(iter: I) -> Self {
        let mut map = TitleQidMap::new();
        for (t, q) in iter {
            map.insert(t, q);
        }
        map
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnresolvedLink {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub target: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Resolution {
    pub mentions: Vec<Mention>,
    pub unresolved: Vec<UnresolvedLink>,
}

impl Resolution {
    /// Hyperlink rows in the `mentions.jsonl` format.
    pub fn raw_rows(&self, doc_id: &str) -> Vec<RawMention> {
        self.mentions
            .iter()
            .map(|m| RawMention::hyperlink(doc_id, m.span.start, m.span.end, m.candidates[0].qid.as_str()))
            .collect()
    }
}

/// Resolves link targets to QIDs. Each resolved link becomes a single-candidate
/// mention with `h = 1`; the rest go to the unresolved report.
pub fn resolve_links(doc_id: &str, links: &[Link], map: &TitleQidMap) -> Resolution {
    let mut res = Resolution::default();
    for link in links {
        match map.get(&link.target) {
            Some(qid) => res.mentions.push(Mention {
                span: MentionSpan::new(link.start, link.end, link.anchor.clone()),
                candidates: vec![CandidateScore::new(qid.clone(), Scores::hyperlink())],
                cluster_id: None,
            }),
            None => res.unresolved.push(UnresolvedLink {
                doc_id: doc_id.to_string(),
                start: link.start,
                end: link.end,
                target: link.target.clone(),
            }),
        }
    }
    res
}
