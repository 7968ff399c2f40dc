//! Shared data model: documents, entity references, mentions with their
//! per-source scores, coreference clusters and chunks.
//!
//! Character offsets throughout are Unicode scalar-value offsets, never byte
//! offsets. [`CharIndex`] converts between the two.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Tolerance for a cluster's entity distribution to count as normalized.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

/// Wikidata-style entity identifier (`Q` followed by digits).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Qid(String);

impl Qid {
    pub fn new(s: impl Into<String>) -> Self {
        Qid(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// True when the identifier has the `Q<digits>` shape.
    pub fn is_well_formed(&self) -> bool {
        let mut chars = self.0.chars();
        chars.next() == Some('Q')
            && self.0.len() > 1
            && chars.all(|c| c.is_ascii_digit())
    }
}

impl fmt::Display for Qid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Borrow<str> for Qid {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl From<&str> for Qid {
    fn from(s: &str) -> Self {
        Qid(s.to_string())
    }
}

impl From<String> for Qid {
    fn from(s: String) -> Self {
        Qid(s)
    }
}

/// A knowledge-base entity with its canonical name and aliases.
///
/// Aliases never implicitly contain the canonical name; the expanded name set
/// is `{canonical_name} ∪ aliases`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRef {
    pub qid: Qid,
    pub canonical_name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
}

impl EntityRef {
    pub fn new(qid: impl Into<Qid>, canonical_name: impl Into<String>) -> Self {
        EntityRef {
            qid: qid.into(),
            canonical_name: canonical_name.into(),
            aliases: Vec::new(),
        }
    }

    pub fn with_aliases<I, S>(mut self, aliases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.aliases = aliases.into_iter().map(Into::into).collect();
        self
    }

    /// Names matched by string search: the canonical name alone, or the
    /// canonical name followed by every distinct non-empty alias.
    pub fn match_names(&self, expanded: bool) -> Vec<&str> {
        let mut names = vec![self.canonical_name.as_str()];
        if expanded {
            for alias in &self.aliases {
                if !alias.is_empty() && !names.contains(&alias.as_str()) {
                    names.push(alias);
                }
            }
        }
        names
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    #[serde(rename = "title", default)]
    pub source_title: String,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            doc_id: doc_id.into(),
            source_title: title.into(),
            text: text.into(),
        }
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// Maps character offsets to byte offsets for one string.
#[derive(Clone, Debug)]
pub enum CharIndex {
    Ascii(usize),
    Table(Vec<usize>),
}

impl CharIndex {
    pub fn new(text: &str) -> Self {
        if text.is_ascii() {
            CharIndex::Ascii(text.len())
        } else {
            let mut table: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
            table.push(text.len());
            CharIndex::Table(table)
        }
    }

    pub fn char_len(&self) -> usize {
        match self {
            CharIndex::Ascii(n) => *n,
            CharIndex::Table(t) => t.len() - 1,
        }
    }

    /// Byte offset of character `c`; `c == char_len()` maps to the end.
    pub fn byte(&self, c: usize) -> usize {
        match self {
            CharIndex::Ascii(_) => c,
            CharIndex::Table(t) => t[c],
        }
    }

    /// Character offset of the char boundary at byte `b`.
    pub fn char_at_byte(&self, b: usize) -> usize {
        match self {
            CharIndex::Ascii(_) => b,
            CharIndex::Table(t) => t.partition_point(|&x| x < b),
        }
    }

    pub fn slice<'a>(&self, text: &'a str, start: usize, end: usize) -> Option<&'a str> {
        if start > end || end > self.char_len() {
            return None;
        }
        Some(&text[self.byte(start)..self.byte(end)])
    }
}

/// Slice `text` by character offsets; `None` when out of range.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    CharIndex::new(text).slice(text, start, end)
}

/// A character span `[start, end)` together with the text it covers.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MentionSpan {
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub surface: String,
}

impl MentionSpan {
    pub fn new(start: usize, end: usize, surface: impl Into<String>) -> Self {
        MentionSpan {
            start,
            end,
            surface: surface.into(),
        }
    }

    /// Nonzero character intersection.
    pub fn overlaps(&self, other: &MentionSpan) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn key(&self) -> (usize, usize) {
        (self.start, self.end)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "H")]
    Hyperlink,
    #[serde(rename = "EL")]
    EntityLinking,
    #[serde(rename = "COREF")]
    Coref,
}

impl Source {
    pub fn tag(self) -> &'static str {
        match self {
            Source::Hyperlink => "H",
            Source::EntityLinking => "EL",
            Source::Coref => "COREF",
        }
    }
}

/// The four per-candidate source scores. Absent scores are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub h: Option<f32>,
    pub el: Option<f32>,
    pub c: Option<f32>,
    pub cc: Option<f32>,
}

impl Scores {
    pub fn hyperlink() -> Self {
        Scores {
            h: Some(1.0),
            ..Scores::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_none() && self.el.is_none() && self.c.is_none() && self.cc.is_none()
    }

    pub fn as_array(&self) -> [Option<f32>; 4] {
        [self.h, self.el, self.c, self.cc]
    }

    pub fn from_array(a: [Option<f32>; 4]) -> Self {
        Scores {
            h: a[0],
            el: a[1],
            c: a[2],
            cc: a[3],
        }
    }

    /// Sources that contributed at least one score.
    pub fn sources(&self) -> BTreeSet<Source> {
        let mut out = BTreeSet::new();
        if self.h.is_some() {
            out.insert(Source::Hyperlink);
        }
        if self.el.is_some() {
            out.insert(Source::EntityLinking);
        }
        if self.c.is_some() || self.cc.is_some() {
            out.insert(Source::Coref);
        }
        out
    }

    /// Field-wise merge; where both sides carry a score the larger one is kept.
    pub fn merge(&mut self, other: &Scores) {
        fn pick(a: Option<f32>, b: Option<f32>) -> Option<f32> {
            match (a, b) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, None) => x,
                (None, y) => y,
            }
        }
        self.h = pick(self.h, other.h);
        self.el = pick(self.el, other.el);
        self.c = pick(self.c, other.c);
        self.cc = pick(self.cc, other.cc);
    }

    /// Range violations: `h` must be exactly 0 or 1, the others in `[0, 1]`.
    pub fn range_errors(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if let Some(h) = self.h {
            if h != 0.0 && h != 1.0 {
                out.push("h");
            }
        }
        for (name, v) in [("el", self.el), ("c", self.c), ("cc", self.cc)] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    out.push(name);
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub qid: Qid,
    #[serde(flatten)]
    pub scores: Scores,
}

impl CandidateScore {
    pub fn new(qid: impl Into<Qid>, scores: Scores) -> Self {
        CandidateScore {
            qid: qid.into(),
            scores,
        }
    }

    pub fn sources(&self) -> BTreeSet<Source> {
        self.scores.sources()
    }
}

/// A mention span with its candidate entities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mention {
    pub span: MentionSpan,
    pub candidates: Vec<CandidateScore>,
    pub cluster_id: Option<String>,
}

impl Mention {
    pub fn candidate(&self, qid: &str) -> Option<&CandidateScore> {
        self.candidates.iter().find(|c| c.qid.as_str() == qid)
    }
}

/// A scored mention together with its document, as stored in
/// `scored_mentions.jsonl`.
#[derive(Clone, Debug, PartialEq)]
pub struct DocMention {
    pub doc_id: String,
    pub mention: Mention,
}

#[derive(Serialize, Deserialize)]
struct DocMentionRecord {
    doc_id: String,
    start: usize,
    end: usize,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    surface: String,
    candidates: Vec<CandidateScore>,
    cluster_id: Option<String>,
}

impl Serialize for DocMention {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        DocMentionRecord {
            doc_id: self.doc_id.clone(),
            start: self.mention.span.start,
            end: self.mention.span.end,
            surface: self.mention.span.surface.clone(),
            candidates: self.mention.candidates.clone(),
            cluster_id: self.mention.cluster_id.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DocMention {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = DocMentionRecord::deserialize(d)?;
        Ok(DocMention {
            doc_id: r.doc_id,
            mention: Mention {
                span: MentionSpan::new(r.start, r.end, r.surface),
                candidates: r.candidates,
                cluster_id: r.cluster_id,
            },
        })
    }
}

/// One row of raw annotator output (`mentions.jsonl`), before scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawMention {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub source: Source,
    pub qid: Option<Qid>,
    pub score: Option<f32>,
    pub cluster_id: Option<String>,
}

impl RawMention {
    pub fn hyperlink(doc_id: &str, start: usize, end: usize, qid: &str) -> Self {
        RawMention {
            doc_id: doc_id.to_string(),
            start,
            end,
            source: Source::Hyperlink,
            qid: Some(Qid::from(qid)),
            score: Some(1.0),
            cluster_id: None,
        }
    }

    pub fn entity_linking(doc_id: &str, start: usize, end: usize, qid: &str, score: f32) -> Self {
        RawMention {
            doc_id: doc_id.to_string(),
            start,
            end,
            source: Source::EntityLinking,
            qid: Some(Qid::from(qid)),
            score: Some(score),
            cluster_id: None,
        }
    }

    pub fn coref(doc_id: &str, start: usize, end: usize, cluster_id: &str) -> Self {
        RawMention {
            doc_id: doc_id.to_string(),
            start,
            end,
            source: Source::Coref,
            qid: None,
            score: None,
            cluster_id: Some(cluster_id.to_string()),
        }
    }
}

/// A set of co-referent spans in one document plus the entity distribution
/// assigned to the cluster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorefCluster {
    pub cluster_id: String,
    pub doc_id: String,
    pub member_spans: Vec<MentionSpan>,
    #[serde(default)]
    pub entity_distribution: BTreeMap<Qid, f64>,
}

/// Groups `COREF` rows into clusters keyed by `(doc_id, cluster_id)`, in first
/// appearance order. Member surfaces are filled from the documents when known.
pub fn clusters_from_raw(documents: &[Document], raw: &[RawMention]) -> Vec<CorefCluster> {
    let texts: HashMap<&str, (&str, CharIndex)> = documents
        .iter()
        .map(|d| (d.doc_id.as_str(), (d.text.as_str(), CharIndex::new(&d.text))))
        .collect();
    let mut order: Vec<(String, String)> = Vec::new();
    let mut members: HashMap<(String, String), Vec<MentionSpan>> = HashMap::new();
    for r in raw.iter().filter(|r| r.source == Source::Coref) {
        let Some(cid) = &r.cluster_id else { continue };
        let key = (r.doc_id.clone(), cid.clone());
        let surface = texts
            .get(r.doc_id.as_str())
            .and_then(|(t, idx)| idx.slice(t, r.start, r.end))
            .unwrap_or("")
            .to_string();
        let entry = members.entry(key.clone()).or_insert_with(|| {
            order.push(key.clone());
            Vec::new()
        });
        let span = MentionSpan::new(r.start, r.end, surface);
        if !entry.contains(&span) {
            entry.push(span);
        }
    }
    order
        .into_iter()
        .map(|key| {
            let spans = members.remove(&key).unwrap_or_default();
            CorefCluster {
                cluster_id: key.1,
                doc_id: key.0,
                member_spans: spans,
                entity_distribution: BTreeMap::new(),
            }
        })
        .collect()
}

/// A mention inside a chunk. `start`/`end` are chunk-relative token positions;
/// `char_start`/`char_end` are character offsets into the chunk text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkMention {
    pub start: usize,
    pub end: usize,
    pub char_start: usize,
    pub char_end: usize,
    pub candidates: Vec<CandidateScore>,
    #[serde(default)]
    pub cluster_id: Option<String>,
}

impl ChunkMention {
    pub fn candidate(&self, qid: &str) -> Option<&CandidateScore> {
        self.candidates.iter().find(|c| c.qid.as_str() == qid)
    }
}

/// A fixed-length token sequence drawn from exactly one document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: u64,
    pub doc_id: String,
    pub token_ids: Vec<u32>,
    pub content_len: usize,
    pub mentions: Vec<ChunkMention>,
    /// Document text covered by the content tokens.
    pub text: String,
}

impl Chunk {
    pub fn seq_len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn content_tokens(&self) -> &[u32] {
        &self.token_ids[..self.content_len]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: String,
    pub doc_id: Option<String>,
    pub detail: String,
}

impl Violation {
    fn new(kind: &str, doc_id: Option<&str>, detail: String) -> Self {
        Violation {
            kind: kind.to_string(),
            doc_id: doc_id.map(str::to_string),
            detail,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: &str) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    /// `N violations (kind: n, ...); first: detail`.
    pub fn summary(&self) -> String {
        let mut kinds: std::collections::BTreeMap<&str, usize> = Default::default();
        for v in &self.violations {
            *kinds.entry(v.kind.as_str()).or_default() += 1;
        }
        let parts: Vec<String> = kinds.iter().map(|(k, n)| format!("{k}: {n}")).collect();
        let first = self.violations.first().map_or(String::new(), |v| format!("; first: {}", v.detail));
        format!("{} violations ({}){first}", self.violations.len(), parts.join(", "))
    }
}

fn check_span(
    report: &mut ValidationReport,
    docs: &HashMap<&str, usize>,
    doc_id: &str,
    start: usize,
    end: usize,
) -> bool {
    let Some(&len) = docs.get(doc_id) else {
        report.violations.push(Violation::new(
            "unknown-document",
            Some(doc_id),
            format!("span ({start},{end}) references unknown document"),
        ));
        return false;
    };
    if start >= end {
        report.violations.push(Violation::new(
            "empty-span",
            Some(doc_id),
            format!("span ({start},{end}) is empty or reversed"),
        ));
        return false;
    }
    if end > len {
        report.violations.push(Violation::new(
            "span-out-of-range",
            Some(doc_id),
            format!("span ({start},{end}) exceeds text length {len}"),
        ));
        return false;
    }
    true
}

fn document_lengths<'a>(documents: &'a [Document], report: &mut ValidationReport) -> HashMap<&'a str, usize> {
    let mut docs = HashMap::new();
    for d in documents {
        if docs.insert(d.doc_id.as_str(), d.char_len()).is_some() {
            report.violations.push(Violation::new(
                "duplicate-document",
                Some(&d.doc_id),
                "document id appears more than once".into(),
            ));
        }
    }
    docs
}

fn check_clusters(report: &mut ValidationReport, docs: &HashMap<&str, usize>, clusters: &[CorefCluster]) {
    for cl in clusters {
        if cl.member_spans.is_empty() {
            report.violations.push(Violation::new(
                "empty-cluster",
                Some(&cl.doc_id),
                format!("cluster {} has no members", cl.cluster_id),
            ));
        }
        for s in &cl.member_spans {
            check_span(report, docs, &cl.doc_id, s.start, s.end);
        }
        if !cl.entity_distribution.is_empty() {
            let total: f64 = cl.entity_distribution.values().sum();
            if (total - 1.0).abs() > DISTRIBUTION_TOLERANCE {
                report.violations.push(Violation::new(
                    "distribution-not-normalized",
                    Some(&cl.doc_id),
                    format!("cluster {} distribution sums to {total}", cl.cluster_id),
                ));
            }
        }
    }
}

/// Checks scored mentions and clusters against the model invariants.
/// Violations are collected, never raised.
pub fn validate_corpus(
    documents: &[Document],
    mentions: &[DocMention],
    clusters: &[CorefCluster],
) -> ValidationReport {
    let mut report = ValidationReport::default();
    let docs = document_lengths(documents, &mut report);
    for m in mentions {
        let span = &m.mention.span;
        check_span(&mut report, &docs, &m.doc_id, span.start, span.end);
        if m.mention.candidates.is_empty() {
            report.violations.push(Violation::new(
                "no-candidates",
                Some(&m.doc_id),
                format!("mention ({},{}) has no candidates", span.start, span.end),
            ));
        }
        let mut seen = HashSet::new();
        for c in &m.mention.candidates {
            if !seen.insert(c.qid.as_str()) {
                report.violations.push(Violation::new(
                    "duplicate-candidate",
                    Some(&m.doc_id),
                    format!("mention ({},{}) lists {} twice", span.start, span.end, c.qid),
                ));
            }
            if c.scores.is_empty() {
                report.violations.push(Violation::new(
                    "missing-score",
                    Some(&m.doc_id),
                    format!("candidate {} has no scores", c.qid),
                ));
            }
            for field in c.scores.range_errors() {
                report.violations.push(Violation::new(
                    "score-out-of-range",
                    Some(&m.doc_id),
                    format!("candidate {} field {field}", c.qid),
                ));
            }
        }
    }
    check_clusters(&mut report, &docs, clusters);
    report
}

/// Checks raw annotator rows before scoring.
pub fn validate_raw(documents: &[Document], raw: &[RawMention]) -> ValidationReport {
    let mut report = ValidationReport::default();
    let docs = document_lengths(documents, &mut report);
    let mut seen = HashSet::new();
    for r in raw {
        check_span(&mut report, &docs, &r.doc_id, r.start, r.end);
        match r.source {
            Source::Hyperlink | Source::EntityLinking => {
                let Some(qid) = &r.qid else {
                    report.violations.push(Violation::new(
                        "missing-qid",
                        Some(&r.doc_id),
                        format!("{} row ({},{}) has no qid", r.source.tag(), r.start, r.end),
                    ));
                    continue;
                };
                if !qid.is_well_formed() {
                    report.violations.push(Violation::new(
                        "invalid-qid",
                        Some(&r.doc_id),
                        format!("malformed qid {qid:?}"),
                    ));
                }
                if !seen.insert((r.doc_id.as_str(), r.start, r.end, r.source, qid.as_str())) {
                    report.violations.push(Violation::new(
                        "duplicate-candidate",
                        Some(&r.doc_id),
                        format!("({},{}) {} listed twice by {}", r.start, r.end, qid, r.source.tag()),
                    ));
                }
                let bad = match (r.source, r.score) {
                    (Source::Hyperlink, Some(s)) => s != 1.0,
                    (Source::EntityLinking, None) => true,
                    (Source::EntityLinking, Some(s)) => !(0.0..=1.0).contains(&s),
                    _ => false,
                };
                if bad {
                    report.violations.push(Violation::new(
                        "score-out-of-range",
                        Some(&r.doc_id),
                        format!("{} row ({},{}) score {:?}", r.source.tag(), r.start, r.end, r.score),
                    ));
                }
            }
            Source::Coref => {
                if r.cluster_id.is_none() {
                    report.violations.push(Violation::new(
                        "missing-cluster",
                        Some(&r.doc_id),
                        format!("COREF row ({},{}) has no cluster_id", r.start, r.end),
                    ));
                }
            }
        }
    }
    check_clusters(&mut report, &docs, &clusters_from_raw(documents, raw));
    report
}
