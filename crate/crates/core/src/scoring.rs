//! Mention scoring.
//!
//! Hyperlink (H) and entity-linking (EL) scores are passed through from the
//! annotators. Coreference adds two scores:
//!
//! * **C** transfers H/EL confidence to a cluster mention in proportion to its
//!   textual overlap with the H/EL mentions overlapping the cluster. Overlap is
//!   the harmonic mean of the two longest-common-substring ratios.
//! * **CC** is a softmax over per-entity cluster support, shared by every
//!   member of the cluster.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    CandidateScore, CharIndex, CorefCluster, DocMention, Document, Mention, MentionSpan, Qid,
    RawMention, Scores, Source,
};

/// Lowercase, trim and collapse whitespace runs to a single space.
pub fn normalize_for_lcs(s: &str) -> Vec<char> {
    let mut out = Vec::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// Length of the longest common contiguous substring.
pub fn longest_common_substring(a: &[char], b: &[char]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    let mut best = 0;
    for &ca in a {
        for (j, &cb) in b.iter().enumerate() {
            cur[j + 1] = if ca == cb { prev[j] + 1 } else { 0 };
            best = best.max(cur[j + 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// Harmonic mean of `LCS/|m|` and `LCS/|m'|` over normalized text; 0 when
/// either side is empty or nothing is shared.
pub fn lcs_sim(m: &str, m_prime: &str) -> f64 {
    let a = normalize_for_lcs(m);
    let b = normalize_for_lcs(m_prime);
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let lcs = longest_common_substring(&a, &b) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let ra = lcs / a.len() as f64;
    let rb = lcs / b.len() as f64;
    2.0 * ra * rb / (ra + rb)
}

/// An H or EL mention overlapping a cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextMember {
    pub span: MentionSpan,
    pub h: BTreeMap<Qid, f32>,
    pub el: BTreeMap<Qid, f32>,
}

impl ContextMember {
    pub fn is_hyperlink(&self) -> bool {
        !self.h.is_empty()
    }

    pub fn is_entity_linking(&self) -> bool {
        !self.el.is_empty()
    }

    /// The score `support` weights: H when this is a hyperlink mention
    /// (even if it also carries EL scores), EL otherwise.
    pub fn source_score(&self, e: &Qid) -> f64 {
        let scores = if self.is_hyperlink() { &self.h } else { &self.el };
        scores.get(e).copied().unwrap_or(0.0) as f64
    }

    fn from_mention(m: &Mention) -> Option<Self> {
        let mut member = ContextMember {
            span: m.span.clone(),
            h: BTreeMap::new(),
            el: BTreeMap::new(),
        };
        for c in &m.candidates {
            if let Some(h) = c.scores.h {
                member.h.insert(c.qid.clone(), h);
            }
            if let Some(el) = c.scores.el {
                member.el.insert(c.qid.clone(), el);
            }
        }
        (member.is_hyperlink() || member.is_entity_linking()).then_some(member)
    }
}

/// A cluster together with the H/EL mentions that overlap any of its spans.
#[derive(Clone, Debug)]
pub struct ClusterContext<'a> {
    pub cluster: &'a CorefCluster,
    pub members: Vec<ContextMember>,
}

impl<'a> ClusterContext<'a> {
    /// Collects every H/EL-bearing mention whose span has a nonzero character
    /// intersection with some member span of `cluster`.
    pub fn new(cluster: &'a CorefCluster, doc_mentions: &[Mention]) -> Self {
        let members = doc_mentions
            .iter()
            .filter(|m| cluster.member_spans.iter().any(|s| s.overlaps(&m.span)))
            .filter_map(ContextMember::from_mention)
            .collect();
        ClusterContext { cluster, members }
    }

    pub fn hyperlink_members(&self) -> impl Iterator<Item = &ContextMember> {
        self.members.iter().filter(|m| m.is_hyperlink())
    }

    pub fn el_members(&self) -> impl Iterator<Item = &ContextMember> {
        self.members.iter().filter(|m| m.is_entity_linking())
    }

    /// Entities named by any H/EL context member, in QID order.
    pub fn context_entities(&self) -> Vec<Qid> {
        let mut out: Vec<Qid> = self
            .members
            .iter()
            .flat_map(|m| m.h.keys().chain(m.el.keys()))
            .cloned()
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

/// `sim(m, m') · H(m', e)` or `sim(m, m') · EL(m', e)`.
pub fn coref_support(m: &str, m_prime: &ContextMember, e: &Qid) -> f64 {
    lcs_sim(m, &m_prime.span.surface) * m_prime.source_score(e)
}

/// Maximum support over the H/EL context members; `None` when there are none.
pub fn coref_score(m: &str, ctx: &ClusterContext<'_>, e: &Qid) -> Option<f64> {
    ctx.members
        .iter()
        .map(|mp| coref_support(m, mp, e))
        .reduce(f64::max)
}

/// Scores of one cluster member as needed by the cluster distribution.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MemberScores {
    pub h: BTreeMap<Qid, f32>,
    pub el: BTreeMap<Qid, f32>,
    pub c: BTreeMap<Qid, f32>,
}

impl MemberScores {
    /// H if the member is a hyperlink mention, else EL if it is an
    /// entity-linking mention, else its C score; 0 where absent.
    pub fn m_support(&self, e: &Qid) -> f64 {
        let table = if !self.h.is_empty() {
            &self.h
        } else if !self.el.is_empty() {
            &self.el
        } else {
            &self.c
        };
        table.get(e).copied().unwrap_or(0.0) as f64
    }

    fn listed(&self) -> impl Iterator<Item = &Qid> {
        self.h.keys().chain(self.el.keys()).chain(self.c.keys())
    }
}

/// Softmax over summed member support for every entity listed by at least
/// one member. Empty when no entity is listed.
pub fn cluster_distribution(members: &[MemberScores]) -> BTreeMap<Qid, f64> {
    let mut support: BTreeMap<Qid, f64> = BTreeMap::new();
    for m in members {
        for e in m.listed() {
            support.entry(e.clone()).or_insert(0.0);
        }
    }
    for (e, total) in support.iter_mut() {
        *total = members.iter().map(|m| m.m_support(e)).sum();
    }
    softmax(support)
}

fn softmax(support: BTreeMap<Qid, f64>) -> BTreeMap<Qid, f64> {
    let Some(max) = support.values().copied().reduce(f64::max) else {
        return BTreeMap::new();
    };
    let exp: BTreeMap<Qid, f64> = support
        .into_iter()
        .map(|(e, s)| (e, (s - max).exp()))
        .collect();
    let z: f64 = exp.values().sum();
    exp.into_iter().map(|(e, v)| (e, v / z)).collect()
}

/// Computes C for every member lacking a direct H/EL score for an entity, then
/// the cluster distribution. Returns the per-member scores (aligned with
/// `cluster.member_spans`) and the distribution.
pub fn score_cluster(
    ctx: &ClusterContext<'_>,
    member_mentions: &[Option<&Mention>],
) -> (Vec<MemberScores>, BTreeMap<Qid, f64>) {
    let entities = ctx.context_entities();
    let mut members = Vec::with_capacity(ctx.cluster.member_spans.len());
    for (span, mention) in ctx.cluster.member_spans.iter().zip(member_mentions) {
        let mut ms = MemberScores::default();
        if let Some(m) = mention {
            for c in &m.candidates {
                if let Some(h) = c.scores.h {
                    ms.h.insert(c.qid.clone(), h);
                }
                if let Some(el) = c.scores.el {
                    ms.el.insert(c.qid.clone(), el);
                }
            }
        }
        for e in &entities {
            if ms.h.contains_key(e) || ms.el.contains_key(e) {
                continue;
            }
            if let Some(c) = coref_score(&span.surface, ctx, e) {
                ms.c.insert(e.clone(), c as f32);
            }
        }
        members.push(ms);
    }
    let dist = cluster_distribution(&members);
    (members, dist)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoringReport {
    pub documents: usize,
    pub mentions: usize,
    pub clusters: usize,
    /// Cluster-only spans that ended up with no candidate entity.
    pub dropped_unlinked: usize,
}

#[derive(Clone, Debug, Default)]
pub struct ScoredCorpus {
    pub mentions: Vec<DocMention>,
    pub clusters: Vec<CorefCluster>,
    pub report: ScoringReport,
}

struct DocOutput {
    mentions: Vec<Mention>,
    clusters: Vec<CorefCluster>,
    dropped: usize,
}

fn score_document(
    doc: &Document,
    raw: &[&RawMention],
    clusters: &[&CorefCluster],
) -> Result<DocOutput> {
    let idx = CharIndex::new(&doc.text);
    let surface = |start: usize, end: usize| -> Result<String> {
        idx.slice(&doc.text, start, end)
            .filter(|_| start < end)
            .map(str::to_string)
            .ok_or_else(|| {
                Error::Corrupt(format!(
                    "span ({start},{end}) invalid for document {} of length {}",
                    doc.doc_id,
                    idx.char_len()
                ))
            })
    };

    let mut by_span: BTreeMap<(usize, usize), Mention> = BTreeMap::new();
    for r in raw {
        let key = (r.start, r.end);
        if let std::collections::btree_map::Entry::Vacant(e) = by_span.entry(key) {
            let span = MentionSpan::new(r.start, r.end, surface(r.start, r.end)?);
            e.insert(Mention { span, candidates: Vec::new(), cluster_id: None });
        }
        let mention = by_span.get_mut(&key).expect("inserted above");
        let scores = match (r.source, &r.qid) {
            (Source::Hyperlink, Some(_)) => Scores::hyperlink(),
            (Source::EntityLinking, Some(_)) => Scores {
                el: Some(r.score.unwrap_or(0.0)),
                ..Scores::default()
            },
            _ => {
                if r.source == Source::Coref && mention.cluster_id.is_none() {
                    mention.cluster_id = r.cluster_id.clone();
                }
                continue;
            }
        };
        let qid = r.qid.clone().expect("matched Some above");
        match mention.candidates.iter_mut().find(|c| c.qid == qid) {
            Some(c) => c.scores.merge(&scores),
            None => mention.candidates.push(CandidateScore::new(qid, scores)),
        }
    }

    // Context is taken from direct (H/EL) scores only.
    let direct: Vec<Mention> = by_span.values().cloned().collect();
    let mut out_clusters = Vec::with_capacity(clusters.len());
    for cluster in clusters {
        let mut cluster = (*cluster).clone();
        for s in cluster.member_spans.iter_mut() {
            if !by_span.contains_key(&s.key()) {
                return Err(Error::Corrupt(format!(
                    "cluster {} in {} references unknown span ({},{})",
                    cluster.cluster_id, doc.doc_id, s.start, s.end
                )));
            }
            if s.surface.is_empty() {
                s.surface = surface(s.start, s.end)?;
            }
        }
        let member_mentions: Vec<Option<&Mention>> = cluster
            .member_spans
            .iter()
            .map(|s| direct.iter().find(|m| m.span.key() == s.key()))
            .collect();
        let ctx = ClusterContext::new(&cluster, &direct);
        let (member_scores, dist) = score_cluster(&ctx, &member_mentions);
        for (span, ms) in cluster.member_spans.iter().zip(&member_scores) {
            let mention = by_span.get_mut(&span.key()).expect("checked above");
            if mention.cluster_id.is_none() {
                mention.cluster_id = Some(cluster.cluster_id.clone());
            }
            for (e, c) in &ms.c {
                let s = Scores { c: Some(*c), ..Scores::default() };
                upsert(mention, e, &s);
            }
            for (e, cc) in &dist {
                let s = Scores { cc: Some(*cc as f32), ..Scores::default() };
                upsert(mention, e, &s);
            }
        }
        cluster.entity_distribution = dist;
        out_clusters.push(cluster);
    }

    let total = by_span.len();
    let mentions: Vec<Mention> = by_span
        .into_values()
        .filter(|m| !m.candidates.is_empty())
        .collect();
    Ok(DocOutput {
        dropped: total - mentions.len(),
        mentions,
        clusters: out_clusters,
    })
}

fn upsert(mention: &mut Mention, e: &Qid, s: &Scores) {
    match mention.candidates.iter_mut().find(|c| &c.qid == e) {
        Some(c) => c.scores.merge(s),
        None => mention.candidates.push(CandidateScore::new(e.clone(), *s)),
    }
}

/// Merges raw rows by span and applies coreference scoring.
///
/// Identical spans from several sources become one mention; a span with H and
/// EL rows for the same QID yields one candidate carrying both scores. Every
/// cluster member receives the cluster's CC for each distributed entity.
/// Cluster-only spans whose cluster supports no entity are dropped and counted.
pub fn score_corpus(
    documents: &[Document],
    raw_mentions: &[RawMention],
    clusters: &[CorefCluster],
) -> Result<ScoredCorpus> {
    let doc_pos: HashMap<&str, usize> = documents
        .iter()
        .enumerate()
        .map(|(i, d)| (d.doc_id.as_str(), i))
        .collect();
    let mut raw_by_doc: Vec<Vec<&RawMention>> = vec![Vec::new(); documents.len()];
    for r in raw_mentions {
        let i = doc_pos
            .get(r.doc_id.as_str())
            .ok_or_else(|| Error::Corrupt(format!("mention references unknown document {}", r.doc_id)))?;
        raw_by_doc[*i].push(r);
    }
    let mut clusters_by_doc: Vec<Vec<&CorefCluster>> = vec![Vec::new(); documents.len()];
    for c in clusters {
        let i = doc_pos
            .get(c.doc_id.as_str())
            .ok_or_else(|| Error::Corrupt(format!("cluster references unknown document {}", c.doc_id)))?;
        clusters_by_doc[*i].push(c);
    }

    let outputs: Vec<DocOutput> = documents
        .par_iter()
        .enumerate()
        .map(|(i, d)| score_document(d, &raw_by_doc[i], &clusters_by_doc[i]))
        .collect::<Result<_>>()?;

    let mut scored = ScoredCorpus::default();
    scored.report.documents = documents.len();
    for (doc, out) in documents.iter().zip(outputs) {
        scored.report.dropped_unlinked += out.dropped;
        scored.report.clusters += out.clusters.len();
        scored.clusters.extend(out.clusters);
        scored.mentions.extend(out.mentions.into_iter().map(|mention| DocMention {
            doc_id: doc.doc_id.clone(),
            mention,
        }));
    }
    scored.report.mentions = scored.mentions.len();
    Ok(scored)
}
