//! Immutable QID-keyed inverted index over chunks.
//!
//! Each QID maps to a postings list of chunks with the scores of every
//! mention naming the QID. Entity queries filter mentions by thresholds and
//! rank chunks by their best matching mention. A case-folded text store backs
//! the string-search baselines.

mod rank;
mod store;
mod strings;

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chunker::StepMap;
use crate::error::{Error, Result};
use crate::model::{Chunk, EntityRef, Qid, Scores};

pub use rank::{mention_rank, rank_chunk, RankWeights, Thresholds};
pub use store::{IndexManifest, MANIFEST_FILE};
pub use strings::{fold_case, match_spans, StringMode};

/// Hard cap on page size for entity and string queries.
pub const MAX_LIMIT: usize = 1000;
pub const DEFAULT_LIMIT: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostingMention {
    /// Position in the chunk's mention list.
    pub mention: u32,
    pub scores: Scores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostingsEntry {
    pub chunk_id: u64,
    pub mentions: Vec<PostingMention>,
    /// Rank over all of this QID's mentions in the chunk.
    pub rank_score: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct IndexConfig {
    pub weights: RankWeights,
    pub default_thresholds: Thresholds,
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub qid: Qid,
    pub thresholds: Thresholds,
    pub limit: usize,
    pub offset: usize,
}

impl QuerySpec {
    pub fn new(qid: impl Into<Qid>, thresholds: Thresholds) -> Self {
        QuerySpec {
            qid: qid.into(),
            thresholds,
            limit: DEFAULT_LIMIT,
            offset: 0,
        }
    }

    pub fn page(mut self, limit: usize, offset: usize) -> Self {
        self.limit = limit;
        self.offset = offset;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        if self.limit == 0 {
            return Err(Error::InvalidArgument("limit must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// A matching mention in a hit. `start`/`end` are character offsets into the
/// chunk text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchedMention {
    pub start: usize,
    pub end: usize,
    pub qid: Qid,
    pub scores: Scores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub chunk_id: u64,
    pub rank_score: f32,
    pub matches: Vec<MatchedMention>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub total: usize,
    pub hits: Vec<Hit>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StringHit {
    pub chunk_id: u64,
    pub match_count: usize,
    /// Character spans in the chunk text, in document order.
    pub spans: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StringResult {
    pub total: usize,
    pub hits: Vec<StringHit>,
}

#[derive(Debug)]
pub struct Index {
    config: IndexConfig,
    chunks: Vec<Chunk>,
    chunk_pos: HashMap<u64, usize>,
    folded: Vec<String>,
    postings: BTreeMap<Qid, Vec<PostingsEntry>>,
    entities: BTreeMap<Qid, EntityRef>,
    descriptions: BTreeMap<Qid, String>,
    steps: StepMap,
}

fn chunk_postings(chunk: &Chunk, weights: &RankWeights) -> Vec<(Qid, PostingsEntry)> {
    let mut by_qid: BTreeMap<&Qid, Vec<PostingMention>> = BTreeMap::new();
    for (i, m) in chunk.mentions.iter().enumerate() {
        for c in &m.candidates {
            by_qid.entry(&c.qid).or_default().push(PostingMention {
                mention: i as u32,
                scores: c.scores,
            });
        }
    }
    by_qid
        .into_iter()
        .map(|(qid, mentions)| {
            let rank_score = rank_chunk(mentions.iter().map(|m| &m.scores), weights);
            (
                qid.clone(),
                PostingsEntry {
                    chunk_id: chunk.chunk_id,
                    mentions,
                    rank_score,
                },
            )
        })
        .collect()
}

fn sort_postings(list: &mut [PostingsEntry]) {
    list.sort_by(|a, b| {
        b.rank_score
            .total_cmp(&a.rank_score)
            .then(a.chunk_id.cmp(&b.chunk_id))
    });
}

impl Index {
    /// Builds the index. Postings are generated per chunk in parallel and
    /// merged in chunk-id order.
    pub fn build(
        mut chunks: Vec<Chunk>,
        entities: Vec<EntityRef>,
        descriptions: Vec<(Qid, String)>,
        steps: StepMap,
        config: IndexConfig,
    ) -> Result<Self> {
        config.weights.validate()?;
        config.default_thresholds.validate()?;
        chunks.sort_by_key(|c| c.chunk_id);
        for w in chunks.windows(2) {
            if w[0].chunk_id == w[1].chunk_id {
                return Err(Error::DuplicateChunk(w[0].chunk_id));
            }
        }
        let per_chunk: Vec<Vec<(Qid, PostingsEntry)>> = chunks
            .par_iter()
            .map(|c| chunk_postings(c, &config.weights))
            .collect();
        let mut postings: BTreeMap<Qid, Vec<PostingsEntry>> = BTreeMap::new();
        for list in per_chunk {
            for (qid, entry) in list {
                postings.entry(qid).or_default().push(entry);
            }
        }
        Ok(Self::assemble(chunks, postings, entities, descriptions, steps, config))
    }

    fn assemble(
        chunks: Vec<Chunk>,
        mut postings: BTreeMap<Qid, Vec<PostingsEntry>>,
        entities: Vec<EntityRef>,
        descriptions: Vec<(Qid, String)>,
        steps: StepMap,
        config: IndexConfig,
    ) -> Self {
        postings.par_iter_mut().for_each(|(_, list)| sort_postings(list));
        let chunk_pos = chunks.iter().enumerate().map(|(i, c)| (c.chunk_id, i)).collect();
        let folded = chunks.par_iter().map(|c| fold_case(&c.text)).collect();
        Index {
            config,
            chunks,
            chunk_pos,
            folded,
            postings,
            entities: entities.into_iter().map(|e| (e.qid.clone(), e)).collect(),
            descriptions: descriptions.into_iter().collect(),
            steps,
        }
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn chunk(&self, chunk_id: u64) -> Option<&Chunk> {
        self.chunk_pos.get(&chunk_id).map(|&i| &self.chunks[i])
    }

    pub fn entity(&self, qid: &str) -> Option<&EntityRef> {
        self.entities.get(qid)
    }

    pub fn entities(&self) -> impl Iterator<Item = &EntityRef> {
        self.entities.values()
    }

    pub fn description(&self, qid: &str) -> Option<&str> {
        self.descriptions.get(qid).map(String::as_str)
    }

    pub fn steps(&self) -> &StepMap {
        &self.steps
    }

    /// Postings for `qid`, ordered by (rank desc, chunk id asc).
    pub fn postings(&self, qid: &str) -> &[PostingsEntry] {
        self.postings.get(qid).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn qids(&self) -> impl Iterator<Item = &Qid> {
        self.postings.keys()
    }

    /// Every chunk with a mention of `qid` passing `thresholds`, ranked by the
    /// best passing mention. Unpaginated.
    pub fn ranked_hits(&self, qid: &str, thresholds: &Thresholds) -> Vec<Hit> {
        let weights = &self.config.weights;
        let mut hits: Vec<Hit> = self
            .postings(qid)
            .iter()
            .filter_map(|p| {
                let passing: Vec<&PostingMention> =
                    p.mentions.iter().filter(|m| thresholds.passes(&m.scores)).collect();
                if passing.is_empty() {
                    return None;
                }
                let chunk = self.chunk(p.chunk_id)?;
                let rank_score = rank_chunk(passing.iter().map(|m| &m.scores), weights);
                let matches = passing
                    .iter()
                    .map(|pm| {
                        let cm = &chunk.mentions[pm.mention as usize];
                        MatchedMention {
                            start: cm.char_start,
                            end: cm.char_end,
                            qid: Qid::from(qid),
                            scores: pm.scores,
                        }
                    })
                    .collect();
                Some(Hit {
                    chunk_id: p.chunk_id,
                    rank_score,
                    matches,
                })
            })
            .collect();
        hits.sort_by(|a, b| {
            b.rank_score
                .total_cmp(&a.rank_score)
                .then(a.chunk_id.cmp(&b.chunk_id))
        });
        hits
    }

    /// Threshold-filtered, ranked, paginated entity retrieval. Unknown QIDs
    /// give an empty result.
    pub fn query_entity(&self, spec: &QuerySpec) -> Result<QueryResult> {
        spec.validate()?;
        let hits = self.ranked_hits(spec.qid.as_str(), &spec.thresholds);
        let limit = spec.limit.min(MAX_LIMIT);
        Ok(QueryResult {
            total: hits.len(),
            hits: hits.into_iter().skip(spec.offset).take(limit).collect(),
        })
    }

    /// Sorted ids of chunks matching `qid`. `None` thresholds accept every
    /// candidate regardless of its scores.
    pub fn chunk_ids(&self, qid: &str, thresholds: Option<&Thresholds>) -> Vec<u64> {
        let mut ids: Vec<u64> = self
            .postings(qid)
            .iter()
            .filter(|p| thresholds.is_none_or(|t| p.mentions.iter().any(|m| t.passes(&m.scores))))
            .map(|p| p.chunk_id)
            .collect();
        ids.sort_unstable();
        ids
    }

    /// String-search baseline over chunk texts, ordered by (match count desc,
    /// chunk id asc). `limit = None` returns every hit.
    pub fn query_string(
        &self,
        mode: StringMode,
        entity: &EntityRef,
        limit: Option<usize>,
        word_boundary: bool,
    ) -> StringResult {
        let names = entity.match_names(mode.expanded);
        let mut hits: Vec<StringHit> = self
            .chunks
            .par_iter()
            .zip(&self.folded)
            .filter_map(|(c, folded)| {
                let spans = match_spans(&c.text, folded, &names, mode.case_sensitive, word_boundary);
                (!spans.is_empty()).then_some(StringHit {
                    chunk_id: c.chunk_id,
                    match_count: spans.len(),
                    spans,
                })
            })
            .collect();
        hits.sort_by(|a, b| b.match_count.cmp(&a.match_count).then(a.chunk_id.cmp(&b.chunk_id)));
        let total = hits.len();
        if let Some(k) = limit {
            hits.truncate(k);
        }
        StringResult { total, hits }
    }

    /// Union of the (epoch, step) pairs of every chunk retrieved for `qid`.
    pub fn steps_for_entity(&self, qid: &str, thresholds: &Thresholds) -> Vec<(u32, u64)> {
        let mut out: Vec<(u32, u64)> = self
            .chunk_ids(qid, Some(thresholds))
            .into_iter()
            .flat_map(|c| self.steps.steps_for_chunk(c).iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Number of chunks retrieved for both QIDs under the same thresholds.
    pub fn cooccur_count(&self, a: &str, b: &str, thresholds: Option<&Thresholds>) -> usize {
        let xs = self.chunk_ids(a, thresholds);
        let ys = self.chunk_ids(b, thresholds);
        sorted_intersection_len(&xs, &ys)
    }
}

pub fn sorted_intersection_len(xs: &[u64], ys: &[u64]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < xs.len() && j < ys.len() {
        match xs[i].cmp(&ys[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunker::{assign_steps, EpochOrder, StepAssignment};
    use crate::model::{CandidateScore, ChunkMention};

    fn mention(start: usize, end: usize, cands: Vec<CandidateScore>) -> ChunkMention {
        ChunkMention {
            start: 0,
            end: 1,
            char_start: start,
            char_end: end,
            candidates: cands,
            cluster_id: None,
        }
    }

    fn el(qid: &str, v: f32) -> CandidateScore {
        CandidateScore::new(qid, Scores { el: Some(v), ..Scores::default() })
    }

    fn chunk(id: u64, text: &str, mentions: Vec<ChunkMention>) -> Chunk {
        Chunk {
            chunk_id: id,
            doc_id: format!("d{id}"),
            token_ids: vec![1; 4],
            content_len: 4,
            mentions,
            text: text.to_string(),
        }
    }

    fn fixture() -> Index {
        let chunks = vec![
            chunk(0, "The Bills won.", vec![mention(4, 9, vec![CandidateScore::new("Q1", Scores::hyperlink())])]),
            chunk(1, "Buffalo, New York.", vec![mention(0, 7, vec![el("Q2", 0.98)])]),
            chunk(2, "the Bills again", vec![mention(4, 9, vec![el("Q1", 0.7), el("Q2", 0.65)])]),
            chunk(3, "weak", vec![mention(0, 4, vec![CandidateScore::new("Q1", Scores { c: Some(0.5), ..Scores::default() })])]),
        ];
        let steps = assign_steps(&[0, 1, 2, 3], 2, &[EpochOrder::Identity]).unwrap();
        Index::build(
            chunks,
            vec![EntityRef::new("Q2", "Buffalo, New York").with_aliases(["The Queen City"])],
            vec![],
            steps,
            IndexConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn postings_count() {
        let idx = fixture();
        assert_eq!(idx.postings("Q1").len(), 3);
        assert_eq!(idx.postings("Q2").len(), 2);
    }

    #[test]
    fn thresholded_ranked_query() {
        let idx = fixture();
        let r = idx.query_entity(&QuerySpec::new("Q1", Thresholds::default())).unwrap();
        assert_eq!(r.total, 2);
        assert_eq!(r.hits.iter().map(|h| h.chunk_id).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(r.hits[0].rank_score, 1.0);
        assert_eq!(r.hits[0].matches[0].start, 4);
    }

    #[test]
    fn unknown_qid_is_empty() {
        let idx = fixture();
        let r = idx.query_entity(&QuerySpec::new("Q999", Thresholds::default())).unwrap();
        assert_eq!(r, QueryResult::default());
    }

    #[test]
    fn pagination_concatenates() {
        let idx = fixture();
        let all = idx.query_entity(&QuerySpec::new("Q1", Thresholds::default()).page(10, 0)).unwrap();
        let p1 = idx.query_entity(&QuerySpec::new("Q1", Thresholds::default()).page(1, 0)).unwrap();
        let p2 = idx.query_entity(&QuerySpec::new("Q1", Thresholds::default()).page(1, 1)).unwrap();
        assert_eq!(p1.total, 2);
        assert_eq!([p1.hits, p2.hits].concat(), all.hits);
    }

    #[test]
    fn empty_index() {
        let idx = Index::build(vec![], vec![], vec![], StepMap::default(), IndexConfig::default()).unwrap();
        assert_eq!(idx.query_entity(&QuerySpec::new("Q1", Thresholds::default())).unwrap().total, 0);
        assert_eq!(idx.cooccur_count("Q1", "Q2", None), 0);
    }

    #[test]
    fn duplicate_chunk_rejected() {
        let err = Index::build(
            vec![chunk(5, "a", vec![]), chunk(5, "b", vec![])],
            vec![],
            vec![],
            StepMap::default(),
            IndexConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateChunk(5)));
    }

    #[test]
    fn cooccurrence_and_steps() {
        let idx = fixture();
        let t = Thresholds::default();
        assert_eq!(idx.cooccur_count("Q1", "Q2", Some(&t)), 1);
        assert_eq!(idx.cooccur_count("Q2", "Q1", Some(&t)), 1);
        assert_eq!(idx.cooccur_count("Q1", "Q1", Some(&t)), 2);
        assert_eq!(idx.cooccur_count("Q1", "Q1", None), 3);
        assert_eq!(idx.steps_for_entity("Q1", &t), vec![(0, 0), (0, 1)]);
        assert_eq!(idx.steps_for_entity("Q404", &t), vec![]);
    }

    #[test]
    fn multi_epoch_steps_union() {
        let steps = StepMap::from_assignments(vec![
            StepAssignment { chunk_id: 3, epoch: 0, step: 1 },
            StepAssignment { chunk_id: 7, epoch: 0, step: 3 },
            StepAssignment { chunk_id: 3, epoch: 1, step: 0 },
            StepAssignment { chunk_id: 7, epoch: 1, step: 0 },
        ]);
        let hl = vec![mention(0, 1, vec![CandidateScore::new("Q5", Scores::hyperlink())])];
        let idx = Index::build(
            vec![chunk(3, "x", hl.clone()), chunk(7, "y", hl)],
            vec![],
            vec![],
            steps,
            IndexConfig::default(),
        )
        .unwrap();
        assert_eq!(idx.steps_for_entity("Q5", &Thresholds::default()), vec![(0, 1), (0, 3), (1, 0)]);
    }

    #[test]
    fn string_modes() {
        let idx = fixture();
        let e = idx.entity("Q2").unwrap().clone();
        let ci = idx.query_string(StringMode::CI_CANONICAL, &e, None, false);
        assert_eq!(ci.hits.len(), 1);
        assert_eq!(ci.hits[0].spans, vec![(0, 17)]);
        let lower = EntityRef::new("Q2", "buffalo, new york");
        assert_eq!(idx.query_string(StringMode::CS_CANONICAL, &lower, None, false).total, 0);
        assert_eq!(idx.query_string(StringMode::CI_CANONICAL, &lower, None, false).total, 1);
    }
}
