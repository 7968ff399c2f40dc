//! Tokenization and mention-preserving chunking.
//!
//! Chunks hold tokens from exactly one document. A chunk is packed greedily
//! up to its target length unless that would cut through a mention's tokens;
//! then it stops just before the mention and the remainder is padding.
//! Mentions whose token range alone exceeds the target length cannot be kept
//! whole and are dropped from both sides, with an entry in the drop report.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CharIndex, Chunk, ChunkMention, DocMention, Document, Mention};

/// Token ids plus per-token character offsets `[start, end)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub offsets: Vec<(usize, usize)>,
}

pub trait Tokenizer: Send + Sync {
    /// Offsets must be non-overlapping and non-decreasing.
    fn encode(&self, text: &str) -> Encoding;
    fn pad_token_id(&self) -> u32;
    fn description(&self) -> String;
}

/// Splits on Unicode whitespace. Ids are a stable hash of the token text into
/// `1..vocab_size`; id 0 is padding.
#[derive(Clone, Debug)]
pub struct WhitespaceTokenizer {
    pub vocab_size: u32,
}

impl Default for WhitespaceTokenizer {
    fn default() -> Self {
        WhitespaceTokenizer { vocab_size: 1 << 20 }
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl Tokenizer for WhitespaceTokenizer {
    fn encode(&self, text: &str) -> Encoding {
        let mut enc = Encoding::default();
        let mut start: Option<(usize, usize)> = None; // (char, byte)
        let mut chars = 0;
        for (b, ch) in text.char_indices() {
            if ch.is_whitespace() {
                if let Some((cs, bs)) = start.take() {
                    enc.ids.push(self.id_of(&text[bs..b]));
                    enc.offsets.push((cs, chars));
                }
            } else if start.is_none() {
                start = Some((chars, b));
            }
            chars += 1;
        }
        if let Some((cs, bs)) = start {
            enc.ids.push(self.id_of(&text[bs..]));
            enc.offsets.push((cs, chars));
        }
        enc
    }

    fn pad_token_id(&self) -> u32 {
        0
    }

    fn description(&self) -> String {
        format!("whitespace/fnv1a vocab={}", self.vocab_size)
    }
}

impl WhitespaceTokenizer {
    fn id_of(&self, token: &str) -> u32 {
        1 + (fnv1a(token) % (self.vocab_size.max(2) as u64 - 1)) as u32
    }
}

/// Target sequence length per chunk. A single entry is a fixed length; more
/// entries cycle over a document's chunks in order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqLenSchedule {
    pub lengths: Vec<usize>,
}

impl SeqLenSchedule {
    pub fn fixed(len: usize) -> Self {
        SeqLenSchedule { lengths: vec![len] }
    }

    pub fn len_for(&self, chunk_ordinal: usize) -> usize {
        self.lengths[chunk_ordinal % self.lengths.len()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengths.is_empty() || self.lengths.contains(&0) {
            return Err(Error::InvalidArgument("sequence lengths must be non-empty and ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    /// The mention's token range is longer than the chunk length.
    ExceedsSeqLen,
    /// The span covers no token (whitespace only).
    NoTokens,
    /// Partially overlapping mentions form a run no boundary can avoid.
    UnavoidableSplit,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedMention {
    pub doc_id: String,
    pub mention_index: usize,
    pub char_start: usize,
    pub char_end: usize,
    pub token_start: usize,
    pub token_end: usize,
    pub reason: DropReason,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkPlan {
    pub doc_id: String,
    /// `(token_start, token_end)` per chunk.
    pub boundaries: Vec<(usize, usize)>,
    /// Padded length per chunk.
    pub seq_lens: Vec<usize>,
    /// Token range per input mention; `None` for dropped mentions.
    pub mention_tokens: Vec<Option<(usize, usize)>>,
    pub drops: Vec<DroppedMention>,
}

/// Tokens whose offsets intersect the character span `[start, end)`.
pub fn mention_token_range(offsets: &[(usize, usize)], start: usize, end: usize) -> Option<(usize, usize)> {
    let first = offsets.partition_point(|&(_, te)| te <= start);
    let last = offsets.partition_point(|&(ts, _)| ts < end);
    (first < last).then_some((first, last))
}

/// Greedy left-to-right packing that never cuts a mention's token range.
pub fn plan_chunks(
    doc_id: &str,
    token_offsets: &[(usize, usize)],
    mention_spans: &[(usize, usize)],
    schedule: &SeqLenSchedule,
) -> Result<ChunkPlan> {
    schedule.validate()?;
    let n = token_offsets.len();
    let mut plan = ChunkPlan {
        doc_id: doc_id.to_string(),
        boundaries: Vec::new(),
        seq_lens: Vec::new(),
        mention_tokens: Vec::with_capacity(mention_spans.len()),
        drops: Vec::new(),
    };
    let record_drop = |plan: &mut ChunkPlan, i: usize, range: (usize, usize), reason| {
        plan.mention_tokens[i] = None;
        plan.drops.push(DroppedMention {
            doc_id: doc_id.to_string(),
            mention_index: i,
            char_start: mention_spans[i].0,
            char_end: mention_spans[i].1,
            token_start: range.0,
            token_end: range.1,
            reason,
        });
    };
    for (i, &(s, e)) in mention_spans.iter().enumerate() {
        let range = mention_token_range(token_offsets, s, e);
        plan.mention_tokens.push(range);
        if range.is_none() {
            record_drop(&mut plan, i, (0, 0), DropReason::NoTokens);
        }
    }
    // mentions ordered by token start for the straddle scan
    let mut order: Vec<usize> = (0..mention_spans.len())
        .filter(|&i| plan.mention_tokens[i].is_some())
        .collect();
    order.sort_by_key(|&i| plan.mention_tokens[i]);

    let mut pos = 0;
    let mut first_live = 0;
    while pos < n {
        let len = schedule.len_for(plan.boundaries.len());
        let full_end = (pos + len).min(n);
        let mut end = full_end;
        while first_live < order.len()
            && plan.mention_tokens[order[first_live]].is_none_or(|(_, me)| me <= pos)
        {
            first_live += 1;
        }
        loop {
            let mut cut: Option<usize> = None;
            for &i in &order[first_live..] {
                let Some((ms, me)) = plan.mention_tokens[i] else { continue };
                if ms >= end {
                    break;
                }
                if me > end {
                    if me - ms > len {
                        record_drop(&mut plan, i, (ms, me), DropReason::ExceedsSeqLen);
                        continue;
                    }
                    cut = Some(cut.map_or(ms, |c: usize| c.min(ms)));
                }
            }
            match cut {
                None => break,
                Some(ms) if ms > pos => end = ms,
                Some(_) => {
                    end = full_end;
                    for &i in &order[first_live..] {
                        if let Some((ms, me)) = plan.mention_tokens[i] {
                            if ms < end && me > end {
                                record_drop(&mut plan, i, (ms, me), DropReason::UnavoidableSplit);
                            }
                        }
                    }
                    break;
                }
            }
        }
        plan.boundaries.push((pos, end));
        plan.seq_lens.push(len);
        pos = end;
    }
    Ok(plan)
}

/// Builds padded chunks from a plan. Each chunk keeps the mentions whose
/// token range lies inside its content, re-based to chunk-local positions.
pub fn materialize_chunks(
    plan: &ChunkPlan,
    doc: &Document,
    encoding: &Encoding,
    mentions: &[Mention],
    pad_token_id: u32,
    first_chunk_id: u64,
) -> Vec<Chunk> {
    let idx = CharIndex::new(&doc.text);
    let mut chunks = Vec::with_capacity(plan.boundaries.len());
    for (k, (&(start, end), &seq_len)) in plan.boundaries.iter().zip(&plan.seq_lens).enumerate() {
        let mut token_ids = encoding.ids[start..end].to_vec();
        token_ids.resize(seq_len.max(end - start), pad_token_id);
        let char_start = encoding.offsets[start].0;
        let char_end = encoding.offsets[end - 1].1;
        let text = idx.slice(&doc.text, char_start, char_end).unwrap_or("").to_string();
        let mut chunk_mentions = Vec::new();
        for (m, range) in mentions.iter().zip(&plan.mention_tokens) {
            let Some((ms, me)) = *range else { continue };
            if ms >= start && me <= end {
                chunk_mentions.push(ChunkMention {
                    start: ms - start,
                    end: me - start,
                    char_start: m.span.start.max(char_start) - char_start,
                    char_end: m.span.end.min(char_end) - char_start,
                    candidates: m.candidates.clone(),
                    cluster_id: m.cluster_id.clone(),
                });
            }
        }
        chunks.push(Chunk {
            chunk_id: first_chunk_id + k as u64,
            doc_id: doc.doc_id.clone(),
            token_ids,
            content_len: end - start,
            mentions: chunk_mentions,
            text,
        });
    }
    chunks
}

#[derive(Clone, Debug, Default)]
pub struct ChunkedCorpus {
    pub chunks: Vec<Chunk>,
    pub drops: Vec<DroppedMention>,
    pub tokens: usize,
}

/// Tokenizes and chunks every document; chunk ids follow document order.
pub fn chunk_corpus(
    documents: &[Document],
    mentions: &[DocMention],
    tokenizer: &dyn Tokenizer,
    schedule: &SeqLenSchedule,
) -> Result<ChunkedCorpus> {
    schedule.validate()?;
    let mut by_doc: HashMap<&str, Vec<Mention>> = HashMap::new();
    for m in mentions {
        by_doc.entry(m.doc_id.as_str()).or_default().push(m.mention.clone());
    }
    let planned: Vec<(Encoding, ChunkPlan)> = documents
        .par_iter()
        .map(|d| {
            let enc = tokenizer.encode(&d.text);
            let spans: Vec<(usize, usize)> = by_doc
                .get(d.doc_id.as_str())
                .map(|ms| ms.iter().map(|m| (m.span.start, m.span.end)).collect())
                .unwrap_or_default();
            let plan = plan_chunks(&d.doc_id, &enc.offsets, &spans, schedule)?;
            Ok((enc, plan))
        })
        .collect::<Result<_>>()?;

    let mut first_ids = Vec::with_capacity(documents.len());
    let mut next = 0u64;
    for (_, plan) in &planned {
        first_ids.push(next);
        next += plan.boundaries.len() as u64;
    }
    let pad = tokenizer.pad_token_id();
    let per_doc: Vec<Vec<Chunk>> = documents
        .par_iter()
        .zip(&planned)
        .zip(&first_ids)
        .map(|((d, (enc, plan)), &first)| {
            let empty = Vec::new();
            let ms = by_doc.get(d.doc_id.as_str()).unwrap_or(&empty);
            materialize_chunks(plan, d, enc, ms, pad, first)
        })
        .collect();

    let mut out = ChunkedCorpus::default();
    for ((enc, plan), chunks) in planned.into_iter().zip(per_doc) {
        out.tokens += enc.ids.len();
        out.drops.extend(plan.drops);
        out.chunks.extend(chunks);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpochOrder {
    Identity,
    Shuffled(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StepAssignment {
    pub chunk_id: u64,
    pub epoch: u32,
    pub step: u64,
}

/// Chunk ↔ training-step mapping for every epoch.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StepMap {
    pub steps_per_epoch: u64,
    /// Per epoch, in batch order.
    pub assignments: Vec<StepAssignment>,
    by_chunk: HashMap<u64, Vec<(u32, u64)>>,
    by_step: BTreeMap<(u32, u64), Vec<u64>>,
}

impl StepMap {
    pub fn from_assignments(mut assignments: Vec<StepAssignment>) -> Self {
        assignments.sort_by_key(|a| (a.epoch, a.step));
        let mut map = StepMap {
            steps_per_epoch: assignments.iter().map(|a| a.step + 1).max().unwrap_or(0),
            ..Default::default()
        };
        for a in &assignments {
            map.by_chunk.entry(a.chunk_id).or_default().push((a.epoch, a.step));
            map.by_step.entry((a.epoch, a.step)).or_default().push(a.chunk_id);
        }
        map.assignments = assignments;
        map
    }

    pub fn steps_for_chunk(&self, chunk_id: u64) -> &[(u32, u64)] {
        self.by_chunk.get(&chunk_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn chunks_for_step(&self, epoch: u32, step: u64) -> &[u64] {
        self.by_step.get(&(epoch, step)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn epochs(&self) -> u32 {
        self.assignments.iter().map(|a| a.epoch + 1).max().unwrap_or(0)
    }

    /// Step counted from the start of training across epochs.
    pub fn global_step(&self, epoch: u32, step: u64) -> u64 {
        epoch as u64 * self.steps_per_epoch + step
    }

    /// `chunk_id<TAB>epoch<TAB>step` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for a in &self.assignments {
            out.push_str(&format!("{}\t{}\t{}\n", a.chunk_id, a.epoch, a.step));
        }
        out
    }

    pub fn from_tsv_rows(rows: &[Vec<String>]) -> Result<Self> {
        let mut assignments = Vec::with_capacity(rows.len());
        for r in rows {
            let parse = |s: &str| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|e| Error::Corrupt(format!("bad steps row {r:?}: {e}")))
            };
            if r.len() < 3 {
                return Err(Error::Corrupt(format!("bad steps row {r:?}")));
            }
            assignments.push(StepAssignment {
                chunk_id: parse(&r[0])?,
                epoch: parse(&r[1])? as u32,
                step: parse(&r[2])?,
            });
        }
        Ok(StepMap::from_assignments(assignments))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        StepMap::from_tsv_rows(&crate::io::read_tsv(path, 3)?)
    }
}

/// One permutation per epoch; `step = position / batch_size`.
pub fn assign_steps(chunk_ids: &[u64], batch_size: usize, orders: &[EpochOrder]) -> Result<StepMap> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be ≥ 1".into()));
    }
    let mut sorted = chunk_ids.to_vec();
    sorted.sort_unstable();
    let mut assignments = Vec::with_capacity(sorted.len() * orders.len());
    for (epoch, order) in orders.iter().enumerate() {
        let mut perm = sorted.clone();
        if let EpochOrder::Shuffled(seed) = order {
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
        }
        for (pos, chunk_id) in perm.into_iter().enumerate() {
            assignments.push(StepAssignment {
                chunk_id,
                epoch: epoch as u32,
                step: (pos / batch_size) as u64,
            });
        }
    }
    Ok(StepMap::from_assignments(assignments))
}

/// Shuffled orders for `epochs` epochs. Missing seeds continue from the last
/// given seed (`last + 1`, `last + 2`, ...); no seeds starts from 0.
pub fn epoch_orders(epochs: usize, seeds: &[u64]) -> Vec<EpochOrder> {
    (0..epochs)
        .map(|e| {
            let seed = match seeds.get(e) {
                Some(s) => *s,
                None => seeds.last().map_or(e as u64, |l| l + (e + 1 - seeds.len()) as u64),
            };
            EpochOrder::Shuffled(seed)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CandidateScore, MentionSpan, Scores};
    use proptest::prelude::*;

    /// Offsets for `n` single-character tokens separated by spaces.
    fn offsets(n: usize) -> Vec<(usize, usize)> {
        (0..n).map(|i| (2 * i, 2 * i + 1)).collect()
    }

    /// Character span covering tokens `[a, b)` of [`offsets`].
    fn span(a: usize, b: usize) -> (usize, usize) {
        (2 * a, 2 * (b - 1) + 1)
    }

    #[test]
    fn terminates_before_mention() {
        // mention over tokens 4..=6
        let plan = plan_chunks("d", &offsets(10), &[span(4, 7)], &SeqLenSchedule::fixed(6)).unwrap();
        assert_eq!(plan.boundaries, vec![(0, 4), (4, 10)]);
        assert!(plan.drops.is_empty());
    }

    #[test]
    fn short_document_single_chunk() {
        let plan = plan_chunks("d", &offsets(4), &[], &SeqLenSchedule::fixed(6)).unwrap();
        assert_eq!(plan.boundaries, vec![(0, 4)]);
    }

    #[test]
    fn oversized_mention_is_dropped() {
        let plan = plan_chunks("d", &offsets(10), &[span(0, 8)], &SeqLenSchedule::fixed(6)).unwrap();
        assert_eq!(plan.boundaries, vec![(0, 6), (6, 10)]);
        assert_eq!(plan.drops.len(), 1);
        assert_eq!(plan.drops[0].reason, DropReason::ExceedsSeqLen);
        assert_eq!(plan.mention_tokens[0], None);
    }

    #[test]
    fn partial_overlap_chain_is_reported() {
        // A = 0..4, B = 3..8, L = 6: cutting before B splits A, so B is dropped.
        let plan = plan_chunks("d", &offsets(10), &[span(0, 4), span(3, 8)], &SeqLenSchedule::fixed(6)).unwrap();
        assert_eq!(plan.boundaries, vec![(0, 6), (6, 10)]);
        assert_eq!(plan.drops.len(), 1);
        assert_eq!(plan.drops[0].mention_index, 1);
        assert_eq!(plan.drops[0].reason, DropReason::UnavoidableSplit);
    }

    #[test]
    fn whitespace_only_span_has_no_tokens() {
        let plan = plan_chunks("d", &offsets(3), &[(1, 2)], &SeqLenSchedule::fixed(6)).unwrap();
        assert_eq!(plan.drops[0].reason, DropReason::NoTokens);
    }

    #[test]
    fn nested_mentions_cut_at_outer() {
        let plan = plan_chunks("d", &offsets(12), &[span(3, 9), span(5, 7)], &SeqLenSchedule::fixed(6)).unwrap();
        assert_eq!(plan.boundaries, vec![(0, 3), (3, 9), (9, 12)]);
        assert!(plan.drops.is_empty());
    }

    #[test]
    fn cycling_schedule() {
        let plan = plan_chunks("d", &offsets(10), &[], &SeqLenSchedule { lengths: vec![2, 3] }).unwrap();
        assert_eq!(plan.boundaries, vec![(0, 2), (2, 5), (5, 7), (7, 10)]);
        assert_eq!(plan.seq_lens, vec![2, 3, 2, 3]);
    }

    #[test]
    fn materialize_rebases_mentions() {
        let doc = Document::new("d", "", "a b c d e f g h i j");
        let tok = WhitespaceTokenizer::default();
        let enc = tok.encode(&doc.text);
        let (s, e) = span(4, 7);
        let mention = Mention {
            span: MentionSpan::new(s, e, "e f g"),
            candidates: vec![CandidateScore::new("Q1", Scores::hyperlink())],
            cluster_id: None,
        };
        let plan = plan_chunks("d", &enc.offsets, &[(s, e)], &SeqLenSchedule::fixed(6)).unwrap();
        let chunks = materialize_chunks(&plan, &doc, &enc, &[mention], 0, 7);
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].chunk_id, 7);
        assert_eq!(chunks[0].content_len, 4);
        assert_eq!(&chunks[0].token_ids[4..], &[0, 0]);
        assert_eq!(chunks[0].text, "a b c d");
        assert!(chunks[0].mentions.is_empty());
        let m = &chunks[1].mentions[0];
        assert_eq!((m.start, m.end), (0, 3));
        assert_eq!(&chunks[1].text[m.char_start..m.char_end], "e f g");
    }

    #[test]
    fn empty_document_has_no_chunks() {
        let docs = vec![Document::new("d", "", "   ")];
        let out = chunk_corpus(&docs, &[], &WhitespaceTokenizer::default(), &SeqLenSchedule::fixed(4)).unwrap();
        assert!(out.chunks.is_empty());
    }

    #[test]
    fn whitespace_tokenizer_offsets_are_chars() {
        let enc = WhitespaceTokenizer::default().encode(" Zürich  is\tnice ");
        assert_eq!(enc.offsets, vec![(1, 7), (9, 11), (12, 16)]);
        assert!(enc.ids.iter().all(|&i| i != 0));
    }

    #[test]
    fn identity_steps() {
        let map = assign_steps(&[0, 1, 2, 3, 4], 2, &[EpochOrder::Identity]).unwrap();
        let steps: Vec<u64> = map.assignments.iter().map(|a| a.step).collect();
        assert_eq!(steps, vec![0, 0, 1, 1, 2]);
    }

    #[test]
    fn steps_per_epoch_is_ceiling() {
        let ids: Vec<u64> = (0..1000).collect();
        let map = assign_steps(&ids, 32, &[EpochOrder::Shuffled(1)]).unwrap();
        assert_eq!(map.steps_per_epoch, 32);
    }

    #[test]
    fn seeded_shuffle_is_reproducible() {
        let ids: Vec<u64> = (0..50).collect();
        let a = assign_steps(&ids, 4, &epoch_orders(3, &[9])).unwrap();
        let b = assign_steps(&ids, 4, &epoch_orders(3, &[9])).unwrap();
        assert_eq!(a, b);
        let e0: Vec<u64> = a.assignments.iter().filter(|x| x.epoch == 0).map(|x| x.chunk_id).collect();
        let e1: Vec<u64> = a.assignments.iter().filter(|x| x.epoch == 1).map(|x| x.chunk_id).collect();
        assert_ne!(e0, e1);
    }

    #[test]
    fn zero_batch_rejected() {
        assert!(assign_steps(&[1], 0, &[EpochOrder::Identity]).is_err());
    }

    #[test]
    fn epoch_seed_defaults() {
        assert_eq!(
            epoch_orders(3, &[5]),
            vec![EpochOrder::Shuffled(5), EpochOrder::Shuffled(6), EpochOrder::Shuffled(7)]
        );
        assert_eq!(epoch_orders(2, &[]), vec![EpochOrder::Shuffled(0), EpochOrder::Shuffled(1)]);
    }

    proptest! {
        #[test]
        fn steps_bijective_and_inverse(n in 0usize..200, batch in 1usize..17, seeds in proptest::collection::vec(any::<u64>(), 1..4)) {
            let ids: Vec<u64> = (0..n as u64).map(|i| i * 3 + 1).collect();
            let map = assign_steps(&ids, batch, &epoch_orders(seeds.len(), &seeds)).unwrap();
            for e in 0..seeds.len() as u32 {
                let mut seen: Vec<u64> = map.assignments.iter().filter(|a| a.epoch == e).map(|a| a.chunk_id).collect();
                seen.sort();
                prop_assert_eq!(&seen, &ids);
            }
            for a in &map.assignments {
                prop_assert!(map.chunks_for_step(a.epoch, a.step).contains(&a.chunk_id));
                prop_assert!(map.steps_for_chunk(a.chunk_id).contains(&(a.epoch, a.step)));
            }
            let back = StepMap::from_tsv_rows(&map.to_tsv().lines().map(|l| l.split('\t').map(str::to_string).collect()).collect::<Vec<_>>()).unwrap();
            prop_assert_eq!(back, map);
        }

        #[test]
        fn plan_never_splits_kept_mentions(
            n in 0usize..120,
            len in 1usize..12,
            raw in proptest::collection::vec((0usize..120, 1usize..15), 0..10),
        ) {
            let offs = offsets(n);
            let spans: Vec<(usize, usize)> = raw.iter()
                .filter(|(s, _)| *s < n)
                .map(|&(s, l)| span(s, (s + l).min(n)))
                .collect();
            let plan = plan_chunks("d", &offs, &spans, &SeqLenSchedule::fixed(len)).unwrap();
            let mut expect = 0;
            for &(s, e) in &plan.boundaries {
                prop_assert_eq!(s, expect);
                prop_assert!(e > s && e - s <= len);
                expect = e;
            }
            prop_assert_eq!(expect, n);
            for range in plan.mention_tokens.iter().flatten() {
                prop_assert!(plan.boundaries.iter().any(|&(s, e)| s <= range.0 && range.1 <= e));
            }
            prop_assert_eq!(plan.drops.len(), plan.mention_tokens.iter().filter(|r| r.is_none()).count());
        }
    }
}
