//! On-disk index layout.
//!
//! ```text
//! <dir>/manifest.json     format, content hashes, config, counts
//! <dir>/postings.bin      qid-sorted postings; chunk ids delta + LEB128, scores f32 LE
//! <dir>/chunks.idx        u64 LE chunk count, then count+1 byte offsets into chunks.dat
//! <dir>/chunks.dat        one JSON chunk per record
//! <dir>/entities.tsv      qid, canonical name, aliases
//! <dir>/descriptions.tsv  qid, description
//! <dir>/steps.tsv         chunk_id, epoch, step
//! ```
//!
//! Nothing in the layout depends on wall-clock time or hash-map order, so
//! identical inputs produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Index, IndexConfig, PostingMention, PostingsEntry, RankWeights, Thresholds};
use crate::chunker::StepMap;
use crate::error::{Error, Result};
use crate::io::{entities_tsv, read_descriptions, read_entities, read_json, write_bytes, write_json_pretty};
use crate::model::{Chunk, Qid, Scores};

pub const MANIFEST_FILE: &str = "manifest.json";
const POSTINGS_FILE: &str = "postings.bin";
const CHUNK_INDEX_FILE: &str = "chunks.idx";
const CHUNK_DATA_FILE: &str = "chunks.dat";
const ENTITIES_FILE: &str = "entities.tsv";
const DESCRIPTIONS_FILE: &str = "descriptions.tsv";
const STEPS_FILE: &str = "steps.tsv";

const FORMAT: &str = "entmark-index/1";
const POSTINGS_MAGIC: &[u8; 8] = b"EMPOST01";
const CHUNKS_MAGIC: &[u8; 8] = b"EMCHNK01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexCounts {
    pub chunks: usize,
    pub qids: usize,
    pub postings: usize,
    pub mentions: usize,
    pub entities: usize,
    pub step_assignments: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub format: String,
    pub corpus_hash: String,
    pub postings_hash: String,
    pub thresholds: Thresholds,
    pub weights: RankWeights,
    pub counts: IndexCounts,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, what: &str) -> Error {
        Error::Corrupt(format!("{POSTINGS_FILE}: {what} at byte {}", self.pos))
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(self.corrupt("unexpected end of data"));
        };
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn varint(&mut self) -> Result<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.bytes(1)?[0];
            v |= ((b & 0x7f) as u64) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(self.corrupt("varint overflow"))
    }

    fn f32(&mut self) -> Result<f32> {
        let b = self.bytes(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub(super) fn encode_postings(postings: &BTreeMap<Qid, Vec<PostingsEntry>>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(POSTINGS_MAGIC);
    put_varint(&mut out, postings.len() as u64);
    for (qid, list) in postings {
        put_varint(&mut out, qid.as_str().len() as u64);
        out.extend_from_slice(qid.as_str().as_bytes());
        put_varint(&mut out, list.len() as u64);
        let mut by_chunk: Vec<&PostingsEntry> = list.iter().collect();
        by_chunk.sort_by_key(|p| p.chunk_id);
        let mut prev = 0u64;
        for p in by_chunk {
            put_varint(&mut out, p.chunk_id - prev);
            prev = p.chunk_id;
            out.extend_from_slice(&p.rank_score.to_le_bytes());
            put_varint(&mut out, p.mentions.len() as u64);
            for m in &p.mentions {
                put_varint(&mut out, m.mention as u64);
                let scores = m.scores.as_array();
                let mask = scores
                    .iter()
                    .enumerate()
                    .fold(0u8, |acc, (i, s)| if s.is_some() { acc | (1 << i) } else { acc });
                out.push(mask);
                for v in scores.into_iter().flatten() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    out
}

pub(super) fn decode_postings(buf: &[u8]) -> Result<BTreeMap<Qid, Vec<PostingsEntry>>> {
    let mut r = Reader { buf, pos: 0 };
    if r.bytes(8)? != POSTINGS_MAGIC {
        return Err(r.corrupt("bad magic"));
    }
    let n_qids = r.varint()?;
    let mut out = BTreeMap::new();
    for _ in 0..n_qids {
        let len = r.varint()? as usize;
        let qid = std::str::from_utf8(r.bytes(len)?).map_err(|_| r.corrupt("qid is not utf-8"))?;
        let qid = Qid::from(qid);
        let n = r.varint()? as usize;
        let mut list = Vec::with_capacity(n);
        let mut chunk_id = 0u64;
        for _ in 0..n {
            chunk_id = chunk_id
                .checked_add(r.varint()?)
                .ok_or_else(|| r.corrupt("chunk id overflow"))?;
            let rank_score = r.f32()?;
            let n_mentions = r.varint()? as usize;
            let mut mentions = Vec::with_capacity(n_mentions);
            for _ in 0..n_mentions {
                let mention = r.varint()? as u32;
                let mask = r.bytes(1)?[0];
                let mut scores = [None; 4];
                for (i, slot) in scores.iter_mut().enumerate() {
                    if mask & (1 << i) != 0 {
                        *slot = Some(r.f32()?);
                    }
                }
                mentions.push(PostingMention {
                    mention,
                    scores: Scores::from_array(scores),
                });
            }
            list.push(PostingsEntry {
                chunk_id,
                mentions,
                rank_score,
            });
        }
        out.insert(qid, list);
    }
    if r.pos != buf.len() {
        return Err(r.corrupt("trailing bytes"));
    }
    Ok(out)
}

fn encode_chunks(chunks: &[Chunk]) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut data = Vec::new();
    let mut offsets = Vec::with_capacity(chunks.len() + 1);
    for c in chunks {
        offsets.push(data.len() as u64);
        serde_json::to_writer(&mut data, c)?;
        data.push(b'\n');
    }
    offsets.push(data.len() as u64);
    let mut idx = Vec::with_capacity(16 + 8 * offsets.len());
    idx.extend_from_slice(CHUNKS_MAGIC);
    idx.extend_from_slice(&(chunks.len() as u64).to_le_bytes());
    for o in offsets {
        idx.extend_from_slice(&o.to_le_bytes());
    }
    Ok((idx, data))
}

fn decode_chunks(idx: &[u8], data: &[u8]) -> Result<Vec<Chunk>> {
    let corrupt = |m: &str| Error::Corrupt(format!("{CHUNK_INDEX_FILE}: {m}"));
    if idx.len() < 16 || &idx[..8] != CHUNKS_MAGIC {
        return Err(corrupt("bad header"));
    }
    let word = |i: usize| u64::from_le_bytes(idx[i..i + 8].try_into().expect("8 bytes")) as usize;
    let n = word(8);
    if idx.len() != 16 + 8 * (n + 1) {
        return Err(corrupt("offset table length mismatch"));
    }
    let mut chunks = Vec::with_capacity(n);
    for k in 0..n {
        let (s, e) = (word(16 + 8 * k), word(24 + 8 * k));
        if s > e || e > data.len() {
            return Err(corrupt("offset out of range"));
        }
        chunks.push(serde_json::from_slice(&data[s..e])?);
    }
    Ok(chunks)
}

impl Index {
    fn manifest_for(&self, corpus_hash: String, postings_hash: String) -> IndexManifest {
        IndexManifest {
            format: FORMAT.to_string(),
            corpus_hash,
            postings_hash,
            thresholds: self.config.default_thresholds,
            weights: self.config.weights,
            counts: IndexCounts {
                chunks: self.chunks.len(),
                qids: self.postings.len(),
                postings: self.postings.values().map(Vec::len).sum(),
                mentions: self.chunks.iter().map(|c| c.mentions.len()).sum(),
                entities: self.entities.len(),
                step_assignments: self.steps.assignments.len(),
            },
        }
    }

    /// Writes the index directory. Every file is written atomically; the
    /// manifest goes last.
    pub fn save(&self, dir: &Path) -> Result<IndexManifest> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let postings = encode_postings(&self.postings);
        let (chunk_idx, chunk_data) = encode_chunks(&self.chunks)?;
        write_bytes(&dir.join(POSTINGS_FILE), &postings)?;
        write_bytes(&dir.join(CHUNK_INDEX_FILE), &chunk_idx)?;
        write_bytes(&dir.join(CHUNK_DATA_FILE), &chunk_data)?;
        let entities: Vec<_> = self.entities.values().cloned().collect();
        write_bytes(&dir.join(ENTITIES_FILE), entities_tsv(&entities).as_bytes())?;
        let mut desc = String::new();
        for (q, d) in &self.descriptions {
            desc.push_str(&format!("{q}\t{}\n", d.replace(['\t', '\n'], " ")));
        }
        write_bytes(&dir.join(DESCRIPTIONS_FILE), desc.as_bytes())?;
        write_bytes(&dir.join(STEPS_FILE), self.steps.to_tsv().as_bytes())?;
        let manifest = self.manifest_for(sha256_hex(&chunk_data), sha256_hex(&postings));
        write_json_pretty(&dir.join(MANIFEST_FILE), &manifest)?;
        Ok(manifest)
    }

    /// Loads a committed index directory, verifying content hashes.
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest: IndexManifest = read_json(&dir.join(MANIFEST_FILE))?;
        if manifest.format != FORMAT {
            return Err(Error::Corrupt(format!("unsupported index format {:?}", manifest.format)));
        }
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read(&p).map_err(|e| Error::io(p, e))
        };
        let chunk_data = read(CHUNK_DATA_FILE)?;
        let postings_bytes = read(POSTINGS_FILE)?;
        if sha256_hex(&chunk_data) != manifest.corpus_hash {
            return Err(Error::Corrupt(format!("{CHUNK_DATA_FILE} does not match manifest hash")));
        }
        if sha256_hex(&postings_bytes) != manifest.postings_hash {
            return Err(Error::Corrupt(format!("{POSTINGS_FILE} does not match manifest hash")));
        }
        let chunks = decode_chunks(&read(CHUNK_INDEX_FILE)?, &chunk_data)?;
        let postings = decode_postings(&postings_bytes)?;
        let mention_counts: std::collections::HashMap<u64, usize> =
            chunks.iter().map(|c| (c.chunk_id, c.mentions.len())).collect();
        for (qid, list) in &postings {
            for p in list {
                let n = mention_counts.get(&p.chunk_id).copied().ok_or_else(|| {
                    Error::Corrupt(format!("postings for {qid} reference missing chunk {}", p.chunk_id))
                })?;
                if p.mentions.iter().any(|m| m.mention as usize >= n) {
                    return Err(Error::Corrupt(format!("postings for {qid} reference a missing mention")));
                }
            }
        }
        let entities = read_entities(&dir.join(ENTITIES_FILE))?;
        let descriptions = read_descriptions(&dir.join(DESCRIPTIONS_FILE))?;
        let steps = StepMap::load(&dir.join(STEPS_FILE))?;
        let config = IndexConfig {
            weights: manifest.weights,
            default_thresholds: manifest.thresholds,
        };
        Ok(Index::assemble(chunks, postings, entities, descriptions, steps, config))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn varint_edges() {
        for v in [0u64, 1, 127, 128, 300, u32::MAX as u64, u64::MAX] {
            let mut buf = Vec::new();
            put_varint(&mut buf, v);
            let mut r = Reader { buf: &buf, pos: 0 };
            assert_eq!(r.varint().unwrap(), v);
            assert_eq!(r.pos, buf.len());
        }
    }

    #[test]
    fn truncated_postings_are_corrupt() {
        let mut p = BTreeMap::new();
        p.insert(
            Qid::from("Q1"),
            vec![PostingsEntry {
                chunk_id: 9,
                mentions: vec![PostingMention { mention: 0, scores: Scores::hyperlink() }],
                rank_score: 1.0,
            }],
        );
        let bytes = encode_postings(&p);
        assert_eq!(decode_postings(&bytes).unwrap(), p);
        assert!(matches!(decode_postings(&bytes[..bytes.len() - 1]), Err(Error::Corrupt(_))));
    }

    fn arb_scores() -> impl Strategy<Value = Scores> {
        (
            proptest::option::of(Just(1.0f32)),
            proptest::option::of(0.0f32..=1.0),
            proptest::option::of(0.0f32..=1.0),
            proptest::option::of(0.0f32..=1.0),
        )
            .prop_map(|(h, el, c, cc)| Scores { h, el, c, cc })
    }

    proptest! {
        #[test]
        fn postings_round_trip(lists in proptest::collection::btree_map(
            "Q[0-9]{1,6}",
            proptest::collection::btree_map(0u64..1_000_000, (proptest::collection::vec((0u32..50, arb_scores()), 1..4), 0.0f32..=1.0), 1..20),
            0..10,
        )) {
            let postings: BTreeMap<Qid, Vec<PostingsEntry>> = lists.into_iter().map(|(q, entries)| {
                let list = entries.into_iter().map(|(chunk_id, (ms, rank_score))| PostingsEntry {
                    chunk_id,
                    mentions: ms.into_iter().map(|(mention, scores)| PostingMention { mention, scores }).collect(),
                    rank_score,
                }).collect();
                (Qid::from(q), list)
            }).collect();
            prop_assert_eq!(decode_postings(&encode_postings(&postings)).unwrap(), postings);
        }
    }
}
