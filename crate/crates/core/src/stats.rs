//! Corpus statistics over a built index.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::index::Index;
use crate::model::{Chunk, Qid};

/// Entities bucketed by hyperlink mention count.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperlinkBins {
    pub h_eq_1: usize,
    pub h_1_to_10: usize,
    pub h_10_to_100: usize,
    pub h_100_to_1k: usize,
    pub h_over_1k: usize,
}

impl HyperlinkBins {
    pub fn add(&mut self, h: u64) {
        match h {
            0 => {}
            1 => self.h_eq_1 += 1,
            2..=10 => self.h_1_to_10 += 1,
            11..=100 => self.h_10_to_100 += 1,
            101..=1000 => self.h_100_to_1k += 1,
            _ => self.h_over_1k += 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    /// Non-pad tokens across all chunks.
    pub tokens: u64,
    pub chunks: usize,
    /// Distinct QIDs with at least one candidate mention.
    pub entities: usize,
    /// Steps per epoch.
    pub steps: u64,
    pub epochs: u32,
    pub total_mentions: u64,
    /// Mentions carrying at least one score of the given kind.
    pub hyperlink_mentions: u64,
    pub entity_linking_mentions: u64,
    pub coref_mentions: u64,
    pub cluster_mentions: u64,
    pub entities_by_hyperlinks: HyperlinkBins,
}

/// Hyperlink mention count per QID, including zeros for entities that only
/// appear through other sources.
pub fn hyperlink_counts(chunks: &[Chunk]) -> BTreeMap<Qid, u64> {
    let mut out: BTreeMap<Qid, u64> = BTreeMap::new();
    for m in chunks.iter().flat_map(|c| &c.mentions) {
        for cand in &m.candidates {
            *out.entry(cand.qid.clone()).or_default() += u64::from(cand.scores.h.is_some());
        }
    }
    out
}

impl CorpusStats {
    pub fn from_chunks(chunks: &[Chunk], steps_per_epoch: u64, epochs: u32) -> Self {
        let mut s = CorpusStats {
            chunks: chunks.len(),
            steps: steps_per_epoch,
            epochs,
            ..Default::default()
        };
        for c in chunks {
            s.tokens += c.content_len as u64;
            for m in &c.mentions {
                s.total_mentions += 1;
                let any = |f: fn(&crate::model::Scores) -> bool| m.candidates.iter().any(|c| f(&c.scores));
                s.hyperlink_mentions += u64::from(any(|x| x.h.is_some()));
                s.entity_linking_mentions += u64::from(any(|x| x.el.is_some()));
                s.coref_mentions += u64::from(any(|x| x.c.is_some()));
                s.cluster_mentions += u64::from(any(|x| x.cc.is_some()));
            }
        }
        let counts = hyperlink_counts(chunks);
        s.entities = counts.len();
        for &h in counts.values() {
            s.entities_by_hyperlinks.add(h);
        }
        s
    }

    pub fn from_index(index: &Index) -> Self {
        let steps = index.steps();
        Self::from_chunks(index.chunks(), steps.steps_per_epoch, steps.epochs())
    }
}
