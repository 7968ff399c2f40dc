//! Seeded synthetic corpora with known ground truth, for benchmarks and
//! end-to-end checks.
//!
//! Documents are lowercase filler with capitalized entity mentions drawn from
//! a Zipf-like popularity distribution. Some mentions are wiki links, the rest
//! carry EL scores in `[0.6, 1)`; a few also get a low-scoring wrong EL
//! candidate. Each entity's mentions in a document, plus an occasional "it",
//! form one coreference cluster.

use std::collections::HashMap;
use std::path::Path;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::chunker::Tokenizer;
use crate::config::Paths;
use crate::error::Result;
use crate::eval::TruthSpan;
use crate::io::{entities_tsv, write_bytes, write_jsonl};
use crate::model::{Chunk, Document, EntityRef, Qid, RawMention};
use crate::pipeline::RawDocument;

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub documents: usize,
    pub entities: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Probability that a word slot holds an entity mention.
    pub mention_rate: f64,
    /// Probability that a mention is written as a wiki link.
    pub link_rate: f64,
    /// Probability that an EL mention also lists a wrong, low-scoring entity.
    pub distractor_rate: f64,
    /// Zipf exponent of entity popularity.
    pub zipf: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            documents: 100,
            entities: 200,
            min_words: 50,
            max_words: 500,
            mention_rate: 0.05,
            link_rate: 0.4,
            distractor_rate: 0.2,
            zipf: 1.0,
            seed: 0,
        }
    }
}

/// A true mention in clean-document character offsets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrueMention {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub qid: Qid,
}

#[derive(Clone, Debug, Default)]
pub struct SynthCorpus {
    pub entities: Vec<EntityRef>,
    pub descriptions: Vec<(Qid, String)>,
    pub raw_documents: Vec<RawDocument>,
    /// What extraction should produce from `raw_documents`.
    pub documents: Vec<Document>,
    pub title_qid: Vec<(String, Qid)>,
    /// EL and coreference rows; hyperlink rows come from extraction.
    pub mentions: Vec<RawMention>,
    pub truth: Vec<TrueMention>,
}

const SYLLABLES: &[&str] = &[
    "ka", "lo", "ren", "vi", "to", "mar", "sel", "du", "bri", "zan", "qu", "fe", "no", "sha", "pel",
    "tor", "gu", "wen", "ix", "ol",
];

const FILLER: &[&str] = &[
    "the", "of", "and", "a", "in", "was", "is", "for", "on", "with", "as", "by", "from", "at",
    "river", "town", "played", "season", "founded", "built", "north", "record", "team", "city",
    "album", "school", "later", "during", "became", "known",
];

fn word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(SYLLABLES[rng.gen_range(0..SYLLABLES.len())]);
    }
    let mut c = w.chars();
    let first = c.next().map(|f| f.to_ascii_uppercase()).unwrap_or('X');
    std::iter::once(first).chain(c).collect()
}

fn make_entities(n: usize, rng: &mut ChaCha8Rng) -> Vec<EntityRef> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let first = word(rng, 2);
        let last = word(rng, 3);
        let name = format!("{first} {last}");
        if !seen.insert(name.clone()) {
            continue;
        }
        let qid = format!("Q{}", 1000 + out.len());
        out.push(EntityRef::new(qid, name).with_aliases([last]));
    }
    out
}

impl SynthCorpus {
    pub fn generate(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let entities = make_entities(cfg.entities.max(2), &mut rng);
        let weights: Vec<f64> = (1..=entities.len()).map(|r| 1.0 / (r as f64).powf(cfg.zipf)).collect();
        let popularity = WeightedIndex::new(&weights).expect("positive weights");

        let mut corpus = SynthCorpus {
            descriptions: entities
                .iter()
                .map(|e| (e.qid.clone(), format!("{} is a synthetic entity.", e.canonical_name)))
                .collect(),
            title_qid: entities.iter().map(|e| (e.canonical_name.clone(), e.qid.clone())).collect(),
            ..Default::default()
        };

        for d in 0..cfg.documents {
            let doc_id = format!("d{d}");
            let n_words = rng.gen_range(cfg.min_words..=cfg.max_words.max(cfg.min_words));
            let mut markup = String::new();
            let mut clean = String::new();
            let mut clean_len = 0usize; // chars
            let mut clusters: HashMap<usize, Vec<(usize, usize)>> = HashMap::new();
            let mut last_entity: Option<usize> = None;
            for w in 0..n_words {
                if w > 0 {
                    markup.push(' ');
                    clean.push(' ');
                    clean_len += 1;
                }
                if rng.gen_bool(cfg.mention_rate) {
                    let e = popularity.sample(&mut rng);
                    let ent = &entities[e];
                    let surface = if rng.gen_bool(0.8) { &ent.canonical_name } else { &ent.aliases[0] };
                    let (start, end) = (clean_len, clean_len + surface.chars().count());
                    clean.push_str(surface);
                    clean_len = end;
                    if rng.gen_bool(cfg.link_rate) {
                        markup.push_str(&format!("[[{}|{}]]", ent.canonical_name, surface));
                    } else {
                        markup.push_str(surface);
                        let score = rng.gen_range(0.6f32..1.0);
                        corpus.mentions.push(RawMention::entity_linking(&doc_id, start, end, ent.qid.as_str(), score));
                        if rng.gen_bool(cfg.distractor_rate) {
                            let mut other = popularity.sample(&mut rng);
                            if other == e {
                                other = (e + 1) % entities.len();
                            }
                            let low = rng.gen_range(0.05f32..0.4);
                            corpus.mentions.push(RawMention::entity_linking(
                                &doc_id,
                                start,
                                end,
                                entities[other].qid.as_str(),
                                low,
                            ));
                        }
                    }
                    corpus.truth.push(TrueMention { doc_id: doc_id.clone(), start, end, qid: ent.qid.clone() });
                    clusters.entry(e).or_default().push((start, end));
                    last_entity = Some(e);
                } else if let (Some(e), true) = (last_entity, rng.gen_bool(0.05)) {
                    markup.push_str("it");
                    clean.push_str("it");
                    clusters.entry(e).or_default().push((clean_len, clean_len + 2));
                    corpus.truth.push(TrueMention {
                        doc_id: doc_id.clone(),
                        start: clean_len,
                        end: clean_len + 2,
                        qid: entities[e].qid.clone(),
                    });
                    clean_len += 2;
                    last_entity = None;
                } else {
                    let f = FILLER[rng.gen_range(0..FILLER.len())];
                    markup.push_str(f);
                    clean.push_str(f);
                    clean_len += f.len();
                }
            }
            let mut cluster_keys: Vec<usize> = clusters.keys().copied().collect();
            cluster_keys.sort_unstable();
            for e in cluster_keys {
                let spans = &clusters[&e];
                if spans.len() < 2 {
                    continue;
                }
                let cid = format!("{doc_id}:{}", entities[e].qid);
                for &(s, t) in spans {
                    corpus.mentions.push(RawMention::coref(&doc_id, s, t, &cid));
                }
            }
            let title = format!("Document {d}");
            corpus.raw_documents.push(RawDocument { doc_id: doc_id.clone(), title: title.clone(), markup });
            corpus.documents.push(Document::new(doc_id, title, clean));
        }
        corpus.entities = entities;
        corpus
    }

    /// Writes raw documents, title map, annotator rows and entity tables to
    /// their configured locations.
    pub fn write_inputs(&self, paths: &Paths) -> Result<()> {
        write_jsonl(&paths.documents_raw(), &self.raw_documents)?;
        let mut titles = String::new();
        for (t, q) in &self.title_qid {
            titles.push_str(&format!("{t}\t{q}\n"));
        }
        write_bytes(&paths.title_qid(), titles.as_bytes())?;
        write_jsonl(&paths.mentions(), &self.mentions)?;
        write_bytes(&paths.entities(), entities_tsv(&self.entities).as_bytes())?;
        let mut desc = String::new();
        for (q, d) in &self.descriptions {
            desc.push_str(&format!("{q}\t{d}\n"));
        }
        write_bytes(&paths.descriptions(), desc.as_bytes())
    }

    pub fn write_truth(&self, path: &Path, spans: &[TruthSpan]) -> Result<()> {
        write_jsonl(path, spans)
    }
}

/// True mentions re-expressed in chunk-text offsets, for chunks produced by
/// `tokenizer` from `documents`. Mentions not wholly inside one chunk are
/// skipped.
pub fn chunk_truth(
    truth: &[TrueMention],
    chunks: &[Chunk],
    documents: &[Document],
    tokenizer: &dyn Tokenizer,
) -> Vec<TruthSpan> {
    let mut by_doc: HashMap<&str, Vec<&TrueMention>> = HashMap::new();
    for t in truth {
        by_doc.entry(t.doc_id.as_str()).or_default().push(t);
    }
    let docs: HashMap<&str, &Document> = documents.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let mut offsets_cache: HashMap<&str, (Vec<(usize, usize)>, usize)> = HashMap::new();
    let mut out = Vec::new();
    let mut sorted: Vec<&Chunk> = chunks.iter().collect();
    sorted.sort_by_key(|c| c.chunk_id);
    for c in sorted {
        let Some(doc) = docs.get(c.doc_id.as_str()) else { continue };
        let entry = offsets_cache
            .entry(c.doc_id.as_str())
            .or_insert_with(|| (tokenizer.encode(&doc.text).offsets, 0));
        let first = entry.1;
        entry.1 += c.content_len;
        if c.content_len == 0 {
            continue;
        }
        let cs = entry.0[first].0;
        let ce = entry.0[first + c.content_len - 1].1;
        for t in by_doc.get(c.doc_id.as_str()).into_iter().flatten() {
            if t.start >= cs && t.end <= ce {
                out.push(TruthSpan {
                    qid: t.qid.clone(),
                    chunk_id: c.chunk_id,
                    start: t.start - cs,
                    end: t.end - cs,
                });
            }
        }
    }
    out
}
