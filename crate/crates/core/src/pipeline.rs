//! File-to-file pipeline stages. Each stage reads its inputs from the paths in
//! a [`PipelineConfig`], writes its outputs atomically and returns a summary.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::chunker::{assign_steps, chunk_corpus, epoch_orders, StepMap, WhitespaceTokenizer};
use crate::config::{JudgeKind, PipelineConfig};
use crate::error::{Error, Result};
use crate::eval::{
    precision_at_k, stratified_sample, winmargin_distribution, with_concurrency, CachingJudge,
    CurvePoint, EntitySample, HttpJudge, Judge, Judgment, Method, OracleJudge, PrecisionAtK,
    ReplayJudge, WinRates,
};
use crate::facts::{acquisition_report, bins_from_edges, load_answers, load_facts, AcquisitionReport};
use crate::index::{Index, IndexManifest, Thresholds};
use crate::io::{read_descriptions, read_entities, read_jsonl, write_bytes, write_json_pretty, write_jsonl};
use crate::model::{
    clusters_from_raw, validate_raw, Chunk, DocMention, Document, Qid, RawMention, Source,
};
use crate::scoring::{score_corpus, ScoringReport};
use crate::stats::hyperlink_counts;
use crate::wikitext::{extract_hyperlinks, resolve_links, TitleQidMap, UnresolvedLink};

/// One row of `documents_raw.jsonl`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub doc_id: String,
    pub title: String,
    pub markup: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractReport {
    pub documents: usize,
    pub links: usize,
    pub resolved: usize,
    pub unresolved: Vec<UnresolvedLink>,
    pub warnings: usize,
}

/// Cleans markup and resolves links, per document in parallel.
pub fn extract_documents(
    raw: &[RawDocument],
    map: &TitleQidMap,
) -> (Vec<Document>, Vec<RawMention>, ExtractReport) {
    let per_doc: Vec<_> = raw
        .par_iter()
        .map(|r| {
            let ex = extract_hyperlinks(&r.markup);
            let res = resolve_links(&r.doc_id, &ex.links, map);
            let rows = res.raw_rows(&r.doc_id);
            (Document::new(r.doc_id.clone(), r.title.clone(), ex.clean_text), rows, ex.links.len(), ex.warnings.len(), res.unresolved)
        })
        .collect();
    let mut report = ExtractReport { documents: raw.len(), ..Default::default() };
    let mut docs = Vec::with_capacity(raw.len());
    let mut mentions = Vec::new();
    for (doc, rows, links, warnings, unresolved) in per_doc {
        report.links += links;
        report.resolved += rows.len();
        report.warnings += warnings;
        report.unresolved.extend(unresolved);
        docs.push(doc);
        mentions.extend(rows);
    }
    (docs, mentions, report)
}

/// `documents_raw.jsonl` + `title_qid.tsv` → `documents.jsonl`, with
/// hyperlink rows added to `mentions.jsonl`. Hyperlink rows already present
/// for the extracted documents are replaced, so re-running is idempotent.
pub fn run_extract(cfg: &PipelineConfig) -> Result<ExtractReport> {
    let p = &cfg.paths;
    let raw: Vec<RawDocument> = read_jsonl(&p.documents_raw())?;
    let map = TitleQidMap::load(&p.title_qid())?;
    let (docs, links, report) = extract_documents(&raw, &map);
    let mentions_path = p.mentions();
    let mut rows: Vec<RawMention> = if mentions_path.exists() {
        let ids: HashSet<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
        read_jsonl::<RawMention>(&mentions_path)?
            .into_iter()
            .filter(|m| !(m.source == Source::Hyperlink && ids.contains(m.doc_id.as_str())))
            .collect()
    } else {
        Vec::new()
    };
    rows.extend(links);
    write_jsonl(&p.documents(), &docs)?;
    write_jsonl(&mentions_path, &rows)?;
    info!(documents = report.documents, links = report.links, resolved = report.resolved, "extracted");
    Ok(report)
}

/// `documents.jsonl` + `mentions.jsonl` → `scored_mentions.jsonl`. Invalid raw
/// input is rejected before scoring.
pub fn run_score(cfg: &PipelineConfig) -> Result<ScoringReport> {
    let p = &cfg.paths;
    let docs: Vec<Document> = read_jsonl(&p.documents())?;
    let raw: Vec<RawMention> = read_jsonl(&p.mentions())?;
    let validation = validate_raw(&docs, &raw);
    if !validation.is_valid() {
        return Err(Error::Validation(validation.summary()));
    }
    let clusters = clusters_from_raw(&docs, &raw);
    let scored = score_corpus(&docs, &raw, &clusters)?;
    write_jsonl(&p.scored_mentions(), &scored.mentions)?;
    info!(mentions = scored.report.mentions, clusters = scored.report.clusters, "scored");
    Ok(scored.report)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkReport {
    pub tokenizer: String,
    pub chunks: usize,
    pub tokens: usize,
    pub dropped_mentions: usize,
    pub epochs: u32,
    pub steps_per_epoch: u64,
}

/// `documents.jsonl` + `scored_mentions.jsonl` → `chunks.jsonl`, `steps.tsv`
/// and `drops.jsonl`.
pub fn run_chunk(cfg: &PipelineConfig) -> Result<ChunkReport> {
    let p = &cfg.paths;
    let docs: Vec<Document> = read_jsonl(&p.documents())?;
    let mentions: Vec<DocMention> = read_jsonl(&p.scored_mentions())?;
    let tok = WhitespaceTokenizer { vocab_size: cfg.vocab_size };
    let corpus = chunk_corpus(&docs, &mentions, &tok, &cfg.schedule())?;
    let ids: Vec<u64> = corpus.chunks.iter().map(|c| c.chunk_id).collect();
    let steps = assign_steps(&ids, cfg.batch_size, &epoch_orders(cfg.epochs, &cfg.epoch_seeds))?;
    write_jsonl(&p.chunks(), &corpus.chunks)?;
    write_bytes(&p.steps(), steps.to_tsv().as_bytes())?;
    write_jsonl(&p.drops(), &corpus.drops)?;
    let report = ChunkReport {
        tokenizer: crate::chunker::Tokenizer::description(&tok),
        chunks: corpus.chunks.len(),
        tokens: corpus.tokens,
        dropped_mentions: corpus.drops.len(),
        epochs: steps.epochs(),
        steps_per_epoch: steps.steps_per_epoch,
    };
    info!(chunks = report.chunks, tokens = report.tokens, "chunked");
    Ok(report)
}

/// Builds the index from the chunk stage outputs and the entity tables.
/// `descriptions.tsv` is optional.
pub fn build_index(cfg: &PipelineConfig) -> Result<Index> {
    let p = &cfg.paths;
    let chunks: Vec<Chunk> = read_jsonl(&p.chunks())?;
    let steps = StepMap::load(&p.steps())?;
    let entities = read_entities(&p.entities())?;
    let desc_path = p.descriptions();
    let descriptions = if desc_path.exists() { read_descriptions(&desc_path)? } else { Vec::new() };
    Index::build(chunks, entities, descriptions, steps, cfg.index_config())
}

pub fn run_index(cfg: &PipelineConfig) -> Result<IndexManifest> {
    let index = build_index(cfg)?;
    let manifest = index.save(&cfg.paths.index_dir())?;
    info!(chunks = manifest.counts.chunks, "indexed");
    Ok(manifest)
}

/// extract (when raw documents exist) → score → chunk → index.
pub fn run_build(cfg: &PipelineConfig) -> Result<IndexManifest> {
    if cfg.paths.documents_raw().exists() {
        run_extract(cfg)?;
    }
    run_score(cfg)?;
    run_chunk(cfg)?;
    run_index(cfg)
}

// ---------------------------------------------------------------------------
// Evaluation

/// The configured judge behind a verdict cache, plus whether the cache should
/// be written back.
pub struct ConfiguredJudge {
    judge: CachingJudge<Box<dyn Judge>>,
    persist: bool,
}

impl ConfiguredJudge {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        let cache_path = cfg.paths.judgments();
        let cached = |required: bool| -> Result<Vec<Judgment>> {
            if required || cache_path.exists() {
                read_jsonl(&cache_path)
            } else {
                Ok(Vec::new())
            }
        };
        let (inner, rows, persist): (Box<dyn Judge>, _, _) = match cfg.judge.kind {
            JudgeKind::Replay => (Box::new(ReplayJudge::from_judgments(cached(true)?)), Vec::new(), false),
            JudgeKind::Http => {
                let endpoint = cfg.judge.endpoint.clone().ok_or_else(|| {
                    Error::InvalidArgument("judge.endpoint is required for the http judge".into())
                })?;
                (Box::new(HttpJudge::new(endpoint)), cached(false)?, true)
            }
            JudgeKind::Oracle => (Box::new(OracleJudge::load(&cfg.paths.truth())?), cached(false)?, true),
        };
        Ok(ConfiguredJudge { judge: CachingJudge::with_cache(inner, rows), persist })
    }

    pub fn judge(&self) -> &dyn Judge {
        &self.judge
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if self.persist {
            self.judge.save(path)?;
        }
        Ok(())
    }
}

fn methods(cfg: &PipelineConfig) -> Result<Vec<Method>> {
    cfg.eval.methods.iter().map(|m| Method::parse(m, cfg.thresholds)).collect()
}

/// Samples entities known to the entity table by hyperlink count.
pub fn sample_entities(cfg: &PipelineConfig, index: &Index) -> Result<EntitySample> {
    let mut counts = hyperlink_counts(index.chunks());
    counts.retain(|q, _| index.entity(q.as_str()).is_some());
    for e in index.entities() {
        counts.entry(e.qid.clone()).or_insert(0);
    }
    stratified_sample(&counts, &cfg.eval.bins, &cfg.eval.per_bin, cfg.eval.seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityPrecision {
    pub qid: Qid,
    pub bin: String,
    pub results: Vec<PrecisionAtK>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanPrecision {
    pub k: usize,
    /// Entities with a defined precision at this k.
    pub entities: usize,
    pub mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodPrecision {
    pub method: String,
    pub mean: Vec<MeanPrecision>,
    pub entities: Vec<EntityPrecision>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionReport {
    pub config: PipelineConfig,
    pub seed: u64,
    pub sample: EntitySample,
    pub methods: Vec<MethodPrecision>,
}

pub fn precision_report(
    cfg: &PipelineConfig,
    index: &Index,
    sample: &EntitySample,
    judge: &dyn Judge,
) -> Result<PrecisionReport> {
    let methods = methods(cfg)?;
    let mut out = Vec::with_capacity(methods.len());
    for method in &methods {
        let mut entities = Vec::with_capacity(sample.entities.len());
        for qid in &sample.entities {
            let entity = index
                .entity(qid.as_str())
                .ok_or_else(|| Error::InvalidArgument(format!("unknown entity {qid}")))?;
            let desc = index.description(qid.as_str()).unwrap_or("");
            let retrieved = method.retrieve(index, entity);
            let results = cfg
                .eval
                .ks
                .iter()
                .map(|&k| precision_at_k(&retrieved, k, judge, entity, desc, cfg.eval.seed))
                .collect::<Result<Vec<_>>>()?;
            entities.push(EntityPrecision {
                qid: qid.clone(),
                bin: sample.bin_for(qid.as_str()).unwrap_or_default().to_string(),
                results,
            });
        }
        let mean = cfg
            .eval
            .ks
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let vals: Vec<f64> = entities.iter().filter_map(|e| e.results[i].precision).collect();
                MeanPrecision {
                    k,
                    entities: vals.len(),
                    mean: (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64),
                }
            })
            .collect();
        out.push(MethodPrecision { method: method.name(), mean, entities });
    }
    Ok(PrecisionReport { config: cfg.clone(), seed: cfg.eval.seed, sample: sample.clone(), methods: out })
}

/// Samples entities, judges every method and writes `precision_report.json`
/// plus the judgment cache.
pub fn run_eval_precision(cfg: &PipelineConfig, index: &Index) -> Result<PrecisionReport> {
    let judge = ConfiguredJudge::from_config(cfg)?;
    let sample = sample_entities(cfg, index)?;
    let report = with_concurrency(cfg.judge.concurrency, || {
        precision_report(cfg, index, &sample, judge.judge())
    })??;
    judge.save(&cfg.paths.judgments())?;
    write_json_pretty(&cfg.paths.report("precision_report.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMargins {
    pub a: String,
    pub b: String,
    pub bins: BTreeMap<String, Vec<CurvePoint>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WinrateReport {
    pub config: PipelineConfig,
    pub seed: u64,
    pub sample: EntitySample,
    pub winrates: WinRates,
    pub margins: Vec<PairMargins>,
}

pub fn winrate_report(
    cfg: &PipelineConfig,
    index: &Index,
    sample: &EntitySample,
    judge: &dyn Judge,
) -> Result<WinrateReport> {
    let methods = methods(cfg)?;
    let winrates =
        crate::eval::pairwise_winrates(index, &methods, &sample.entities, judge, cfg.eval.cap, cfg.eval.seed)?;
    let bins: Vec<String> = sample
        .entities
        .iter()
        .map(|q| sample.bin_for(q.as_str()).unwrap_or_default().to_string())
        .collect();
    let mut margins = Vec::new();
    for i in 0..methods.len() {
        for j in i + 1..methods.len() {
            margins.push(PairMargins {
                a: winrates.matrix.methods[i].clone(),
                b: winrates.matrix.methods[j].clone(),
                bins: winmargin_distribution(&winrates.yes_counts[i], &winrates.yes_counts[j], &bins)?,
            });
        }
    }
    Ok(WinrateReport { config: cfg.clone(), seed: cfg.eval.seed, sample: sample.clone(), winrates, margins })
}

pub fn run_eval_winrate(cfg: &PipelineConfig, index: &Index) -> Result<WinrateReport> {
    let judge = ConfiguredJudge::from_config(cfg)?;
    let sample = sample_entities(cfg, index)?;
    let report = with_concurrency(cfg.judge.concurrency, || {
        winrate_report(cfg, index, &sample, judge.judge())
    })??;
    judge.save(&cfg.paths.judgments())?;
    write_json_pretty(&cfg.paths.report("winrate_report.json"), &report)?;
    Ok(report)
}

/// `facts.tsv` + `answers.jsonl` → `acquisition_report.json`. Interval
/// frequencies use the configured thresholds unless `all_candidates` is set.
pub fn run_track(cfg: &PipelineConfig, index: &Index, all_candidates: bool) -> Result<AcquisitionReport> {
    let facts = load_facts(&cfg.paths.facts())?;
    let checkpoints = load_answers(&cfg.paths.answers())?;
    let bins = bins_from_edges(&cfg.eval.fact_bin_edges)?;
    let thresholds: Option<&Thresholds> = (!all_candidates).then_some(&cfg.thresholds);
    let report = acquisition_report(&facts, &checkpoints, index, thresholds, &bins)?;
    write_json_pretty(&cfg.paths.report("acquisition_report.json"), &report)?;
    Ok(report)
}
