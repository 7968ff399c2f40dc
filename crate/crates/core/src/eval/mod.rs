//! Retrieval evaluation: stratified entity sampling, judged precision@k,
//! pairwise win rates and win-margin curves.

mod judge;

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use judge::{
    parse_verdict, CachingJudge, ContextWindow, HttpJudge, HttpJudgePrompt, Judge, JudgeRequest,
    Judgment, OracleJudge, ReplayJudge, TruthSpan, Verdict,
};

use crate::error::{Error, Result};
use crate::index::{Hit, Index, RankWeights, StringHit, StringMode, Thresholds};
use crate::model::{char_slice, EntityRef, Qid, Scores};

pub const WINDOW_CHARS: usize = 130;
pub const MAX_WINDOWS: usize = 3;
/// Chunks judged per list once k reaches this size.
pub const JUDGE_SAMPLE: usize = 100;

/// Derives an independent RNG for one labelled draw.
fn rng_for(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    let mut s = [0u8; 32];
    s.copy_from_slice(&d[..32]);
    ChaCha8Rng::from_seed(s)
}

/// `n` sorted positions drawn uniformly without replacement from `0..len`,
/// or all of them when `len <= n`.
fn sample_positions(rng: &mut ChaCha8Rng, len: usize, n: usize) -> Vec<usize> {
    if len <= n {
        return (0..len).collect();
    }
    let mut v = sample(rng, len, n).into_vec();
    v.sort_unstable();
    v
}

// ---------------------------------------------------------------------------
// Entity sampling

/// Half-open hyperlink-count range `[min, max)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopularityBin {
    pub name: String,
    pub min: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<u64>,
}

impl PopularityBin {
    pub fn new(name: &str, min: u64, max: Option<u64>) -> Self {
        PopularityBin { name: name.into(), min, max }
    }

    pub fn contains(&self, count: u64) -> bool {
        count >= self.min && self.max.is_none_or(|m| count < m)
    }
}

/// tail < 10 ≤ torso < 1000 ≤ head.
pub fn default_popularity_bins() -> Vec<PopularityBin> {
    vec![
        PopularityBin::new("tail", 0, Some(10)),
        PopularityBin::new("torso", 10, Some(1000)),
        PopularityBin::new("head", 1000, None),
    ]
}

pub fn bin_of(bins: &[PopularityBin], count: u64) -> Option<&PopularityBin> {
    bins.iter().find(|b| b.contains(count))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub bin: String,
    pub population: usize,
    pub requested: usize,
    pub selected: Vec<Qid>,
    /// Requested minus available, when the bin was too small.
    pub shortfall: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntitySample {
    pub seed: u64,
    pub entities: Vec<Qid>,
    pub strata: Vec<Stratum>,
}

impl EntitySample {
    pub fn bin_for(&self, qid: &str) -> Option<&str> {
        self.strata
            .iter()
            .find(|s| s.selected.iter().any(|q| q.as_str() == qid))
            .map(|s| s.bin.as_str())
    }
}

/// Uniform sampling without replacement within each popularity bin.
pub fn stratified_sample(
    hyperlink_counts: &BTreeMap<Qid, u64>,
    bins: &[PopularityBin],
    per_bin: &[usize],
    seed: u64,
) -> Result<EntitySample> {
    if bins.len() != per_bin.len() {
        return Err(Error::InvalidArgument(format!(
            "{} bins but {} per-bin counts",
            bins.len(),
            per_bin.len()
        )));
    }
    let mut strata = Vec::with_capacity(bins.len());
    let mut entities = Vec::new();
    for (bin, &want) in bins.iter().zip(per_bin) {
        let pop: Vec<&Qid> = hyperlink_counts
            .iter()
            .filter(|(_, &c)| bin.contains(c))
            .map(|(q, _)| q)
            .collect();
        let mut rng = rng_for(seed, &["stratum", &bin.name]);
        let selected: Vec<Qid> = sample_positions(&mut rng, pop.len(), want)
            .into_iter()
            .map(|i| pop[i].clone())
            .collect();
        entities.extend(selected.iter().cloned());
        strata.push(Stratum {
            bin: bin.name.clone(),
            population: pop.len(),
            requested: want,
            shortfall: want.saturating_sub(selected.len()),
            selected,
        });
    }
    Ok(EntitySample { seed, entities, strata })
}

// ---------------------------------------------------------------------------
// Context windows and retrieval methods

/// Up to `max_mentions` windows, one per span taken in the given order, each
/// extending `window_chars` characters either side of the span and clamped to
/// the text.
pub fn context_windows(
    chunk_id: u64,
    text: &str,
    spans: &[(usize, usize)],
    window_chars: usize,
    max_mentions: usize,
) -> Vec<ContextWindow> {
    let n = text.chars().count();
    spans
        .iter()
        .take(max_mentions)
        .enumerate()
        .map(|(i, &(s, e))| {
            let lo = s.saturating_sub(window_chars);
            let hi = (e + window_chars).min(n);
            ContextWindow {
                chunk_id,
                window_index: i,
                span: (s, e),
                text: char_slice(text, lo, hi.max(lo)).unwrap_or_default().to_string(),
            }
        })
        .collect()
}

fn weighted_sum(s: &Scores, w: &RankWeights) -> f64 {
    s.as_array()
        .into_iter()
        .zip([w.h, w.el, w.c, w.cc])
        .map(|(v, w)| v.map_or(0.0, |v| v as f64 * w))
        .sum()
}

/// A retrieved chunk with the windows a judge will see.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievedChunk {
    pub chunk_id: u64,
    pub windows: Vec<ContextWindow>,
}

impl RetrievedChunk {
    /// Matched mentions ordered by weighted score sum (ties by position).
    pub fn from_entity_hit(index: &Index, hit: &Hit) -> Option<Self> {
        let chunk = index.chunk(hit.chunk_id)?;
        let w = &index.config().weights;
        let mut ms: Vec<_> = hit.matches.iter().collect();
        ms.sort_by(|a, b| {
            weighted_sum(&b.scores, w)
                .total_cmp(&weighted_sum(&a.scores, w))
                .then((a.start, a.end).cmp(&(b.start, b.end)))
        });
        let spans: Vec<_> = ms.iter().map(|m| (m.start, m.end)).collect();
        Some(RetrievedChunk {
            chunk_id: hit.chunk_id,
            windows: context_windows(hit.chunk_id, &chunk.text, &spans, WINDOW_CHARS, MAX_WINDOWS),
        })
    }

    /// Matches in the order they appear in the text.
    pub fn from_string_hit(index: &Index, hit: &StringHit) -> Option<Self> {
        let chunk = index.chunk(hit.chunk_id)?;
        Some(RetrievedChunk {
            chunk_id: hit.chunk_id,
            windows: context_windows(hit.chunk_id, &chunk.text, &hit.spans, WINDOW_CHARS, MAX_WINDOWS),
        })
    }
}

/// Entity-based retrieval under thresholds, or one of the string baselines.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Entity { thresholds: Thresholds },
    String { mode: StringMode },
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Entity { .. } => "entity".to_string(),
            Method::String { mode } => mode.to_string(),
        }
    }

    /// `entity` or a string-mode name.
    pub fn parse(s: &str, thresholds: Thresholds) -> Result<Self> {
        if s.eq_ignore_ascii_case("entity") {
            Ok(Method::Entity { thresholds })
        } else {
            Ok(Method::String { mode: s.parse()? })
        }
    }

    /// The full ranked list for `entity`.
    pub fn retrieve(&self, index: &Index, entity: &EntityRef) -> Vec<RetrievedChunk> {
        match self {
            Method::Entity { thresholds } => index
                .ranked_hits(entity.qid.as_str(), thresholds)
                .iter()
                .filter_map(|h| RetrievedChunk::from_entity_hit(index, h))
                .collect(),
            Method::String { mode } => index
                .query_string(*mode, entity, None, false)
                .hits
                .iter()
                .filter_map(|h| RetrievedChunk::from_string_hit(index, h))
                .collect(),
        }
    }
}

/// Judges one chunk: Yes iff any of its windows is judged Yes.
pub fn judge_chunk(
    judge: &dyn Judge,
    entity: &EntityRef,
    description: &str,
    chunk: &RetrievedChunk,
) -> Result<bool> {
    if chunk.windows.is_empty() {
        return Ok(false);
    }
    let verdicts = judge.judge(&JudgeRequest { entity, description, windows: &chunk.windows })?;
    Ok(verdicts.iter().any(|v| v.is_yes()))
}

fn judge_all(
    judge: &dyn Judge,
    entity: &EntityRef,
    description: &str,
    chunks: &[&RetrievedChunk],
) -> Result<Vec<bool>> {
    chunks
        .par_iter()
        .map(|c| judge_chunk(judge, entity, description, c))
        .collect()
}

/// Runs `f` on a rayon pool with at most `threads` concurrent judge calls.
pub fn with_concurrency<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

// ---------------------------------------------------------------------------
// Precision@k

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionAtK {
    pub k: usize,
    /// Length of the ranked list.
    pub retrieved: usize,
    /// Size of the top-k prefix.
    pub considered: usize,
    pub judged: usize,
    pub yes: usize,
    /// Null when nothing was retrieved.
    pub precision: Option<f64>,
    pub sampled: bool,
    pub fewer_than_k: bool,
    pub empty: bool,
}

/// Yes-fraction of a list of chunk judgments; `None` for an empty list.
pub fn precision_from_judgments(yes: &[bool]) -> Option<f64> {
    if yes.is_empty() {
        None
    } else {
        Some(yes.iter().filter(|&&y| y).count() as f64 / yes.len() as f64)
    }
}

/// The top-k positions that get judged: all of them, or a seeded uniform
/// sample of [`JUDGE_SAMPLE`] when `k ≥ JUDGE_SAMPLE`.
pub fn judged_positions(retrieved: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let considered = retrieved.min(k);
    if k >= JUDGE_SAMPLE {
        sample_positions(rng, considered, JUDGE_SAMPLE)
    } else {
        (0..considered).collect()
    }
}

pub fn precision_at_k(
    retrieved: &[RetrievedChunk],
    k: usize,
    judge: &dyn Judge,
    entity: &EntityRef,
    description: &str,
    seed: u64,
) -> Result<PrecisionAtK> {
    let mut rng = rng_for(seed, &["precision", entity.qid.as_str(), &k.to_string()]);
    let picks = judged_positions(retrieved.len(), k, &mut rng);
    let chunks: Vec<&RetrievedChunk> = picks.iter().map(|&i| &retrieved[i]).collect();
    let yes = judge_all(judge, entity, description, &chunks)?;
    let considered = retrieved.len().min(k);
    Ok(PrecisionAtK {
        k,
        retrieved: retrieved.len(),
        considered,
        judged: yes.len(),
        yes: yes.iter().filter(|&&y| y).count(),
        precision: precision_from_judgments(&yes),
        sampled: picks.len() < considered,
        fewer_than_k: retrieved.len() < k,
        empty: retrieved.is_empty(),
    })
}

// ---------------------------------------------------------------------------
// Win rates

/// Seeded cap of a retrieved set at `cap` chunks.
pub fn cap_sample<'a>(
    retrieved: &'a [RetrievedChunk],
    cap: usize,
    seed: u64,
    method: &str,
    qid: &str,
) -> Vec<&'a RetrievedChunk> {
    let mut rng = rng_for(seed, &["winrate", method, qid]);
    sample_positions(&mut rng, retrieved.len(), cap)
        .into_iter()
        .map(|i| &retrieved[i])
        .collect()
}

/// Yes-judged chunk count among the capped sample.
pub fn yes_count(
    retrieved: &[RetrievedChunk],
    cap: usize,
    seed: u64,
    method: &str,
    judge: &dyn Judge,
    entity: &EntityRef,
    description: &str,
) -> Result<u64> {
    let chunks = cap_sample(retrieved, cap, seed, method, entity.qid.as_str());
    let yes = judge_all(judge, entity, description, &chunks)?;
    Ok(yes.iter().filter(|&&y| y).count() as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub a: String,
    pub b: String,
    pub entities: usize,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub win_pct: f64,
    pub loss_pct: f64,
    pub tie_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WinMatrix {
    pub methods: Vec<String>,
    /// `win_pct[i][j]`: % of entities where method i beats method j.
    pub win_pct: Vec<Vec<f64>>,
    pub tie_pct: Vec<Vec<f64>>,
    /// Unordered pairs `i < j`.
    pub pairs: Vec<PairOutcome>,
}

fn pct(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

/// Compares per-entity Yes counts of every method pair. `counts[m][e]` is the
/// Yes count of method `m` on entity `e`; equal counts are ties.
pub fn winrates_from_counts(methods: &[String], counts: &[Vec<u64>]) -> Result<WinMatrix> {
    if methods.len() != counts.len() {
        return Err(Error::InvalidArgument("one count row per method is required".into()));
    }
    let n_ent = counts.first().map_or(0, Vec::len);
    if counts.iter().any(|c| c.len() != n_ent) {
        return Err(Error::InvalidArgument("count rows differ in length".into()));
    }
    let m = methods.len();
    let mut win_pct = vec![vec![0.0; m]; m];
    let mut tie_pct = vec![vec![0.0; m]; m];
    let mut pairs = Vec::new();
    for i in 0..m {
        for j in 0..m {
            let (mut w, mut l, mut t) = (0, 0, 0);
            for e in 0..n_ent {
                match counts[i][e].cmp(&counts[j][e]) {
                    std::cmp::Ordering::Greater => w += 1,
                    std::cmp::Ordering::Less => l += 1,
                    std::cmp::Ordering::Equal => t += 1,
                }
            }
            win_pct[i][j] = pct(w, n_ent);
            tie_pct[i][j] = pct(t, n_ent);
            if i < j {
                pairs.push(PairOutcome {
                    a: methods[i].clone(),
                    b: methods[j].clone(),
                    entities: n_ent,
                    wins: w,
                    losses: l,
                    ties: t,
                    win_pct: pct(w, n_ent),
                    loss_pct: pct(l, n_ent),
                    tie_pct: pct(t, n_ent),
                });
            }
        }
    }
    Ok(WinMatrix { methods: methods.to_vec(), win_pct, tie_pct, pairs })
}

/// Per-method Yes counts plus the resulting matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WinRates {
    pub cap: usize,
    pub seed: u64,
    pub entities: Vec<Qid>,
    /// `yes_counts[method][entity]`.
    pub yes_counts: Vec<Vec<u64>>,
    pub matrix: WinMatrix,
}

/// Retrieves with every method for every entity, caps each set at `cap`
/// chunks by seeded sampling, judges, and compares Yes counts pairwise.
pub fn pairwise_winrates(
    index: &Index,
    methods: &[Method],
    entities: &[Qid],
    judge: &dyn Judge,
    cap: usize,
    seed: u64,
) -> Result<WinRates> {
    let names: Vec<String> = methods.iter().map(Method::name).collect();
    let mut yes_counts = vec![Vec::with_capacity(entities.len()); methods.len()];
    for qid in entities {
        let entity = index
            .entity(qid.as_str())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown entity {qid}")))?;
        let desc = index.description(qid.as_str()).unwrap_or("");
        for (mi, method) in methods.iter().enumerate() {
            let retrieved = method.retrieve(index, entity);
            yes_counts[mi].push(yes_count(&retrieved, cap, seed, &names[mi], judge, entity, desc)?);
        }
    }
    let matrix = winrates_from_counts(&names, &yes_counts)?;
    Ok(WinRates { cap, seed, entities: entities.to_vec(), yes_counts, matrix })
}

// ---------------------------------------------------------------------------
// Win margins

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub margin: i64,
    pub cumulative_pct: f64,
}

/// Distinct margins in ascending order with the % of entities at or below each.
pub fn margin_curve(margins: &[i64]) -> Vec<CurvePoint> {
    let mut sorted = margins.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let mut out: Vec<CurvePoint> = Vec::new();
    for (i, &m) in sorted.iter().enumerate() {
        let point = CurvePoint { margin: m, cumulative_pct: pct(i + 1, n) };
        match out.last_mut() {
            Some(last) if last.margin == m => *last = point,
            _ => out.push(point),
        }
    }
    out
}

/// Margin = Yes(a) − Yes(b) per entity, grouped by the entity's popularity bin.
pub fn winmargin_distribution(
    yes_a: &[u64],
    yes_b: &[u64],
    entity_bins: &[String],
) -> Result<BTreeMap<String, Vec<CurvePoint>>> {
    if yes_a.len() != yes_b.len() || yes_a.len() != entity_bins.len() {
        return Err(Error::InvalidArgument("margin inputs differ in length".into()));
    }
    let mut by_bin: BTreeMap<String, Vec<i64>> = BTreeMap::new();
    for ((a, b), bin) in yes_a.iter().zip(yes_b).zip(entity_bins) {
        by_bin.entry(bin.clone()).or_default().push(*a as i64 - *b as i64);
    }
    Ok(by_bin.into_iter().map(|(k, v)| (k, margin_curve(&v))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(pairs: &[(&str, u64)]) -> BTreeMap<Qid, u64> {
        pairs.iter().map(|(q, c)| (Qid::from(*q), *c)).collect()
    }

    fn nine() -> BTreeMap<Qid, u64> {
        counts(&[
            ("Q1", 1), ("Q2", 5), ("Q3", 9),
            ("Q4", 10), ("Q5", 500), ("Q6", 999),
            ("Q7", 1000), ("Q8", 5000), ("Q9", 70000),
        ])
    }

    #[test]
    fn stratified_two_per_bin() {
        let s = stratified_sample(&nine(), &default_popularity_bins(), &[2, 2, 2], 7).unwrap();
        assert_eq!(s.entities.len(), 6);
        for st in &s.strata {
            assert_eq!(st.selected.len(), 2);
            assert_eq!(st.shortfall, 0);
        }
        assert_eq!(s, stratified_sample(&nine(), &default_popularity_bins(), &[2, 2, 2], 7).unwrap());
        assert_eq!(s.bin_for(s.strata[2].selected[0].as_str()), Some("head"));
    }

    #[test]
    fn stratified_shortfall() {
        let c = counts(&[("Q1", 1), ("Q2", 2000)]);
        let s = stratified_sample(&c, &default_popularity_bins(), &[1, 2, 2], 0).unwrap();
        assert_eq!(s.strata[2].selected.len(), 1);
        assert_eq!(s.strata[2].shortfall, 1);
        assert_eq!(s.strata[1].shortfall, 2);
        assert_eq!(s.entities.len(), 2);
    }

    #[test]
    fn windows_clamp_and_cap() {
        let text = "abcdefghij";
        let w = context_windows(9, text, &[(0, 2)], 3, 3);
        assert_eq!(w[0].text, "abcde");
        let w = context_windows(9, text, &[(5, 6)], 3, 3);
        assert_eq!(w[0].text, "cdefghi");
        let five: Vec<_> = (0..5).map(|i| (i, i + 1)).collect();
        assert_eq!(context_windows(9, text, &five, 3, 3).len(), 3);
    }

    #[test]
    fn windows_hand_fixture() {
        let text = "ünïcode text: Buffalo Bills won.";
        let w = context_windows(1, text, &[(14, 27)], 4, 3);
        assert_eq!(w[0].text, "xt: Buffalo Bills won");
        assert_eq!(w[0].span, (14, 27));
    }

    #[test]
    fn precision_arithmetic() {
        let y = [true, true, false, true, false];
        assert!((precision_from_judgments(&y).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(precision_from_judgments(&[]), None);
    }

    #[test]
    fn judged_positions_sample_at_large_k() {
        let mut rng = rng_for(1, &[]);
        assert_eq!(judged_positions(5, 10, &mut rng), vec![0, 1, 2, 3, 4]);
        let p = judged_positions(1000, 1000, &mut rng);
        assert_eq!(p.len(), 100);
        assert!(p.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(judged_positions(50, 100, &mut rng).len(), 50);
    }

    #[test]
    fn winrate_two_entities() {
        let m = vec!["A".to_string(), "B".to_string()];
        let w = winrates_from_counts(&m, &[vec![3, 1], vec![2, 2]]).unwrap();
        let p = &w.pairs[0];
        assert_eq!((p.win_pct, p.loss_pct, p.tie_pct), (50.0, 50.0, 0.0));
        assert_eq!(w.win_pct[1][0], 50.0);
    }

    #[test]
    fn identical_methods_tie() {
        let m = vec!["A".to_string(), "B".to_string()];
        let w = winrates_from_counts(&m, &[vec![3, 0, 7], vec![3, 0, 7]]).unwrap();
        assert_eq!(w.pairs[0].tie_pct, 100.0);
    }

    #[test]
    fn margin_curves() {
        let c = margin_curve(&[1, 1, 5]);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].margin, 1);
        assert!((c[0].cumulative_pct - 66.666_666).abs() < 1e-3);
        assert_eq!(c[1], CurvePoint { margin: 5, cumulative_pct: 100.0 });
        assert_eq!(margin_curve(&[0, 0, 0]), vec![CurvePoint { margin: 0, cumulative_pct: 100.0 }]);
    }

    #[test]
    fn margins_by_bin() {
        let bins: Vec<String> = ["tail", "head", "tail", "torso"].iter().map(|s| s.to_string()).collect();
        let d = winmargin_distribution(&[3, 1, 0, 2], &[1, 1, 2, 2], &bins).unwrap();
        assert_eq!(d["tail"], vec![
            CurvePoint { margin: -2, cumulative_pct: 50.0 },
            CurvePoint { margin: 2, cumulative_pct: 100.0 },
        ]);
        assert_eq!(d["head"], vec![CurvePoint { margin: 0, cumulative_pct: 100.0 }]);
        assert_eq!(d["torso"].len(), 1);
    }
}
