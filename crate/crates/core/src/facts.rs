//! Fact frequency and learned/forgotten rates between training checkpoints.
//!
//! A fact is a (subject, answer) entity pair. Its frequency over an interval
//! is the number of chunk exposures, during that interval, of chunks in which
//! both entities are retrieved.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{sorted_intersection_len, Index, Thresholds};
use crate::io::{read_jsonl, read_tsv};
use crate::model::Qid;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub subject: Qid,
    pub answer: Qid,
    pub question_ids: BTreeSet<String>,
}

/// Groups `(question_id, subject, answer)` rows into facts ordered by pair.
pub fn facts_from_rows<I, S>(rows: I) -> Vec<Fact>
where
    I: IntoIterator<Item = (S, S, S)>,
    S: Into<String>,
{
    let mut by_pair: BTreeMap<(Qid, Qid), BTreeSet<String>> = BTreeMap::new();
    for (q, s, a) in rows {
        by_pair
            .entry((Qid::new(s), Qid::new(a)))
            .or_default()
            .insert(q.into());
    }
    by_pair
        .into_iter()
        .map(|((subject, answer), question_ids)| Fact { subject, answer, question_ids })
        .collect()
}

/// `facts.tsv`: `question_id<TAB>subject_qid<TAB>answer_qid`.
pub fn load_facts(path: &Path) -> Result<Vec<Fact>> {
    let rows = read_tsv(path, 3)?;
    Ok(facts_from_rows(rows.into_iter().map(|r| {
        let mut it = r.into_iter();
        let q = it.next().unwrap_or_default();
        let s = it.next().unwrap_or_default();
        let a = it.next().unwrap_or_default();
        (q, s, a)
    })))
}

/// One row of `answers.jsonl`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRow {
    pub step: u64,
    pub question_id: String,
    pub correct: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointAnswers {
    pub step: u64,
    pub correct: BTreeSet<String>,
}

/// One checkpoint per distinct step, ascending.
pub fn checkpoints_from_rows(rows: impl IntoIterator<Item = AnswerRow>) -> Vec<CheckpointAnswers> {
    let mut by_step: BTreeMap<u64, BTreeSet<String>> = BTreeMap::new();
    for r in rows {
        let set = by_step.entry(r.step).or_default();
        if r.correct {
            set.insert(r.question_id);
        }
    }
    by_step
        .into_iter()
        .map(|(step, correct)| CheckpointAnswers { step, correct })
        .collect()
}

pub fn load_answers(path: &Path) -> Result<Vec<CheckpointAnswers>> {
    Ok(checkpoints_from_rows(read_jsonl::<AnswerRow>(path)?))
}

/// True iff at least one of the fact's questions was answered correctly.
pub fn fact_learned(fact: &Fact, answers: &CheckpointAnswers) -> bool {
    fact.question_ids.iter().any(|q| answers.correct.contains(q))
}

/// Chunks containing both entities of the fact.
pub fn fact_chunks(index: &Index, fact: &Fact, thresholds: Option<&Thresholds>) -> Vec<u64> {
    let xs = index.chunk_ids(fact.subject.as_str(), thresholds);
    let ys = index.chunk_ids(fact.answer.as_str(), thresholds);
    let mut out = Vec::with_capacity(sorted_intersection_len(&xs, &ys));
    let (mut i, mut j) = (0, 0);
    while i < xs.len() && j < ys.len() {
        match xs[i].cmp(&ys[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(xs[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Exposures of `chunks` during training steps `(from, to]`. The chunk at
/// zero-based global step `g` is consumed by training step `g + 1`, so a
/// checkpoint taken at step `X` has seen exactly the steps `≤ X`.
pub fn interval_frequency(index: &Index, chunks: &[u64], from: u64, to: u64) -> u64 {
    let steps = index.steps();
    chunks
        .iter()
        .flat_map(|&c| steps.steps_for_chunk(c))
        .filter(|&&(e, s)| {
            let t = steps.global_step(e, s) + 1;
            from < t && t <= to
        })
        .count() as u64
}

/// Half-open frequency range `[min, max)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyBin {
    pub min: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<u64>,
}

impl FrequencyBin {
    pub fn contains(&self, f: u64) -> bool {
        f >= self.min && self.max.is_none_or(|m| f < m)
    }

    pub fn label(&self) -> String {
        match self.max {
            Some(m) => format!("[{},{})", self.min, m),
            None => format!("[{},inf)", self.min),
        }
    }
}

/// `[1,100)` and `[100,∞)`.
pub fn default_frequency_bins() -> Vec<FrequencyBin> {
    vec![FrequencyBin { min: 1, max: Some(100) }, FrequencyBin { min: 100, max: None }]
}

/// Bins from ascending edges: `[e0,e1), [e1,e2), …, [en,∞)`.
pub fn bins_from_edges(edges: &[u64]) -> Result<Vec<FrequencyBin>> {
    if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("bin edges must be non-empty and strictly increasing".into()));
    }
    Ok(edges
        .iter()
        .enumerate()
        .map(|(i, &min)| FrequencyBin { min, max: edges.get(i + 1).copied() })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub bin: String,
    /// Facts seen in the interval that fall in this bin.
    pub facts: usize,
    pub learned: usize,
    pub forgotten: usize,
    pub learned_pct: f64,
    pub forgotten_pct: f64,
    pub net_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalStats {
    pub from_step: u64,
    pub to_step: u64,
    /// Facts with interval frequency ≥ 1.
    pub seen_facts: usize,
    pub bins: Vec<BinStats>,
}

/// Per-fact interval outcome, before binning.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactInterval {
    pub frequency: u64,
    pub learned_before: bool,
    pub learned_after: bool,
}

pub fn fact_intervals(
    facts: &[Fact],
    before: &CheckpointAnswers,
    after: &CheckpointAnswers,
    index: &Index,
    thresholds: Option<&Thresholds>,
) -> Result<Vec<FactInterval>> {
    if after.step <= before.step {
        return Err(Error::InvalidArgument(format!(
            "interval ({}, {}] is empty: checkpoint steps must increase",
            before.step, after.step
        )));
    }
    Ok(facts
        .par_iter()
        .map(|f| {
            let chunks = fact_chunks(index, f, thresholds);
            FactInterval {
                frequency: interval_frequency(index, &chunks, before.step, after.step),
                learned_before: fact_learned(f, before),
                learned_after: fact_learned(f, after),
            }
        })
        .collect())
}

fn pct(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

/// Bins already-computed fact outcomes. Empty bins report 0%.
pub fn bin_intervals(rows: &[FactInterval], bins: &[FrequencyBin]) -> Vec<BinStats> {
    bins.iter()
        .map(|b| {
            let members: Vec<&FactInterval> =
                rows.iter().filter(|r| r.frequency >= 1 && b.contains(r.frequency)).collect();
            let learned = members.iter().filter(|r| !r.learned_before && r.learned_after).count();
            let forgotten = members.iter().filter(|r| r.learned_before && !r.learned_after).count();
            let learned_pct = pct(learned, members.len());
            let forgotten_pct = pct(forgotten, members.len());
            BinStats {
                bin: b.label(),
                facts: members.len(),
                learned,
                forgotten,
                learned_pct,
                forgotten_pct,
                net_pct: learned_pct - forgotten_pct,
            }
        })
        .collect()
}

pub fn interval_stats(
    facts: &[Fact],
    before: &CheckpointAnswers,
    after: &CheckpointAnswers,
    index: &Index,
    thresholds: Option<&Thresholds>,
    bins: &[FrequencyBin],
) -> Result<IntervalStats> {
    let rows = fact_intervals(facts, before, after, index, thresholds)?;
    Ok(IntervalStats {
        from_step: before.step,
        to_step: after.step,
        seen_facts: rows.iter().filter(|r| r.frequency >= 1).count(),
        bins: bin_intervals(&rows, bins),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionReport {
    /// Null when every candidate counted regardless of scores.
    pub thresholds: Option<Thresholds>,
    pub bins: Vec<FrequencyBin>,
    pub facts: usize,
    pub intervals: Vec<IntervalStats>,
}

/// Stats for every pair of consecutive checkpoints.
pub fn acquisition_report(
    facts: &[Fact],
    checkpoints: &[CheckpointAnswers],
    index: &Index,
    thresholds: Option<&Thresholds>,
    bins: &[FrequencyBin],
) -> Result<AcquisitionReport> {
    if checkpoints.len() < 2 {
        return Err(Error::InvalidArgument("at least two checkpoints are required".into()));
    }
    let intervals = checkpoints
        .windows(2)
        .map(|w| interval_stats(facts, &w[0], &w[1], index, thresholds, bins))
        .collect::<Result<Vec<_>>>()?;
    Ok(AcquisitionReport {
        thresholds: thresholds.copied(),
        bins: bins.to_vec(),
        facts: facts.len(),
        intervals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cp(step: u64, correct: &[&str]) -> CheckpointAnswers {
        CheckpointAnswers { step, correct: correct.iter().map(|s| s.to_string()).collect() }
    }

    #[test]
    fn grouping_and_learned() {
        let facts = facts_from_rows([("q1", "Q1", "Q2"), ("q2", "Q1", "Q2"), ("q3", "Q3", "Q2")]);
        assert_eq!(facts.len(), 2);
        assert_eq!(facts[0].question_ids.len(), 2);
        assert!(fact_learned(&facts[0], &cp(10, &["q2"])));
        assert!(!fact_learned(&facts[0], &cp(10, &[])));
        assert!(!fact_learned(&facts[1], &cp(10, &["q1"])));
    }

    #[test]
    fn checkpoints_group_by_step() {
        let rows = vec![
            AnswerRow { step: 20, question_id: "a".into(), correct: true },
            AnswerRow { step: 10, question_id: "a".into(), correct: false },
            AnswerRow { step: 20, question_id: "b".into(), correct: false },
        ];
        let cps = checkpoints_from_rows(rows);
        assert_eq!(cps, vec![cp(10, &[]), cp(20, &["a"])]);
    }

    #[test]
    fn binning_rates() {
        let r = |frequency, b, a| FactInterval { frequency, learned_before: b, learned_after: a };
        let rows = [
            r(5, true, true),
            r(5, false, true),
            r(50, true, false),
            r(0, false, true),
            r(200, false, false),
        ];
        let s = bin_intervals(&rows, &default_frequency_bins());
        assert_eq!(s[0].facts, 3);
        assert_eq!((s[0].learned, s[0].forgotten), (1, 1));
        assert!((s[0].learned_pct - 100.0 / 3.0).abs() < 1e-9);
        assert_eq!(s[0].net_pct, s[0].learned_pct - s[0].forgotten_pct);
        assert_eq!(s[1].facts, 1);
        assert_eq!(s[1].net_pct, 0.0);
    }

    #[test]
    fn edges() {
        let b = bins_from_edges(&[1, 10, 100]).unwrap();
        assert_eq!(b.iter().map(FrequencyBin::label).collect::<Vec<_>>(), ["[1,10)", "[10,100)", "[100,inf)"]);
        assert!(bins_from_edges(&[5, 5]).is_err());
    }
}
