//! Pipeline configuration, read from TOML.
//!
//! ```toml
//! seq_len = 512
//! batch_size = 32
//! epochs = 2
//! epoch_seeds = [17, 18]
//!
//! [thresholds]
//! h = 1
//! el = 0.6
//! c = 0.6
//! cc = 0.6
//!
//! [weights]
//! h = 1.0
//! el = 1.0
//! c = 1.0
//! cc = 1.0
//!
//! [judge]
//! kind = "replay"          # replay | http | oracle
//! concurrency = 4
//!
//! [paths]
//! work_dir = "work"
//! ```
//!
//! Every path in `[paths]` is optional and defaults to a conventional file
//! name under `work_dir`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chunker::SeqLenSchedule;
use crate::error::{Error, Result};
use crate::eval::default_popularity_bins;
use crate::eval::PopularityBin;
use crate::index::{IndexConfig, RankWeights, Thresholds};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
    /// Optional variable-length schedule cycling over each document's chunks;
    /// overrides `seq_len` when non-empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seq_len_schedule: Vec<usize>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub epoch_seeds: Vec<u64>,
    #[serde(default = "default_vocab")]
    pub vocab_size: u32,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub weights: RankWeights,
    #[serde(default)]
    pub judge: JudgeConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub paths: Paths,
}

fn default_seq_len() -> usize {
    2048
}
fn default_batch_size() -> usize {
    32
}
fn default_epochs() -> usize {
    1
}
fn default_vocab() -> u32 {
    1 << 20
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seq_len: default_seq_len(),
            seq_len_schedule: Vec::new(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            epoch_seeds: Vec::new(),
            vocab_size: default_vocab(),
            thresholds: Thresholds::default(),
            weights: RankWeights::default(),
            judge: JudgeConfig::default(),
            eval: EvalConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::InvalidArgument(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be ≥ 1".into()));
        }
        if self.vocab_size < 2 {
            return Err(Error::InvalidArgument("vocab_size must be ≥ 2".into()));
        }
        self.schedule().validate()?;
        self.thresholds.validate()?;
        self.weights.validate()?;
        self.eval.validate()
    }

    pub fn schedule(&self) -> SeqLenSchedule {
        if self.seq_len_schedule.is_empty() {
            SeqLenSchedule::fixed(self.seq_len)
        } else {
            SeqLenSchedule { lengths: self.seq_len_schedule.clone() }
        }
    }

    pub fn index_config(&self) -> IndexConfig {
        IndexConfig { weights: self.weights, default_thresholds: self.thresholds }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeKind {
    /// Verdicts from the judgment cache only.
    #[default]
    Replay,
    /// Remote judge; new verdicts are added to the cache.
    Http,
    /// Ground-truth spans from `paths.truth`.
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeConfig {
    #[serde(default)]
    pub kind: JudgeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Maximum judge calls in flight.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

fn default_concurrency() -> usize {
    4
}

impl Default for JudgeConfig {
    fn default() -> Self {
        JudgeConfig { kind: JudgeKind::Replay, endpoint: None, concurrency: default_concurrency() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    /// `entity` or a string-mode name such as `ci-expanded`.
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_popularity_bins")]
    pub bins: Vec<PopularityBin>,
    /// Entities sampled per popularity bin.
    #[serde(default = "default_per_bin")]
    pub per_bin: Vec<usize>,
    /// Chunks judged per (method, entity) for win rates.
    #[serde(default = "default_cap")]
    pub cap: usize,
    /// Fact-frequency bin lower edges.
    #[serde(default = "default_fact_edges")]
    pub fact_bin_edges: Vec<u64>,
}

fn default_seed() -> u64 {
    0
}
fn default_ks() -> Vec<usize> {
    vec![1, 5, 10, 100, 1000]
}
fn default_methods() -> Vec<String> {
    ["entity", "cs-canonical", "cs-expanded", "ci-canonical", "ci-expanded"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}
fn default_per_bin() -> Vec<usize> {
    vec![100, 100, 100]
}
fn default_cap() -> usize {
    100
}
fn default_fact_edges() -> Vec<u64> {
    vec![1, 100]
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seed: default_seed(),
            ks: default_ks(),
            methods: default_methods(),
            bins: default_popularity_bins(),
            per_bin: default_per_bin(),
            cap: default_cap(),
            fact_bin_edges: default_fact_edges(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins.len() != self.per_bin.len() {
            return Err(Error::InvalidArgument("eval.bins and eval.per_bin differ in length".into()));
        }
        if self.ks.contains(&0) {
            return Err(Error::InvalidArgument("k must be ≥ 1".into()));
        }
        crate::facts::bins_from_edges(&self.fact_bin_edges)?;
        Ok(())
    }
}

/// File locations. Unset entries resolve under `work_dir`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub work_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub documents_raw: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title_qid: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub documents: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mentions: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptions: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scored_mentions: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunks: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judgments: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facts: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reports_dir: Option<PathBuf>,
}

macro_rules! path_getters {
    ($($field:ident => $default:expr),* $(,)?) => {
        impl Paths {
            $(
                pub fn $field(&self) -> PathBuf {
                    self.$field.clone().unwrap_or_else(|| self.work().join($default))
                }
            )*
        }
    };
}

impl Paths {
    pub fn work(&self) -> PathBuf {
        self.work_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn drops(&self) -> PathBuf {
        self.work().join("drops.jsonl")
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.reports_dir().join(name)
    }
}

path_getters! {
    documents_raw => "documents_raw.jsonl",
    title_qid => "title_qid.tsv",
    documents => "documents.jsonl",
    mentions => "mentions.jsonl",
    entities => "entities.tsv",
    descriptions => "descriptions.tsv",
    scored_mentions => "scored_mentions.jsonl",
    chunks => "chunks.jsonl",
    steps => "steps.tsv",
    index_dir => "index",
    judgments => "judgments.jsonl",
    truth => "truth.jsonl",
    facts => "facts.tsv",
    answers => "answers.jsonl",
    reports_dir => "reports",
}
