use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use entmark_core::config::PipelineConfig;
use entmark_core::index::{Index, QuerySpec, StringMode, Thresholds, DEFAULT_LIMIT};
use entmark_core::io::{read_jsonl, write_jsonl_to};
use entmark_core::model::{clusters_from_raw, validate_corpus, validate_raw, DocMention, Document, RawMention};
use entmark_core::pipeline;
use entmark_core::stats::CorpusStats;
use entmark_core::Error;

use crate::server;

#[derive(Parser, Debug)]
#[command(name = "entmark", version, about = "Entity-annotated corpus indexing and retrieval")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct PipelineArgs {
    /// TOML pipeline config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `paths.work_dir`.
    #[arg(long)]
    pub work_dir: Option<PathBuf>,
}

impl PipelineArgs {
    fn load(&self) -> Result<PipelineConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(w) = &self.work_dir {
            cfg.paths.work_dir = Some(w.clone());
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone)]
pub struct IndexArgs {
    #[arg(long, env = "ENTMARK_INDEX_DIR")]
    pub index_dir: PathBuf,
}

/// Any given threshold replaces the index defaults as a whole.
#[derive(Args, Debug, Clone, Default)]
pub struct ThresholdArgs {
    #[arg(long)]
    pub h: Option<u8>,
    #[arg(long)]
    pub el: Option<f32>,
    #[arg(long)]
    pub c: Option<f32>,
    #[arg(long)]
    pub cc: Option<f32>,
}

impl ThresholdArgs {
    fn resolve(&self, defaults: Thresholds) -> Result<Thresholds, Error> {
        let t = Thresholds { h: self.h, el: self.el, c: self.c, cc: self.cc };
        let t = if t == Thresholds::none() { defaults } else { t };
        t.validate()?;
        Ok(t)
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Wiki markup → clean documents and hyperlink mention rows.
    Extract(PipelineArgs),
    /// Raw annotator rows → scored mentions.
    Score(PipelineArgs),
    /// Scored documents → fixed-length chunks and the step map.
    Chunk(PipelineArgs),
    /// Chunks, steps and entity tables → index directory.
    Index(PipelineArgs),
    /// Ranked chunks for an entity, as JSONL hits.
    Query {
        #[command(flatten)]
        index: IndexArgs,
        #[arg(long)]
        qid: String,
        #[command(flatten)]
        thresholds: ThresholdArgs,
        #[arg(long, default_value_t = DEFAULT_LIMIT)]
        limit: usize,
        #[arg(long, default_value_t = 0)]
        offset: usize,
        /// Run a string-search baseline instead (cs-canonical, ci-expanded, ...).
        #[arg(long)]
        mode: Option<StringMode>,
    },
    /// Training steps at which an entity's chunks are seen.
    Steps {
        #[command(flatten)]
        index: IndexArgs,
        #[arg(long)]
        qid: String,
        #[command(flatten)]
        thresholds: ThresholdArgs,
    },
    /// Number of chunks retrieved for both entities.
    Cooccur {
        #[command(flatten)]
        index: IndexArgs,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        #[command(flatten)]
        thresholds: ThresholdArgs,
    },
    /// Judged precision@k per method → precision_report.json.
    EvalPrecision(PipelineArgs),
    /// Pairwise win rates → winrate_report.json.
    EvalWinrate(PipelineArgs),
    /// Learned/forgotten facts per interval → acquisition_report.json.
    Track {
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Count co-occurrence over all candidates instead of thresholded ones.
        #[arg(long)]
        all_candidates: bool,
    },
    /// Corpus counts for an index.
    Stats {
        #[command(flatten)]
        index: IndexArgs,
    },
    /// Read-only HTTP service.
    Serve {
        #[command(flatten)]
        index: IndexArgs,
        #[arg(long, env = "ENTMARK_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
    /// Check documents and mention files; exit 1 on any violation.
    Validate(PipelineArgs),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_USAGE,
        Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_INVALID,
    }
}

fn describe(e: &Error) -> String {
    match e {
        Error::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => {
            format!("missing input file: {}", path.display())
        }
        other => other.to_string(),
    }
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), Error> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out).map_err(|e| Error::Corrupt(format!("stdout: {e}")))?;
    Ok(())
}

fn open_index(dir: &std::path::Path) -> Result<Index, Error> {
    if !dir.exists() {
        return Err(Error::Io {
            path: dir.to_path_buf(),
            source: std::io::ErrorKind::NotFound.into(),
        });
    }
    Index::open(dir)
}

#[derive(Serialize)]
struct ValidateOutput {
    valid: bool,
    raw: entmark_core::model::ValidationReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    scored: Option<entmark_core::model::ValidationReport>,
}

/// Runs one parsed command, writing results to `out`. Returns the exit code.
pub fn execute(cmd: Command, out: &mut dyn Write) -> Result<i32, Error> {
    match cmd {
        Command::Extract(a) => print_json(out, &pipeline::run_extract(&a.load()?)?)?,
        Command::Score(a) => print_json(out, &pipeline::run_score(&a.load()?)?)?,
        Command::Chunk(a) => print_json(out, &pipeline::run_chunk(&a.load()?)?)?,
        Command::Index(a) => print_json(out, &pipeline::run_index(&a.load()?)?)?,
        Command::Query { index, qid, thresholds, limit, offset, mode } => {
            let index = open_index(&index.index_dir)?;
            match mode {
                Some(mode) => {
                    let hits = match index.entity(&qid) {
                        Some(e) => index.query_string(mode, e, None, false).hits,
                        None => Vec::new(),
                    };
                    let page: Vec<_> = hits.into_iter().skip(offset).take(limit.min(entmark_core::index::MAX_LIMIT)).collect();
                    write_jsonl_to(out, &page)?;
                }
                None => {
                    let t = thresholds.resolve(index.config().default_thresholds)?;
                    let result = index.query_entity(&QuerySpec::new(qid, t).page(limit, offset))?;
                    write_jsonl_to(out, &result.hits)?;
                }
            }
        }
        Command::Steps { index, qid, thresholds } => {
            let index = open_index(&index.index_dir)?;
            let t = thresholds.resolve(index.config().default_thresholds)?;
            print_json(out, &server::steps_body(&index, &qid, &t))?;
        }
        Command::Cooccur { index, a, b, thresholds } => {
            let index = open_index(&index.index_dir)?;
            let t = thresholds.resolve(index.config().default_thresholds)?;
            let count = index.cooccur_count(&a, &b, Some(&t));
            print_json(out, &server::CooccurBody { a, b, count })?;
        }
        Command::EvalPrecision(a) => {
            let cfg = a.load()?;
            let index = open_index(&cfg.paths.index_dir())?;
            let report = pipeline::run_eval_precision(&cfg, &index)?;
            print_json(out, &report.methods.iter().map(|m| (&m.method, &m.mean)).collect::<Vec<_>>())?;
        }
        Command::EvalWinrate(a) => {
            let cfg = a.load()?;
            let index = open_index(&cfg.paths.index_dir())?;
            let report = pipeline::run_eval_winrate(&cfg, &index)?;
            print_json(out, &report.winrates.matrix.pairs)?;
        }
        Command::Track { pipeline: a, all_candidates } => {
            let cfg = a.load()?;
            let index = open_index(&cfg.paths.index_dir())?;
            print_json(out, &pipeline::run_track(&cfg, &index, all_candidates)?)?;
        }
        Command::Stats { index } => {
            let index = open_index(&index.index_dir)?;
            print_json(out, &CorpusStats::from_index(&index))?;
        }
        Command::Serve { index, port, host } => {
            let index = Arc::new(open_index(&index.index_dir)?);
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Corrupt(format!("runtime: {e}")))?;
            rt.block_on(server::serve(index, (host, port).into()))
                .map_err(|e| Error::InvalidArgument(format!("cannot serve on {host}:{port}: {e}")))?;
        }
        Command::Validate(a) => {
            let cfg = a.load()?;
            let docs: Vec<Document> = read_jsonl(&cfg.paths.documents())?;
            let raw: Vec<RawMention> = read_jsonl(&cfg.paths.mentions())?;
            let raw_report = validate_raw(&docs, &raw);
            let scored_path = cfg.paths.scored_mentions();
            let scored = if scored_path.exists() {
                let mentions: Vec<DocMention> = read_jsonl(&scored_path)?;
                Some(validate_corpus(&docs, &mentions, &clusters_from_raw(&docs, &raw)))
            } else {
                None
            };
            let valid = raw_report.is_valid() && scored.as_ref().is_none_or(|r| r.is_valid());
            print_json(out, &ValidateOutput { valid, raw: raw_report, scored })?;
            return Ok(if valid { EXIT_OK } else { EXIT_INVALID });
        }
    }
    Ok(EXIT_OK)
}

/// Parses `argv` and runs the command; the return value is the process exit
/// code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {}", describe(&e));
            exit_code(&e)
        }
    }
}
