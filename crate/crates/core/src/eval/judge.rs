//! Relevance judges. A judge sees an entity, its description and up to a few
//! context windows from one chunk, and answers Yes or No per window.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_jsonl};
use crate::model::{EntityRef, Qid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "Y")]
    Yes,
    #[serde(rename = "N")]
    No,
}

impl Verdict {
    pub fn is_yes(self) -> bool {
        self == Verdict::Yes
    }
}

/// Text around one matched span of a chunk.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub chunk_id: u64,
    pub window_index: usize,
    /// The matched span, as character offsets into the chunk text.
    pub span: (usize, usize),
    pub text: String,
}

#[derive(Clone, Copy, Debug)]
pub struct JudgeRequest<'a> {
    pub entity: &'a EntityRef,
    pub description: &'a str,
    pub windows: &'a [ContextWindow],
}

pub trait Judge: Send + Sync {
    /// One verdict per window, in order.
    fn judge(&self, request: &JudgeRequest<'_>) -> Result<Vec<Verdict>>;
}

impl<J: Judge + ?Sized> Judge for Box<J> {
    fn judge(&self, request: &JudgeRequest<'_>) -> Result<Vec<Verdict>> {
        (**self).judge(request)
    }
}

/// Ground-truth judge: Yes iff the window's matched span overlaps a known
/// true mention of the entity in that chunk.
#[derive(Clone, Debug, Default)]
pub struct OracleJudge {
    truth: HashMap<Qid, HashMap<u64, Vec<(usize, usize)>>>,
}

impl OracleJudge {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, qid: impl Into<Qid>, chunk_id: u64, span: (usize, usize)) {
        self.truth
            .entry(qid.into())
            .or_default()
            .entry(chunk_id)
            .or_default()
            .push(span);
    }

    /// Reads `{"qid","chunk_id","start","end"}` rows.
    pub fn load(path: &Path) -> Result<Self> {
        let mut judge = OracleJudge::new();
        for t in read_jsonl::<TruthSpan>(path)? {
            judge.insert(t.qid, t.chunk_id, (t.start, t.end));
        }
        Ok(judge)
    }

    fn is_true(&self, qid: &Qid, w: &ContextWindow) -> bool {
        self.truth
            .get(qid)
            .and_then(|m| m.get(&w.chunk_id))
            .is_some_and(|spans| spans.iter().any(|&(s, e)| s < w.span.1 && w.span.0 < e))
    }
}

impl Judge for OracleJudge {
    fn judge(&self, req: &JudgeRequest<'_>) -> Result<Vec<Verdict>> {
        Ok(req
            .windows
            .iter()
            .map(|w| if self.is_true(&req.entity.qid, w) { Verdict::Yes } else { Verdict::No })
            .collect())
    }
}

/// A true mention of `qid`, in chunk-text character offsets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthSpan {
    pub qid: Qid,
    pub chunk_id: u64,
    pub start: usize,
    pub end: usize,
}

/// One row of `judgments.jsonl`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub qid: Qid,
    pub chunk_id: u64,
    pub window_index: usize,
    pub verdict: Verdict,
}

type JudgmentKey = (Qid, u64, usize);

/// Answers from a judgment file; a window with no recorded verdict is an error.
#[derive(Clone, Debug, Default)]
pub struct ReplayJudge {
    verdicts: HashMap<JudgmentKey, Verdict>,
}

impl ReplayJudge {
    pub fn from_judgments(rows: impl IntoIterator<Item = Judgment>) -> Self {
        ReplayJudge {
            verdicts: rows
                .into_iter()
                .map(|j| ((j.qid, j.chunk_id, j.window_index), j.verdict))
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_judgments(read_jsonl::<Judgment>(path)?))
    }
}

impl Judge for ReplayJudge {
    fn judge(&self, req: &JudgeRequest<'_>) -> Result<Vec<Verdict>> {
        req.windows
            .iter()
            .map(|w| {
                self.verdicts
                    .get(&(req.entity.qid.clone(), w.chunk_id, w.window_index))
                    .copied()
                    .ok_or_else(|| {
                        Error::Judge(format!(
                            "no cached verdict for {} chunk {} window {}",
                            req.entity.qid, w.chunk_id, w.window_index
                        ))
                    })
            })
            .collect()
    }
}

/// Memoizes an inner judge by (qid, chunk, window) and can persist the
/// memo as a judgment file. Cached answers are served without calling the
/// inner judge.
pub struct CachingJudge<J> {
    inner: J,
    cache: Mutex<BTreeMap<JudgmentKey, Verdict>>,
}

impl<J: Judge> CachingJudge<J> {
    pub fn new(inner: J) -> Self {
        CachingJudge {
            inner,
            cache: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn with_cache(inner: J, rows: impl IntoIterator<Item = Judgment>) -> Self {
        let judge = Self::new(inner);
        judge
            .cache
            .lock()
            .expect("cache lock")
            .extend(rows.into_iter().map(|j| ((j.qid, j.chunk_id, j.window_index), j.verdict)));
        judge
    }

    pub fn judgments(&self) -> Vec<Judgment> {
        self.cache
            .lock()
            .expect("cache lock")
            .iter()
            .map(|((qid, chunk_id, window_index), verdict)| Judgment {
                qid: qid.clone(),
                chunk_id: *chunk_id,
                window_index: *window_index,
                verdict: *verdict,
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.judgments())
    }
}

impl<J: Judge> Judge for CachingJudge<J> {
    fn judge(&self, req: &JudgeRequest<'_>) -> Result<Vec<Verdict>> {
        let key = |w: &ContextWindow| (req.entity.qid.clone(), w.chunk_id, w.window_index);
        let cached: Option<Vec<Verdict>> = {
            let cache = self.cache.lock().expect("cache lock");
            req.windows.iter().map(|w| cache.get(&key(w)).copied()).collect()
        };
        if let Some(v) = cached {
            return Ok(v);
        }
        let verdicts = self.inner.judge(req)?;
        if verdicts.len() != req.windows.len() {
            return Err(Error::Judge(format!(
                "judge returned {} verdicts for {} windows",
                verdicts.len(),
                req.windows.len()
            )));
        }
        let mut cache = self.cache.lock().expect("cache lock");
        for (w, v) in req.windows.iter().zip(&verdicts) {
            cache.insert(key(w), *v);
        }
        Ok(verdicts)
    }
}

/// Request body posted per window by [`HttpJudge`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpJudgePrompt {
    pub entity_name: String,
    pub entity_description: String,
    pub context_window: String,
}

/// Reads a verdict from a judge response: the first word of the text, or of
/// the `verdict`/`answer`/`text` field when the body is a JSON object.
pub fn parse_verdict(body: &str) -> Option<Verdict> {
    let text = match serde_json::from_str::<serde_json::Value>(body) {
        Ok(serde_json::Value::Object(obj)) => ["verdict", "answer", "text"]
            .iter()
            .find_map(|k| obj.get(*k).and_then(|v| v.as_str()).map(str::to_string))?,
        Ok(serde_json::Value::String(s)) => s,
        _ => body.to_string(),
    };
    let word: String = text
        .trim_start()
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_ascii_lowercase();
    match word.as_str() {
        "yes" | "y" => Some(Verdict::Yes),
        "no" | "n" => Some(Verdict::No),
        _ => None,
    }
}

/// Posts one [`HttpJudgePrompt`] per window as JSON to a plain-HTTP endpoint
/// and parses a Yes/No answer from the response body. Wrap in
/// [`CachingJudge`] for reproducibility.
#[derive(Clone, Debug)]
pub struct HttpJudge {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpJudge {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpJudge {
            endpoint: endpoint.into(),
            agent: ureq::Agent::new_with_defaults(),
        }
    }
}

impl Judge for HttpJudge {
    fn judge(&self, req: &JudgeRequest<'_>) -> Result<Vec<Verdict>> {
        req.windows
            .iter()
            .map(|w| {
                let prompt = HttpJudgePrompt {
                    entity_name: req.entity.canonical_name.clone(),
                    entity_description: req.description.to_string(),
                    context_window: w.text.clone(),
                };
                let body = self
                    .agent
                    .post(&self.endpoint)
                    .send_json(&prompt)
                    .and_then(|mut r| r.body_mut().read_to_string())
                    .map_err(|e| Error::Judge(format!("{}: {e}", self.endpoint)))?;
                parse_verdict(&body)
                    .ok_or_else(|| Error::Judge(format!("unparseable judge answer {body:?}")))
            })
            .collect()
    }
}
