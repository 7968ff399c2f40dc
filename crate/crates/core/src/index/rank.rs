use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Scores;

/// Per-source score thresholds. A candidate matches when it satisfies any of
/// the thresholds that are set; comparisons are `>=` on the stored `f32`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// When set, a hyperlink score of exactly 1 is required for this route.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub el: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cc: Option<f32>,
}

impl Default for Thresholds {
    /// `H = 1, EL ≥ 0.6, C ≥ 0.6, CC ≥ 0.6`.
    fn default() -> Self {
        Thresholds {
            h: Some(1),
            el: Some(0.6),
            c: Some(0.6),
            cc: Some(0.6),
        }
    }
}

impl Thresholds {
    pub fn none() -> Self {
        Thresholds { h: None, el: None, c: None, cc: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.h.is_none() && self.el.is_none() && self.c.is_none() && self.cc.is_none() {
            return Err(Error::InvalidArgument("at least one threshold is required".into()));
        }
        if matches!(self.h, Some(h) if h != 1) {
            return Err(Error::InvalidArgument("the hyperlink threshold can only be 1".into()));
        }
        for v in [self.el, self.c, self.cc].into_iter().flatten() {
            if !v.is_finite() {
                return Err(Error::InvalidArgument("thresholds must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn passes(&self, s: &Scores) -> bool {
        fn ge(score: Option<f32>, min: Option<f32>) -> bool {
            matches!((score, min), (Some(v), Some(t)) if v >= t)
        }
        (self.h.is_some() && s.h == Some(1.0))
            || ge(s.el, self.el)
            || ge(s.c, self.c)
            || ge(s.cc, self.cc)
    }
}

/// Weights for the per-mention score average.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankWeights {
    pub h: f64,
    pub el: f64,
    pub c: f64,
    pub cc: f64,
}

impl Default for RankWeights {
    fn default() -> Self {
        RankWeights { h: 1.0, el: 1.0, c: 1.0, cc: 1.0 }
    }
}

impl RankWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.h, self.el, self.c, self.cc];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidArgument("rank weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Weighted average over the scores that are present, with weights
/// renormalized over those scores. Zero when no weighted score is present.
pub fn mention_rank(s: &Scores, w: &RankWeights) -> f32 {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (score, weight) in s.as_array().into_iter().zip([w.h, w.el, w.c, w.cc]) {
        if let Some(v) = score {
            num += weight * v as f64;
            den += weight;
        }
    }
    if den > 0.0 {
        (num / den) as f32
    } else {
        0.0
    }
}

/// Highest mention rank among the matching mentions; 0 for none.
pub fn rank_chunk<'a, I>(matching: I, w: &RankWeights) -> f32
where
    I: IntoIterator<Item = &'a Scores>,
{
    matching
        .into_iter()
        .map(|s| mention_rank(s, w))
        .fold(0.0, f32::max)
}
