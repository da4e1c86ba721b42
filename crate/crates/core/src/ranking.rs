//! Ranked-list metrics (nDCG@k, RBP, ERR) whose relevance grades are
//! single-response metric scores against the ground truth.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default list depth.
pub const DEFAULT_K_MAX: usize = 5;

/// Which ranking metric the derived grades feed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceTarget {
    /// `R_i = M(r_i, g)`.
    NdcgRbp,
    /// `R_i = (2^M(r_i, g) - 1) / 2^M_max`.
    Err,
}

/// What `M_max` means for the ERR mapping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxPolicy {
    /// The metric's maximum attainable value (1 for every bundled metric).
    Attainable(f64),
    /// The largest score within the list being graded.
    PerList,
}

impl Default for MaxPolicy {
    fn default() -> Self {
        MaxPolicy::Attainable(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedRelevance {
    pub gains: Vec<f64>,
    pub source_metric: String,
    pub m_max: f64,
}

impl RankedRelevance {
    pub fn new(gains: Vec<f64>) -> Self {
        RankedRelevance {
            gains,
            source_metric: String::new(),
            m_max: 1.0,
        }
    }
}

/// Scores each ranked response with `metric` and maps the scores to grades.
/// A failing response reports its 1-based rank.
pub fn derive_relevance<F>(
    responses: &[String],
    ground_truth: &str,
    metric_name: &str,
    mut metric: F,
    target: RelevanceTarget,
    max_policy: MaxPolicy,
) -> Result<RankedRelevance>
where
    F: FnMut(&str, &str) -> Result<f64>,
{
    let scores = responses
        .iter()
        .enumerate()
        .map(|(i, r)| {
            metric(r, ground_truth).map_err(|e| Error::AtRank {
                rank: i + 1,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let m_max = match max_policy {
        MaxPolicy::Attainable(m) => m,
        MaxPolicy::PerList => scores.iter().copied().fold(0.0, f64::max),
    };
    Ok(RankedRelevance {
        gains: grades_from_scores(&scores, target, m_max),
        source_metric: metric_name.to_string(),
        m_max,
    })
}

/// The grade mapping on its own.
pub fn grades_from_scores(scores: &[f64], target: RelevanceTarget, m_max: f64) -> Vec<f64> {
    match target {
        RelevanceTarget::NdcgRbp => scores.to_vec(),
        RelevanceTarget::Err => {
            let denom = m_max.exp2();
            scores.iter().map(|m| (m.exp2() - 1.0) / denom).collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ndcg {
    pub value: f64,
    /// The ideal DCG was zero; `value` is 0 by convention.
    pub zero_gain: bool,
}

fn dcg(gains: &[f64], k: usize) -> f64 {
    gains
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, r)| (r.exp2() - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// nDCG@k against the descending sort of the same grades.
pub fn ndcg_at_k(rel: &RankedRelevance, k: usize) -> Result<Ndcg> {
    if k == 0 {
        return Err(Error::Config("nDCG cutoff k must be at least 1".into()));
    }
    let mut ideal = rel.gains.clone();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let ideal_dcg = dcg(&ideal, k);
    if ideal_dcg <= 0.0 {
        return Ok(Ndcg {
            value: 0.0,
            zero_gain: true,
        });
    }
    if ideal == rel.gains {
        return Ok(Ndcg {
            value: 1.0,
            zero_gain: false,
        });
    }
    Ok(Ndcg {
        value: (dcg(&rel.gains, k) / ideal_dcg).min(1.0),
        zero_gain: false,
    })
}

/// Rank-biased precision with persistence `p`.
pub fn rbp(rel: &RankedRelevance, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Config(format!("RBP persistence {p} outside (0, 1)")));
    }
    let mut weight = 1.0;
    let mut sum = 0.0;
    for r in &rel.gains {
        sum += r * weight;
        weight *= p;
    }
    Ok((1.0 - p) * sum)
}

/// Expected reciprocal rank under the cascade model.
pub fn err(rel: &RankedRelevance) -> Result<f64> {
    let mut not_stopped = 1.0;
    let mut total = 0.0;
    for (i, &r) in rel.gains.iter().enumerate() {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::InvalidStopProbability { rank: i + 1, value: r });
        }
        total += not_stopped * r / (i + 1) as f64;
        not_stopped *= 1.0 - r;
    }
    Ok(total)
}
