//! Session-level metrics over per-turn relevance.
//!
//! Every turn carries exactly one response, so the per-query DCG collapses
//! to the turn's gain at rank 1 before the session discount is applied.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default query-discount base for sDCG.
pub const DEFAULT_BQ: f64 = 4.0;

/// Per-turn relevance and the derived gains `2^rel - 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionGains {
    rel: Vec<f64>,
    gains: Vec<f64>,
}

impl SessionGains {
    /// Fails on an empty session or relevance outside `[0, 1]`.
    pub fn from_relevance(rel: Vec<f64>) -> Result<Self> {
        if rel.is_empty() {
            return Err(Error::Degenerate("session has no scored turns"));
        }
        if let Some((i, r)) = rel.iter().enumerate().find(|(_, r)| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Config(format!("turn {} relevance {r} outside [0, 1]", i + 1)));
        }
        let gains = rel.iter().map(|r| r.exp2() - 1.0).collect();
        Ok(SessionGains { rel, gains })
    }

    pub fn rel(&self) -> &[f64] {
        &self.rel
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }
}

/// Scores each turn's response against its ground truth. Turns are passed
/// as `(response, ground_truth)` in session order.
pub fn session_gains<'a, I, F>(turns: I, mut metric: F) -> Result<SessionGains>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
    F: FnMut(&str, &str) -> Result<f64>,
{
    let rel = turns
        .into_iter()
        .map(|(response, truth)| metric(response, truth).map(|v| v.clamp(0.0, 1.0)))
        .collect::<Result<Vec<f64>>>()?;
    SessionGains::from_relevance(rel)
}

pub fn scg(g: &SessionGains) -> f64 {
    g.gains.iter().sum()
}

/// Session DCG with query-discount base `bq`.
pub fn sdcg(g: &SessionGains, bq: f64) -> Result<f64> {
    if !(bq > 1.0) {
        return Err(Error::Config(format!("sDCG base bq={bq} must exceed 1")));
    }
    let ln_bq = bq.ln();
    Ok(g
        .gains
        .iter()
        .enumerate()
        .map(|(idx, gain)| {
            let i = (idx + 1) as f64;
            // A single response per turn sits at rank 1.
            let query_dcg = gain / 2f64.log2();
            let session_discount = (i + bq - 1.0).ln() / ln_bq;
            query_dcg / session_discount
        })
        .sum())
}

pub fn sdcg_per_q(g: &SessionGains, bq: f64) -> Result<f64> {
    Ok(sdcg(g, bq)? / g.len() as f64)
}

/// The five session weighting schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwfScheme {
    DecreaseWeight,
    IncreaseWeight,
    EqualWeight,
    MiddleHigh,
    MiddleLow,
}

impl SwfScheme {
    pub const ALL: [SwfScheme; 5] = [
        SwfScheme::DecreaseWeight,
        SwfScheme::IncreaseWeight,
        SwfScheme::EqualWeight,
        SwfScheme::MiddleHigh,
        SwfScheme::MiddleLow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SwfScheme::DecreaseWeight => "decrease_weight",
            SwfScheme::IncreaseWeight => "increase_weight",
            SwfScheme::EqualWeight => "equal_weight",
            SwfScheme::MiddleHigh => "middle_high",
            SwfScheme::MiddleLow => "middle_low",
        }
    }

    /// Raw weight of the `r`-th (1-based) of `n` turns. Positions up to
    /// `ceil(n / 2)` use the first-half rule.
    pub fn raw_weight(self, r: usize, n: usize) -> f64 {
        let first_half = r <= n.div_ceil(2);
        let r_f = r as f64;
        let mirrored = (n + 1 - r) as f64;
        match self {
            SwfScheme::DecreaseWeight => 1.0 / r_f,
            SwfScheme::IncreaseWeight => r_f,
            SwfScheme::EqualWeight => 1.0,
            SwfScheme::MiddleHigh if first_half => r_f,
            SwfScheme::MiddleHigh => mirrored,
            SwfScheme::MiddleLow if first_half => 1.0 / r_f,
            SwfScheme::MiddleLow => 1.0 / mirrored,
        }
    }

    /// Weights normalized to sum to 1.
    pub fn normalized_weights(self, n: usize) -> Vec<f64> {
        let raw: Vec<f64> = (1..=n).map(|r| self.raw_weight(r, n)).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

impl fmt::Display for SwfScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SwfScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SwfScheme::ALL
            .into_iter()
            .find(|scheme| scheme.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown weighting scheme `{s}`")))
    }
}

/// Position-weighted mean of the turn gains.
pub fn swf(g: &SessionGains, scheme: SwfScheme) -> f64 {
    let n = g.len();
    let (mut num, mut den) = (0.0, 0.0);
    for (idx, gain) in g.gains.iter().enumerate() {
        let w = scheme.raw_weight(idx + 1, n);
        num += w * gain;
        den += w;
    }
    // A convex combination; clamp away rounding outside the gain range.
    (num / den).clamp(min_strategy(g), max_strategy(g))
}

pub fn max_strategy(g: &SessionGains) -> f64 {
    g.gains.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn min_strategy(g: &SessionGains) -> f64 {
    g.gains.iter().copied().fold(f64::INFINITY, f64::min)
}

/// A named session metric, as listed in reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMetric {
    Scg,
    Sdcg { bq: f64 },
    SdcgPerQ { bq: f64 },
    Swf(SwfScheme),
    Max,
    Min,
}

impl SessionMetric {
    /// sCG, sDCG, sDCG/q, the five weighting schemes, Max and Min.
    pub fn standard_suite() -> Vec<SessionMetric> {
        let mut all = vec![
            SessionMetric::Scg,
            SessionMetric::Sdcg { bq: DEFAULT_BQ },
            SessionMetric::SdcgPerQ { bq: DEFAULT_BQ },
        ];
        all.extend(SwfScheme::ALL.into_iter().map(SessionMetric::Swf));
        all.extend([SessionMetric::Max, SessionMetric::Min]);
        all
    }

    pub fn evaluate(&self, g: &SessionGains) -> Result<f64> {
        match *self {
            SessionMetric::Scg => Ok(scg(g)),
            SessionMetric::Sdcg { bq } => sdcg(g, bq),
            SessionMetric::SdcgPerQ { bq } => sdcg_per_q(g, bq),
            SessionMetric::Swf(scheme) => Ok(swf(g, scheme)),
            SessionMetric::Max => Ok(max_strategy(g)),
            SessionMetric::Min => Ok(min_strategy(g)),
        }
    }
}

impl fmt::Display for SessionMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SessionMetric::Scg => f.write_str("scg"),
            SessionMetric::Sdcg { bq } if *bq == DEFAULT_BQ => f.write_str("sdcg"),
            SessionMetric::Sdcg { bq } => write!(f, "sdcg_bq{bq}"),
            SessionMetric::SdcgPerQ { bq } if *bq == DEFAULT_BQ => f.write_str("sdcg_q"),
            SessionMetric::SdcgPerQ { bq } => write!(f, "sdcg_q_bq{bq}"),
            SessionMetric::Swf(s) => write!(f, "swf_{s}"),
            SessionMetric::Max => f.write_str("max"),
            SessionMetric::Min => f.write_str("min"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gains(rel: &[f64]) -> SessionGains {
        SessionGains::from_relevance(rel.to_vec()).unwrap()
    }

    fn from_gains(gains: &[f64]) -> SessionGains {
        SessionGains::from_relevance(gains.iter().map(|g| (g + 1.0).log2()).collect()).unwrap()
    }

    #[test]
    fn gain_examples() {
        assert_eq!(gains(&[0.0, 1.0]).gains(), &[0.0, 1.0]);
        assert!((gains(&[0.5]).gains()[0] - (2f64.sqrt() - 1.0)).abs() < 1e-12);
        assert!(SessionGains::from_relevance(vec![]).is_err());
        assert!(SessionGains::from_relevance(vec![1.2]).is_err());
    }

    #[test]
    fn scg_examples() {
        let g = gains(&[0.5]);
        assert_eq!(scg(&g), g.gains()[0]);
        assert_eq!(scg(&gains(&[0.0, 0.0])), 0.0);
        let g = from_gains(&[1.0, 0.5, 0.25]);
        assert!((scg(&g) - 1.75).abs() < 1e-12);
    }

    #[test]
    fn sdcg_examples() {
        let g = gains(&[0.37]);
        assert_eq!(sdcg(&g, DEFAULT_BQ).unwrap(), g.gains()[0]);
        let two = gains(&[1.0, 1.0]);
        let expected = 1.0 + 1.0 / (5f64.ln() / 4f64.ln());
        assert!((sdcg(&two, 4.0).unwrap() - expected).abs() < 1e-12);
        assert!((sdcg(&two, 4.0).unwrap() - 1.8614).abs() < 1e-4);
        assert!((sdcg_per_q(&two, 4.0).unwrap() - expected / 2.0).abs() < 1e-12);
        assert_eq!(sdcg(&gains(&[0.0, 0.0, 0.0]), 4.0).unwrap(), 0.0);
        assert!(sdcg(&two, 1.0).is_err());
    }

    #[test]
    fn swf_examples() {
        let g = from_gains(&[0.2, 0.9, 0.5, 0.4]);
        let mean: f64 = g.gains().iter().sum::<f64>() / 4.0;
        assert_eq!(swf(&g, SwfScheme::EqualWeight), mean);

        let single = gains(&[0.3]);
        for scheme in SwfScheme::ALL {
            assert_eq!(swf(&single, scheme), single.gains()[0]);
        }

        let raw: Vec<f64> = (1..=4).map(|r| SwfScheme::MiddleHigh.raw_weight(r, 4)).collect();
        assert_eq!(raw, vec![1.0, 2.0, 2.0, 1.0]);
        let w = SwfScheme::MiddleHigh.normalized_weights(4);
        let expected: f64 = g.gains().iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((swf(&g, SwfScheme::MiddleHigh) - expected).abs() < 1e-12);
        assert!((w[0] - 1.0 / 6.0).abs() < 1e-15 && (w[1] - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn odd_length_split() {
        let raw: Vec<f64> = (1..=5).map(|r| SwfScheme::MiddleHigh.raw_weight(r, 5)).collect();
        assert_eq!(raw, vec![1.0, 2.0, 3.0, 2.0, 1.0]);
        let low: Vec<f64> = (1..=3).map(|r| SwfScheme::MiddleLow.raw_weight(r, 3)).collect();
        assert_eq!(low, vec![1.0, 0.5, 1.0]);
    }

    #[test]
    fn max_min_examples() {
        let g = from_gains(&[0.2, 0.9, 0.5]);
        assert!((max_strategy(&g) - 0.9).abs() < 1e-12);
        assert!((min_strategy(&g) - 0.2).abs() < 1e-12);
        let c = gains(&[0.4, 0.4, 0.4]);
        assert_eq!(max_strategy(&c), min_strategy(&c));
        assert_eq!(max_strategy(&c), scg(&c) / 3.0);
    }

    #[test]
    fn metric_names() {
        let names: Vec<String> = SessionMetric::standard_suite().iter().map(|m| m.to_string()).collect();
        assert_eq!(names.len(), 10);
        assert_eq!(names[0], "scg");
        assert_eq!(names[3], "swf_decrease_weight");
        assert_eq!("middle_low".parse::<SwfScheme>().unwrap(), SwfScheme::MiddleLow);
    }
}
