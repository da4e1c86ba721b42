//! Word-overlap metrics: BLEU-N, METEOR and ROUGE-L.

use serde::{Deserialize, Serialize};

use crate::textprep::{align_meteor, lcs_length, ngrams, MatchStage, SynonymLexicon};
use crate::{Error, Result};

/// How BLEU treats an n-gram order with no clipped matches or no support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    None,
    /// A zero numerator becomes `epsilon`; an order with no candidate
    /// n-grams at all gets precision `epsilon`.
    AddEpsilon(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_n: usize,
    /// One weight per order; empty means uniform `1 / max_n`.
    pub weights: Vec<f64>,
    pub smoothing: Smoothing,
}

impl Default for BleuConfig {
    fn default() -> Self {
        BleuConfig {
            max_n: 4,
            weights: Vec::new(),
            smoothing: Smoothing::AddEpsilon(1e-9),
        }
    }
}

impl BleuConfig {
    pub fn with_max_n(max_n: usize) -> Self {
        BleuConfig {
            max_n,
            ..Default::default()
        }
    }

    fn resolved_weights(&self) -> Result<Vec<f64>> {
        if self.max_n == 0 {
            return Err(Error::Config("BLEU max_n must be at least 1".into()));
        }
        if self.weights.is_empty() {
            return Ok(vec![1.0 / self.max_n as f64; self.max_n]);
        }
        if self.weights.len() != self.max_n {
            return Err(Error::Config(format!(
                "BLEU expects {} weights, got {}",
                self.max_n,
                self.weights.len()
            )));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Config("BLEU weights must be non-negative and sum to 1".into()));
        }
        Ok(self.weights.clone())
    }
}

/// Clipped and total n-gram counts pooled over a corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NgramCounts {
    pub clipped: u64,
    pub total: u64,
}

impl std::ops::Add for NgramCounts {
    type Output = NgramCounts;

    fn add(self, rhs: NgramCounts) -> NgramCounts {
        NgramCounts {
            clipped: self.clipped + rhs.clipped,
            total: self.total + rhs.total,
        }
    }
}

/// Clipped n-gram co-occurrences of a single candidate/reference pair.
pub fn ngram_counts(candidate: &[String], reference: &[String], n: usize) -> NgramCounts {
    let cand = ngrams(candidate, n);
    let refr = ngrams(reference, n);
    let mut counts = NgramCounts::default();
    for (gram, &c) in &cand {
        counts.total += c as u64;
        counts.clipped += c.min(refr.get(gram).copied().unwrap_or(0)) as u64;
    }
    counts
}

fn check_aligned<C, R>(candidates: &[C], references: &[R]) -> Result<()> {
    if candidates.len() != references.len() {
        return Err(Error::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    Ok(())
}

fn pooled_counts<C, R>(candidates: &[C], references: &[R], n: usize) -> NgramCounts
where
    C: AsRef<[String]>,
    R: AsRef<[String]>,
{
    candidates
        .iter()
        .zip(references)
        .map(|(c, r)| ngram_counts(c.as_ref(), r.as_ref(), n))
        .fold(NgramCounts::default(), |a, b| a + b)
}

fn smoothed_precision(counts: NgramCounts, n: usize, smoothing: Smoothing) -> Result<f64> {
    match smoothing {
        Smoothing::None => {
            if counts.total == 0 {
                Err(Error::ZeroSupport { n })
            } else {
                Ok(counts.clipped as f64 / counts.total as f64)
            }
        }
        Smoothing::AddEpsilon(eps) => Ok(if counts.total == 0 {
            eps
        } else if counts.clipped == 0 {
            eps / counts.total as f64
        } else {
            counts.clipped as f64 / counts.total as f64
        }),
    }
}

/// Corpus-level modified n-gram precision: clipped matches and candidate
/// n-grams are summed over all pairs before dividing.
pub fn bleu_precision<C, R>(
    candidates: &[C],
    references: &[R],
    n: usize,
    smoothing: Smoothing,
) -> Result<f64>
where
    C: AsRef<[String]>,
    R: AsRef<[String]>,
{
    check_aligned(candidates, references)?;
    if n == 0 {
        return Err(Error::Config("n-gram order must be positive".into()));
    }
    smoothed_precision(pooled_counts(candidates, references, n), n, smoothing)
}

/// Corpus-level brevity penalty. Fails on an all-empty candidate side, whose
/// limit is 0.
pub fn brevity_penalty<C, R>(candidates: &[C], references: &[R]) -> Result<f64>
where
    C: AsRef<[String]>,
    R: AsRef<[String]>,
{
    check_aligned(candidates, references)?;
    let cand_len: usize = candidates.iter().map(|c| c.as_ref().len()).sum();
    let ref_len: usize = references.iter().map(|r| r.as_ref().len()).sum();
    if cand_len == 0 {
        return Err(Error::Degenerate("zero-length candidates"));
    }
    Ok(if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuScore {
    pub score: f64,
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    /// Set when some order had no clipped match and no smoothing was
    /// applied, forcing the score to 0.
    pub zero_overlap: bool,
}

/// BLEU-N. Sentence-level BLEU passes singleton slices.
pub fn bleu<C, R>(candidates: &[C], references: &[R], config: &BleuConfig) -> Result<BleuScore>
where
    C: AsRef<[String]>,
    R: AsRef<[String]>,
{
    check_aligned(candidates, references)?;
    let weights = config.resolved_weights()?;
    let bp = match brevity_penalty(candidates, references) {
        Ok(bp) => bp,
        Err(Error::Degenerate(_)) => 0.0,
        Err(e) => return Err(e),
    };

    let mut precisions = Vec::with_capacity(config.max_n);
    for n in 1..=config.max_n {
        let counts = pooled_counts(candidates, references, n);
        precisions.push(smoothed_precision(counts, n, config.smoothing)?);
    }

    if precisions.contains(&0.0) || bp == 0.0 {
        return Ok(BleuScore {
            score: 0.0,
            precisions,
            brevity_penalty: bp,
            zero_overlap: true,
        });
    }
    let log_sum: f64 = weights
        .iter()
        .zip(&precisions)
        .map(|(w, p)| w * p.ln())
        .sum();
    Ok(BleuScore {
        score: bp * log_sum.exp(),
        precisions,
        brevity_penalty: bp,
        zero_overlap: false,
    })
}

/// Single-pair BLEU score.
pub fn sentence_bleu(candidate: &[String], reference: &[String], config: &BleuConfig) -> Result<f64> {
    bleu(&[candidate], &[reference], config).map(|b| b.score)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeteorConfig {
    pub alpha: f64,
    pub penalty_weight: f64,
    pub penalty_exponent: f64,
    pub stages: Vec<MatchStage>,
}

impl Default for MeteorConfig {
    fn default() -> Self {
        MeteorConfig {
            alpha: 0.9,
            penalty_weight: 0.5,
            penalty_exponent: 3.0,
            stages: vec![MatchStage::Exact, MatchStage::Stem],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeteorScore {
    pub score: f64,
    pub precision: f64,
    pub recall: f64,
    pub penalty: f64,
    pub matches: usize,
    pub chunks: usize,
}

/// METEOR with the fragmentation penalty.
pub fn meteor(
    candidate: &[String],
    reference: &[String],
    config: &MeteorConfig,
    synonyms: Option<&SynonymLexicon>,
) -> Result<MeteorScore> {
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::Config(format!("METEOR alpha {} outside (0, 1)", config.alpha)));
    }
    let alignment = align_meteor(candidate, reference, &config.stages, synonyms)?;
    let matches = alignment.n_unigram_matches;
    if matches == 0 {
        return Ok(MeteorScore {
            score: 0.0,
            precision: 0.0,
            recall: 0.0,
            penalty: 0.0,
            matches: 0,
            chunks: 0,
        });
    }
    let precision = matches as f64 / candidate.len() as f64;
    let recall = matches as f64 / reference.len() as f64;
    let fmean = if precision == recall {
        precision
    } else {
        precision * recall / (config.alpha * precision + (1.0 - config.alpha) * recall)
    };
    let chunks = alignment.n_chunks;
    let fragmentation = if config.penalty_exponent == 3.0 {
        // Integer cubes keep the identity case exact: 0.5 * 1/L^3.
        (chunks as f64).powi(3) / (matches as f64).powi(3)
    } else {
        (chunks as f64 / matches as f64).powf(config.penalty_exponent)
    };
    let penalty = config.penalty_weight * fragmentation;
    Ok(MeteorScore {
        score: (1.0 - penalty) * fmean,
        precision,
        recall,
        penalty,
        matches,
        chunks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeConfig {
    pub beta: f64,
}

impl Default for RougeConfig {
    fn default() -> Self {
        RougeConfig { beta: 8.0 }
    }
}

/// ROUGE-L F-measure. Recall is taken against the reference, precision
/// against the candidate.
pub fn rouge_l(candidate: &[String], reference: &[String], config: &RougeConfig) -> Result<f64> {
    if !(config.beta > 0.0) {
        return Err(Error::Config(format!("ROUGE beta {} must be positive", config.beta)));
    }
    let lcs = lcs_length(reference, candidate);
    if lcs == 0 {
        return Ok(0.0);
    }
    let recall = lcs as f64 / reference.len() as f64;
    let precision = lcs as f64 / candidate.len() as f64;
    let b2 = config.beta * config.beta;
    Ok((1.0 + b2) * recall * precision / (recall + b2 * precision))
}
