//! Meta-evaluation: discriminative power (randomized Tukey HSD), predictive
//! power over human preference pairs, and concordance with gold scores.
//!
//! Every randomized procedure draws round `r` from its own ChaCha stream
//! keyed by the master seed, so results do not depend on thread count.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::{Corpus, PreferencePair, Preferred, ResponseOutput, SystemRun};
use crate::metric::{MetricSpec, Resources, RunScores, SrMetric};
use crate::session::SessionMetric;
use crate::{Error, Result};

pub const DEFAULT_PERMUTATIONS: usize = 10_000;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_RESAMPLES: usize = 1_000;

/// Slack for comparing permuted statistics against observed ones.
const TIE_EPS: f64 = 1e-12;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Systems × items scores of one metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreMatrix {
    pub metric_name: String,
    pub systems: Vec<String>,
    pub items: Vec<String>,
    /// `values[s][q]`.
    pub values: Vec<Vec<f64>>,
    /// Items scored for some but not all systems.
    pub dropped_items: usize,
}

impl ScoreMatrix {
    pub fn new(metric_name: impl Into<String>, systems: Vec<String>, items: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if systems.len() < 2 {
            return Err(Error::TooFew {
                what: "systems",
                needed: 2,
                found: systems.len(),
            });
        }
        if items.len() < 2 {
            return Err(Error::TooFew {
                what: "shared items",
                needed: 2,
                found: items.len(),
            });
        }
        if values.len() != systems.len() || values.iter().any(|row| row.len() != items.len()) {
            return Err(Error::Config("score matrix shape does not match its labels".into()));
        }
        Ok(ScoreMatrix {
            metric_name: metric_name.into(),
            systems,
            items,
            values,
            dropped_items: 0,
        })
    }

    /// Keeps the items every system scored.
    pub fn from_run_scores(metric_name: impl Into<String>, runs: &[RunScores]) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for run in runs {
            if !seen.insert(run.system.as_str()) {
                return Err(Error::Config(format!("system `{}` appears in more than one run", run.system)));
            }
        }
        let union: BTreeSet<&String> = runs.iter().flat_map(|r| r.scores.keys()).collect();
        let items: Vec<String> = union
            .iter()
            .filter(|item| runs.iter().all(|r| r.scores.contains_key(**item)))
            .map(|item| (*item).clone())
            .collect();
        let values = runs
            .iter()
            .map(|r| items.iter().map(|i| r.scores[i]).collect())
            .collect();
        let mut matrix = ScoreMatrix::new(
            metric_name,
            runs.iter().map(|r| r.system.clone()).collect(),
            items,
            values,
        )?;
        matrix.dropped_items = union.len() - matrix.items.len();
        Ok(matrix)
    }

    pub fn n_systems(&self) -> usize {
        self.systems.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn system_means(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|row| row.iter().sum::<f64>() / row.len() as f64)
            .collect()
    }
}

/// Scores every run with `metric` and builds the matrix.
pub fn build_score_matrix(runs: &[SystemRun], corpus: &Corpus, metric: &MetricSpec, resources: &Resources) -> Result<ScoreMatrix> {
    let scores: Vec<RunScores> = runs.iter().map(|r| resources.score_run(metric, corpus, r)).collect();
    ScoreMatrix::from_run_scores(metric.to_string(), &scores)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseSignificance {
    pub systems: Vec<String>,
    /// Symmetric, unit diagonal.
    pub p_values: Vec<Vec<f64>>,
    pub permutations: usize,
    pub seed: u64,
}

impl PairwiseSignificance {
    /// Unordered pairs `(a, b, p)` with `a < b`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let m = self.systems.len();
        (0..m).flat_map(move |a| (a + 1..m).map(move |b| (a, b, self.p_values[a][b])))
    }
}

/// Randomized Tukey HSD: each round permutes every item's scores across
/// systems and records the largest difference of system means; `p(a, b)` is
/// the share of rounds whose largest difference reaches `|mean_a - mean_b|`.
pub fn randomized_tukey_hsd(matrix: &ScoreMatrix, permutations: usize, seed: u64) -> Result<PairwiseSignificance> {
    if permutations == 0 {
        return Err(Error::Config("number of permutations must be positive".into()));
    }
    let m = matrix.n_systems();
    let n = matrix.n_items();
    let means = matrix.system_means();
    let columns: Vec<Vec<f64>> = (0..n).map(|q| matrix.values.iter().map(|row| row[q]).collect()).collect();

    let rounds: Vec<u64> = (0..permutations as u64).collect();
    let max_diffs = crate::par_map(&rounds, |&round| {
        let mut rng = stream_rng(seed, round);
        let mut sums = vec![0.0; m];
        let mut column = vec![0.0; m];
        for col in &columns {
            column.copy_from_slice(col);
            column.shuffle(&mut rng);
            for (s, v) in sums.iter_mut().zip(&column) {
                *s += v;
            }
        }
        let (lo, hi) = sums
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
        (hi - lo) / n as f64
    });

    let mut p_values = vec![vec![1.0; m]; m];
    for a in 0..m {
        for b in a + 1..m {
            let observed = (means[a] - means[b]).abs();
            let hits = max_diffs.iter().filter(|&&d| d >= observed - TIE_EPS).count();
            let p = hits as f64 / permutations as f64;
            p_values[a][b] = p;
            p_values[b][a] = p;
        }
    }
    Ok(PairwiseSignificance {
        systems: matrix.systems.clone(),
        p_values,
        permutations,
        seed,
    })
}

/// Share of system pairs with `p < alpha`.
pub fn discriminative_power(sig: &PairwiseSignificance, alpha: f64) -> f64 {
    let (mut significant, mut total) = (0usize, 0usize);
    for (_, _, p) in sig.pairs() {
        total += 1;
        if p < alpha {
            significant += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        significant as f64 / total as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// A metric tie counts as half an agreement.
    #[default]
    HalfCredit,
    /// Metric ties are removed from the denominator.
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictiveResult {
    pub agreement: f64,
    pub usable_pairs: usize,
    /// Pairs where either response could not be scored.
    pub excluded_pairs: usize,
    pub metric_ties: usize,
}

/// Agreement between the metric's preferred response and the human one.
/// `score(pair, response)` scores one response of a pair.
pub fn predictive_power<F>(pairs: &[PreferencePair], score: F, tie_policy: TiePolicy) -> Result<PredictiveResult>
where
    F: Fn(&PreferencePair, &str) -> Result<f64> + Sync + Send,
{
    let outcomes = crate::par_map(pairs, |pair| -> Option<std::cmp::Ordering> {
        let a = score(pair, &pair.response_a).ok()?;
        let b = score(pair, &pair.response_b).ok()?;
        a.partial_cmp(&b)
    });
    let (mut wins, mut ties, mut excluded, mut total) = (0usize, 0usize, 0usize, 0usize);
    for (pair, outcome) in pairs.iter().zip(outcomes) {
        let Some(order) = outcome else {
            excluded += 1;
            continue;
        };
        let metric_prefers = match order {
            std::cmp::Ordering::Greater => Preferred::A,
            std::cmp::Ordering::Less => Preferred::B,
            std::cmp::Ordering::Equal => {
                ties += 1;
                if tie_policy == TiePolicy::HalfCredit {
                    total += 1;
                }
                continue;
            }
        };
        total += 1;
        if metric_prefers == pair.human_prefers {
            wins += 1;
        }
    }
    if total == 0 {
        return Err(Error::TooFew {
            what: "usable preference pairs",
            needed: 1,
            found: 0,
        });
    }
    let credit = match tie_policy {
        TiePolicy::HalfCredit => 2 * wins + ties,
        TiePolicy::Drop => 2 * wins,
    };
    Ok(PredictiveResult {
        agreement: credit as f64 / (2 * total) as f64,
        usable_pairs: total,
        excluded_pairs: excluded,
        metric_ties: ties,
    })
}

/// Predictive power of a single-response metric, scoring each response of
/// a pair against its session's ground truth.
pub fn metric_predictive_power(
    metric: &SrMetric,
    pairs: &[PreferencePair],
    corpus: &Corpus,
    resources: &Resources,
    tie_policy: TiePolicy,
) -> Result<PredictiveResult> {
    predictive_power(
        pairs,
        |pair, response| {
            let truth = corpus
                .session_reference(&pair.question_id)
                .ok_or_else(|| Error::MissingGroundTruth(pair.question_id.clone()))?;
            resources.score_pair(metric, response, truth, None)
        },
        tie_policy,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineTest {
    /// Share of random-scorer resamples at least as far from chance as the
    /// candidate.
    #[default]
    Resampling,
    /// Two-sided Student t test of the candidate against the resample
    /// distribution.
    TTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceConfig {
    pub seed: u64,
    pub resamples: usize,
    pub test: BaselineTest,
}

impl Default for ConcordanceConfig {
    fn default() -> Self {
        ConcordanceConfig {
            seed: 0,
            resamples: DEFAULT_RESAMPLES,
            test: BaselineTest::Resampling,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcordanceResult {
    pub agreement: f64,
    pub usable_pairs: usize,
    pub baseline_agreement: f64,
    pub p_vs_baseline: f64,
}

/// Sign agreement over pairs where the gold strictly prefers one item,
/// with candidate ties worth half. Returns `(2 * agreements + ties, pairs)`.
pub fn agreement_counts(candidate: &[f64], gold: &[f64]) -> (usize, usize) {
    let mut credit = 0;
    let mut pairs = 0;
    for i in 0..gold.len() {
        for j in i + 1..gold.len() {
            if let Some(c) = pair_credit(candidate, gold, i, j) {
                credit += c;
                pairs += 1;
            }
        }
    }
    (credit, pairs)
}

/// Credit (0, 1 or 2 half-units) of one pair, or `None` when the gold ties.
fn pair_credit(candidate: &[f64], gold: &[f64], i: usize, j: usize) -> Option<usize> {
    let g = gold[i].partial_cmp(&gold[j])?;
    if g == std::cmp::Ordering::Equal {
        return None;
    }
    Some(match candidate[i].partial_cmp(&candidate[j]) {
        Some(std::cmp::Ordering::Equal) | None => 1,
        Some(c) if c == g => 2,
        Some(_) => 0,
    })
}

fn ratio(credit: usize, pairs: usize) -> f64 {
    credit as f64 / (2 * pairs) as f64
}

/// Random integer scores in `[-1, 5]`, one per gold item, from one stream.
fn random_scores(seed: u64, stream: u64, n: usize) -> Vec<i32> {
    let mut rng = stream_rng(seed, stream);
    (0..n).map(|_| rng.random_range(-1..=5)).collect()
}

/// The random scorer's scores for the gold items, as used for the
/// baseline of [`concordance`].
pub fn baseline_scores(seed: u64, gold: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let all = random_scores(seed, 0, gold.len());
    gold.keys().cloned().zip(all.iter().map(|&s| s as f64)).collect()
}

/// Agreement of integer scores in `[-1, 5]` over all gold-strict pairs,
/// in `O(n log n)` via a running histogram.
fn integer_scorer_credit(scores: &[i32], gold: &[f64]) -> (usize, usize) {
    let mut order: Vec<usize> = (0..gold.len()).collect();
    order.sort_by(|&a, &b| gold[a].total_cmp(&gold[b]));
    let mut below = [0usize; 7];
    let mut below_total = 0;
    let (mut credit, mut pairs) = (0, 0);
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && gold[order[end]] == gold[order[start]] {
            end += 1;
        }
        for &i in &order[start..end] {
            let bin = (scores[i] + 1) as usize;
            let lower: usize = below[..bin].iter().sum();
            credit += 2 * lower + below[bin];
            pairs += below_total;
        }
        for &i in &order[start..end] {
            below[(scores[i] + 1) as usize] += 1;
            below_total += 1;
        }
        start = end;
    }
    (credit, pairs)
}

/// Concordance of `candidate` with `gold` plus the random-scorer baseline.
///
/// The baseline draws one score per gold item (in key order), so items keep
/// their random score whichever subset a candidate covers. With
/// `disagreement_with`, only pairs on which the candidate and that reference
/// metric order the items differently are counted.
pub fn concordance(
    candidate: &BTreeMap<String, f64>,
    gold: &BTreeMap<String, f64>,
    config: &ConcordanceConfig,
    disagreement_with: Option<&BTreeMap<String, f64>>,
) -> Result<ConcordanceResult> {
    let shared: Vec<(usize, &String)> = gold
        .keys()
        .enumerate()
        .filter(|(_, k)| candidate.contains_key(*k) && disagreement_with.is_none_or(|r| r.contains_key(*k)))
        .collect();
    if shared.len() < 2 {
        return Err(Error::TooFew {
            what: "shared items",
            needed: 2,
            found: shared.len(),
        });
    }
    let gold_v: Vec<f64> = shared.iter().map(|(_, k)| gold[*k]).collect();
    let cand_v: Vec<f64> = shared.iter().map(|(_, k)| candidate[*k]).collect();

    let pair_list: Option<Vec<(usize, usize)>> = disagreement_with.map(|reference| {
        let ref_v: Vec<f64> = shared.iter().map(|(_, k)| reference[*k]).collect();
        let mut pairs = Vec::new();
        for i in 0..shared.len() {
            for j in i + 1..shared.len() {
                if gold_v[i] != gold_v[j] && cand_v[i].partial_cmp(&cand_v[j]) != ref_v[i].partial_cmp(&ref_v[j]) {
                    pairs.push((i, j));
                }
            }
        }
        pairs
    });

    let (credit, usable) = match &pair_list {
        None => agreement_counts(&cand_v, &gold_v),
        Some(pairs) => (
            pairs.iter().filter_map(|&(i, j)| pair_credit(&cand_v, &gold_v, i, j)).sum(),
            pairs.len(),
        ),
    };
    if usable == 0 {
        return Err(Error::NoStrictGoldPreferences);
    }
    let agreement = ratio(credit, usable);

    let baseline_agreement = |stream: u64| -> f64 {
        let all = random_scores(config.seed, stream, gold.len());
        let scores: Vec<i32> = shared.iter().map(|(idx, _)| all[*idx]).collect();
        match &pair_list {
            None => {
                let (c, p) = integer_scorer_credit(&scores, &gold_v);
                ratio(c, p)
            }
            Some(pairs) => {
                let as_f64: Vec<f64> = scores.iter().map(|&s| s as f64).collect();
                let c: usize = pairs.iter().filter_map(|&(i, j)| pair_credit(&as_f64, &gold_v, i, j)).sum();
                ratio(c, pairs.len())
            }
        }
    };
    let baseline = baseline_agreement(0);
    let streams: Vec<u64> = (1..=config.resamples as u64).collect();
    let resampled = crate::par_map(&streams, |&s| baseline_agreement(s));
    let p_vs_baseline = baseline_p_value(agreement, &resampled, config.test)?;

    Ok(ConcordanceResult {
        agreement,
        usable_pairs: usable,
        baseline_agreement: baseline,
        p_vs_baseline,
    })
}

/// p-value of an observed agreement against random-scorer resamples.
pub fn baseline_p_value(observed: f64, resampled: &[f64], test: BaselineTest) -> Result<f64> {
    if resampled.len() < 2 {
        return Err(Error::TooFew {
            what: "baseline resamples",
            needed: 2,
            found: resampled.len(),
        });
    }
    match test {
        BaselineTest::Resampling => {
            let d = (observed - 0.5).abs();
            let hits = resampled.iter().filter(|a| (*a - 0.5).abs() >= d - TIE_EPS).count();
            Ok(hits as f64 / resampled.len() as f64)
        }
        BaselineTest::TTest => {
            let r = resampled.len() as f64;
            let mean = resampled.iter().sum::<f64>() / r;
            let var = resampled.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (r - 1.0);
            let sd = var.sqrt();
            if sd == 0.0 {
                return Ok(if observed == mean { 1.0 } else { 0.0 });
            }
            // A single new observation against the resample distribution.
            let t = (observed - mean) / (sd * (1.0 + 1.0 / r).sqrt());
            let dist = StudentsT::new(0.0, 1.0, r - 1.0).map_err(|e| Error::Config(e.to_string()))?;
            Ok((2.0 * dist.sf(t.abs())).min(1.0))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcordanceRow {
    pub metric: String,
    #[serde(flatten)]
    pub result: ConcordanceResult,
}

/// Per-metric concordance rows followed by the random-baseline row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcordanceTable {
    pub system: String,
    pub rows: Vec<ConcordanceRow>,
    /// Items left out, with the reason.
    pub skipped: BTreeMap<String, String>,
    pub seed: u64,
    pub resamples: usize,
}

pub const BASELINE_ROW: &str = "random";

/// Builds a concordance table from per-metric item scores. The baseline
/// row compares the random scorer against its own resamples.
pub fn concordance_table(
    system: &str,
    metric_scores: &[(String, BTreeMap<String, f64>)],
    gold: &BTreeMap<String, f64>,
    config: &ConcordanceConfig,
) -> Result<ConcordanceTable> {
    let mut rows = Vec::with_capacity(metric_scores.len() + 1);
    for (name, scores) in metric_scores {
        rows.push(ConcordanceRow {
            metric: name.clone(),
            result: concordance(scores, gold, config, None)?,
        });
    }
    rows.push(ConcordanceRow {
        metric: BASELINE_ROW.to_string(),
        result: concordance(&baseline_scores(config.seed, gold), gold, config, None)?,
    });
    Ok(ConcordanceTable {
        system: system.to_string(),
        rows,
        skipped: BTreeMap::new(),
        seed: config.seed,
        resamples: config.resamples,
    })
}

/// Session-level concordance of session metrics with satisfaction labels.
/// Per-turn relevance comes from `base`; sessions without a satisfaction
/// label or without any scorable turn are skipped and listed.
pub fn session_concordance_suite(
    corpus: &Corpus,
    run: &SystemRun,
    metrics: &[SessionMetric],
    base: &SrMetric,
    resources: &Resources,
    config: &ConcordanceConfig,
) -> Result<ConcordanceTable> {
    let mut gold = BTreeMap::new();
    let mut skipped = BTreeMap::new();
    let mut gains = BTreeMap::new();
    for (item, output) in &run.outputs {
        let ResponseOutput::Session(responses) = output else {
            return Err(Error::Usage(format!(
                "session concordance needs session outputs, run `{}` has `{}` outputs",
                run.run_id,
                output.mode()
            )));
        };
        let Some(satisfaction) = corpus.session(item).and_then(|s| s.satisfaction) else {
            skipped.insert(item.clone(), "no satisfaction label".to_string());
            continue;
        };
        match resources.session_gains(base, corpus, &run.system_name, item, responses) {
            Ok(g) => {
                gold.insert(item.clone(), satisfaction as f64);
                gains.insert(item.clone(), g);
            }
            Err(e) => {
                skipped.insert(item.clone(), e.to_string());
            }
        }
    }
    let metric_scores = metrics
        .iter()
        .map(|m| {
            let scores = gains
                .iter()
                .map(|(item, g)| Ok((item.clone(), m.evaluate(g)?)))
                .collect::<Result<BTreeMap<_, _>>>()?;
            Ok((format!("{m}({base})"), scores))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = concordance_table(&run.system_name, &metric_scores, &gold, config)?;
    table.skipped = skipped;
    Ok(table)
}
