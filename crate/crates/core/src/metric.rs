//! Metric names, the resources they need, and scoring of run outputs.
//!
//! Metric names follow a small grammar:
//!
//! * single-response: `bleu1`..`bleu9`, `meteor`, `rouge_l`, `ea`, `scs`,
//!   `bertscore`, `ext:<name>` for a registered external scorer;
//! * ranked lists: `ndcg@K(base)`, `rbpP(base)`, `err(base)`;
//! * sessions: `scg(base)`, `sdcg(base)`, `sdcg_q(base)`,
//!   `swf_<scheme>(base)`, `max(base)`, `min(base)`.
//!
//! `base` is a single-response metric and defaults to `meteor` when the
//! parentheses are omitted. A trailing `-gain` on the base is accepted.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;

use crate::corpus::{question_id, Corpus, OutputMode, ResponseOutput, SystemRun};
use crate::embedding::{bertscore, ea_score, soft_cosine, ContextualStore, ContextualTokens, EmbeddingTable, Side};
use crate::overlap::{meteor, rouge_l, sentence_bleu, BleuConfig, MeteorConfig, RougeConfig, Smoothing};
use crate::ranking::{derive_relevance, err, ndcg_at_k, rbp, MaxPolicy, RelevanceTarget, DEFAULT_K_MAX};
use crate::session::{SessionGains, SessionMetric, SwfScheme, DEFAULT_BQ};
use crate::textprep::{tokenize, MatchStage, SynonymLexicon};
use crate::{Error, Result};

/// A metric that scores one response against one ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SrMetric {
    Bleu(usize),
    Meteor,
    RougeL,
    Ea,
    SoftCosine,
    BertScore,
    External(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankingMetric {
    Ndcg { k: usize },
    Rbp { p: f64 },
    Err,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetricSpec {
    Single(SrMetric),
    Ranking { metric: RankingMetric, base: SrMetric },
    Session { metric: SessionMetric, base: SrMetric },
}

impl MetricSpec {
    /// The run output mode this metric consumes.
    pub fn mode(&self) -> OutputMode {
        match self {
            MetricSpec::Single(_) => OutputMode::Single,
            MetricSpec::Ranking { .. } => OutputMode::Ranked,
            MetricSpec::Session { .. } => OutputMode::Session,
        }
    }

    pub fn base(&self) -> &SrMetric {
        match self {
            MetricSpec::Single(m) => m,
            MetricSpec::Ranking { base, .. } | MetricSpec::Session { base, .. } => base,
        }
    }
}

impl fmt::Display for SrMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SrMetric::Bleu(n) => write!(f, "bleu{n}"),
            SrMetric::Meteor => f.write_str("meteor"),
            SrMetric::RougeL => f.write_str("rouge_l"),
            SrMetric::Ea => f.write_str("ea"),
            SrMetric::SoftCosine => f.write_str("scs"),
            SrMetric::BertScore => f.write_str("bertscore"),
            SrMetric::External(name) => write!(f, "ext:{name}"),
        }
    }
}

impl fmt::Display for RankingMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankingMetric::Ndcg { k } => write!(f, "ndcg@{k}"),
            RankingMetric::Rbp { p } => write!(f, "rbp{p}"),
            RankingMetric::Err => f.write_str("err"),
        }
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricSpec::Single(m) => write!(f, "{m}"),
            MetricSpec::Ranking { metric, base } => write!(f, "{metric}({base})"),
            MetricSpec::Session { metric, base } => write!(f, "{metric}({base})"),
        }
    }
}

impl FromStr for SrMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(name) = s.strip_prefix("ext:") {
            if name.is_empty() {
                return Err(Error::Usage("external scorer needs a name".into()));
            }
            return Ok(SrMetric::External(name.to_string()));
        }
        let lower = s.to_ascii_lowercase();
        let lower = lower.strip_suffix("-gain").unwrap_or(&lower);
        Ok(match lower {
            "meteor" => SrMetric::Meteor,
            "rouge_l" | "rouge-l" | "rougel" => SrMetric::RougeL,
            "ea" => SrMetric::Ea,
            "scs" | "soft_cosine" => SrMetric::SoftCosine,
            "bertscore" => SrMetric::BertScore,
            "bleu" => SrMetric::Bleu(4),
            other => match other.strip_prefix("bleu").and_then(|n| n.parse::<usize>().ok()) {
                Some(n @ 1..=9) => SrMetric::Bleu(n),
                _ => return Err(Error::Usage(format!("unknown single-response metric `{s}`"))),
            },
        })
    }
}

fn parse_number<T: FromStr>(text: &str, what: &str, whole: &str) -> Result<T> {
    text.parse()
        .map_err(|_| Error::Usage(format!("bad {what} `{text}` in metric `{whole}`")))
}

impl FromStr for MetricSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let whole = s.trim();
        let (head, base) = match whole.split_once('(') {
            Some((head, rest)) => {
                let arg = rest
                    .strip_suffix(')')
                    .ok_or_else(|| Error::Usage(format!("unbalanced parentheses in metric `{whole}`")))?;
                (head.trim().to_ascii_lowercase(), Some(arg.parse::<SrMetric>()?))
            }
            None => (whole.to_ascii_lowercase(), None),
        };
        let base_or_default = || base.clone().unwrap_or(SrMetric::Meteor);

        let ranking = if head == "ndcg" {
            Some(RankingMetric::Ndcg { k: DEFAULT_K_MAX })
        } else if let Some(k) = head.strip_prefix("ndcg@") {
            let k: usize = parse_number(k, "cutoff", whole)?;
            if k == 0 {
                return Err(Error::Usage(format!("nDCG cutoff must be positive in `{whole}`")));
            }
            Some(RankingMetric::Ndcg { k })
        } else if let Some(p) = head.strip_prefix("rbp") {
            let p: f64 = parse_number(p.trim_start_matches('@'), "persistence", whole)?;
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Usage(format!("RBP persistence must lie in (0, 1) in `{whole}`")));
            }
            Some(RankingMetric::Rbp { p })
        } else if head == "err" {
            Some(RankingMetric::Err)
        } else {
            None
        };
        if let Some(metric) = ranking {
            return Ok(MetricSpec::Ranking {
                metric,
                base: base_or_default(),
            });
        }

        let session = match head.as_str() {
            "scg" => Some(SessionMetric::Scg),
            "sdcg" => Some(SessionMetric::Sdcg { bq: DEFAULT_BQ }),
            "sdcg_q" | "sdcg/q" => Some(SessionMetric::SdcgPerQ { bq: DEFAULT_BQ }),
            "max" => Some(SessionMetric::Max),
            "min" => Some(SessionMetric::Min),
            other => match other.strip_prefix("swf_") {
                Some(scheme) => Some(SessionMetric::Swf(scheme.parse::<SwfScheme>().map_err(|_| {
                    Error::Usage(format!("unknown weighting scheme `{scheme}` in metric `{whole}`"))
                })?)),
                None => None,
            },
        };
        if let Some(metric) = session {
            return Ok(MetricSpec::Session {
                metric,
                base: base_or_default(),
            });
        }

        if base.is_some() {
            return Err(Error::Usage(format!("unknown list or session metric `{head}` in `{whole}`")));
        }
        Ok(MetricSpec::Single(whole.parse()?))
    }
}

/// Parses a comma-separated metric list. Commas inside parentheses do not
/// split.
pub fn parse_metric_list(text: &str) -> Result<Vec<MetricSpec>> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    for (i, c) in text.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                push_metric(&text[start..i], &mut out)?;
                start = i + 1;
            }
            _ => {}
        }
    }
    push_metric(&text[start..], &mut out)?;
    Ok(out)
}

fn push_metric(part: &str, out: &mut Vec<MetricSpec>) -> Result<()> {
    if !part.trim().is_empty() {
        out.push(part.parse()?);
    }
    Ok(())
}

/// Scores one response against one ground truth.
pub type ExternalScorer = Arc<dyn Fn(&str, &str) -> Result<f64> + Send + Sync>;

/// Loaded resources and per-metric settings shared by all scoring calls.
#[derive(Clone, Default)]
pub struct Resources {
    pub embeddings: Option<EmbeddingTable>,
    pub contextual: Option<ContextualStore>,
    pub synonyms: Option<SynonymLexicon>,
    pub meteor: MeteorConfig,
    pub rouge: RougeConfig,
    /// BLEU smoothing; `None` falls back to the [`BleuConfig`] default.
    pub bleu_smoothing: Option<Smoothing>,
    pub max_policy: MaxPolicy,
    pub external: BTreeMap<String, ExternalScorer>,
}

impl fmt::Debug for Resources {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Resources")
            .field("embeddings", &self.embeddings.as_ref().map(EmbeddingTable::len))
            .field("contextual", &self.contextual.as_ref().map(ContextualStore::len))
            .field("synonyms", &self.synonyms.as_ref().map(SynonymLexicon::len))
            .field("meteor", &self.meteor)
            .field("rouge", &self.rouge)
            .field("external", &self.external.keys().collect::<Vec<_>>())
            .finish()
    }
}

/// Where a candidate came from, for contextual-vector lookup.
#[derive(Debug, Clone, Copy)]
pub struct PairKey<'a> {
    pub question_id: &'a str,
    pub system: Option<&'a str>,
}

impl Resources {
    pub fn register_external(&mut self, name: impl Into<String>, scorer: ExternalScorer) {
        self.external.insert(name.into(), scorer);
    }

    /// Fails if `metric` needs something that is not loaded.
    pub fn check(&self, metric: &MetricSpec) -> Result<()> {
        match metric.base() {
            SrMetric::Ea | SrMetric::SoftCosine if self.embeddings.is_none() => Err(Error::Usage(format!(
                "metric `{metric}` needs word embeddings (--embeddings)"
            ))),
            SrMetric::BertScore if self.embeddings.is_none() && self.contextual.is_none() => {
                Err(Error::Usage(format!(
                    "metric `{metric}` needs contextual vectors (--contextual) or word embeddings (--embeddings)"
                )))
            }
            SrMetric::Meteor if self.meteor.stages.contains(&MatchStage::Synonym) && self.synonyms.is_none() => {
                Err(Error::Usage(format!("metric `{metric}` uses synonym matching but no --synonyms lexicon is loaded")))
            }
            SrMetric::External(name) if !self.external.contains_key(name) => {
                Err(Error::Usage(format!("no external scorer named `{name}` is registered")))
            }
            _ => Ok(()),
        }
    }

    /// Contextual vectors when the store has both sides of the pair,
    /// otherwise static vectors for both.
    fn bert_inputs(
        &self,
        cand: &[String],
        refr: &[String],
        key: Option<PairKey<'_>>,
    ) -> Result<(ContextualTokens, ContextualTokens)> {
        if let (Some(store), Some(key)) = (&self.contextual, key) {
            let c = store.get(key.question_id, Side::Candidate, key.system);
            let r = store.get(key.question_id, Side::Reference, None);
            if let (Some(c), Some(r)) = (c, r) {
                return Ok((c.clone(), r.clone()));
            }
        }
        match &self.embeddings {
            Some(table) => Ok((
                ContextualTokens::from_static(cand, table)?,
                ContextualTokens::from_static(refr, table)?,
            )),
            None => Err(Error::Config(format!(
                "no contextual vectors for `{}` and no static embeddings to fall back on",
                key.map_or("<pair>", |k| k.question_id)
            ))),
        }
    }

    fn table(&self) -> Result<&EmbeddingTable> {
        self.embeddings
            .as_ref()
            .ok_or_else(|| Error::Config("no word embeddings loaded".into()))
    }

    /// Scores `candidate` against `reference` with a single-response metric.
    pub fn score_pair(&self, metric: &SrMetric, candidate: &str, reference: &str, key: Option<PairKey<'_>>) -> Result<f64> {
        if let SrMetric::External(name) = metric {
            let scorer = self
                .external
                .get(name)
                .ok_or_else(|| Error::Usage(format!("no external scorer named `{name}` is registered")))?;
            return scorer(candidate, reference);
        }
        let cand = tokenize(candidate);
        let refr = tokenize(reference);
        match metric {
            SrMetric::Bleu(n) => {
                let mut config = BleuConfig::with_max_n(*n);
                if let Some(s) = self.bleu_smoothing {
                    config.smoothing = s;
                }
                sentence_bleu(&cand, &refr, &config)
            }
            SrMetric::Meteor => meteor(&cand, &refr, &self.meteor, self.synonyms.as_ref()).map(|m| m.score),
            SrMetric::RougeL => rouge_l(&cand, &refr, &self.rouge),
            SrMetric::Ea => ea_score(&cand, &refr, self.table()?),
            SrMetric::SoftCosine => soft_cosine(&cand, &refr, self.table()?),
            SrMetric::BertScore => {
                let (c, r) = self.bert_inputs(&cand, &refr, key)?;
                bertscore(&c, &r).map(|b| b.f1)
            }
            SrMetric::External(_) => unreachable!("handled above"),
        }
    }

    /// Scores one run output for one item (a question, or a session in
    /// session mode).
    pub fn score_output(
        &self,
        metric: &MetricSpec,
        corpus: &Corpus,
        system: &str,
        item: &str,
        output: &ResponseOutput,
    ) -> Result<f64> {
        let wrong_mode = || Error::Usage(format!("metric `{metric}` cannot score `{}` outputs", output.mode()));
        match (metric, output) {
            (MetricSpec::Single(base), ResponseOutput::Single(response)) => {
                let truth = corpus
                    .ground_truth(item)
                    .ok_or_else(|| Error::MissingGroundTruth(item.to_string()))?;
                let key = PairKey {
                    question_id: item,
                    system: Some(system),
                };
                self.score_pair(base, response, truth, Some(key))
            }
            (MetricSpec::Ranking { metric: ranking, base }, ResponseOutput::Ranked(responses)) => {
                let truth = corpus
                    .ground_truth(item)
                    .ok_or_else(|| Error::MissingGroundTruth(item.to_string()))?;
                let target = match ranking {
                    RankingMetric::Err => RelevanceTarget::Err,
                    _ => RelevanceTarget::NdcgRbp,
                };
                let mut rank = 0;
                let rel = derive_relevance(
                    responses,
                    truth,
                    &base.to_string(),
                    |response, truth| {
                        rank += 1;
                        let qid = format!("{item}@{rank}");
                        let key = PairKey {
                            question_id: &qid,
                            system: Some(system),
                        };
                        self.score_pair(base, response, truth, Some(key)).map(|v| v.clamp(0.0, 1.0))
                    },
                    target,
                    self.max_policy,
                )?;
                match ranking {
                    RankingMetric::Ndcg { k } => ndcg_at_k(&rel, *k).map(|n| n.value),
                    RankingMetric::Rbp { p } => rbp(&rel, *p),
                    RankingMetric::Err => err(&rel),
                }
            }
            (MetricSpec::Session { metric: session_metric, base }, ResponseOutput::Session(responses)) => {
                session_metric.evaluate(&self.session_gains(base, corpus, system, item, responses)?)
            }
            _ => Err(wrong_mode()),
        }
    }

    /// Per-turn gains of a session-mode output. Turns without ground truth
    /// are left out; a session with none fails.
    pub fn session_gains(
        &self,
        base: &SrMetric,
        corpus: &Corpus,
        system: &str,
        session_id: &str,
        responses: &[String],
    ) -> Result<SessionGains> {
        let session = corpus
            .session(session_id)
            .ok_or_else(|| Error::Config(format!("unknown session `{session_id}`")))?;
        if responses.len() != session.turns.len() {
            return Err(Error::InvalidRun {
                run_id: system.to_string(),
                question_id: session_id.to_string(),
                message: format!("{} responses for {} turns", responses.len(), session.turns.len()),
            });
        }
        let scored: Vec<(String, &str, &str)> = session
            .turns
            .iter()
            .zip(responses)
            .filter_map(|(turn, response)| {
                let qid = question_id(&session.session_id, turn.turn_index);
                let truth = corpus.ground_truth(&qid)?;
                Some((qid, response.as_str(), truth))
            })
            .collect();
        if scored.is_empty() {
            return Err(Error::MissingGroundTruth(session_id.to_string()));
        }
        let rel = scored
            .iter()
            .map(|(qid, response, truth)| {
                let key = PairKey {
                    question_id: qid,
                    system: Some(system),
                };
                self.score_pair(base, response, truth, Some(key))
            })
            .collect::<Result<Vec<f64>>>()?;
        SessionGains::from_relevance(rel.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    /// Scores every output of a run. Items that cannot be scored are
    /// reported with the reason instead of aborting the run.
    pub fn score_run(&self, metric: &MetricSpec, corpus: &Corpus, run: &SystemRun) -> RunScores {
        let items: Vec<(&String, &ResponseOutput)> = run.outputs.iter().collect();
        let results = crate::par_map(&items, |(item, output)| {
            self.score_output(metric, corpus, &run.system_name, item, output)
        });
        let mut scores = BTreeMap::new();
        let mut skipped = BTreeMap::new();
        for ((item, _), result) in items.into_iter().zip(results) {
            match result {
                Ok(v) => {
                    scores.insert(item.clone(), v);
                }
                Err(e) => {
                    skipped.insert(item.clone(), e.to_string());
                }
            }
        }
        RunScores {
            metric: metric.to_string(),
            system: run.system_name.clone(),
            scores,
            skipped,
        }
    }
}

/// Per-item scores of one system under one metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunScores {
    pub metric: String,
    pub system: String,
    pub scores: BTreeMap<String, f64>,
    /// Items that could not be scored, with the reason.
    pub skipped: BTreeMap<String, String>,
}

impl RunScores {
    pub fn mean(&self) -> Option<f64> {
        if self.scores.is_empty() {
            None
        } else {
            Some(self.scores.values().sum::<f64>() / self.scores.len() as f64)
        }
    }
}
