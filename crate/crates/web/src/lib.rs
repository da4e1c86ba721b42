//! Browser bindings for a few conveval metrics. Every export takes plain
//! strings and returns a JSON document; the computations live in ordinary
//! functions so they can be tested natively.

use conveval::overlap::{meteor, rouge_l, sentence_bleu, BleuConfig, MeteorConfig, RougeConfig};
use conveval::ranking::{err, ndcg_at_k, rbp, RankedRelevance};
use conveval::session::{self, SessionGains, SwfScheme, DEFAULT_BQ};
use conveval::textprep::{align_meteor, tokenize};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct PairReport {
    pub candidate: Vec<String>,
    pub reference: Vec<String>,
    /// BLEU-1 to BLEU-4.
    pub bleu: Vec<f64>,
    pub meteor: f64,
    pub precision: f64,
    pub recall: f64,
    pub penalty: f64,
    pub chunks: usize,
    /// `(candidate_index, reference_index)` of each aligned token.
    pub alignment: Vec<(usize, usize)>,
    pub rouge_l: f64,
}

pub fn pair_report(candidate: &str, reference: &str) -> Result<PairReport, String> {
    let c = tokenize(candidate).into_inner();
    let r = tokenize(reference).into_inner();
    if c.is_empty() || r.is_empty() {
        return Err("both sentences need at least one word".into());
    }
    let bleu = (1..=4)
        .map(|n| sentence_bleu(&c, &r, &BleuConfig::with_max_n(n)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let config = MeteorConfig::default();
    let m = meteor(&c, &r, &config, None).map_err(|e| e.to_string())?;
    let alignment = align_meteor(&c, &r, &config.stages, None).map_err(|e| e.to_string())?;
    let rouge = rouge_l(&c, &r, &RougeConfig::default()).map_err(|e| e.to_string())?;
    Ok(PairReport {
        candidate: c,
        reference: r,
        bleu,
        meteor: m.score,
        precision: m.precision,
        recall: m.recall,
        penalty: m.penalty,
        chunks: m.chunks,
        alignment: alignment.matches,
        rouge_l: rouge,
    })
}

#[derive(Debug, Serialize)]
pub struct RankingReport {
    pub grades: Vec<f64>,
    /// nDCG@k for k = 1..=len.
    pub ndcg: Vec<f64>,
    /// `(p, RBP)` over a grid of persistence values.
    pub rbp: Vec<(f64, f64)>,
    pub err: f64,
    /// ERR of each prefix of the list.
    pub err_prefix: Vec<f64>,
}

/// Parses grades separated by commas or whitespace.
pub fn parse_grades(text: &str) -> Result<Vec<f64>, String> {
    let grades = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("`{s}` is not a number")))
        .collect::<Result<Vec<_>, _>>()?;
    if grades.is_empty() {
        return Err("enter at least one grade".into());
    }
    if let Some(g) = grades.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(format!("grade {g} is outside [0, 1]"));
    }
    Ok(grades)
}

pub fn ranking_report(grades: &str) -> Result<RankingReport, String> {
    let grades = parse_grades(grades)?;
    let rel = RankedRelevance::new(grades.clone());
    let ndcg = (1..=grades.len())
        .map(|k| ndcg_at_k(&rel, k).map(|n| n.value))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let rbp_curve = (1..20)
        .map(|i| {
            let p = i as f64 / 20.0;
            rbp(&rel, p).map(|v| (p, v))
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let err_prefix = (1..=grades.len())
        .map(|k| err(&RankedRelevance::new(grades[..k].to_vec())))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    Ok(RankingReport {
        err: *err_prefix.last().unwrap_or(&0.0),
        grades,
        ndcg,
        rbp: rbp_curve,
        err_prefix,
    })
}

#[derive(Debug, Serialize)]
pub struct SchemeReport {
    pub name: &'static str,
    pub weights: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Serialize)]
pub struct SessionReport {
    pub relevance: Vec<f64>,
    pub gains: Vec<f64>,
    pub scg: f64,
    pub sdcg: f64,
    pub sdcg_per_q: f64,
    pub max: f64,
    pub min: f64,
    pub schemes: Vec<SchemeReport>,
}

pub fn session_report(relevance: &str, bq: f64) -> Result<SessionReport, String> {
    let rel = parse_grades(relevance)?;
    let g = SessionGains::from_relevance(rel.clone()).map_err(|e| e.to_string())?;
    let schemes = SwfScheme::ALL
        .into_iter()
        .map(|s| SchemeReport {
            name: s.name(),
            weights: s.normalized_weights(g.len()),
            value: session::swf(&g, s),
        })
        .collect();
    Ok(SessionReport {
        gains: g.gains().to_vec(),
        scg: session::scg(&g),
        sdcg: session::sdcg(&g, bq).map_err(|e| e.to_string())?,
        sdcg_per_q: session::sdcg_per_q(&g, bq).map_err(|e| e.to_string())?,
        max: session::max_strategy(&g),
        min: session::min_strategy(&g),
        relevance: rel,
        schemes,
    })
}

fn to_js<T: Serialize>(value: Result<T, String>) -> Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn score_pair(candidate: &str, reference: &str) -> Result<String, JsError> {
    to_js(pair_report(candidate, reference))
}

#[wasm_bindgen]
pub fn ranking_curve(grades: &str) -> Result<String, JsError> {
    to_js(ranking_report(grades))
}

#[wasm_bindgen]
pub fn session_profile(relevance: &str, bq: f64) -> Result<String, JsError> {
    to_js(session_report(relevance, if bq > 1.0 { bq } else { DEFAULT_BQ }))
}
