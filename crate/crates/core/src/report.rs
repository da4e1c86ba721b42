//! CSV and JSON report writers.
//!
//! CSV files may start with `# key=value` lines recording the settings of
//! randomized procedures (seed, permutations, alpha). Numbers are written in
//! Rust's shortest round-trip form so that equal results give equal bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::metaeval::{ConcordanceTable, PairwiseSignificance, PredictiveResult};
use crate::metric::RunScores;
use crate::{Error, Result};

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Opens a CSV writer after writing `# key=value` header lines.
pub fn csv_writer(path: &Path, header: &[(&str, String)]) -> Result<csv::Writer<BufWriter<File>>> {
    let mut out = create(path)?;
    for (key, value) in header {
        writeln!(out, "# {key}={value}").map_err(|e| Error::io(path, e))?;
    }
    Ok(csv::Writer::from_writer(out))
}

fn finish(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Turns a metric name into something safe for a file name.
pub fn file_stem(metric: &str) -> String {
    metric
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

/// Scores of every metric for every system. `per_metric[m][s]` holds
/// metric `m` of system `s`.
#[derive(Debug, Clone, Serialize)]
pub struct ScoreTable {
    pub metrics: Vec<String>,
    pub systems: Vec<String>,
    pub per_metric: Vec<Vec<RunScores>>,
}

impl ScoreTable {
    /// Every item scored by any metric for `system`, in id order.
    fn items_of(&self, s: usize) -> Vec<&String> {
        let mut items: Vec<&String> = self.per_metric.iter().flat_map(|m| m[s].scores.keys()).collect();
        items.sort();
        items.dedup();
        items
    }

    /// Systems in name order, as indices.
    fn system_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.systems.len()).collect();
        order.sort_by(|&a, &b| self.systems[a].cmp(&self.systems[b]));
        order
    }

    /// One row per (system, item), one column per metric; unscored cells
    /// are empty.
    pub fn write_wide(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path, &[])?;
        let mut header = vec!["system".to_string(), "item".to_string()];
        header.extend(self.metrics.iter().cloned());
        w.write_record(&header)?;
        for s in self.system_order() {
            for item in self.items_of(s) {
                let mut row = vec![self.systems[s].clone(), item.clone()];
                row.extend(
                    self.per_metric
                        .iter()
                        .map(|m| m[s].scores.get(item).map(|v| num(*v)).unwrap_or_default()),
                );
                w.write_record(&row)?;
            }
        }
        finish(w, path)
    }

    /// Plot-ready `metric,system,item,score` rows.
    pub fn write_long(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path, &[])?;
        w.write_record(["metric", "system", "item", "score"])?;
        for s in self.system_order() {
            for item in self.items_of(s) {
                for (metric, runs) in self.metrics.iter().zip(&self.per_metric) {
                    if let Some(v) = runs[s].scores.get(item) {
                        w.write_record([metric.as_str(), &self.systems[s], item, &num(*v)])?;
                    }
                }
            }
        }
        finish(w, path)
    }

    pub fn write_means(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path, &[])?;
        w.write_record(["metric", "system", "mean", "scored_items", "skipped_items"])?;
        for (metric, runs) in self.metrics.iter().zip(&self.per_metric) {
            for s in self.system_order() {
                let r = &runs[s];
                w.write_record([
                    metric.as_str(),
                    &self.systems[s],
                    &r.mean().map(num).unwrap_or_default(),
                    &r.scores.len().to_string(),
                    &r.skipped.len().to_string(),
                ])?;
            }
        }
        finish(w, path)
    }

    pub fn write_skipped(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path, &[])?;
        w.write_record(["metric", "system", "item", "reason"])?;
        for (metric, runs) in self.metrics.iter().zip(&self.per_metric) {
            for s in self.system_order() {
                for (item, reason) in &runs[s].skipped {
                    w.write_record([metric.as_str(), &self.systems[s], item, reason])?;
                }
            }
        }
        finish(w, path)
    }

    /// Writes all score files into `dir` and returns their paths.
    pub fn write_all(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let files = [
            ("scores_wide.csv", Self::write_wide as fn(&Self, &Path) -> Result<()>),
            ("scores_long.csv", Self::write_long),
            ("system_means.csv", Self::write_means),
            ("skipped.csv", Self::write_skipped),
        ];
        let mut written = Vec::new();
        for (name, write) in files {
            let path = dir.join(name);
            write(self, &path)?;
            written.push(path);
        }
        let json = dir.join("scores.json");
        write_json(&json, self)?;
        written.push(json);
        Ok(written)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiscriminativeRow {
    pub metric: String,
    pub items: usize,
    pub dropped_items: usize,
    pub significant_pairs: usize,
    pub pairs: usize,
    pub discriminative_power: f64,
    pub system_means: Vec<(String, f64)>,
    pub significance: PairwiseSignificance,
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictiveRow {
    pub metric: String,
    #[serde(flatten)]
    pub result: PredictiveResult,
}

/// Settings shared by all randomized outputs.
#[derive(Debug, Clone, Serialize)]
pub struct MetaSettings {
    pub seed: u64,
    pub permutations: usize,
    pub alpha: f64,
    pub resamples: usize,
    pub tie_policy: String,
    pub baseline_test: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetaevalReport {
    pub settings: MetaSettings,
    pub discriminative: Vec<DiscriminativeRow>,
    pub predictive: Vec<PredictiveRow>,
    pub concordance: Vec<ConcordanceTable>,
}

impl MetaevalReport {
    fn header(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.settings.seed.to_string()),
            ("permutations", self.settings.permutations.to_string()),
            ("alpha", num(self.settings.alpha)),
        ]
    }

    /// Writes the CSV tables, per-metric p-value matrices, and the JSON
    /// mirror into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();

        if !self.discriminative.is_empty() {
            let path = dir.join("discriminative_power.csv");
            let mut w = csv_writer(&path, &self.header())?;
            w.write_record([
                "metric",
                "systems",
                "items",
                "dropped_items",
                "significant_pairs",
                "pairs",
                "discriminative_power",
            ])?;
            for row in &self.discriminative {
                w.write_record([
                    row.metric.clone(),
                    row.significance.systems.len().to_string(),
                    row.items.to_string(),
                    row.dropped_items.to_string(),
                    row.significant_pairs.to_string(),
                    row.pairs.to_string(),
                    num(row.discriminative_power),
                ])?;
            }
            finish(w, &path)?;
            written.push(path);

            for row in &self.discriminative {
                let path = dir.join("pvalues").join(format!("{}.csv", file_stem(&row.metric)));
                let mut header = self.header();
                header.insert(0, ("metric", row.metric.clone()));
                let mut w = csv_writer(&path, &header)?;
                let sig = &row.significance;
                let mut head = vec!["system".to_string()];
                head.extend(sig.systems.iter().cloned());
                w.write_record(&head)?;
                for (name, ps) in sig.systems.iter().zip(&sig.p_values) {
                    let mut rec = vec![name.clone()];
                    rec.extend(ps.iter().map(|p| num(*p)));
                    w.write_record(&rec)?;
                }
                finish(w, &path)?;
                written.push(path);
            }
        }

        if !self.predictive.is_empty() {
            let path = dir.join("predictive_power.csv");
            let mut w = csv_writer(&path, &[("tie_policy", self.settings.tie_policy.clone())])?;
            w.write_record(["metric", "usable_pairs", "excluded_pairs", "metric_ties", "agreement"])?;
            for row in &self.predictive {
                w.write_record([
                    row.metric.clone(),
                    row.result.usable_pairs.to_string(),
                    row.result.excluded_pairs.to_string(),
                    row.result.metric_ties.to_string(),
                    num(row.result.agreement),
                ])?;
            }
            finish(w, &path)?;
            written.push(path);
        }

        if !self.concordance.is_empty() {
            let path = dir.join("concordance.csv");
            let mut w = csv_writer(
                &path,
                &[
                    ("seed", self.settings.seed.to_string()),
                    ("resamples", self.settings.resamples.to_string()),
                    ("baseline_test", self.settings.baseline_test.clone()),
                ],
            )?;
            w.write_record([
                "system",
                "metric",
                "agreement",
                "usable_pairs",
                "baseline_agreement",
                "p_vs_baseline",
            ])?;
            for table in &self.concordance {
                for row in &table.rows {
                    w.write_record([
                        table.system.clone(),
                        row.metric.clone(),
                        num(row.result.agreement),
                        row.result.usable_pairs.to_string(),
                        num(row.result.baseline_agreement),
                        num(row.result.p_vs_baseline),
                    ])?;
                }
            }
            finish(w, &path)?;
            written.push(path);
        }

        let json = dir.join("metaeval.json");
        write_json(&json, self)?;
        written.push(json);
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn run(system: &str, scores: &[(&str, f64)], skipped: &[&str]) -> RunScores {
        RunScores {
            metric: "m".into(),
            system: system.into(),
            scores: scores.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            skipped: skipped.iter().map(|k| (k.to_string(), "why".to_string())).collect::<BTreeMap<_, _>>(),
        }
    }

    #[test]
    fn score_files() {
        let dir = tempfile::tempdir().unwrap();
        let table = ScoreTable {
            metrics: vec!["bleu1".into(), "ndcg@5(meteor)".into()],
            systems: vec!["zeta".into(), "alpha".into()],
            per_metric: vec![
                vec![run("zeta", &[("q1", 0.5), ("q2", 0.25)], &[]), run("alpha", &[("q1", 1.0)], &["q2"])],
                vec![run("zeta", &[("q1", 0.1)], &["q2"]), run("alpha", &[("q1", 0.2), ("q2", 0.3)], &[])],
            ],
        };
        table.write_all(dir.path()).unwrap();
        let wide = std::fs::read_to_string(dir.path().join("scores_wide.csv")).unwrap();
        assert_eq!(
            wide,
            "system,item,bleu1,ndcg@5(meteor)\nalpha,q1,1,0.2\nalpha,q2,,0.3\nzeta,q1,0.5,0.1\nzeta,q2,0.25,\n"
        );
        let long = std::fs::read_to_string(dir.path().join("scores_long.csv")).unwrap();
        assert_eq!(long.lines().count(), 1 + 6);
        let means = std::fs::read_to_string(dir.path().join("system_means.csv")).unwrap();
        assert!(means.contains("bleu1,zeta,0.375,2,0"));
        assert!(dir.path().join("scores.json").exists());
    }

    #[test]
    fn stems() {
        assert_eq!(file_stem("ndcg@5(meteor)"), "ndcg_5_meteor");
        assert_eq!(file_stem("rbp0.5(ext:x)"), "rbp0.5_ext_x");
    }
}
