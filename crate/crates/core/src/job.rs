//! Batch jobs behind the command-line front end: score runs, meta-evaluate
//! metrics, and validate inputs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{build_preference_pairs, load_runs, Corpus, CorpusFormat, OutputMode, SystemRun};
use crate::embedding::{ContextualStore, EmbeddingTable};
use crate::metaeval::{
    concordance, discriminative_power, metric_predictive_power, randomized_tukey_hsd, BaselineTest, ConcordanceConfig, ConcordanceRow,
    ConcordanceTable, ScoreMatrix, TiePolicy, BASELINE_ROW, DEFAULT_ALPHA, DEFAULT_PERMUTATIONS, DEFAULT_RESAMPLES,
};
use crate::metric::{parse_metric_list, MetricSpec, Resources, RunScores, SrMetric};
use crate::ranking::{MaxPolicy, DEFAULT_K_MAX};
use crate::report::{DiscriminativeRow, MetaSettings, MetaevalReport, PredictiveRow, ScoreTable};
use crate::session::SessionMetric;
use crate::textprep::SynonymLexicon;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// One response per question.
    Srst,
    /// A ranked list of responses per question.
    Mrst,
    /// One response per turn of a whole session.
    Mt,
}

impl Mode {
    pub fn output_mode(self) -> OutputMode {
        match self {
            Mode::Srst => OutputMode::Single,
            Mode::Mrst => OutputMode::Ranked,
            Mode::Mt => OutputMode::Session,
        }
    }

    /// Metrics used when none are requested.
    pub fn default_metrics(self) -> Vec<MetricSpec> {
        let names: Vec<String> = match self {
            Mode::Srst => ["bleu1", "bleu2", "bleu3", "bleu4", "meteor", "rouge_l"]
                .map(String::from)
                .to_vec(),
            Mode::Mrst => ["ndcg@5(meteor)", "rbp0.5(meteor)", "rbp0.7(meteor)", "err(meteor)"]
                .map(String::from)
                .to_vec(),
            Mode::Mt => SessionMetric::standard_suite()
                .into_iter()
                .map(|m| format!("{m}(meteor)"))
                .collect(),
        };
        names.iter().map(|n| n.parse().expect("built-in metric names parse")).collect()
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "srst" => Ok(Mode::Srst),
            "mrst" => Ok(Mode::Mrst),
            "mt" => Ok(Mode::Mt),
            other => Err(Error::Usage(format!("unknown mode `{other}` (expected srst, mrst or mt)"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Srst => "srst",
            Mode::Mrst => "mrst",
            Mode::Mt => "mt",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetaKind {
    /// Discriminative power.
    Disc,
    /// Predictive power.
    Pred,
    /// Concordance with satisfaction.
    Conc,
}

impl FromStr for MetaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "disc" => Ok(MetaKind::Disc),
            "pred" => Ok(MetaKind::Pred),
            "conc" => Ok(MetaKind::Conc),
            other => Err(Error::Usage(format!("unknown meta-evaluation `{other}` (expected disc, pred or conc)"))),
        }
    }
}

/// Everything a job needs. Field names double as config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JobConfig {
    pub corpus: Option<PathBuf>,
    pub format: CorpusFormat,
    pub runs: Vec<PathBuf>,
    /// Metric names; empty means the mode's defaults.
    pub metrics: Vec<String>,
    pub mode: Mode,
    /// Empty means every procedure the inputs support.
    pub meta: Vec<MetaKind>,
    pub seed: u64,
    pub permutations: usize,
    pub alpha: f64,
    pub out: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub contextual: Option<PathBuf>,
    pub synonyms: Option<PathBuf>,
    /// Worker threads; `None` uses all cores. Results do not depend on it.
    pub threads: Option<usize>,
    pub k_max: usize,
    pub resamples: usize,
    pub tie_policy: TiePolicy,
    pub baseline_test: BaselineTest,
    /// Take the ERR grade maximum from each list instead of 1.
    pub per_list_max: bool,
    /// Restrict concordance to pairs where a metric disagrees with this one.
    pub disagreement_with: Option<String>,
}

impl Default for JobConfig {
    fn default() -> Self {
        JobConfig {
            corpus: None,
            format: CorpusFormat::Msdialog,
            runs: Vec::new(),
            metrics: Vec::new(),
            mode: Mode::Srst,
            meta: Vec::new(),
            seed: 42,
            permutations: DEFAULT_PERMUTATIONS,
            alpha: DEFAULT_ALPHA,
            out: None,
            embeddings: None,
            contextual: None,
            synonyms: None,
            threads: None,
            k_max: DEFAULT_K_MAX,
            resamples: DEFAULT_RESAMPLES,
            tie_policy: TiePolicy::HalfCredit,
            baseline_test: BaselineTest::Resampling,
            per_list_max: false,
            disagreement_with: None,
        }
    }
}

impl JobConfig {
    /// Parsed metrics, checked against the mode.
    pub fn metric_specs(&self) -> Result<Vec<MetricSpec>> {
        let specs = if self.metrics.is_empty() {
            self.mode.default_metrics()
        } else {
            let mut all = Vec::new();
            for m in &self.metrics {
                all.extend(parse_metric_list(m)?);
            }
            all
        };
        let wanted = self.mode.output_mode();
        for spec in &specs {
            if spec.mode() != wanted {
                let kind = match spec.mode() {
                    OutputMode::Single => "a single-response metric (mode srst)",
                    OutputMode::Ranked => "a ranked-list metric (mode mrst)",
                    OutputMode::Session => "a session metric (mode mt)",
                };
                return Err(Error::Usage(format!(
                    "metric `{spec}` is {kind} and cannot be used with mode {}",
                    self.mode
                )));
            }
        }
        Ok(specs)
    }

    fn check_numbers(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Usage(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.permutations == 0 {
            return Err(Error::Usage("permutations must be positive".into()));
        }
        if self.resamples < 2 {
            return Err(Error::Usage("resamples must be at least 2".into()));
        }
        if self.k_max == 0 {
            return Err(Error::Usage("k_max must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Usage("threads must be positive".into()));
        }
        Ok(())
    }

    fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Usage("no output directory given (--out)".into()))
    }

    fn corpus_path(&self) -> Result<&Path> {
        self.corpus
            .as_deref()
            .ok_or_else(|| Error::Usage("no corpus given (--corpus)".into()))
    }

    pub fn load_resources(&self) -> Result<Resources> {
        let mut resources = Resources::default();
        if let Some(p) = &self.embeddings {
            resources.embeddings = Some(EmbeddingTable::load(p).map_err(Error::in_file(p))?);
        }
        if let Some(p) = &self.contextual {
            resources.contextual = Some(ContextualStore::load(p).map_err(Error::in_file(p))?);
        }
        if let Some(p) = &self.synonyms {
            resources.synonyms = Some(SynonymLexicon::load(p).map_err(Error::in_file(p))?);
            resources.meteor.stages.push(crate::textprep::MatchStage::Synonym);
        }
        if self.per_list_max {
            resources.max_policy = MaxPolicy::PerList;
        }
        Ok(resources)
    }
}

/// Runs `f` on a pool of `threads` workers (or the global pool).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))?;
        return Ok(pool.install(f));
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(f())
}

/// Loaded, cross-checked inputs of a job.
#[derive(Debug)]
pub struct Inputs {
    pub corpus: Corpus,
    pub runs: Vec<SystemRun>,
    pub metrics: Vec<MetricSpec>,
    pub resources: Resources,
}

impl Inputs {
    pub fn load(config: &JobConfig) -> Result<Self> {
        config.check_numbers()?;
        let metrics = config.metric_specs()?;
        let resources = config.load_resources()?;
        for m in &metrics {
            resources.check(m)?;
        }
        let corpus_path = config.corpus_path()?;
        let corpus = Corpus::load(corpus_path, config.format).map_err(Error::in_file(corpus_path))?;
        if config.runs.is_empty() {
            return Err(Error::Usage("no run files given (--runs)".into()));
        }
        let mut runs = Vec::new();
        for path in &config.runs {
            runs.extend(load_runs(path, config.k_max).map_err(Error::in_file(path))?);
        }
        let wanted = config.mode.output_mode();
        for run in &runs {
            if let Some((qid, output)) = run.outputs.iter().find(|(_, o)| o.mode() != wanted) {
                return Err(Error::InvalidRun {
                    run_id: run.run_id.clone(),
                    question_id: qid.clone(),
                    message: format!("`{}` output in a {} job", output.mode(), config.mode),
                });
            }
            if let Some(problem) = run.check_against(&corpus).into_iter().next() {
                return Err(problem);
            }
        }
        Ok(Inputs {
            corpus,
            runs,
            metrics,
            resources,
        })
    }

    /// Scores every run under every metric.
    pub fn score_table(&self) -> ScoreTable {
        let per_metric: Vec<Vec<RunScores>> = self
            .metrics
            .iter()
            .map(|m| self.runs.iter().map(|r| self.resources.score_run(m, &self.corpus, r)).collect())
            .collect();
        ScoreTable {
            metrics: self.metrics.iter().map(ToString::to_string).collect(),
            systems: self.runs.iter().map(|r| r.system_name.clone()).collect(),
            per_metric,
        }
    }
}

/// What a score job produced.
#[derive(Debug, Clone)]
pub struct ScoreOutcome {
    pub table: ScoreTable,
    pub files: Vec<PathBuf>,
}

pub fn run_score(config: &JobConfig) -> Result<ScoreOutcome> {
    let out = config.out_dir()?.to_path_buf();
    with_threads(config.threads, || {
        let inputs = Inputs::load(config)?;
        let table = inputs.score_table();
        let files = table.write_all(&out)?;
        Ok(ScoreOutcome { table, files })
    })?
}

#[derive(Debug, Clone)]
pub struct MetaevalOutcome {
    pub report: MetaevalReport,
    pub files: Vec<PathBuf>,
}

fn serde_name<T: Serialize>(value: &T) -> String {
    serde_json::to_value(value)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Which procedures to run: the requested ones, or all the inputs support.
fn resolve_meta(config: &JobConfig, inputs: &Inputs) -> Result<Vec<MetaKind>> {
    let has_satisfaction = inputs.corpus.sessions.iter().any(|s| s.satisfaction.is_some());
    if config.meta.is_empty() {
        let mut kinds = vec![MetaKind::Disc];
        if !build_preference_pairs(&inputs.corpus.sessions, inputs.corpus.format).is_empty() {
            kinds.push(MetaKind::Pred);
        }
        if config.mode == Mode::Mt && has_satisfaction {
            kinds.push(MetaKind::Conc);
        }
        return Ok(kinds);
    }
    let mut kinds = config.meta.clone();
    kinds.sort();
    kinds.dedup();
    if kinds.contains(&MetaKind::Conc) && config.mode != Mode::Mt {
        return Err(Error::Usage(format!(
            "concordance with satisfaction needs session outputs (mode mt), not mode {}",
            config.mode
        )));
    }
    Ok(kinds)
}

pub fn run_metaeval(config: &JobConfig) -> Result<MetaevalOutcome> {
    let out = config.out_dir()?.to_path_buf();
    with_threads(config.threads, || {
        let inputs = Inputs::load(config)?;
        let kinds = resolve_meta(config, &inputs)?;
        let table = inputs.score_table();
        let settings = MetaSettings {
            seed: config.seed,
            permutations: config.permutations,
            alpha: config.alpha,
            resamples: config.resamples,
            tie_policy: serde_name(&config.tie_policy),
            baseline_test: serde_name(&config.baseline_test),
        };

        let mut discriminative = Vec::new();
        if kinds.contains(&MetaKind::Disc) {
            for (name, runs) in table.metrics.iter().zip(&table.per_metric) {
                let matrix = ScoreMatrix::from_run_scores(name.clone(), runs)?;
                let sig = randomized_tukey_hsd(&matrix, config.permutations, config.seed)?;
                let pairs = sig.pairs().count();
                let significant = sig.pairs().filter(|(_, _, p)| *p < config.alpha).count();
                discriminative.push(DiscriminativeRow {
                    metric: name.clone(),
                    items: matrix.n_items(),
                    dropped_items: matrix.dropped_items,
                    significant_pairs: significant,
                    pairs,
                    discriminative_power: discriminative_power(&sig, config.alpha),
                    system_means: matrix.systems.iter().cloned().zip(matrix.system_means()).collect(),
                    significance: sig,
                });
            }
        }

        let mut predictive = Vec::new();
        if kinds.contains(&MetaKind::Pred) {
            let pairs = build_preference_pairs(&inputs.corpus.sessions, inputs.corpus.format);
            let mut bases: Vec<&SrMetric> = Vec::new();
            for m in &inputs.metrics {
                if !bases.contains(&m.base()) {
                    bases.push(m.base());
                }
            }
            for base in bases {
                let result =
                    metric_predictive_power(base, &pairs, &inputs.corpus, &inputs.resources, config.tie_policy)?;
                predictive.push(PredictiveRow {
                    metric: base.to_string(),
                    result,
                });
            }
        }

        let mut concordance_tables = Vec::new();
        if kinds.contains(&MetaKind::Conc) {
            let conc_config = ConcordanceConfig {
                seed: config.seed,
                resamples: config.resamples,
                test: config.baseline_test,
            };
            let reference = match &config.disagreement_with {
                Some(name) => {
                    let spec: MetricSpec = name.parse()?;
                    let idx = inputs
                        .metrics
                        .iter()
                        .position(|m| *m == spec)
                        .ok_or_else(|| Error::Usage(format!("disagreement metric `{spec}` is not in the metric list")))?;
                    Some(idx)
                }
                None => None,
            };
            for (s, run) in inputs.runs.iter().enumerate() {
                concordance_tables.push(run_concordance(&inputs, &table, s, run, reference, &conc_config)?);
            }
        }

        let report = MetaevalReport {
            settings,
            discriminative,
            predictive,
            concordance: concordance_tables,
        };
        let files = report.write_all(&out)?;
        Ok(MetaevalOutcome { report, files })
    })?
}

fn run_concordance(
    inputs: &Inputs,
    table: &ScoreTable,
    s: usize,
    run: &SystemRun,
    reference: Option<usize>,
    config: &ConcordanceConfig,
) -> Result<ConcordanceTable> {
    let gold: BTreeMap<String, f64> = run
        .outputs
        .keys()
        .filter_map(|id| {
            let sat = inputs.corpus.session(id)?.satisfaction?;
            Some((id.clone(), sat as f64))
        })
        .collect();
    let filter = reference.map(|r| &table.per_metric[r][s].scores);
    let mut rows = Vec::new();
    for (m, (name, runs)) in table.metrics.iter().zip(&table.per_metric).enumerate() {
        if Some(m) == reference {
            continue;
        }
        rows.push(ConcordanceRow {
            metric: name.clone(),
            result: concordance(&runs[s].scores, &gold, config, filter)?,
        });
    }
    let all_random = crate::metaeval::baseline_scores(config.seed, &gold);
    rows.push(ConcordanceRow {
        metric: BASELINE_ROW.to_string(),
        result: concordance(&all_random, &gold, config, filter)?,
    });
    let mut skipped = BTreeMap::new();
    for runs in &table.per_metric {
        for (item, reason) in &runs[s].skipped {
            skipped.entry(item.clone()).or_insert_with(|| reason.clone());
        }
    }
    for id in run.outputs.keys().filter(|id| !gold.contains_key(*id)) {
        skipped.entry(id.clone()).or_insert_with(|| "no satisfaction label".to_string());
    }
    Ok(ConcordanceTable {
        system: run.system_name.clone(),
        rows,
        skipped,
        seed: config.seed,
        resamples: config.resamples,
    })
}

/// Validation findings. Violations make the inputs unusable; notes are
/// informational (coverage, drop counts).
#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    pub violations: Vec<String>,
    pub notes: Vec<String>,
}

impl Diagnostics {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Schema-checks every input and reports per-system coverage. Never fails;
/// problems are collected as violations.
pub fn run_validate(config: &JobConfig) -> Diagnostics {
    let mut d = Diagnostics::default();
    let note_err = |d: &mut Diagnostics, path: &Path, e: Error| {
        d.violations.push(format!("{}: {e}", path.display()));
    };

    if let Err(e) = config.check_numbers() {
        d.violations.push(e.to_string());
    }
    if let Err(e) = config.metric_specs() {
        d.violations.push(e.to_string());
    }

    let corpus = match config.corpus.as_deref() {
        None => {
            d.violations.push("no corpus given".into());
            None
        }
        Some(path) => match Corpus::load(path, config.format) {
            Ok(c) => {
                let turns: usize = c.sessions.iter().map(|s| s.turns.len()).sum();
                let truths = c.ground_truth_items().len();
                d.notes.push(format!(
                    "{}: {} sessions, {turns} turns, {truths} with ground truth",
                    path.display(),
                    c.sessions.len()
                ));
                let no_truth = c
                    .sessions
                    .iter()
                    .filter(|s| crate::corpus::extract_ground_truth(s, c.format).is_empty())
                    .count();
                if no_truth > 0 {
                    d.notes.push(format!("{no_truth} sessions have no ground-truth turn"));
                }
                Some(c)
            }
            Err(e) => {
                note_err(&mut d, path, e);
                None
            }
        },
    };

    for path in &config.runs {
        match load_runs(path, config.k_max) {
            Err(e) => note_err(&mut d, path, e),
            Ok(runs) => {
                for run in runs {
                    let wanted = config.mode.output_mode();
                    let wrong = run.outputs.values().filter(|o| o.mode() != wanted).count();
                    if wrong > 0 {
                        d.violations.push(format!(
                            "{}: run `{}` has {wrong} outputs that are not {wanted} outputs",
                            path.display(),
                            run.run_id
                        ));
                    }
                    let Some(corpus) = &corpus else { continue };
                    for problem in run.check_against(corpus) {
                        note_err(&mut d, path, problem);
                    }
                    let items = match wanted {
                        OutputMode::Session => corpus.sessions.len(),
                        _ => corpus.ground_truth_items().len(),
                    };
                    let covered = run
                        .outputs
                        .keys()
                        .filter(|id| match wanted {
                            OutputMode::Session => corpus.session(id).is_some(),
                            _ => corpus.ground_truth(id).is_some(),
                        })
                        .count();
                    d.notes.push(format!(
                        "system `{}` (run `{}`): {} outputs, {covered} of {items} scorable items covered, {} dropped",
                        run.system_name,
                        run.run_id,
                        run.outputs.len(),
                        run.outputs.len() - covered
                    ));
                }
            }
        }
    }

    if let Some(p) = &config.embeddings {
        match EmbeddingTable::load(p) {
            Ok(t) => d
                .notes
                .push(format!("{}: {} vectors of dimension {}", p.display(), t.len(), t.dimension())),
            Err(e) => note_err(&mut d, p, e),
        }
    }
    if let Some(p) = &config.contextual {
        match ContextualStore::load(p) {
            Ok(s) => d.notes.push(format!("{}: {} contextual records", p.display(), s.len())),
            Err(e) => note_err(&mut d, p, e),
        }
    }
    if let Some(p) = &config.synonyms {
        match SynonymLexicon::load(p) {
            Ok(l) => d.notes.push(format!("{}: {} synonym entries", p.display(), l.len())),
            Err(e) => note_err(&mut d, p, e),
        }
    }
    d
}
