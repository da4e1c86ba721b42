//! `conveval` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data validation
//! error, 3 internal error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use conveval::corpus::CorpusFormat;
use conveval::job::{self, JobConfig, MetaKind, Mode};
use conveval::metaeval::{BaselineTest, TiePolicy};
use conveval::ErrorKind;

#[derive(Parser, Debug)]
#[command(name = "conveval", version, about = "Score conversational search runs and meta-evaluate the metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score every run with every metric and write per-item and per-system files.
    Score(CommonArgs),
    /// Discriminative power, predictive power and concordance reports.
    Metaeval(CommonArgs),
    /// Check corpus, run and embedding files without scoring.
    Validate(CommonArgs),
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// TOML file with the same keys as the flags; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// msdialog or wizard.
    #[arg(long, value_parser = parse_with::<CorpusFormat>)]
    format: Option<CorpusFormat>,
    /// Run files (repeat or separate with commas).
    #[arg(long, value_delimiter = ',')]
    runs: Vec<PathBuf>,
    /// Metric list, e.g. "bleu2,meteor" or "ndcg@5(meteor),err(meteor)".
    #[arg(long)]
    metrics: Vec<String>,
    /// srst, mrst or mt.
    #[arg(long, value_parser = parse_with::<Mode>)]
    mode: Option<Mode>,
    /// disc, pred, conc (repeat or separate with commas).
    #[arg(long, value_delimiter = ',', value_parser = parse_with::<MetaKind>)]
    meta: Vec<MetaKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Rounds of the randomized Tukey HSD test.
    #[arg(long)]
    permutations: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Word vectors in word2vec text format.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Contextual token vectors (JSON lines).
    #[arg(long)]
    contextual: Option<PathBuf>,
    /// Synonym lexicon enabling the METEOR synonym stage.
    #[arg(long)]
    synonyms: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Longest accepted ranked list.
    #[arg(long)]
    k_max: Option<usize>,
    /// Random-baseline resamples for concordance.
    #[arg(long)]
    resamples: Option<usize>,
    /// half_credit or drop.
    #[arg(long, value_parser = parse_tie_policy)]
    tie_policy: Option<TiePolicy>,
    /// resampling or t_test.
    #[arg(long, value_parser = parse_baseline_test)]
    baseline_test: Option<BaselineTest>,
    /// Use the largest score in each list as the ERR grade maximum.
    #[arg(long)]
    per_list_max: bool,
    /// Only count concordance pairs where a metric disagrees with this one.
    #[arg(long)]
    disagreement_with: Option<String>,
}

fn parse_with<T: std::str::FromStr<Err = conveval::Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: conveval::Error| e.to_string())
}

fn parse_tie_policy(s: &str) -> Result<TiePolicy, String> {
    match s {
        "half_credit" => Ok(TiePolicy::HalfCredit),
        "drop" => Ok(TiePolicy::Drop),
        other => Err(format!("unknown tie policy `{other}` (expected half_credit or drop)")),
    }
}

fn parse_baseline_test(s: &str) -> Result<BaselineTest, String> {
    match s {
        "resampling" => Ok(BaselineTest::Resampling),
        "t_test" | "ttest" => Ok(BaselineTest::TTest),
        other => Err(format!("unknown baseline test `{other}` (expected resampling or t_test)")),
    }
}

/// Marks errors that come from the configuration file.
#[derive(Debug)]
struct ConfigFileError;

impl std::fmt::Display for ConfigFileError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("invalid configuration file")
    }
}

impl std::error::Error for ConfigFileError {}

fn load_config_file(path: &Path) -> Result<JobConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .context(ConfigFileError)?;
    let mut config: JobConfig = toml::from_str(&text)
        .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
        .context(ConfigFileError)?;
    // Relative paths in the file are relative to the file itself.
    let base = path.parent().unwrap_or(Path::new("."));
    let fix = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    config.corpus.as_mut().map(fix);
    config.runs.iter_mut().for_each(fix);
    config.out.as_mut().map(fix);
    config.embeddings.as_mut().map(fix);
    config.contextual.as_mut().map(fix);
    config.synonyms.as_mut().map(fix);
    Ok(config)
}

impl CommonArgs {
    fn into_config(self) -> Result<JobConfig> {
        let mut c = match &self.config {
            Some(path) => load_config_file(path)?,
            None => JobConfig::default(),
        };
        if self.corpus.is_some() {
            c.corpus = self.corpus;
        }
        if let Some(v) = self.format {
            c.format = v;
        }
        if !self.runs.is_empty() {
            c.runs = self.runs;
        }
        if !self.metrics.is_empty() {
            c.metrics = self.metrics;
        }
        if let Some(v) = self.mode {
            c.mode = v;
        }
        if !self.meta.is_empty() {
            c.meta = self.meta;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.permutations {
            c.permutations = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if self.out.is_some() {
            c.out = self.out;
        }
        if self.embeddings.is_some() {
            c.embeddings = self.embeddings;
        }
        if self.contextual.is_some() {
            c.contextual = self.contextual;
        }
        if self.synonyms.is_some() {
            c.synonyms = self.synonyms;
        }
        if self.threads.is_some() {
            c.threads = self.threads;
        }
        if let Some(v) = self.k_max {
            c.k_max = v;
        }
        if let Some(v) = self.resamples {
            c.resamples = v;
        }
        if let Some(v) = self.tie_policy {
            c.tie_policy = v;
        }
        if let Some(v) = self.baseline_test {
            c.baseline_test = v;
        }
        if self.per_list_max {
            c.per_list_max = true;
        }
        if self.disagreement_with.is_some() {
            c.disagreement_with = self.disagreement_with;
        }
        Ok(c)
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v:.4}")
}

fn score(config: &JobConfig) -> Result<()> {
    let outcome = job::run_score(config)?;
    let table = &outcome.table;
    for (metric, runs) in table.metrics.iter().zip(&table.per_metric) {
        println!("{metric}");
        for r in runs {
            let mean = r.mean().map(fmt_num).unwrap_or_else(|| "-".into());
            println!("  {:<20} {mean:>8}  ({} items, {} skipped)", r.system, r.scores.len(), r.skipped.len());
        }
    }
    println!("wrote {} files", outcome.files.len());
    Ok(())
}

fn metaeval(config: &JobConfig) -> Result<()> {
    let outcome = job::run_metaeval(config)?;
    let report = &outcome.report;
    let s = &report.settings;
    println!("seed={} permutations={} alpha={}", s.seed, s.permutations, s.alpha);
    if !report.discriminative.is_empty() {
        println!("discriminative power");
        for row in &report.discriminative {
            println!(
                "  {:<28} {:>8}  ({}/{} pairs, {} items)",
                row.metric,
                fmt_num(row.discriminative_power),
                row.significant_pairs,
                row.pairs,
                row.items
            );
        }
    }
    if !report.predictive.is_empty() {
        println!("predictive power");
        for row in &report.predictive {
            println!(
                "  {:<28} {:>8}  ({} pairs, {} excluded)",
                row.metric,
                fmt_num(row.result.agreement),
                row.result.usable_pairs,
                row.result.excluded_pairs
            );
        }
    }
    for table in &report.concordance {
        println!("concordance ({})", table.system);
        for row in &table.rows {
            println!(
                "  {:<28} {:>8}  baseline {}  p {}",
                row.metric,
                fmt_num(row.result.agreement),
                fmt_num(row.result.baseline_agreement),
                fmt_num(row.result.p_vs_baseline)
            );
        }
    }
    println!("wrote {} files", outcome.files.len());
    Ok(())
}

fn validate(config: &JobConfig) -> ExitCode {
    let d = job::run_validate(config);
    for note in &d.notes {
        println!("{note}");
    }
    for v in &d.violations {
        println!("violation: {v}");
    }
    println!("{} violations", d.violations.len());
    if d.is_clean() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigFileError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<conveval::Error>().map(conveval::Error::kind) {
        Some(ErrorKind::Usage) => 1,
        Some(ErrorKind::Data) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let (args, run): (CommonArgs, fn(&JobConfig) -> Result<()>) = match cli.command {
        Command::Score(a) => (a, score),
        Command::Metaeval(a) => (a, metaeval),
        Command::Validate(a) => {
            return match a.into_config() {
                Ok(config) => validate(&config),
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(exit_code(&e))
                }
            };
        }
    };
    match args.into_config().and_then(|config| run(&config)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
