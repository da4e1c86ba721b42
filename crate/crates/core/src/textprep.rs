//! Tokenization and the sequence primitives shared by the text metrics.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A lowercase, punctuation-free token sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    /// Builds a sequence from pre-split tokens. Tokens are passed through
    /// [`tokenize`] individually, so the result honours the same invariants.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        TokenSeq(
            tokens
                .into_iter()
                .flat_map(|t| tokenize(t.as_ref()).0)
                .collect(),
        )
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

impl std::ops::Deref for TokenSeq {
    type Target = [String];

    fn deref(&self) -> &[String] {
        &self.0
    }
}

/// Lowercases, drops every character that is neither alphanumeric nor
/// whitespace, and splits on whitespace.
pub fn tokenize(text: &str) -> TokenSeq {
    let cleaned: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    TokenSeq(cleaned.split_whitespace().map(str::to_string).collect())
}

/// Multiset of the `n`-grams of `seq`, keyed by token slices.
pub fn ngrams(seq: &[String], n: usize) -> HashMap<&[String], usize> {
    assert!(n >= 1, "n-gram order must be positive");
    let mut counts = HashMap::new();
    if seq.len() >= n {
        for gram in seq.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Length of a longest common subsequence.
pub fn lcs_length<T: PartialEq>(x: &[T], y: &[T]) -> usize {
    let (outer, inner) = if x.len() >= y.len() { (x, y) } else { (y, x) };
    let mut prev = vec![0usize; inner.len() + 1];
    let mut cur = vec![0usize; inner.len() + 1];
    for a in outer {
        for (j, b) in inner.iter().enumerate() {
            cur[j + 1] = if a == b {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[inner.len()]
}

thread_local! {
    static ENGLISH: Stemmer = Stemmer::create(Algorithm::English);
}

/// Snowball English stem, re-applied until it no longer changes.
pub fn stem(token: &str) -> String {
    ENGLISH.with(|stemmer| {
        let mut current = token.to_string();
        // Each pass either shortens the word or leaves it alone in practice;
        // the bound only guards against a pathological cycle.
        for _ in 0..8 {
            let next = stemmer.stem(&current).into_owned();
            if next == current {
                break;
            }
            current = next;
        }
        current
    })
}

/// Flat synonym lexicon. The relation is stored symmetrically.
#[derive(Debug, Clone, Default)]
pub struct SynonymLexicon {
    entries: HashMap<String, HashSet<String>>,
}

impl SynonymLexicon {
    /// Parses `head<TAB>syn1,syn2,...` lines. Blank lines and lines starting
    /// with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lexicon = SynonymLexicon::default();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (head, syns) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(idx + 1, "head", "expected a TAB after the head term"))?;
            let head = head.trim().to_lowercase();
            if head.is_empty() {
                return Err(Error::parse(idx + 1, "head", "empty head term"));
            }
            for syn in syns.split(',').map(|s| s.trim().to_lowercase()) {
                if !syn.is_empty() {
                    lexicon.insert(&head, &syn);
                }
            }
        }
        Ok(lexicon)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn insert(&mut self, a: &str, b: &str) {
        self.entries
            .entry(a.to_string())
            .or_default()
            .insert(b.to_string());
        self.entries
            .entry(b.to_string())
            .or_default()
            .insert(a.to_string());
    }

    pub fn are_synonyms(&self, a: &str, b: &str) -> bool {
        self.entries.get(a).is_some_and(|set| set.contains(b))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Matching stages of the METEOR aligner, applied in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchStage {
    Exact,
    Stem,
    Synonym,
}

/// One-to-one unigram alignment between a candidate and a reference.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Alignment {
    /// `(candidate_index, reference_index)`, sorted by candidate index.
    pub matches: Vec<(usize, usize)>,
    pub n_chunks: usize,
    pub n_unigram_matches: usize,
}

impl Alignment {
    fn from_assignment(assignment: &[Option<usize>]) -> Self {
        let matches: Vec<(usize, usize)> = assignment
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| (i, j)))
            .collect();
        let n_chunks = count_chunks(&matches);
        Alignment {
            n_unigram_matches: matches.len(),
            n_chunks,
            matches,
        }
    }
}

/// Number of maximal runs of matches contiguous in both sequences.
/// `matches` must be sorted by candidate index.
pub fn count_chunks(matches: &[(usize, usize)]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for &(i, j) in matches {
        match prev {
            Some((pi, pj)) if pi + 1 == i && pj + 1 == j => {}
            _ => chunks += 1,
        }
        prev = Some((i, j));
    }
    chunks
}

/// Search nodes allowed per stage before the aligner settles for its best
/// alignment so far.
const SEARCH_BUDGET: usize = 200_000;

/// Builds a METEOR alignment stage by stage.
///
/// Each stage only links tokens left unmatched by earlier stages. Within a
/// stage the aligner maximizes the number of matches and then minimizes the
/// chunk count of the whole alignment, using a branch-and-bound search seeded
/// with the greedy left-to-right alignment.
pub fn align_meteor(
    candidate: &[String],
    reference: &[String],
    stages: &[MatchStage],
    synonyms: Option<&SynonymLexicon>,
) -> Result<Alignment> {
    let mut ordered: Vec<MatchStage> = stages.to_vec();
    ordered.sort();
    ordered.dedup();
    if ordered.contains(&MatchStage::Synonym) && synonyms.is_none() {
        return Err(Error::Config(
            "synonym matching requested without a synonym lexicon".into(),
        ));
    }

    let needs_stems = ordered.contains(&MatchStage::Stem);
    let cand_stems: Vec<String> = if needs_stems {
        candidate.iter().map(|t| stem(t)).collect()
    } else {
        Vec::new()
    };
    let ref_stems: Vec<String> = if needs_stems {
        reference.iter().map(|t| stem(t)).collect()
    } else {
        Vec::new()
    };

    let mut assignment: Vec<Option<usize>> = vec![None; candidate.len()];
    let mut ref_used = vec![false; reference.len()];

    for stage in ordered {
        let links = |i: usize, j: usize| -> bool {
            match stage {
                MatchStage::Exact => candidate[i] == reference[j],
                MatchStage::Stem => cand_stems[i] == ref_stems[j],
                MatchStage::Synonym => synonyms
                    .is_some_and(|lex| lex.are_synonyms(&candidate[i], &reference[j])),
            }
        };
        let edges: Vec<Vec<usize>> = (0..candidate.len())
            .map(|i| {
                if assignment[i].is_some() {
                    return Vec::new();
                }
                (0..reference.len())
                    .filter(|&j| !ref_used[j] && links(i, j))
                    .collect()
            })
            .collect();
        if edges.iter().all(Vec::is_empty) {
            continue;
        }
        let best = StageSearch::new(&assignment, &edges, reference.len()).run();
        for (i, j) in best.iter().enumerate() {
            if let Some(j) = *j {
                assignment[i] = Some(j);
                ref_used[j] = true;
            }
        }
    }

    Ok(Alignment::from_assignment(&assignment))
}

struct StageSearch<'a> {
    fixed: &'a [Option<usize>],
    edges: &'a [Vec<usize>],
    /// Open positions at or after `i` that have at least one edge.
    optimistic: Vec<usize>,
    current: Vec<Option<usize>>,
    used: Vec<bool>,
    best: Vec<Option<usize>>,
    best_score: Option<(usize, usize)>,
    nodes: usize,
}

impl<'a> StageSearch<'a> {
    fn new(fixed: &'a [Option<usize>], edges: &'a [Vec<usize>], ref_len: usize) -> Self {
        let n = fixed.len();
        let mut optimistic = vec![0; n + 1];
        for i in (0..n).rev() {
            optimistic[i] = optimistic[i + 1] + usize::from(!edges[i].is_empty());
        }
        let mut used = vec![false; ref_len];
        for j in fixed.iter().flatten() {
            used[*j] = true;
        }
        StageSearch {
            fixed,
            edges,
            optimistic,
            current: fixed.to_vec(),
            used,
            best: fixed.to_vec(),
            best_score: None,
            nodes: 0,
        }
    }

    fn run(mut self) -> Vec<Option<usize>> {
        self.descend(0, 0, 0);
        self.best
    }

    fn better(&self, matches: usize, chunks: usize) -> bool {
        match self.best_score {
            None => true,
            Some((bm, bc)) => matches > bm || (matches == bm && chunks < bc),
        }
    }

    fn continues(&self, i: usize, j: usize) -> bool {
        i > 0 && j > 0 && self.current[i - 1] == Some(j - 1)
    }

    fn descend(&mut self, i: usize, matches: usize, chunks: usize) {
        if self.nodes >= SEARCH_BUDGET && self.best_score.is_some() {
            return;
        }
        self.nodes += 1;

        if let Some((bm, bc)) = self.best_score {
            let bound = matches + self.optimistic[i];
            if bound < bm || (bound == bm && chunks >= bc) {
                return;
            }
        }

        if i == self.fixed.len() {
            if self.better(matches, chunks) {
                self.best_score = Some((matches, chunks));
                self.best.clone_from(&self.current);
            }
            return;
        }

        if let Some(j) = self.fixed[i] {
            let step = usize::from(!self.continues(i, j));
            self.descend(i + 1, matches, chunks + step);
            return;
        }

        // Extend the running chunk first, then other links in reference
        // order, then leave the token unmatched. The first leaf reached is the
        // greedy alignment.
        let mut options: Vec<usize> = self.edges[i]
            .iter()
            .copied()
            .filter(|&j| !self.used[j])
            .collect();
        if let Some(pos) = options.iter().position(|&j| self.continues(i, j)) {
            let j = options.remove(pos);
            options.insert(0, j);
        }
        for j in options {
            let step = usize::from(!self.continues(i, j));
            self.current[i] = Some(j);
            self.used[j] = true;
            self.descend(i + 1, matches + 1, chunks + step);
            self.used[j] = false;
            self.current[i] = None;
        }
        self.descend(i + 1, matches, chunks);
    }
}
