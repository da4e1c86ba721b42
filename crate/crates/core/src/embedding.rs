//! Embedding-based similarity: Embedding Average, soft cosine, and
//! BERTScore-style greedy matching over precomputed token vectors.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OovPolicy {
    /// Out-of-vocabulary tokens are ignored.
    #[default]
    Skip,
    /// Out-of-vocabulary tokens contribute a zero vector.
    Zero,
}

/// Static word vectors keyed by token.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dimension: usize,
    vectors: HashMap<String, Vec<f64>>,
    pub oov_policy: OovPolicy,
}

impl EmbeddingTable {
    pub fn new(dimension: usize) -> Self {
        EmbeddingTable {
            dimension,
            vectors: HashMap::new(),
            oov_policy: OovPolicy::Skip,
        }
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                line: 0,
                expected: self.dimension,
                found: vector.len(),
            });
        }
        self.vectors.insert(token.into(), vector);
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// Reads word2vec-style text: an optional `count dim` header, then
    /// `token v1 ... v_dim` per line. The first vector line fixes the
    /// dimension when there is no header.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut table: Option<EmbeddingTable> = None;
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| Error::parse(line_no, "line", e.to_string()))?;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let rest: Vec<&str> = fields.collect();

            if line_no == 1 && rest.len() == 1 {
                if let (Ok(_), Ok(dim)) = (token.parse::<usize>(), rest[0].parse::<usize>()) {
                    if dim == 0 {
                        return Err(Error::parse(line_no, "dim", "dimension must be positive"));
                    }
                    table = Some(EmbeddingTable::new(dim));
                    continue;
                }
            }

            let vector = rest
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    v.parse::<f64>()
                        .map_err(|_| Error::parse(line_no, &format!("v{}", k + 1), format!("not a number: {v}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            let table = table.get_or_insert_with(|| EmbeddingTable::new(vector.len()));
            if vector.is_empty() || vector.len() != table.dimension {
                return Err(Error::DimensionMismatch {
                    line: line_no,
                    expected: table.dimension,
                    found: vector.len(),
                });
            }
            table.vectors.insert(token.to_string(), vector);
        }
        table.ok_or_else(|| Error::parse(1, "dim", "empty embedding file"))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(std::io::BufReader::new(file))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; `None` if either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean of the token vectors of `sentence`.
pub fn embedding_average(sentence: &[String], table: &EmbeddingTable) -> Result<Vec<f64>> {
    let mut sum = vec![0.0; table.dimension];
    let mut count = 0usize;
    for token in sentence {
        match table.get(token) {
            Some(v) => {
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += x;
                }
                count += 1;
            }
            None if table.oov_policy == OovPolicy::Zero => count += 1,
            None => {}
        }
    }
    if count == 0 {
        return Err(Error::NoRepresentableTokens);
    }
    let n = count as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// Embedding Average: cosine of the two averaged sentence vectors.
pub fn ea_score(candidate: &[String], reference: &[String], table: &EmbeddingTable) -> Result<f64> {
    if candidate == reference {
        // Same token sequence, same average; skip the rounding of a
        // self-cosine.
        let avg = embedding_average(candidate, table)?;
        return if norm(&avg) == 0.0 {
            Err(Error::DegenerateSentenceVector)
        } else {
            Ok(1.0)
        };
    }
    let c = embedding_average(candidate, table)?;
    let r = embedding_average(reference, table)?;
    cosine(&c, &r).ok_or(Error::DegenerateSentenceVector)
}

/// Word relation used by soft cosine: embedding cosine for in-vocabulary
/// pairs, exact-match indicator otherwise.
fn relation(a: &str, b: &str, table: &EmbeddingTable) -> f64 {
    if a == b {
        return 1.0;
    }
    match (table.get(a), table.get(b)) {
        (Some(va), Some(vb)) => cosine(va, vb).unwrap_or(0.0),
        _ => 0.0,
    }
}

/// Soft cosine similarity over term-frequency vectors of the joint
/// vocabulary, with embedding cosines as the relation matrix.
pub fn soft_cosine(candidate: &[String], reference: &[String], table: &EmbeddingTable) -> Result<f64> {
    let mut vocab: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for t in candidate {
        vocab.entry(t.as_str()).or_default().0 += 1.0;
    }
    for t in reference {
        vocab.entry(t.as_str()).or_default().1 += 1.0;
    }
    if vocab.is_empty() {
        return Err(Error::Degenerate("empty joint vocabulary"));
    }
    let words: Vec<&str> = vocab.keys().copied().collect();
    let tf: Vec<(f64, f64)> = vocab.values().copied().collect();
    let n = words.len();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let s = relation(words[i], words[j], table);
            m[i * n + j] = s;
            m[j * n + i] = s;
        }
    }
    soft_cosine_with_matrix(&tf, &m)
}

/// Soft cosine for explicit weights `(w_candidate, w_reference)` per word and
/// a row-major relation matrix.
pub fn soft_cosine_with_matrix(weights: &[(f64, f64)], relation: &[f64]) -> Result<f64> {
    let n = weights.len();
    if relation.len() != n * n {
        return Err(Error::Config(format!(
            "relation matrix has {} entries, expected {}",
            relation.len(),
            n * n
        )));
    }
    let (mut num, mut cc, mut rr) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let mij = relation[i * n + j];
            num += mij * weights[i].1 * weights[j].0;
            cc += mij * weights[i].0 * weights[j].0;
            rr += mij * weights[i].1 * weights[j].1;
        }
    }
    if !(cc > 0.0 && rr > 0.0) {
        return Err(Error::DegenerateSimilarityMatrix);
    }
    if weights.iter().all(|(c, r)| c == r) {
        return Ok(1.0);
    }
    Ok(num / (cc.sqrt() * rr.sqrt()))
}

/// Token vectors of one sentence, each of unit length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextualTokens {
    tokens: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

impl ContextualTokens {
    pub fn new(tokens: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if tokens.len() != vectors.len() {
            return Err(Error::LengthMismatch {
                candidates: tokens.len(),
                references: vectors.len(),
            });
        }
        if let Some(dim) = vectors.first().map(Vec::len) {
            if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
                return Err(Error::DimensionMismatch {
                    line: 0,
                    expected: dim,
                    found: bad.len(),
                });
            }
        }
        for (index, v) in vectors.iter().enumerate() {
            let n = norm(v);
            if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::NotUnitNorm { index, norm: n });
            }
        }
        Ok(ContextualTokens { tokens, vectors })
    }

    /// Normalizes arbitrary vectors first. Zero vectors are dropped.
    pub fn normalized(tokens: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        let mut kept_tokens = Vec::new();
        let mut kept = Vec::new();
        for (t, v) in tokens.into_iter().zip(vectors) {
            let n = norm(&v);
            if n > 0.0 {
                kept_tokens.push(t);
                kept.push(v.into_iter().map(|x| x / n).collect());
            }
        }
        ContextualTokens::new(kept_tokens, kept)
    }

    /// Fallback when no contextual vectors exist: each in-vocabulary token
    /// gets its normalized static vector.
    pub fn from_static(sentence: &[String], table: &EmbeddingTable) -> Result<Self> {
        let (tokens, vectors): (Vec<String>, Vec<Vec<f64>>) = sentence
            .iter()
            .filter_map(|t| table.get(t).map(|v| (t.clone(), v.to_vec())))
            .unzip();
        Self::normalized(tokens, vectors)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BertScore {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

/// Greedy-matching BERTScore; `F` is the reported score.
pub fn bertscore(candidate: &ContextualTokens, reference: &ContextualTokens) -> Result<BertScore> {
    bertscore_weighted(candidate, reference, None)
}

/// BERTScore with optional per-token importance weights (e.g. idf). Tokens
/// missing from the weight map get weight 1.
pub fn bertscore_weighted(
    candidate: &ContextualTokens,
    reference: &ContextualTokens,
    idf: Option<&HashMap<String, f64>>,
) -> Result<BertScore> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::Degenerate("BERTScore needs non-empty token lists on both sides"));
    }
    let (dc, dr) = (candidate.vectors[0].len(), reference.vectors[0].len());
    if dc != dr {
        return Err(Error::MixedDimensions { expected: dr, found: dc });
    }
    let weight = |t: &str| idf.and_then(|m| m.get(t).copied()).unwrap_or(1.0);
    let best_match = |v: &[f64], others: &ContextualTokens| -> f64 {
        others
            .vectors
            .iter()
            .map(|o| dot(v, o))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let side = |from: &ContextualTokens, to: &ContextualTokens| -> Result<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for (t, v) in from.tokens.iter().zip(&from.vectors) {
            let w = weight(t);
            num += w * best_match(v, to);
            den += w;
        }
        if den <= 0.0 {
            return Err(Error::Degenerate("BERTScore importance weights sum to zero"));
        }
        Ok(num / den)
    };

    if candidate == reference {
        return Ok(BertScore {
            recall: 1.0,
            precision: 1.0,
            f1: 1.0,
        });
    }
    let recall = side(reference, candidate)?;
    let precision = side(candidate, reference)?;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(BertScore {
        recall,
        precision,
        f1,
    })
}

/// Which side of a scored pair a contextual record describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Candidate,
    Reference,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ContextualRecord {
    pub question_id: String,
    pub side: Side,
    /// Distinguishes candidates of different systems for the same question.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub tokens: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

/// Contextual token vectors loaded from a JSON-lines sidecar.
#[derive(Debug, Clone, Default)]
pub struct ContextualStore {
    records: HashMap<(String, Side, Option<String>), ContextualTokens>,
}

impl ContextualStore {
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut store = ContextualStore::default();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| Error::parse(line_no, "line", e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ContextualRecord = serde_json::from_str(&line)
                .map_err(|e| Error::parse(line_no, "record", e.to_string()))?;
            let tokens = ContextualTokens::new(rec.tokens, rec.vectors).map_err(|e| match e {
                Error::DimensionMismatch { expected, found, .. } => Error::DimensionMismatch {
                    line: line_no,
                    expected,
                    found,
                },
                other => Error::parse(line_no, "vectors", other.to_string()),
            })?;
            store
                .records
                .insert((rec.question_id, rec.side, rec.system), tokens);
        }
        Ok(store)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    /// Looks up a system-specific record first, then a system-agnostic one.
    pub fn get(&self, question_id: &str, side: Side, system: Option<&str>) -> Option<&ContextualTokens> {
        let key = |sys: Option<&str>| (question_id.to_string(), side, sys.map(str::to_string));
        system
            .and_then(|s| self.records.get(&key(Some(s))))
            .or_else(|| self.records.get(&key(None)))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> EmbeddingTable {
        let text = "3 2\nred 1 0\nblue 0 1\nanti -1 0\n";
        EmbeddingTable::from_reader(text.as_bytes()).unwrap()
    }

    fn s(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn load_examples() {
        let t = EmbeddingTable::from_reader("a 1 2 3\nb 4 5 6\n".as_bytes()).unwrap();
        assert_eq!((t.len(), t.dimension()), (2, 3));
        assert_eq!(t.get("b").unwrap(), &[4.0, 5.0, 6.0]);
        let err = EmbeddingTable::from_reader("a 1 2 3\nb 4 5\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { line: 2, expected: 3, found: 2 }));
        let err = EmbeddingTable::from_reader("2 3\na 1 2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { line: 2, .. }));
        let err = EmbeddingTable::from_reader("a 1 x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn averages() {
        let t = table();
        assert_eq!(embedding_average(&s(&["red"]), &t).unwrap(), vec![1.0, 0.0]);
        assert_eq!(embedding_average(&s(&["red", "anti"]), &t).unwrap(), vec![0.0, 0.0]);
        assert_eq!(embedding_average(&s(&["red", "blue"]), &t).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(
            embedding_average(&s(&["zzz"]), &t),
            Err(Error::NoRepresentableTokens)
        ));
        let mut z = table();
        z.oov_policy = OovPolicy::Zero;
        assert_eq!(embedding_average(&s(&["red", "zzz"]), &z).unwrap(), vec![0.5, 0.0]);
    }

    #[test]
    fn ea_examples() {
        let t = table();
        assert_eq!(ea_score(&s(&["red", "blue"]), &s(&["red", "blue"]), &t).unwrap(), 1.0);
        assert_eq!(ea_score(&s(&["red"]), &s(&["blue"]), &t).unwrap(), 0.0);
        assert!(matches!(
            ea_score(&s(&["red", "anti"]), &s(&["blue"]), &t),
            Err(Error::DegenerateSentenceVector)
        ));
    }

    #[test]
    fn soft_cosine_examples() {
        let t = table();
        assert_eq!(soft_cosine(&s(&["red", "blue"]), &s(&["red", "blue"]), &t).unwrap(), 1.0);
        // Orthogonal embeddings make the relation matrix the identity, so the
        // score is the plain cosine of term frequencies.
        let v = soft_cosine(&s(&["red", "red", "blue"]), &s(&["red", "blue", "blue"]), &t).unwrap();
        assert!((v - 4.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn soft_cosine_explicit_matrix() {
        // words w0..w2; candidate tf (1,0,2), reference tf (0,1,1)
        let w = [(1.0, 0.0), (0.0, 1.0), (2.0, 1.0)];
        let m = [1.0, 0.5, 0.0, 0.5, 1.0, 0.2, 0.0, 0.2, 1.0];
        // num = r^T M c, with M c = (1, 0.9, 2), so r.(Mc) = 0.9 + 2 = 2.9
        // c^T M c = c.(Mc) = 1 + 4 = 5
        // M r = (0.5, 1.2, 1.2); r.(Mr) = 1.2 + 1.2 = 2.4
        let v = soft_cosine_with_matrix(&w, &m).unwrap();
        assert!((v - 2.9 / (5.0f64.sqrt() * 2.4f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn bertscore_examples() {
        let a = ContextualTokens::new(s(&["x", "y"]), vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let same = bertscore(&a, &a).unwrap();
        assert_eq!((same.recall, same.precision, same.f1), (1.0, 1.0, 1.0));

        let b = ContextualTokens::new(s(&["z"]), vec![vec![0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(bertscore(&a, &b).unwrap().f1, 0.0);

        let err = ContextualTokens::new(s(&["q"]), vec![vec![0.5, 0.5]]).unwrap_err();
        assert!(matches!(err, Error::NotUnitNorm { .. }));
    }

    #[test]
    fn bertscore_idf_weights() {
        let cand = ContextualTokens::new(s(&["x", "y"]), vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let refr = ContextualTokens::new(s(&["x"]), vec![vec![1.0, 0.0]]).unwrap();
        let plain = bertscore(&cand, &refr).unwrap();
        assert_eq!(plain.precision, 0.5);
        let idf: HashMap<String, f64> = [("y".to_string(), 3.0)].into();
        let weighted = bertscore_weighted(&cand, &refr, Some(&idf)).unwrap();
        assert_eq!(weighted.precision, 0.25);
        assert_eq!(weighted.recall, 1.0);
    }

    #[test]
    fn contextual_store_lookup() {
        let text = r#"{"question_id":"s#1","side":"reference","tokens":["a"],"vectors":[[1.0,0.0]]}
{"question_id":"s#1","side":"candidate","system":"bm25","tokens":["b"],"vectors":[[0.0,1.0]]}
{"question_id":"s#1","side":"candidate","tokens":["c"],"vectors":[[0.6,0.8]]}
"#;
        let store = ContextualStore::from_reader(text.as_bytes()).unwrap();
        assert_eq!(store.len(), 3);
        assert_eq!(store.get("s#1", Side::Candidate, Some("bm25")).unwrap().tokens(), ["b"]);
        assert_eq!(store.get("s#1", Side::Candidate, Some("tfidf")).unwrap().tokens(), ["c"]);
        assert!(store.get("s#2", Side::Reference, None).is_none());
        let bad = r#"{"question_id":"q","side":"candidate","tokens":["a"],"vectors":[[2.0]]}"#;
        assert!(matches!(
            ContextualStore::from_reader(bad.as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
