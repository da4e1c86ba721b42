//! Conversation corpora, system runs, and the human labels derived from them.
//!
//! Corpus files are JSON lines with one record per turn:
//!
//! ```text
//! {"session_id":"s1","turn_index":1,"question":"...","response":"...","votes":2,"is_answer":true}
//! ```
//!
//! Wizard-style records replace the vote labels with `has_selected_sentence`
//! and carry the session's `satisfaction` (an integer in `[-1, 5]`) on one
//! of the turns, usually the last.
//!
//! Run files are JSON lines too, one record per question (or per session in
//! multi-turn mode), keyed by [`question_id`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::{Error, Result};

/// Identifier of a single-turn question: `session_id#turn_index`.
pub fn question_id(session_id: &str, turn_index: u32) -> String {
    format!("{session_id}#{turn_index}")
}

/// Splits a question id into its session id and turn index.
pub fn split_question_id(id: &str) -> Option<(&str, u32)> {
    let (session, turn) = id.rsplit_once('#')?;
    Some((session, turn.parse().ok()?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Msdialog,
    Wizard,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "msdialog" => Ok(CorpusFormat::Msdialog),
            "wizard" => Ok(CorpusFormat::Wizard),
            other => Err(Error::Usage(format!("unknown corpus format `{other}`"))),
        }
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorpusFormat::Msdialog => "msdialog",
            CorpusFormat::Wizard => "wizard",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub session_id: String,
    pub turn_index: u32,
    pub question: String,
    pub response: String,
    pub votes: u64,
    pub is_answer: bool,
    pub has_selected_sentence: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub turns: Vec<Turn>,
    pub satisfaction: Option<i32>,
}

impl Session {
    pub fn turn(&self, turn_index: u32) -> Option<&Turn> {
        self.turns.get(turn_index.checked_sub(1)? as usize)
    }
}

/// Loaded sessions plus the format they were read with.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub format: CorpusFormat,
    pub sessions: Vec<Session>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(format: CorpusFormat, sessions: Vec<Session>) -> Self {
        let index = sessions
            .iter()
            .enumerate()
            .map(|(i, s)| (s.session_id.clone(), i))
            .collect();
        Corpus {
            format,
            sessions,
            index,
        }
    }

    pub fn load(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Self> {
        Ok(Corpus::new(format, load_corpus(path, format)?))
    }

    pub fn session(&self, session_id: &str) -> Option<&Session> {
        self.index.get(session_id).map(|&i| &self.sessions[i])
    }

    pub fn turn(&self, question_id: &str) -> Option<&Turn> {
        let (session, turn) = split_question_id(question_id)?;
        self.session(session)?.turn(turn)
    }

    /// Ground-truth response of a single-turn question, if any.
    pub fn ground_truth(&self, question_id: &str) -> Option<&str> {
        let turn = self.turn(question_id)?;
        is_ground_truth(turn, self.format).then_some(turn.response.as_str())
    }

    /// All questions that have a ground truth, keyed by question id.
    pub fn ground_truth_items(&self) -> BTreeMap<String, &str> {
        self.sessions
            .iter()
            .flat_map(|s| s.turns.iter())
            .filter(|t| is_ground_truth(t, self.format))
            .map(|t| (question_id(&t.session_id, t.turn_index), t.response.as_str()))
            .collect()
    }

    /// Reference used when scoring responses to a whole session's question:
    /// the earliest ground-truth turn.
    pub fn session_reference(&self, session_id: &str) -> Option<&str> {
        let session = self.session(session_id)?;
        extract_ground_truth(session, self.format)
            .into_iter()
            .next()
            .map(|(turn, _)| session.turn(turn).map(|t| t.response.as_str()))?
    }
}

fn is_ground_truth(turn: &Turn, format: CorpusFormat) -> bool {
    match format {
        CorpusFormat::Msdialog => turn.is_answer,
        CorpusFormat::Wizard => turn.has_selected_sentence,
    }
}

fn get_string(obj: &Map<String, Value>, field: &str, line: usize) -> Result<String> {
    match obj.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(other) => Err(Error::parse(line, field, format!("expected a string, found {other}"))),
        None => Err(Error::parse(line, field, "missing")),
    }
}

fn get_u64(obj: &Map<String, Value>, field: &str, line: usize) -> Result<Option<u64>> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .map(Some)
            .ok_or_else(|| Error::parse(line, field, format!("expected a non-negative integer, found {v}"))),
    }
}

/// Booleans may be written as `true`/`false` or `1`/`0`.
fn get_flag(obj: &Map<String, Value>, field: &str, line: usize) -> Result<Option<bool>> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Bool(b)) => Ok(Some(*b)),
        Some(v) => match v.as_u64() {
            Some(0) => Ok(Some(false)),
            Some(1) => Ok(Some(true)),
            _ => Err(Error::parse(line, field, format!("expected a boolean or 0/1, found {v}"))),
        },
    }
}

/// One parsed corpus record.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecord {
    pub turn: Turn,
    pub satisfaction: Option<i32>,
}

/// Parses one corpus line. `line` is the 1-based line number for errors.
pub fn parse_corpus_record(text: &str, format: CorpusFormat, line: usize) -> Result<CorpusRecord> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| Error::parse(line, "record", e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(Error::parse(line, "record", "expected a JSON object"));
    };
    let session_id = get_string(&obj, "session_id", line)?;
    let turn_index = get_u64(&obj, "turn_index", line)?
        .ok_or_else(|| Error::parse(line, "turn_index", "missing"))?;
    if turn_index == 0 || turn_index > u32::MAX as u64 {
        return Err(Error::parse(line, "turn_index", "must be a positive 32-bit integer"));
    }
    let question = get_string(&obj, "question", line)?;
    let response = get_string(&obj, "response", line)?;

    let required = |present: bool, field: &str| -> Result<()> {
        if present {
            Ok(())
        } else {
            Err(Error::parse(line, field, "missing"))
        }
    };

    let votes = get_u64(&obj, "votes", line)?;
    let is_answer = get_flag(&obj, "is_answer", line)?;
    let selected = get_flag(&obj, "has_selected_sentence", line)?;
    let satisfaction = match format {
        CorpusFormat::Msdialog => {
            required(votes.is_some(), "votes")?;
            required(is_answer.is_some(), "is_answer")?;
            None
        }
        CorpusFormat::Wizard => {
            required(selected.is_some(), "has_selected_sentence")?;
            match obj.get("satisfaction") {
                None | Some(Value::Null) => None,
                Some(v) => {
                    let s = v
                        .as_i64()
                        .filter(|s| (-1..=5).contains(s))
                        .ok_or_else(|| {
                            Error::parse(line, "satisfaction", format!("expected an integer in [-1, 5], found {v}"))
                        })?;
                    Some(s as i32)
                }
            }
        }
    };

    Ok(CorpusRecord {
        turn: Turn {
            session_id,
            turn_index: turn_index as u32,
            question,
            response,
            votes: votes.unwrap_or(0),
            is_answer: is_answer.unwrap_or(false),
            has_selected_sentence: selected.unwrap_or(false),
        },
        satisfaction,
    })
}

/// Reads a corpus from JSON lines. Sessions keep the order of their first
/// appearance; turns are ordered by `turn_index`.
pub fn parse_corpus<R: BufRead>(reader: R, format: CorpusFormat) -> Result<Vec<Session>> {
    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, (BTreeMap<u32, Turn>, Option<i32>)> = HashMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::parse(line_no, "line", e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_corpus_record(&line, format, line_no)?;
        let sid = record.turn.session_id.clone();
        let entry = grouped.entry(sid.clone()).or_insert_with(|| {
            order.push(sid.clone());
            (BTreeMap::new(), None)
        });
        if let Some(s) = record.satisfaction {
            match entry.1 {
                Some(prev) if prev != s => {
                    return Err(Error::ConflictingSatisfaction {
                        session_id: sid,
                        first: prev,
                        second: s,
                    })
                }
                _ => entry.1 = Some(s),
            }
        }
        let turn_index = record.turn.turn_index;
        if entry.0.insert(turn_index, record.turn).is_some() {
            return Err(Error::DuplicateTurn {
                line: line_no,
                session_id: sid,
                turn_index,
            });
        }
    }

    order
        .into_iter()
        .map(|sid| {
            let (turns, satisfaction) = grouped.remove(&sid).expect("grouped by order");
            for (expected, &actual) in (1u32..).zip(turns.keys()) {
                if expected != actual {
                    return Err(Error::NonContiguousTurns {
                        session_id: sid,
                        missing: expected,
                    });
                }
            }
            Ok(Session {
                session_id: sid,
                turns: turns.into_values().collect(),
                satisfaction,
            })
        })
        .collect()
}

pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Vec<Session>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(std::io::BufReader::new(file), format)
}

/// Writes sessions in the JSON-lines corpus schema of `format`.
pub fn write_corpus<W: Write>(sessions: &[Session], format: CorpusFormat, mut out: W) -> Result<()> {
    for session in sessions {
        let last = session.turns.len();
        for (pos, turn) in session.turns.iter().enumerate() {
            let mut record = json!({
                "session_id": turn.session_id,
                "turn_index": turn.turn_index,
                "question": turn.question,
                "response": turn.response,
                "votes": turn.votes,
                "is_answer": turn.is_answer,
            });
            if format == CorpusFormat::Wizard {
                record["has_selected_sentence"] = json!(turn.has_selected_sentence);
                if pos + 1 == last {
                    if let Some(s) = session.satisfaction {
                        record["satisfaction"] = json!(s);
                    }
                }
            }
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n").map_err(|e| Error::io("<corpus output>", e))?;
        }
    }
    Ok(())
}

/// Ground-truth responses of a session keyed by turn index.
pub fn extract_ground_truth(session: &Session, format: CorpusFormat) -> BTreeMap<u32, String> {
    session
        .turns
        .iter()
        .filter(|t| is_ground_truth(t, format))
        .map(|t| (t.turn_index, t.response.clone()))
        .collect()
}

/// Votes divided by the session's maximum vote count.
pub fn normalize_votes(session: &Session) -> Result<BTreeMap<u32, f64>> {
    let max = session.turns.iter().map(|t| t.votes).max().unwrap_or(0);
    if max == 0 {
        return Err(Error::NoVotedResponses(session.session_id.clone()));
    }
    Ok(session
        .turns
        .iter()
        .map(|t| (t.turn_index, t.votes as f64 / max as f64))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preferred {
    A,
    B,
}

/// Two non-ground-truth responses to the same question, one preferred by
/// the voters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    /// The session the responses answer.
    pub question_id: String,
    pub turn_a: u32,
    pub turn_b: u32,
    pub response_a: String,
    pub response_b: String,
    pub human_prefers: Preferred,
}

impl PreferencePair {
    pub fn preferred_response(&self) -> &str {
        match self.human_prefers {
            Preferred::A => &self.response_a,
            Preferred::B => &self.response_b,
        }
    }
}

/// All-pairs preference mining. Within each session, every couple of
/// non-ground-truth responses with strictly different normalized votes
/// yields one pair; ties and sessions without votes yield nothing.
pub fn build_preference_pairs(sessions: &[Session], format: CorpusFormat) -> Vec<PreferencePair> {
    let mut pairs = Vec::new();
    for session in sessions {
        let Ok(normalized) = normalize_votes(session) else {
            continue;
        };
        let candidates: Vec<&Turn> = session
            .turns
            .iter()
            .filter(|t| !is_ground_truth(t, format))
            .collect();
        for (i, a) in candidates.iter().enumerate() {
            for b in &candidates[i + 1..] {
                let (va, vb) = (normalized[&a.turn_index], normalized[&b.turn_index]);
                if va == vb || a.response == b.response {
                    continue;
                }
                pairs.push(PreferencePair {
                    question_id: session.session_id.clone(),
                    turn_a: a.turn_index,
                    turn_b: b.turn_index,
                    response_a: a.response.clone(),
                    response_b: b.response.clone(),
                    human_prefers: if va > vb { Preferred::A } else { Preferred::B },
                });
            }
        }
    }
    pairs
}

/// A system's answer to one question (or one session).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseOutput {
    Single(String),
    Ranked(Vec<String>),
    /// One response per turn, in turn order.
    Session(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputMode {
    Single,
    Ranked,
    Session,
}

impl ResponseOutput {
    pub fn mode(&self) -> OutputMode {
        match self {
            ResponseOutput::Single(_) => OutputMode::Single,
            ResponseOutput::Ranked(_) => OutputMode::Ranked,
            ResponseOutput::Session(_) => OutputMode::Session,
        }
    }
}

impl fmt::Display for OutputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputMode::Single => "single",
            OutputMode::Ranked => "ranked",
            OutputMode::Session => "session",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SystemRun {
    pub run_id: String,
    pub system_name: String,
    pub outputs: BTreeMap<String, ResponseOutput>,
}

/// One parsed run-file line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunRecord {
    pub run_id: String,
    pub system_name: String,
    pub question_id: String,
    pub output: ResponseOutput,
}

fn get_string_list(obj: &Map<String, Value>, field: &str, line: usize) -> Result<Vec<String>> {
    match obj.get(field) {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| Error::parse(line, field, format!("expected strings, found {v}")))
            })
            .collect(),
        Some(other) => Err(Error::parse(line, field, format!("expected an array, found {other}"))),
        None => Err(Error::parse(line, field, "missing")),
    }
}

/// Parses one run-file line. Ranked lists longer than `k_max` are rejected.
pub fn parse_run_record(text: &str, line: usize, k_max: usize) -> Result<RunRecord> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| Error::parse(line, "record", e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(Error::parse(line, "record", "expected a JSON object"));
    };
    let run_id = get_string(&obj, "run_id", line)?;
    let system_name = get_string(&obj, "system_name", line)?;
    let question_id = get_string(&obj, "question_id", line)?;
    let mode = get_string(&obj, "mode", line)?;

    let payloads = ["response", "responses", "session_responses"];
    let present: Vec<&str> = payloads.iter().copied().filter(|p| obj.contains_key(*p)).collect();
    let expected = match mode.as_str() {
        "single" => "response",
        "ranked" => "responses",
        "session" => "session_responses",
        other => return Err(Error::parse(line, "mode", format!("unknown mode `{other}`"))),
    };
    if present != [expected] {
        return Err(Error::parse(
            line,
            expected,
            format!("mode `{mode}` requires exactly the `{expected}` payload, found {present:?}"),
        ));
    }
    let output = match mode.as_str() {
        "single" => ResponseOutput::Single(get_string(&obj, "response", line)?),
        "ranked" => {
            let list = get_string_list(&obj, "responses", line)?;
            if list.len() > k_max {
                return Err(Error::parse(
                    line,
                    "responses",
                    format!("ranked list has {} entries, limit is {k_max}", list.len()),
                ));
            }
            ResponseOutput::Ranked(list)
        }
        _ => ResponseOutput::Session(get_string_list(&obj, "session_responses", line)?),
    };
    Ok(RunRecord {
        run_id,
        system_name,
        question_id,
        output,
    })
}

/// Reads run records, grouping them by `run_id` in order of first
/// appearance.
pub fn parse_runs<R: BufRead>(reader: R, k_max: usize) -> Result<Vec<SystemRun>> {
    let mut runs: Vec<SystemRun> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::parse(line_no, "line", e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_run_record(&line, line_no, k_max)?;
        let slot = *index.entry(rec.run_id.clone()).or_insert_with(|| {
            runs.push(SystemRun {
                run_id: rec.run_id.clone(),
                system_name: rec.system_name.clone(),
                outputs: BTreeMap::new(),
            });
            runs.len() - 1
        });
        let run = &mut runs[slot];
        if run.system_name != rec.system_name {
            return Err(Error::parse(
                line_no,
                "system_name",
                format!("run `{}` already names system `{}`", run.run_id, run.system_name),
            ));
        }
        if let Some(first) = run.outputs.values().next() {
            if first.mode() != rec.output.mode() {
                return Err(Error::parse(
                    line_no,
                    "mode",
                    format!("run `{}` mixes `{}` and `{}` outputs", run.run_id, first.mode(), rec.output.mode()),
                ));
            }
        }
        if run.outputs.insert(rec.question_id.clone(), rec.output).is_some() {
            return Err(Error::parse(
                line_no,
                "question_id",
                format!("duplicate question `{}` in run `{}`", rec.question_id, run.run_id),
            ));
        }
    }
    Ok(runs)
}

pub fn load_runs(path: impl AsRef<Path>, k_max: usize) -> Result<Vec<SystemRun>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_runs(std::io::BufReader::new(file), k_max)
}

/// Writes runs in the run-file schema.
pub fn write_runs<W: Write>(runs: &[SystemRun], mut out: W) -> Result<()> {
    for run in runs {
        for (qid, output) in &run.outputs {
            let mut record = json!({
                "run_id": run.run_id,
                "system_name": run.system_name,
                "question_id": qid,
                "mode": output.mode().to_string(),
            });
            match output {
                ResponseOutput::Single(r) => record["response"] = json!(r),
                ResponseOutput::Ranked(rs) => record["responses"] = json!(rs),
                ResponseOutput::Session(rs) => record["session_responses"] = json!(rs),
            }
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n").map_err(|e| Error::io("<run output>", e))?;
        }
    }
    Ok(())
}

impl SystemRun {
    /// Cross-checks the run against a corpus; returns one error per bad
    /// output.
    pub fn check_against(&self, corpus: &Corpus) -> Vec<Error> {
        let mut problems = Vec::new();
        let bad = |qid: &str, message: String| Error::InvalidRun {
            run_id: self.run_id.clone(),
            question_id: qid.to_string(),
            message,
        };
        for (qid, output) in &self.outputs {
            match output {
                ResponseOutput::Session(responses) => match corpus.session(qid) {
                    None => problems.push(bad(qid, "unknown session id".into())),
                    Some(s) if s.turns.len() != responses.len() => problems.push(bad(
                        qid,
                        format!("{} session responses for {} turns", responses.len(), s.turns.len()),
                    )),
                    Some(_) => {}
                },
                _ => {
                    if corpus.turn(qid).is_none() {
                        problems.push(bad(qid, "unknown question id".into()));
                    }
                }
            }
        }
        problems
    }
}
