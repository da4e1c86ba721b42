use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn conveval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conveval"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn score_srst_three_columns() {
    let out = tempfile::tempdir().unwrap();
    let o = conveval(&[
        "score",
        "--corpus",
        s(&fixture("msdialog.jsonl")),
        "--runs",
        s(&fixture("runs_srst.jsonl")),
        "--metrics",
        "bleu2,meteor,rouge_l",
        "--out",
        s(out.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out.path().join("scores_wide.csv"));
    assert_eq!(rows[0], ["system", "item", "bleu2", "meteor", "rouge_l"]);
    // 3 systems x 12 questions with ground truth.
    assert_eq!(rows.len() - 1, 36);
    assert!(rows[1..].iter().all(|r| r[2..].iter().all(|v| !v.is_empty())));
    let long = csv_rows(&out.path().join("scores_long.csv"));
    assert_eq!(long.len() - 1, 36 * 3);
}

#[test]
fn score_mrst_ndcg_in_unit_interval() {
    let out = tempfile::tempdir().unwrap();
    let o = conveval(&[
        "score",
        "--corpus",
        s(&fixture("msdialog.jsonl")),
        "--runs",
        s(&fixture("runs_mrst.jsonl")),
        "--mode",
        "mrst",
        "--metrics",
        "ndcg@5(meteor)",
        "--out",
        s(out.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out.path().join("scores_wide.csv"));
    assert_eq!(rows[0].len(), 3);
    for r in &rows[1..] {
        let v: f64 = r[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn score_mt_per_session_column() {
    let out = tempfile::tempdir().unwrap();
    let o = conveval(&[
        "score",
        "--corpus",
        s(&fixture("wizard.jsonl")),
        "--format",
        "wizard",
        "--runs",
        s(&fixture("runs_mt.jsonl")),
        "--mode",
        "mt",
        "--metrics",
        "max(meteor-gain)",
        "--out",
        s(out.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out.path().join("scores_wide.csv"));
    assert_eq!(rows[0], ["system", "item", "max(meteor)"]);
    assert_eq!(rows.len() - 1, 3 * 24);
    assert!(rows[1..].iter().all(|r| r[1].starts_with("wz")));
}

#[test]
fn incompatible_metric_is_usage_error() {
    let out = tempfile::tempdir().unwrap();
    let o = conveval(&[
        "score",
        "--corpus",
        s(&fixture("msdialog.jsonl")),
        "--runs",
        s(&fixture("runs_srst.jsonl")),
        "--metrics",
        "err(meteor)",
        "--out",
        s(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("err(meteor)"));
    assert_eq!(conveval(&["score", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(conveval(&["--help"]).status.code(), Some(0));
}

#[test]
fn unknown_question_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("bad_runs.jsonl");
    fs::write(
        &runs,
        r#"{"run_id":"r","system_name":"x","question_id":"nope#1","mode":"single","response":"hi"}"#,
    )
    .unwrap();
    let score = conveval(&[
        "score",
        "--corpus",
        s(&fixture("msdialog.jsonl")),
        "--runs",
        s(&runs),
        "--out",
        s(&dir.path().join("out")),
    ]);
    assert_eq!(score.status.code(), Some(2));

    let validate = conveval(&["validate", "--corpus", s(&fixture("msdialog.jsonl")), "--runs", s(&runs)]);
    assert_eq!(validate.status.code(), Some(2));
    assert!(stdout(&validate).contains("nope#1"));
}

#[test]
fn validate_clean_fixture() {
    let o = conveval(&[
        "validate",
        "--corpus",
        s(&fixture("msdialog.jsonl")),
        "--runs",
        s(&fixture("runs_srst.jsonl")),
        "--embeddings",
        s(&fixture("embeddings.txt")),
        "--contextual",
        s(&fixture("contextual.jsonl")),
        "--synonyms",
        s(&fixture("synonyms.tsv")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("0 violations"));
}

#[test]
fn validate_embedding_dimension_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let emb = dir.path().join("emb.txt");
    fs::write(&emb, "2 3\ncat 0.1 0.2 0.3\ndog 0.1 0.2\n").unwrap();
    let o = conveval(&["validate", "--corpus", s(&fixture("msdialog.jsonl")), "--embeddings", s(&emb)]);
    assert_eq!(o.status.code(), Some(2));
    let text = stdout(&o);
    assert!(text.contains("line 3"), "{text}");
}

#[test]
fn identical_runs_have_no_discriminative_power() {
    let dir = tempfile::tempdir().unwrap();
    let original = fs::read_to_string(fixture("runs_srst.jsonl")).unwrap();
    let strong: Vec<&str> = original.lines().filter(|l| l.contains("\"strong\"")).collect();
    let twin: Vec<String> = strong
        .iter()
        .map(|l| l.replace("run-strong", "run-twin").replace("\"strong\"", "\"twin\""))
        .collect();
    let runs = dir.path().join("twins.jsonl");
    fs::write(&runs, format!("{}\n{}\n", strong.join("\n"), twin.join("\n"))).unwrap();
    let out = dir.path().join("out");
    let o = conveval(&[
        "metaeval",
        "--corpus",
        s(&fixture("msdialog.jsonl")),
        "--runs",
        s(&runs),
        "--metrics",
        "bleu2,meteor,rouge_l",
        "--meta",
        "disc",
        "--permutations",
        "500",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out.join("discriminative_power.csv"));
    assert_eq!(rows.len(), 4);
    assert!(rows[1..].iter().all(|r| r[6] == "0"));
    let header = fs::read_to_string(out.join("discriminative_power.csv")).unwrap();
    assert!(header.starts_with("# seed=42\n# permutations=500\n# alpha=0.05\n"));
}

#[test]
fn concordance_requires_mt() {
    let out = tempfile::tempdir().unwrap();
    let o = conveval(&[
        "metaeval",
        "--corpus",
        s(&fixture("msdialog.jsonl")),
        "--runs",
        s(&fixture("runs_srst.jsonl")),
        "--meta",
        "conc",
        "--out",
        s(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("job.toml");
    fs::write(
        &cfg,
        format!(
            "corpus = {:?}\nruns = [{:?}]\nmetrics = [\"bleu1\", \"rouge_l\"]\nout = \"from-config\"\nseed = 9\n",
            s(&fixture("msdialog.jsonl")),
            s(&fixture("runs_srst.jsonl"))
        ),
    )
    .unwrap();
    let o = conveval(&["score", "--config", s(&cfg), "--metrics", "meteor"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("from-config/scores_wide.csv"));
    assert_eq!(rows[0], ["system", "item", "meteor"]);

    fs::write(&cfg, "unknown_key = 1\n").unwrap();
    assert_eq!(conveval(&["score", "--config", s(&cfg)]).status.code(), Some(1));
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn reports_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str, sub: &str| {
        let out = dir.path().join(sub);
        for cmd in ["score", "metaeval"] {
            let o = conveval(&[
                cmd,
                "--corpus",
                s(&fixture("wizard.jsonl")),
                "--format",
                "wizard",
                "--runs",
                s(&fixture("runs_mt.jsonl")),
                "--mode",
                "mt",
                "--permutations",
                "500",
                "--resamples",
                "200",
                "--seed",
                "3",
                "--threads",
                threads,
                "--out",
                s(&out),
            ]);
            assert!(o.status.success(), "{}", stderr(&o));
        }
        tree(&out)
    };
    assert_eq!(run("1", "a"), run("4", "b"));
}
