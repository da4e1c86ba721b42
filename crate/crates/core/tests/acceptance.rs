//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use conveval::corpus::{
    build_preference_pairs, CorpusFormat, Corpus, ResponseOutput, Session, SystemRun, Turn,
};
use conveval::embedding::{bertscore, ea_score, soft_cosine, ContextualTokens, EmbeddingTable};
use conveval::job::{run_metaeval, run_score, JobConfig, Mode};
use conveval::metaeval::{
    concordance, predictive_power, randomized_tukey_hsd, session_concordance_suite, BaselineTest,
    ConcordanceConfig, ScoreMatrix, TiePolicy, BASELINE_ROW,
};
use conveval::metric::{Resources, SrMetric};
use conveval::overlap::{meteor, rouge_l, sentence_bleu, BleuConfig, MeteorConfig, RougeConfig};
use conveval::ranking::{err, ndcg_at_k, rbp, RankedRelevance};
use conveval::session::{
    max_strategy, min_strategy, scg, sdcg, sdcg_per_q, swf, SessionGains, SwfScheme, DEFAULT_BQ,
};
use conveval::textprep::tokenize;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

/// Name, check, runtime limit in seconds.
type Criterion = (&'static str, fn() -> Check, u64);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

const WORDS: &[&str] = &[
    "blue", "color", "primary", "light", "the", "a", "is", "of", "spectrum", "artist", "paint", "red",
    "green", "sky", "water", "deep", "bright", "dark", "warm", "cold", "music", "guitar", "string",
    "play", "song", "evening", "morning", "good", "love", "visible", "wave", "long", "short",
];

fn random_sentence(rng: &mut ChaCha8Rng, len: usize) -> Vec<String> {
    (0..len).map(|_| WORDS[rng.random_range(0..WORDS.len())].to_string()).collect()
}

fn random_table(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingTable {
    let mut table = EmbeddingTable::new(dim);
    for w in WORDS {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        table.insert(*w, v).unwrap();
    }
    table
}

fn c1_reference_pair_bleu() -> Check {
    let reference = tokenize("it is also a primary color, im an artist good evening");
    let candidate = tokenize("i love blue , it is a primary color in the spectrum of visible light");
    let b = |n| sentence_bleu(candidate.tokens(), reference.tokens(), &BleuConfig::with_max_n(n)).unwrap();
    let (b1, b2, b3) = (b(1), b(2), b(3));
    ensure((b1 - 0.357).abs() <= 0.001, format!("BLEU1 {b1}"))?;
    ensure((b2 - 0.287).abs() <= 0.001, format!("BLEU2 {b2}"))?;
    ensure((b3 - 0.193).abs() <= 0.005, format!("BLEU3 {b3}"))?;
    Ok(format!("BLEU1={b1:.4} BLEU2={b2:.4} BLEU3={b3:.4}"))
}

fn c2_identity_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let table = random_table(&mut rng, 16);
    let meteor_cfg = MeteorConfig::default();
    for case in 0..200 {
        let len = rng.random_range(1..=30usize);
        let x = random_sentence(&mut rng, len);
        let l = x.len() as f64;
        let bleu = sentence_bleu(&x, &x, &BleuConfig::with_max_n(len.min(4))).unwrap();
        ensure(bleu == 1.0, format!("case {case}: bleu {bleu}"))?;
        let rouge = rouge_l(&x, &x, &RougeConfig::default()).unwrap();
        ensure(rouge == 1.0, format!("case {case}: rouge_l {rouge}"))?;
        let m = meteor(&x, &x, &meteor_cfg, None).unwrap().score;
        ensure(m == 1.0 - 0.5 / (l * l * l), format!("case {case}: meteor {m} at L={len}"))?;
        let ea = ea_score(&x, &x, &table).unwrap();
        ensure(ea == 1.0, format!("case {case}: ea {ea}"))?;
        let sc = soft_cosine(&x, &x, &table).unwrap();
        ensure((sc - 1.0).abs() <= 1e-9, format!("case {case}: soft cosine {sc}"))?;
        let ctx = ContextualTokens::from_static(&x, &table).unwrap();
        let bs = bertscore(&ctx, &ctx).unwrap().f1;
        ensure((bs - 1.0).abs() <= 1e-6, format!("case {case}: bertscore {bs}"))?;
    }
    Ok("200 sentences".into())
}

fn permutations(v: &[f64]) -> Vec<Vec<f64>> {
    if v.len() <= 1 {
        return vec![v.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..v.len() {
        let mut rest = v.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

fn oracle_dcg(g: &[f64], k: usize) -> f64 {
    let mut total = 0.0;
    for (i, r) in g.iter().enumerate().take(k) {
        total += (2f64.powf(*r) - 1.0) / ((i + 2) as f64).log2();
    }
    total
}

fn oracle_ndcg(g: &[f64], k: usize) -> f64 {
    // Ideal DCG as the best ordering over all permutations.
    let ideal = permutations(g).iter().map(|p| oracle_dcg(p, k)).fold(0.0, f64::max);
    if ideal == 0.0 {
        0.0
    } else {
        oracle_dcg(g, k) / ideal
    }
}

fn oracle_rbp(g: &[f64], p: f64) -> f64 {
    (1.0 - p) * g.iter().enumerate().map(|(i, r)| r * p.powi(i as i32)).sum::<f64>()
}

fn oracle_err(g: &[f64]) -> f64 {
    let mut total = 0.0;
    for r in 0..g.len() {
        let mut reach = 1.0;
        for prev in &g[..r] {
            reach *= 1.0 - prev;
        }
        total += reach * g[r] / (r + 1) as f64;
    }
    total
}

fn c3_ranking_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for case in 0..500 {
        let len = rng.random_range(1..=5usize);
        let gains: Vec<f64> = (0..len)
            .map(|_| match rng.random_range(0..4) {
                0 => 0.0,
                1 => rng.random_range(0..=4) as f64 / 4.0,
                _ => rng.random::<f64>(),
            })
            .collect();
        let rel = RankedRelevance::new(gains.clone());
        let mut compare = |name: &str, got: f64, want: f64| -> Result<(), String> {
            let d = (got - want).abs();
            worst = worst.max(d);
            ensure(d <= 1e-12, format!("case {case} {name}: {got} vs {want} for {gains:?}"))
        };
        for k in 1..=5 {
            compare(&format!("ndcg@{k}"), ndcg_at_k(&rel, k).unwrap().value, oracle_ndcg(&gains, k))?;
        }
        compare("rbp0.5", rbp(&rel, 0.5).unwrap(), oracle_rbp(&gains, 0.5))?;
        compare("rbp0.7", rbp(&rel, 0.7).unwrap(), oracle_rbp(&gains, 0.7))?;
        compare("err", err(&rel).unwrap(), oracle_err(&gains))?;
    }
    Ok(format!("500 lists, max deviation {worst:e}"))
}

fn c4_session_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bit_exact = 0;
    for case in 0..500 {
        let n = rng.random_range(1..=10usize);
        let rel: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let g = SessionGains::from_relevance(rel).unwrap();
        let nf = n as f64;
        let (s_cg, s_dcg, per_q) = (scg(&g), sdcg(&g, DEFAULT_BQ).unwrap(), sdcg_per_q(&g, DEFAULT_BQ).unwrap());
        // sdcg/q is sdcg / N rounded once; multiplying back rounds again, and
        // some doubles have no exact preimage, so the bound is two roundings.
        let back = per_q * nf;
        ensure(
            (back - s_dcg).abs() <= 2.0 * f64::EPSILON * s_dcg,
            format!("case {case}: sdcg/q*N {back} vs sdcg {s_dcg}"),
        )?;
        bit_exact += usize::from(back == s_dcg);
        let eq = swf(&g, SwfScheme::EqualWeight);
        ensure(eq == s_cg / nf, format!("case {case}: equal weight {eq} vs scg/N {}", s_cg / nf))?;
        let (lo, hi) = (min_strategy(&g), max_strategy(&g));
        for scheme in SwfScheme::ALL {
            let w = swf(&g, scheme);
            ensure(lo <= w && w <= hi, format!("case {case}: {scheme} {w} outside [{lo}, {hi}]"))?;
        }
        ensure(s_cg >= s_dcg, format!("case {case}: scg {s_cg} < sdcg {s_dcg}"))?;
        if n == 1 {
            let g1 = g.gains()[0];
            let all = [s_cg, s_dcg, per_q, eq, hi, lo];
            ensure(all.iter().all(|v| *v == g1), format!("case {case}: single turn {all:?} vs {g1}"))?;
            for scheme in SwfScheme::ALL {
                ensure(swf(&g, scheme) == g1, format!("case {case}: single turn {scheme}"))?;
            }
        }
    }
    Ok(format!("500 sessions, sdcg/q*N bit-exact in {bit_exact}, within 2 eps otherwise"))
}

fn matrix(a: Vec<f64>, b: Vec<f64>) -> ScoreMatrix {
    let items = (0..a.len()).map(|i| format!("q{i}")).collect();
    ScoreMatrix::new("m", vec!["a".into(), "b".into()], items, vec![a, b]).unwrap()
}

fn c5_tukey() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
    let same = randomized_tukey_hsd(&matrix(base.clone(), base.clone()), 1000, 7).unwrap();
    ensure(same.pairs().all(|(_, _, p)| p == 1.0), format!("identical systems p {:?}", same.p_values))?;

    // Unit-variance noise around means 0 and 10: a 10 pooled-sd gap.
    let noise = |rng: &mut ChaCha8Rng| (0..12).map(|_| rng.random::<f64>()).sum::<f64>() - 6.0;
    let a: Vec<f64> = (0..50).map(|_| noise(&mut rng)).collect();
    let b: Vec<f64> = (0..50).map(|_| 10.0 + noise(&mut rng)).collect();
    let separated = matrix(a, b);
    let sig = randomized_tukey_hsd(&separated, 5000, 11).unwrap();
    let p = sig.p_values[0][1];
    ensure(p < 0.01, format!("separated systems p {p}"))?;

    let again = randomized_tukey_hsd(&separated, 5000, 11).unwrap();
    let (x, y) = (serde_json::to_vec(&sig).unwrap(), serde_json::to_vec(&again).unwrap());
    ensure(x == y, "two runs with one seed differ")?;
    Ok(format!("identical p=1, separated p={p}, deterministic"))
}

fn c6_calibration() -> Check {
    let corpus = Corpus::load(fixture("msdialog.jsonl"), CorpusFormat::Msdialog).unwrap();
    let pairs = build_preference_pairs(&corpus.sessions, corpus.format);
    ensure(!pairs.is_empty(), "fixture has no preference pairs")?;
    let constant = predictive_power(&pairs, |_, _| Ok(0.3), TiePolicy::HalfCredit).unwrap();
    ensure(constant.agreement == 0.5, format!("constant predictive power {}", constant.agreement))?;

    let resources = Resources::default();
    let meteor_of = |pair: &conveval::corpus::PreferencePair, r: &str| {
        let truth = corpus.session_reference(&pair.question_id).unwrap();
        resources.score_pair(&SrMetric::Meteor, r, truth, None)
    };
    let plain = predictive_power(&pairs, meteor_of, TiePolicy::HalfCredit).unwrap();
    let cubed = predictive_power(&pairs, |p, r| meteor_of(p, r).map(|v| v.powi(3) + v), TiePolicy::HalfCredit).unwrap();
    let exped = predictive_power(&pairs, |p, r| meteor_of(p, r).map(f64::exp), TiePolicy::Drop).unwrap();
    let plain_drop = predictive_power(&pairs, meteor_of, TiePolicy::Drop).unwrap();
    ensure(plain == cubed && plain_drop == exped, "predictive power changed under a monotone transform")?;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let gold: BTreeMap<String, f64> = (0..60).map(|i| (format!("s{i:02}"), rng.random_range(-1..=5) as f64)).collect();
    let cfg = ConcordanceConfig {
        seed: 6,
        resamples: 200,
        test: BaselineTest::Resampling,
    };
    let flat: BTreeMap<String, f64> = gold.keys().map(|k| (k.clone(), 0.25)).collect();
    let c = concordance(&flat, &gold, &cfg, None).unwrap().agreement;
    ensure(c == 0.5, format!("constant concordance {c}"))?;

    let tie_free: BTreeMap<String, f64> = (0..60).map(|i| (format!("s{i:02}"), i as f64 * 0.37 - 3.0)).collect();
    let self_c = concordance(&tie_free, &tie_free, &cfg, None).unwrap().agreement;
    ensure(self_c == 1.0, format!("self-concordance {self_c}"))?;

    let noisy: BTreeMap<String, f64> = gold.iter().map(|(k, g)| (k.clone(), g + rng.random_range(-2.0..2.0))).collect();
    let base = concordance(&noisy, &gold, &cfg, None).unwrap();
    let moved: BTreeMap<String, f64> = noisy.iter().map(|(k, v)| (k.clone(), (v / 3.0).exp() + v.powi(3))).collect();
    let trans = concordance(&moved, &gold, &cfg, None).unwrap();
    ensure(base == trans, format!("concordance changed under a monotone transform: {base:?} vs {trans:?}"))?;
    Ok(format!(
        "constant 0.5/0.5, self 1.0, invariant (pp {:.4}, conc {:.4})",
        plain.agreement, base.agreement
    ))
}

/// Drops words at random to degrade a reference by `quality`.
fn degrade(rng: &mut ChaCha8Rng, words: &[String], quality: f64) -> String {
    let kept: Vec<&str> = words
        .iter()
        .filter(|_| rng.random::<f64>() < quality)
        .map(String::as_str)
        .collect();
    if kept.is_empty() {
        "nothing".to_string()
    } else {
        kept.join(" ")
    }
}

fn c7_session_concordance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let resources = Resources::default();
    let mut sessions = Vec::new();
    let mut outputs = BTreeMap::new();
    for s in 0..200 {
        let sid = format!("syn{s:03}");
        let n = rng.random_range(2..=6usize);
        let quality = rng.random_range(0.05..1.0);
        let mut turns = Vec::new();
        let mut responses = Vec::new();
        for t in 1..=n {
            let len = rng.random_range(6..=14);
            let truth = random_sentence(&mut rng, len);
            responses.push(degrade(&mut rng, &truth, quality));
            turns.push(Turn {
                session_id: sid.clone(),
                turn_index: t as u32,
                question: format!("question {t}"),
                response: truth.join(" "),
                votes: 0,
                is_answer: false,
                has_selected_sentence: true,
            });
        }
        sessions.push(Session {
            session_id: sid.clone(),
            turns,
            satisfaction: None,
        });
        outputs.insert(sid, ResponseOutput::Session(responses));
    }
    let run = SystemRun {
        run_id: "syn".into(),
        system_name: "synthetic".into(),
        outputs,
    };

    // Satisfaction: a noisy, monotone function of the session's sCG.
    let scored = Corpus::new(CorpusFormat::Wizard, sessions.clone());
    let scgs: Vec<f64> = sessions
        .iter()
        .map(|s| {
            let ResponseOutput::Session(r) = &run.outputs[&s.session_id] else { unreachable!() };
            scg(&resources.session_gains(&SrMetric::Meteor, &scored, "synthetic", &s.session_id, r).unwrap())
        })
        .collect();
    let top = scgs.iter().copied().fold(0.0, f64::max);
    for (session, s) in sessions.iter_mut().zip(&scgs) {
        let level = -1.0 + 6.0 * s / top + rng.random_range(-1.0..1.0);
        session.satisfaction = Some((level.round() as i32).clamp(-1, 5));
    }
    let corpus = Corpus::new(CorpusFormat::Wizard, sessions);

    let cfg = ConcordanceConfig {
        seed: 42,
        resamples: 1000,
        test: BaselineTest::Resampling,
    };
    let table = session_concordance_suite(
        &corpus,
        &run,
        &[conveval::session::SessionMetric::Scg],
        &SrMetric::Meteor,
        &resources,
        &cfg,
    )
    .unwrap();
    let row = |name: &str| table.rows.iter().find(|r| r.metric == name).unwrap().result.clone();
    let (scg_row, random) = (row("scg(meteor)"), row(BASELINE_ROW));
    ensure(scg_row.agreement > random.agreement, format!("scg {} <= random {}", scg_row.agreement, random.agreement))?;
    ensure(scg_row.p_vs_baseline < 0.05, format!("scg p {}", scg_row.p_vs_baseline))?;
    ensure(
        (0.45..=0.55).contains(&random.agreement),
        format!("random baseline {} outside [0.45, 0.55]", random.agreement),
    )?;
    Ok(format!(
        "scg {:.4} (p={}), random {:.4}",
        scg_row.agreement, scg_row.p_vs_baseline, random.agreement
    ))
}

fn read_tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn c8_end_to_end() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let jobs = [
        (Mode::Srst, CorpusFormat::Msdialog, "msdialog.jsonl", "runs_srst.jsonl"),
        (Mode::Mrst, CorpusFormat::Msdialog, "msdialog.jsonl", "runs_mrst.jsonl"),
        (Mode::Mt, CorpusFormat::Wizard, "wizard.jsonl", "runs_mt.jsonl"),
    ];
    let mut files = 0;
    for (mode, format, corpus, runs) in jobs {
        let mut trees = Vec::new();
        for threads in [1, 4] {
            let out = tmp.path().join(format!("{mode}-{threads}"));
            let config = JobConfig {
                corpus: Some(fixture(corpus)),
                format,
                runs: vec![fixture(runs)],
                mode,
                seed: 20,
                out: Some(out.clone()),
                embeddings: Some(fixture("embeddings.txt")),
                threads: Some(threads),
                ..JobConfig::default()
            };
            run_score(&config).map_err(|e| format!("{mode} score: {e}"))?;
            run_metaeval(&config).map_err(|e| format!("{mode} metaeval: {e}"))?;
            trees.push(read_tree(&out));
        }
        ensure(trees[0] == trees[1], format!("{mode} reports differ between 1 and 4 threads"))?;
        files += trees[0].len();
    }
    Ok(format!("{files} report files identical across thread counts"))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 reference pair BLEU values", c1_reference_pair_bleu, 1),
        ("2 identity suite", c2_identity_suite, 5),
        ("3 ranking oracle", c3_ranking_oracle, 5),
        ("4 session identities", c4_session_identities, 5),
        ("5 Tukey HSD sanity", c5_tukey, 30),
        ("6 predictive/concordance calibration", c6_calibration, 5),
        ("7 session concordance pipeline", c7_session_concordance, 30),
        ("8 end-to-end determinism", c8_end_to_end, 60),
    ];
    let mut failed = 0;
    for (name, check, limit) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|msg| {
            if elapsed > Duration::from_secs(limit) {
                Err(format!("{msg}; took {elapsed:.2?}, limit {limit} s"))
            } else {
                Ok(msg)
            }
        });
        match outcome {
            Ok(msg) => println!("PASS {name}: {msg} [{elapsed:.2?}]"),
            Err(msg) => {
                failed += 1;
                println!("FAIL {name}: {msg} [{elapsed:.2?}]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
