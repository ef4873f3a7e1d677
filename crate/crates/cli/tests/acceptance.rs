//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Oracles are computed here, independently of the library code
//! under test.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use clarify_cli::report::Report;
use clarify_cli::{cmd_report, cmd_when_to_clarify};
use clarify_core::corpus::adapters::{convert, derive_mt_examples, DiscourseMtRecord, DropReason, SourceFormat};
use clarify_core::corpus::{load_corpus, write_corpus, Interpretation, TaskOutput};
use clarify_core::equivalence::{connected_components, entropy, EquivalenceGraph};
use clarify_core::estimators::random_score;
use clarify_core::gateway::mock::{MockBackend, MockScript};
use clarify_core::gateway::GatewayConfig;
use clarify_core::metrics::{
    answer_recall, auroc, budget_rows, contrastive_item_score, normalize_answer, ExampleOutcome,
};
use clarify_core::prompting::{nli_token, parse_structured_output, Parsed};
use clarify_core::{AmbiguousExample, ChatMessage, Gateway, NliLabel, PromptVariant, TaskKind};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);
type FilterCase = (&'static str, SourceFormat, &'static [&'static str], &'static [(&'static str, DropReason)]);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn entropy_oracle() -> Check {
    let oracle = |p: &[f64]| -> f64 { -p.iter().map(|x| x * x.ln()).sum::<f64>() };
    for (p, expected) in [([0.6, 0.4], 0.67301), ([0.8, 0.2], 0.50040)] {
        let h = entropy(&p).map_err(|e| e.to_string())?;
        ensure((h - expected).abs() < 1e-5, || format!("entropy({p:?}) = {h}, expected {expected}"))?;
        ensure((h - oracle(&p)).abs() < 1e-12, || format!("entropy({p:?}) = {h} vs direct sum {}", oracle(&p)))?;
    }
    Ok("H(0.6,0.4) and H(0.8,0.2) within 1e-5".into())
}

/// Equivalence classes of the reflexive-transitive closure, by Warshall.
fn closure_classes(n: usize, adj: &[Vec<bool>]) -> Vec<Vec<usize>> {
    let mut r = adj.to_vec();
    for (i, row) in r.iter_mut().enumerate() {
        row[i] = true;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if r[i][k] && r[k][j] {
                    r[i][j] = true;
                }
            }
        }
    }
    let classes: BTreeSet<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| r[i][j]).collect()).collect();
    let mut v: Vec<Vec<usize>> = classes.into_iter().collect();
    v.sort_by_key(|c| c[0]);
    v
}

fn clustering_oracle() -> Check {
    const S: usize = 5;
    let pairs: Vec<(usize, usize)> = (0..S).flat_map(|i| (i + 1..S).map(move |j| (i, j))).collect();
    assert_eq!(pairs.len(), 10);
    let started = Instant::now();
    for mask in 0u32..1 << pairs.len() {
        let mut adj = vec![vec![false; S]; S];
        for (bit, &(i, j)) in pairs.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                adj[i][j] = true;
                adj[j][i] = true;
            }
        }
        let graph = EquivalenceGraph::from_relation(S, |i, j| Ok::<_, ()>(adj[i][j])).unwrap();
        let got = connected_components(&graph);
        let want = closure_classes(S, &adj);
        ensure(got == want, || format!("mask {mask:#012b}: {got:?} vs closure {want:?}"))?;
    }
    Ok(format!("1024/1024 matrices agree ({:.0?})", started.elapsed()))
}

fn brute_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut total = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                total += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / total
}

fn auroc_oracle() -> Check {
    let worked = auroc(&[0.9, 0.8, 0.4, 0.1], &[true, false, true, false]).map_err(|e| e.to_string())?;
    ensure(worked == 0.75, || format!("worked example gave {worked}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    let started = Instant::now();
    for trial in 0..1000 {
        let n = rng.random_range(2..=50);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        // Half the instances draw from a coarse grid to force ties.
        let coarse = trial % 2 == 0;
        let scores: Vec<f64> = (0..n)
            .map(|_| if coarse { rng.random_range(0..5) as f64 / 4.0 } else { rng.random::<f64>() })
            .collect();
        let got = auroc(&scores, &labels).map_err(|e| e.to_string())?;
        let want = brute_auroc(&scores, &labels);
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() < 1e-12, || format!("trial {trial}: {got} vs brute force {want}"))?;
    }
    Ok(format!("worked example 0.75; 1000 instances max |Δ| = {worst:e} ({:.0?})", started.elapsed()))
}

fn stub_example(id: String) -> AmbiguousExample {
    AmbiguousExample {
        id,
        task: TaskKind::Qa,
        input: "q".into(),
        interpretations: vec![Interpretation {
            index: 0,
            disambiguated_input: None,
            context: None,
            output: TaskOutput::Answers(vec!["a".into()]),
        }],
        gold_index: Some(0),
        is_ambiguous: false,
        exchange: None,
    }
}

fn random_budget_law() -> Check {
    const N: usize = 200;
    const TRIALS: u64 = 10_000;
    let budgets = [10.0, 20.0, 30.0];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let examples: Vec<AmbiguousExample> = (0..N).map(|i| stub_example(format!("ex{i:03}"))).collect();
    let outcomes: Vec<ExampleOutcome> = examples
        .iter()
        .map(|e| {
            let direct = rng.random_range(0..=1) as f64;
            let clarified = if rng.random_bool(0.4) { 1.0 } else { direct };
            ExampleOutcome::new(e.id.clone(), direct, clarified)
        })
        .collect();
    let started = Instant::now();
    let mut sums = [0.0; 3];
    for trial in 0..TRIALS {
        let scores: Vec<_> = examples.iter().map(|e| random_score(trial, e)).collect();
        let rows = budget_rows(&scores, &outcomes, &budgets).map_err(|e| e.to_string())?;
        for (k, row) in rows.iter().enumerate() {
            sums[k] += row.relative_gain_percent.ok_or("relative gain undefined on the synthetic pool")?;
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / TRIALS as f64).collect();
    for (&b, &m) in budgets.iter().zip(&means) {
        ensure((m - b).abs() <= 2.0, || format!("b={b}: mean relative gain {m:.2}"))?;
    }
    Ok(format!(
        "mean gains {:.2} / {:.2} / {:.2} at b = 10/20/30 ({:.1?})",
        means[0],
        means[1],
        means[2],
        started.elapsed()
    ))
}

fn when_to_clarify_report(dir: &Path, estimators: &[&str]) -> Result<(clarify_cli::RunArtifact, std::path::PathBuf), String> {
    let config = common::rigged_study(dir, estimators);
    let artifact = cmd_when_to_clarify(common::out_to(&config, &dir.join("out"))).map_err(|e| e.to_string())?;
    Ok((artifact, config))
}

fn rigged_end_to_end() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let started = Instant::now();
    let (artifact, _) = when_to_clarify_report(dir.path(), &["intent_sim"])?;
    let Report::WhenToClarify(r) = &artifact.report else { return Err("wrong report kind".into()) };
    let m = &r.methods[0];
    ensure(m.auroc == Some(1.0), || format!("Intent-Sim AUROC {:?}", m.auroc))?;
    let b = 100.0 * common::AMBIGUOUS as f64 / (common::AMBIGUOUS + common::UNAMBIGUOUS) as f64;
    let row = m.rows.iter().find(|row| row.b == b).ok_or("no row at the ambiguous fraction")?;
    ensure(row.relative_gain_percent == Some(100.0), || format!("gain at b={b}: {:?}", row.relative_gain_percent))?;
    let scores = fs::read_to_string(dir.path().join("out/scores.jsonl")).map_err(|e| e.to_string())?;
    let h64 = -(0.6f64 * 0.6f64.ln() + 0.4 * 0.4f64.ln());
    for line in scores.lines() {
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let id = v["example_id"].as_str().unwrap_or_default();
        let value = v["value"].as_f64().unwrap_or(f64::NAN);
        let want = if id.starts_with("amb") { h64 } else { 0.0 };
        ensure((value - want).abs() < 1e-12, || format!("{id}: score {value}, expected {want}"))?;
    }
    Ok(format!("AUROC 1.0, gain 100% at b={b}% ({:.1?})", started.elapsed()))
}

fn boundary_identities() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (artifact, _) = when_to_clarify_report(dir.path(), &["likelihood", "self_ask", "semantic_entropy", "intent_sim", "random"])?;
    let Report::WhenToClarify(r) = &artifact.report else { return Err("wrong report kind".into()) };
    ensure(r.pool_size == 20, || format!("pool of {}", r.pool_size))?;
    // By construction: unambiguous even ids are right without clarification,
    // ambiguous ones only after it.
    let direct = 5.0 / 20.0;
    let clarified = 15.0 / 20.0;
    for m in &r.methods {
        let at = |b: f64| m.rows.iter().find(|row| row.b == b).map(|row| row.performance);
        ensure(at(0.0) == Some(direct), || format!("{}: b=0 row {:?}, expected {direct}", m.method, at(0.0)))?;
        ensure(at(100.0) == Some(clarified), || format!("{}: b=100 row {:?}, expected {clarified}", m.method, at(100.0)))?;
        for row in &m.rows {
            let gain = 100.0 * (row.performance - direct) / (clarified - direct);
            ensure(row.relative_gain_percent == Some(gain), || {
                format!("{} b={}: stored gain {:?} vs recomputed {gain}", m.method, row.b, row.relative_gain_percent)
            })?;
        }
    }
    let printed = fs::read_to_string(dir.path().join("out/report.txt")).map_err(|e| e.to_string())?;
    let reprinted = cmd_report(&dir.path().join("out"), false).map_err(|e| e.to_string())?;
    ensure(printed == reprinted, || format!("reprint differs:\n{printed}\nvs\n{reprinted}"))?;
    Ok(format!("b=0 → {direct}, b=100 → {clarified} for {} methods; reprint byte-identical", r.methods.len()))
}

fn random_string(rng: &mut ChaCha8Rng) -> String {
    const PIECES: &[&str] = &[
        "a", "an", "the", "The", "THE", " ", "  ", "\t", ".", ",", "!", "'", "\"", "-", "x", "Q", "é", "ß", "İ",
        "Ⅷ", "ǅ", "—", "9", "the.", "(an)", "A", "théâtre", "\n",
    ];
    let n = rng.random_range(0..12);
    (0..n).map(|_| PIECES[rng.random_range(0..PIECES.len())]).collect()
}

fn metric_unit_suite() -> Check {
    let recall = answer_recall("The stern is the back of the boat.", &["the back".to_owned()]);
    ensure(recall == 1, || format!("recall {recall}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10_000 {
        let s = random_string(&mut rng);
        let once = normalize_answer(&s);
        let twice = normalize_answer(&once);
        ensure(once == twice, || format!("{s:?} → {once:?} → {twice:?}"))?;
    }

    for (token, label) in [
        ("True", NliLabel::Entailment),
        ("False", NliLabel::Contradiction),
        ("Inconclusive", NliLabel::Neutral),
    ] {
        ensure(nli_token(label) == token, || format!("{label} renders as {}", nli_token(label)))?;
        let parsed = parse_structured_output(PromptVariant::Direct, TaskKind::Nli, &format!("Answer: {token}."))
            .map_err(|e| e.to_string())?;
        ensure(parsed == Parsed::Label(label), || format!("{token} parsed as {parsed:?}"))?;
    }

    // A backend that rejects every request: unambiguous MT must not need one.
    let script = MockScript::from_json(r#"{"rules": [{"error": {"status": 500}}]}"#)?;
    let gateway = Gateway::new(Arc::new(MockBackend::new(script)), None, GatewayConfig::default());
    let records: Vec<DiscourseMtRecord> = fs::read_to_string(fixture("discourse_mt.jsonl"))
        .map_err(|e| e.to_string())?
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let mut checked = 0;
    for (n, r) in records.iter().enumerate() {
        for e in derive_mt_examples(r, "discourse", n + 1).map_err(|e| e.to_string())? {
            if e.is_ambiguous {
                continue;
            }
            let prompt = [ChatMessage::user(e.input.clone()), ChatMessage::assistant("French:")];
            let s = contrastive_item_score(&gateway, &prompt, &e, 0).map_err(|e| e.to_string())?;
            ensure(s == 1, || format!("{} scored {s}", e.id))?;
            checked += 1;
        }
    }
    Ok(format!("recall 1; 10000 strings idempotent; NLI tokens mapped; {checked} unambiguous MT items score 1"))
}

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn corpus_filtering() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let expectations: [FilterCase; 2] = [
        (
            "ambigqa_drop_rules.jsonl",
            SourceFormat::AmbigQa,
            &["medals", "airdate", "single"],
            &[("no-match", DropReason::NoMatch), ("multi-match", DropReason::MultiMatch)],
        ),
        (
            "ambient_drop_rules.jsonl",
            SourceFormat::AmbiEnt,
            &["birds", "plain"],
            &[("both-entail", DropReason::MultiMatch), ("unmatched", DropReason::NoMatch)],
        ),
    ];
    for (name, format, kept, dropped) in expectations {
        let out = convert(&fixture(name), format).map_err(|e| e.to_string())?;
        let ids: Vec<&str> = out.examples.iter().map(|e| e.id.as_str()).collect();
        ensure(ids == kept, || format!("{name}: kept {ids:?}"))?;
        let drops: Vec<(&str, DropReason)> = out.dropped.iter().map(|d| (d.id.as_str(), d.reason)).collect();
        ensure(drops == dropped, || format!("{name}: dropped {drops:?}"))?;

        let first = dir.path().join(format!("{name}.unified"));
        write_corpus(&first, &out.examples).map_err(|e| e.to_string())?;
        let reloaded = load_corpus(&first, format.task()).map_err(|e| e.to_string())?;
        ensure(reloaded == out.examples, || format!("{name}: reload changed the examples"))?;
        let second = dir.path().join(format!("{name}.again"));
        write_corpus(&second, &reloaded).map_err(|e| e.to_string())?;
        ensure(fs::read(&first).ok() == fs::read(&second).ok(), || format!("{name}: rewrite not byte-identical"))?;
    }
    let gold = |id: &str, out: &[AmbiguousExample]| out.iter().find(|e| e.id == id).and_then(|e| e.gold_index);
    let qa = convert(&fixture("ambigqa_drop_rules.jsonl"), SourceFormat::AmbigQa).map_err(|e| e.to_string())?;
    ensure(gold("medals", &qa.examples) == Some(0) && gold("airdate", &qa.examples) == Some(1), || {
        "QA golds follow the matched interpretation".into()
    })?;

    let mt = convert(&fixture("discourse_mt.jsonl"), SourceFormat::DiscourseMt).map_err(|e| e.to_string())?;
    let amb = mt.examples.iter().filter(|e| e.is_ambiguous).count();
    let unamb = mt.examples.len() - amb;
    ensure(amb == 4 && unamb == 2 * amb, || format!("MT split {amb}:{unamb}"))?;
    Ok(format!("QA kept 3 / dropped 2, NLI kept 2 / dropped 2, reload stable; MT {amb}:{unamb}"))
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = common::rigged_study(dir.path(), &["likelihood", "self_ask", "semantic_entropy", "intent_sim", "random"]);
    let mut snapshots = Vec::new();
    for run in ["cold", "warm-1", "warm-2"] {
        let out = dir.path().join(run);
        cmd_when_to_clarify(common::out_to(&config, &out)).map_err(|e| e.to_string())?;
        snapshots.push((run, common::artifact_files(&out)));
    }
    let (_, reference) = &snapshots[1];
    for (run, files) in &snapshots {
        let names: Vec<&str> = files.iter().map(|f| f.0.as_str()).collect();
        let want: Vec<&str> = reference.iter().map(|f| f.0.as_str()).collect();
        ensure(names == want, || format!("{run}: files {names:?}"))?;
        for ((name, a), (_, b)) in files.iter().zip(reference) {
            ensure(a == b, || format!("{run}: {name} differs from warm-1"))?;
        }
    }
    Ok(format!("{} artifact files identical across cold and two warm runs", reference.len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("entropy oracle", entropy_oracle),
        ("clustering oracle", clustering_oracle),
        ("AUROC oracle", auroc_oracle),
        ("random-budget law", random_budget_law),
        ("rigged end-to-end", rigged_end_to_end),
        ("boundary identities", boundary_identities),
        ("metric unit suite", metric_unit_suite),
        ("corpus filtering", corpus_filtering),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
