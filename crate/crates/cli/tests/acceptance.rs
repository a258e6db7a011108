//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL line;
//! the process exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use supplygraph_core::backend::{load_script, BackendRequest, CompletionBackend, ScriptedBackend};
use supplygraph_core::classification::{downsample_balanced, evaluate_binary, LabeledExample};
use supplygraph_core::corpus::normalize_name;
use supplygraph_core::llm_protocol::{
    build_classification_prompt, build_extraction_prompt, parse_entity_list, segment_text, TokenEstimator,
    WhitespaceEstimator,
};
use supplygraph_core::{StopwordLists, SupplyChainGraph};

type Check = Result<String, String>;
type Criterion = (&'static str, fn(&Path) -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        match $cond {
            true => {}
            false => return Err(format!($($msg)+)),
        }
    };
}

const CATEGORIES: [&str; 9] = [
    "engineering consulting",
    "construction contractor",
    "material supplier",
    "government agency",
    "equipment lessor",
    "insurance provider",
    "real estate developer",
    "legal counsel",
    "software service",
];

const SEED: &str = "bechtel";
const INDUSTRY: &str = "civil engineering";
const YEARS: (i64, i64) = (2018, 2023);
const PER_YEAR: usize = 10;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn script_backend_spec() -> String {
    format!("script:{}", path_str(&fixture("gazetteer.jsonl")))
}

fn run_cli(args: &[String]) -> Result<(), String> {
    let output = Command::new(env!("CARGO_BIN_EXE_supplygraph"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .map_err(|e| e.to_string())?;
    if output.status.success() {
        Ok(())
    } else {
        Err(format!(
            "supplygraph {} exited with {:?}: {}",
            args.join(" "),
            output.status.code(),
            String::from_utf8_lossy(&output.stderr)
        ))
    }
}

fn args(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn crawl_args(backend: &str, out: &Path, extra: &[&str]) -> Vec<String> {
    let mut a = args(&["crawl", "--corpus"]);
    a.push(path_str(&fixture("news.jsonl")));
    a.extend(args(&["--backend", backend, "--seeds", SEED, "--out"]));
    a.push(path_str(out));
    a.extend(args(extra));
    a
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn read_jsonl(path: &Path) -> Result<Vec<Value>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
        .collect()
}

/// Gazetteer names and category sets, read straight from the fixture file.
fn gazetteer_fixture() -> Result<BTreeMap<String, BTreeSet<String>>, String> {
    let first = read_jsonl(&fixture("gazetteer.jsonl"))?
        .into_iter()
        .next()
        .ok_or("empty gazetteer")?;
    let entries = first["gazetteer"].as_object().ok_or("no gazetteer record")?;
    Ok(entries
        .iter()
        .map(|(name, entry)| {
            let cats = entry["categories"]
                .as_array()
                .unwrap()
                .iter()
                .map(|c| c.as_str().unwrap().to_string())
                .collect();
            (name.clone(), cats)
        })
        .collect())
}

fn alnum_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

struct OracleGraph {
    nodes: BTreeSet<String>,
    edges: BTreeMap<(String, String), usize>,
    articles: usize,
}

/// Brute-force crawl: expand the visited set to a fixpoint, enumerate each
/// article's mention set by token-run matching, and count every pair.
fn crawl_oracle() -> Result<OracleGraph, String> {
    let names: Vec<(String, Vec<String>)> = gazetteer_fixture()?
        .into_keys()
        .map(|n| {
            let toks = alnum_tokens(&n);
            (n, toks)
        })
        .collect();
    let articles = read_jsonl(&fixture("news.jsonl"))?;
    let mut visited: BTreeSet<String> = BTreeSet::from([SEED.to_string()]);
    let mut queue: VecDeque<String> = VecDeque::from([SEED.to_string()]);
    let mut mention_sets: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    while let Some(keyword) = queue.pop_front() {
        for year in YEARS.0..=YEARS.1 {
            let picked = articles
                .iter()
                .filter(|a| a["retrieved_for_keyword"] == keyword.as_str() && a["published_year"] == year)
                .take(PER_YEAR);
            for article in picked {
                let text = format!(
                    "{} {}",
                    article["title"].as_str().unwrap_or(""),
                    article["body"].as_str().unwrap_or("")
                );
                let tokens = alnum_tokens(&text);
                let mut set: BTreeSet<String> = names
                    .iter()
                    .filter(|(_, toks)| contains_run(&tokens, toks))
                    .map(|(n, _)| n.clone())
                    .collect();
                set.insert(keyword.clone());
                for name in &set {
                    if visited.insert(name.clone()) {
                        queue.push_back(name.clone());
                    }
                }
                mention_sets.insert(article["id"].as_str().unwrap().to_string(), set);
            }
        }
    }
    let mut edges: BTreeMap<(String, String), usize> = BTreeMap::new();
    for set in mention_sets.values() {
        let list: Vec<&String> = set.iter().collect();
        for i in 0..list.len() {
            for j in i + 1..list.len() {
                *edges.entry((list[i].clone(), list[j].clone())).or_default() += 1;
            }
        }
    }
    Ok(OracleGraph {
        nodes: visited,
        edges,
        articles: mention_sets.len(),
    })
}

fn criterion_1(work: &Path) -> Check {
    let out = work.join("c1");
    let started = Instant::now();
    run_cli(&crawl_args(&script_backend_spec(), &out, &[]))?;
    let elapsed = started.elapsed();
    let oracle = crawl_oracle()?;
    let lines = read_jsonl(&out.join("graph.jsonl"))?;
    let nodes: BTreeSet<String> = lines
        .iter()
        .filter(|l| l["kind"] == "node")
        .map(|l| l["id"].as_str().unwrap().to_string())
        .collect();
    let edges: BTreeMap<(String, String), usize> = lines
        .iter()
        .filter(|l| l["kind"] == "edge")
        .map(|l| {
            let (a, b) = (l["source"].as_str().unwrap(), l["target"].as_str().unwrap());
            let key = if a < b { (a, b) } else { (b, a) };
            (
                (key.0.to_string(), key.1.to_string()),
                l["weight"].as_u64().unwrap() as usize,
            )
        })
        .collect();
    let report = read_json(&out.join("report.json"))?;
    ensure!(oracle.articles >= 30, "oracle saw only {} articles", oracle.articles);
    ensure!(nodes == oracle.nodes, "nodes {:?} != oracle {:?}", nodes, oracle.nodes);
    ensure!(edges == oracle.edges, "edge sets or weights differ from oracle");
    ensure!(
        report["stats"]["articles_processed"] == oracle.articles,
        "articles {} != oracle {}",
        report["stats"]["articles_processed"],
        oracle.articles
    );
    ensure!(elapsed < Duration::from_secs(10), "crawl took {elapsed:?}");
    Ok(format!(
        "nodes={} edges={} articles={} (oracle equal) in {:.2}s",
        nodes.len(),
        edges.len(),
        oracle.articles,
        elapsed.as_secs_f64()
    ))
}

type PairMap = BTreeMap<(String, String), BTreeSet<String>>;

fn pair(a: &str, b: &str) -> (String, String) {
    if a < b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

fn edge_map(g: &SupplyChainGraph) -> PairMap {
    g.edges().map(|e| (e.endpoints.clone(), e.provenance.clone())).collect()
}

fn merge_trial(rng: &mut ChaCha8Rng, sw: &StopwordLists) -> Result<(), String> {
    let n = rng.random_range(3..12);
    let names: Vec<String> = (0..n).map(|i| format!("entity{i}")).collect();
    let mut g = SupplyChainGraph::new();
    for name in &names {
        g.upsert_entity(name, &format!("{name} desc"), "seed", sw)
            .map_err(|e| e.to_string())?;
    }
    for art in 0..rng.random_range(1..10) {
        let members: BTreeSet<String> = names.iter().filter(|_| rng.random_bool(0.4)).cloned().collect();
        g.add_comention(&format!("art{art}"), &members)
            .map_err(|e| e.to_string())?;
    }
    let s = names[rng.random_range(0..n)].clone();
    let mut d = names[rng.random_range(0..n)].clone();
    while d == s {
        d = names[rng.random_range(0..n)].clone();
    }
    let before = edge_map(&g);
    let mut expected: PairMap = BTreeMap::new();
    let mut dropped = BTreeSet::new();
    for ((a, b), prov) in &before {
        let (a2, b2) = (if *a == d { &s } else { a }, if *b == d { &s } else { b });
        if a2 == b2 {
            dropped.extend(prov.iter().cloned());
            continue;
        }
        expected.entry(pair(a2, b2)).or_default().extend(prov.iter().cloned());
    }
    let survivor_aliases: BTreeSet<String> = g
        .node(&s)
        .unwrap()
        .aliases
        .union(&g.node(&d).unwrap().aliases)
        .cloned()
        .collect();
    let outcome = g.merge_nodes(&s, &d).map_err(|e| e.to_string())?;
    let after = edge_map(&g);
    ensure!(after == expected, "edge provenance mismatch merging {d} into {s}");
    ensure!(outcome.dropped_provenance == dropped, "dropped provenance mismatch");
    let all_before: BTreeSet<&String> = before.values().flatten().collect();
    let mut all_after: BTreeSet<&String> = after.values().flatten().collect();
    all_after.extend(outcome.dropped_provenance.iter());
    ensure!(all_before == all_after, "provenance not conserved");
    ensure!(!g.contains(&d), "duplicate survived");
    ensure!(g.node(&s).unwrap().aliases == survivor_aliases, "aliases not unioned");
    g.check_invariants()
}

fn criterion_2(work: &Path) -> Check {
    let out = work.join("c2");
    run_cli(&crawl_args(&script_backend_spec(), &out, &[]))?;
    let state = read_json(&out.join("state.json"))?;
    let nodes = state["nodes"].as_array().ok_or("no nodes")?;
    let aecom: Vec<&Value> = nodes
        .iter()
        .filter(|n| n["canonical_id"].as_str().unwrap().contains("aecom"))
        .collect();
    ensure!(aecom.len() == 1, "{} aecom nodes", aecom.len());
    let aliases: BTreeSet<&str> = aecom[0]["aliases"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a.as_str().unwrap())
        .collect();
    let spellings = ["AECOM", "Aecom Ltd.", "AECOM Corp."];
    let corpus = fs::read_to_string(fixture("news.jsonl")).map_err(|e| e.to_string())?;
    ensure!(spellings.iter().all(|s| corpus.contains(s)), "fixture lacks a variant");
    let expected: BTreeSet<String> = spellings.iter().map(|s| s.to_lowercase()).collect();
    ensure!(
        aliases == expected.iter().map(String::as_str).collect(),
        "aliases {aliases:?}"
    );
    let sw = StopwordLists::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..1000 {
        merge_trial(&mut rng, &sw).map_err(|e| format!("trial {trial}: {e}"))?;
    }
    Ok(format!(
        "1 node with aliases {aliases:?}; 1000 merge trials conserve provenance"
    ))
}

fn oracle_metrics(pairs: &[(bool, bool)]) -> (u64, u64, u64, u64, f64, f64) {
    let mut c = [0u64; 4];
    for &(p, g) in pairs {
        c[(p as usize) * 2 + g as usize] += 1;
    }
    let (tn, fn_, fp, tp) = (c[0], c[1], c[2], c[3]);
    let accuracy = (tp + tn) as f64 / pairs.len() as f64;
    let den = 2 * tp + fp + fn_;
    let f1 = if den == 0 { 0.0 } else { (2 * tp) as f64 / den as f64 };
    (tp, tn, fp, fn_, accuracy, f1)
}

fn criterion_3(_: &Path) -> Check {
    let mut planted = Vec::new();
    planted.extend(std::iter::repeat_n((true, true), 2));
    planted.extend(std::iter::repeat_n((false, false), 6));
    planted.extend(std::iter::repeat_n((true, false), 1));
    planted.extend(std::iter::repeat_n((false, true), 1));
    let (p, g): (Vec<bool>, Vec<bool>) = planted.iter().copied().unzip();
    let (counts, m) = evaluate_binary(&p, &g).map_err(|e| e.to_string())?;
    let (_, _, _, _, acc, f1) = oracle_metrics(&planted);
    ensure!(
        (counts.tp, counts.tn, counts.fp, counts.fn_) == (2, 6, 1, 1),
        "counts {counts:?}"
    );
    ensure!(
        (m.accuracy - acc).abs() <= 1e-9 && (m.accuracy - 0.8).abs() <= 1e-9,
        "accuracy {}",
        m.accuracy
    );
    ensure!((m.f1 - f1).abs() <= 1e-9, "f1 {} vs oracle {f1}", m.f1);
    ensure!(
        format!("{:.6}", m.f1) == "0.666667",
        "f1 {} does not round to 0.666667",
        m.f1
    );
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..1000 {
        let len = rng.random_range(1..120);
        let bias = rng.random_range(0.0..1.0);
        let pairs: Vec<(bool, bool)> = (0..len)
            .map(|_| (rng.random_bool(bias), rng.random_bool(0.5)))
            .collect();
        let (p, g): (Vec<bool>, Vec<bool>) = pairs.iter().copied().unzip();
        let (c, m) = evaluate_binary(&p, &g).map_err(|e| e.to_string())?;
        let (tp, tn, fp, fn_, acc, f1) = oracle_metrics(&pairs);
        ensure!(
            (c.tp, c.tn, c.fp, c.fn_) == (tp, tn, fp, fn_),
            "case {case}: counts differ"
        );
        ensure!(
            (m.accuracy - acc).abs() <= 1e-9 && (m.f1 - f1).abs() <= 1e-9,
            "case {case}: metrics differ"
        );
    }
    Ok(format!(
        "accuracy={:.3} f1={:.6}; 1000 randomized cases match recount",
        m.accuracy, m.f1
    ))
}

fn criterion_4(work: &Path) -> Check {
    let run = work.join("c4");
    let classified = work.join("c4-classified");
    run_cli(&crawl_args(&script_backend_spec(), &run, &[]))?;
    let mut a = args(&["classify", "--state"]);
    a.push(path_str(&run.join("state.json")));
    a.extend(args(&["--backend", &script_backend_spec(), "--out"]));
    a.push(path_str(&classified));
    run_cli(&a)?;

    let gazetteer = gazetteer_fixture()?;
    let state = read_json(&classified.join("state.json"))?;
    let mut dataset = String::new();
    for node in state["nodes"].as_array().ok_or("no nodes")? {
        let id = node["canonical_id"].as_str().unwrap();
        let cats = gazetteer.get(id).ok_or_else(|| format!("{id} not in gazetteer"))?;
        for category in CATEGORIES {
            let line = serde_json::json!({
                "entity_id": id,
                "category": category,
                "gold": cats.contains(category),
                "description": "",
            });
            dataset.push_str(&line.to_string());
            dataset.push('\n');
        }
    }
    let dataset_path = work.join("c4-gold.jsonl");
    fs::write(&dataset_path, dataset).map_err(|e| e.to_string())?;
    let metrics_path = work.join("c4-metrics.json");
    let mut a = args(&["evaluate", "--dataset"]);
    a.push(path_str(&dataset_path));
    a.push("--predictions".into());
    a.push(path_str(&classified.join("predictions.jsonl")));
    a.push("--out".into());
    a.push(path_str(&metrics_path));
    run_cli(&a)?;
    let metrics = read_json(&metrics_path)?;
    let per = metrics["per_category"].as_array().ok_or("no per_category")?;
    ensure!(per.len() == 9, "{} categories evaluated", per.len());
    for c in per {
        let (acc, f1) = (
            c["metrics"]["accuracy"].as_f64().unwrap(),
            c["metrics"]["f1"].as_f64().unwrap(),
        );
        ensure!(acc == 1.0 && f1 == 1.0, "{}: accuracy {acc} f1 {f1}", c["category"]);
    }
    Ok(format!(
        "9/9 categories accuracy=1.0 f1=1.0 over {} entities",
        state["nodes"].as_array().unwrap().len()
    ))
}

fn same_bytes(a: &Path, b: &Path, names: &[&str]) -> Result<(), String> {
    for name in names {
        let (x, y) = (fs::read(a.join(name)), fs::read(b.join(name)));
        match (x, y) {
            (Ok(x), Ok(y)) if x == y => {}
            (Ok(_), Ok(_)) => return Err(format!("{name} differs between {} and {}", a.display(), b.display())),
            _ => return Err(format!("{name} missing")),
        }
    }
    Ok(())
}

fn criterion_5(work: &Path) -> Check {
    let exports = ["state.json", "graph.graphml", "graph.dot", "graph.jsonl", "report.json"];
    let (a, b) = (work.join("c5-a"), work.join("c5-b"));
    for out in [&a, &b] {
        run_cli(&crawl_args(&script_backend_spec(), out, &["--rng-seed", "11"]))?;
    }
    same_bytes(&a, &b, &exports)?;
    let (ma, mb) = (
        read_json(&a.join("manifest.json"))?,
        read_json(&b.join("manifest.json"))?,
    );
    ensure!(
        ma["manifest_digest"] == mb["manifest_digest"],
        "manifest digests differ"
    );

    let recorded = work.join("c5-record");
    let cassette = work.join("c5-cassette.jsonl");
    let mut rec = crawl_args(&script_backend_spec(), &recorded, &["--rng-seed", "11", "--cassette"]);
    rec[0] = "record".into();
    rec.push(path_str(&cassette));
    run_cli(&rec)?;
    let replay = format!("replay:{}", path_str(&cassette));
    let replayed = work.join("c5-replay");
    run_cli(&crawl_args(&replay, &replayed, &["--rng-seed", "11"]))?;
    same_bytes(&recorded, &replayed, &exports)?;
    same_bytes(&a, &replayed, &exports)?;

    let classified = work.join("c5-replay-classified");
    let mut c = args(&["classify", "--state"]);
    c.push(path_str(&replayed.join("state.json")));
    c.extend(args(&["--backend", &replay, "--out"]));
    c.push(path_str(&classified));
    run_cli(&c)?;
    same_bytes(
        &recorded.join("classified"),
        &classified,
        &["state.json", "classification.json", "predictions.jsonl"],
    )?;
    Ok("repeat crawls byte-identical; replayed crawl and classify match the recording".into())
}

fn extracted_names(backend: &ScriptedBackend, text: &str, sw: &StopwordLists) -> Result<BTreeSet<String>, String> {
    let prompt = build_extraction_prompt(text, INDUSTRY).map_err(|e| e.to_string())?;
    let response = backend
        .complete(&BackendRequest::new(prompt, "acceptance"))
        .map_err(|e| e.to_string())?;
    let parsed = parse_entity_list(&response.text).map_err(|e| e.to_string())?;
    parsed
        .entities
        .iter()
        .map(|e| normalize_name(&e.name, sw).map_err(|e| e.to_string()))
        .collect()
}

fn criterion_6(work: &Path) -> Check {
    let sw = StopwordLists::default();
    let backend = ScriptedBackend::new(
        load_script(&fixture("gazetteer.jsonl"), &sw).map_err(|e| e.to_string())?,
        sw.clone(),
    );
    let names: Vec<String> = gazetteer_fixture()?.into_keys().collect();
    let budget = 40;
    let estimator = WhitespaceEstimator::default();
    let mut article = String::new();
    let mut i = 0;
    while estimator.estimate(&article) < 10 * budget {
        let (a, b) = (&names[i % names.len()], &names[(i * 5 + 3) % names.len()]);
        article.push_str(&format!(
            "{a} signed a supply agreement with {b} for a new interchange near the river crossing. "
        ));
        i += 1;
    }
    let article = article.trim_end().to_string();
    let tokens = estimator.estimate(&article);
    let plan = segment_text(&article, budget, &estimator).map_err(|e| e.to_string())?;
    ensure!(plan.segments.len() >= 10, "only {} segments", plan.segments.len());
    for (k, s) in plan.segments.iter().enumerate() {
        ensure!(
            estimator.estimate(s) <= budget,
            "segment {k} has {} tokens",
            estimator.estimate(s)
        );
    }
    ensure!(
        plan.segments.concat() == article,
        "concatenation does not restore the article"
    );
    let whole = extracted_names(&backend, &article, &sw)?;
    let mut union = BTreeSet::new();
    for s in &plan.segments {
        if !s.trim().is_empty() {
            union.extend(extracted_names(&backend, s.trim(), &sw)?);
        }
    }
    ensure!(union == whole, "segment union {union:?} != whole {whole:?}");
    ensure!(
        whole.len() == names.len(),
        "expected every fixture entity, got {}",
        whole.len()
    );

    let (big, small) = (work.join("c6-big"), work.join("c6-small"));
    run_cli(&crawl_args(&script_backend_spec(), &big, &[]))?;
    run_cli(&crawl_args(&script_backend_spec(), &small, &["--token-budget", "36"]))?;
    let report = read_json(&small.join("report.json"))?;
    ensure!(
        report["stats"]["segments"].as_u64() > report["stats"]["articles_processed"].as_u64(),
        "small budget did not segment"
    );
    same_bytes(&big, &small, &["graph.dot"])?;
    Ok(format!(
        "{tokens}-token article -> {} segments <= {budget}; union of {} entities equals whole; segmented crawl graph identical",
        plan.segments.len(),
        union.len()
    ))
}

fn bfs_oracle(edges: &[(String, String)], seed: &str, hops: usize) -> BTreeSet<String> {
    let mut seen = BTreeSet::from([seed.to_string()]);
    let mut frontier = vec![seed.to_string()];
    for _ in 0..hops {
        let mut next = Vec::new();
        for node in &frontier {
            for (a, b) in edges {
                let other = if a == node {
                    b
                } else if b == node {
                    a
                } else {
                    continue;
                };
                if seen.insert(other.clone()) {
                    next.push(other.clone());
                }
            }
        }
        frontier = next;
    }
    seen
}

fn induced(edges: &[(String, String)], nodes: &BTreeSet<String>) -> BTreeSet<(String, String)> {
    edges
        .iter()
        .filter(|(a, b)| nodes.contains(a) && nodes.contains(b))
        .map(|(a, b)| pair(a, b))
        .collect()
}

fn graph_sets(g: &SupplyChainGraph) -> (BTreeSet<String>, BTreeSet<(String, String)>) {
    (
        g.nodes().map(|n| n.canonical_id.clone()).collect(),
        g.edges().map(|e| e.endpoints.clone()).collect(),
    )
}

fn criterion_7(_: &Path) -> Check {
    let sw = StopwordLists::default();
    let mut star = SupplyChainGraph::new();
    star.upsert_entity("hub", "", "", &sw).map_err(|e| e.to_string())?;
    let mut edges = Vec::new();
    for i in 0..200 {
        let leaf = format!("leaf{i:03}");
        star.upsert_entity(&leaf, "", "", &sw).map_err(|e| e.to_string())?;
        star.add_comention(&format!("s{i}"), &BTreeSet::from(["hub".to_string(), leaf.clone()]))
            .map_err(|e| e.to_string())?;
        edges.push(("hub".to_string(), leaf));
    }
    let sample = star.sample_k_hop("hub", 1, 50, 5).map_err(|e| e.to_string())?;
    let (nodes, sample_edges) = graph_sets(&sample);
    ensure!(nodes.len() == 50, "sample has {} nodes", nodes.len());
    ensure!(nodes.contains("hub"), "seed missing from sample");
    ensure!(
        sample_edges == induced(&edges, &nodes),
        "sample is not the induced subgraph"
    );
    let again = star.sample_k_hop("hub", 1, 50, 5).map_err(|e| e.to_string())?;
    ensure!(
        graph_sets(&again) == (nodes, sample_edges),
        "same seed gave a different sample"
    );
    for cap in [201, 500] {
        let full = star.sample_k_hop("hub", 1, cap, 5).map_err(|e| e.to_string())?;
        let expected = bfs_oracle(&edges, "hub", 1);
        ensure!(
            graph_sets(&full) == (expected.clone(), induced(&edges, &expected)),
            "cap {cap} differs from BFS"
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..50 {
        let mut g = SupplyChainGraph::new();
        let n = rng.random_range(5..40);
        let mut edges = Vec::new();
        for i in 0..n {
            g.upsert_entity(&format!("n{i}"), "", "", &sw)
                .map_err(|e| e.to_string())?;
        }
        for k in 0..n * 2 {
            let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
            if a == b {
                continue;
            }
            let (a, b) = (format!("n{a}"), format!("n{b}"));
            g.add_comention(&format!("e{k}"), &BTreeSet::from([a.clone(), b.clone()]))
                .map_err(|e| e.to_string())?;
            edges.push((a, b));
        }
        let hops = rng.random_range(1..4);
        let expected = bfs_oracle(&edges, "n0", hops);
        let got = g.sample_k_hop("n0", hops, n + 1, trial).map_err(|e| e.to_string())?;
        ensure!(
            graph_sets(&got) == (expected.clone(), induced(&edges, &expected)),
            "trial {trial}: {hops}-hop sample differs from BFS"
        );
    }
    Ok("star cap 50 -> 50 nodes incl. seed; cap >= degree and 50 random graphs match BFS".into())
}

fn criterion_8(work: &Path) -> Check {
    let gazetteer = gazetteer_fixture()?;
    let mut dataset = Vec::new();
    for (name, cats) in &gazetteer {
        for category in CATEGORIES {
            dataset.push(LabeledExample {
                entity_id: name.clone(),
                category: category.to_string(),
                gold: cats.contains(category),
                description: String::new(),
            });
        }
    }
    let mut summary = Vec::new();
    for category in CATEGORIES {
        let pos = dataset.iter().filter(|e| e.category == category && e.gold).count();
        let neg = dataset.iter().filter(|e| e.category == category && !e.gold).count();
        ensure!(pos != neg, "{category} is not skewed");
        let first = downsample_balanced(&dataset, category, 42).map_err(|e| e.to_string())?;
        let second = downsample_balanced(&dataset, category, 42).map_err(|e| e.to_string())?;
        ensure!(first == second, "{category}: not reproducible");
        let p = first.iter().filter(|e| e.gold).count();
        ensure!(
            p == first.len() - p && p == pos.min(neg),
            "{category}: {p} of {}",
            first.len()
        );
        ensure!(
            first.iter().all(|e| dataset.contains(e) && e.category == category),
            "{category}: not a subset"
        );
        summary.push(format!("{}+{}", p, first.len() - p));
    }

    let run = work.join("c8");
    run_cli(&crawl_args(&script_backend_spec(), &run, &[]))?;
    let mut outputs = Vec::new();
    for tag in ["a", "b"] {
        let out = work.join(format!("c8-balanced-{tag}.json"));
        let mut a = args(&["evaluate", "--balanced", "--rng-seed", "42", "--gold-gazetteer"]);
        a.push(path_str(&fixture("gazetteer.jsonl")));
        a.push("--state".into());
        a.push(path_str(&run.join("state.json")));
        a.push("--out".into());
        a.push(path_str(&out));
        run_cli(&a)?;
        outputs.push(fs::read(&out).map_err(|e| e.to_string())?);
    }
    ensure!(outputs[0] == outputs[1], "balanced evaluation not reproducible");
    Ok(format!("balanced per category: {}", summary.join(" ")))
}

const EXTRACTION_SYSTEM: &str = "You are a professional expert in the supply chain industry.
You only have one chance to answer the question. Always answer in the pattern:
1. [company name]: [short description]
2. [company name]: [short description]
3. [company name]: [short description]";
const EXTRACTION_USER: &str = "Here is the news article about a company from the internet: {news}";
const EXTRACTION_QUESTION: &str =
    "Give me the list and associated short description of the entity in {industry} mentioned in the article.";
const CLASSIFICATION_SYSTEM: &str = "You are an experienced researcher proficient in entity labeling.
Your job is to determine whether the entity belongs to a particular category. Answer with either 'Yes' or 'No', based on a description.";
const CLASSIFICATION_USER: &str = "This is the description for {company_name}: {company_description}";
const CLASSIFICATION_QUESTION: &str =
    "Is this entity {company_name} mentioned in the description belonging to a {company_category}?";

fn restore(text: &str, slots: &[(&str, &str)]) -> String {
    slots.iter().fold(text.to_string(), |acc, (value, name)| {
        acc.replace(value, &format!("{{{name}}}"))
    })
}

fn diff_line(kind: &str, got: &str, want: &str) -> Result<(), String> {
    if got == want {
        return Ok(());
    }
    let at = got.chars().zip(want.chars()).take_while(|(a, b)| a == b).count();
    Err(format!("{kind} differs at char {at}: got {got:?}, want {want:?}"))
}

fn criterion_9(_: &Path) -> Check {
    let slots = [
        ("\u{2983}NEWS\u{2984}", "news"),
        ("\u{2983}INDUSTRY\u{2984}", "industry"),
    ];
    let p = build_extraction_prompt(slots[0].0, slots[1].0).map_err(|e| e.to_string())?;
    diff_line("extraction system", &restore(&p.system, &slots), EXTRACTION_SYSTEM)?;
    diff_line("extraction user", &restore(&p.user, &slots), EXTRACTION_USER)?;
    diff_line(
        "extraction question",
        &restore(&p.question, &slots),
        EXTRACTION_QUESTION,
    )?;

    let slots = [
        ("\u{2983}NAME\u{2984}", "company_name"),
        ("\u{2983}DESC\u{2984}", "company_description"),
        ("\u{2983}CAT\u{2984}", "company_category"),
    ];
    let p = build_classification_prompt(slots[0].0, slots[1].0, slots[2].0).map_err(|e| e.to_string())?;
    diff_line(
        "classification system",
        &restore(&p.system, &slots),
        CLASSIFICATION_SYSTEM,
    )?;
    diff_line("classification user", &restore(&p.user, &slots), CLASSIFICATION_USER)?;
    diff_line(
        "classification question",
        &restore(&p.question, &slots),
        CLASSIFICATION_QUESTION,
    )?;

    let real = build_extraction_prompt("bechtel wins contract", INDUSTRY).map_err(|e| e.to_string())?;
    ensure!(
        real.user == EXTRACTION_USER.replace("{news}", "bechtel wins contract"),
        "substituted user prompt differs from golden"
    );
    Ok("extraction and classification prompts match golden copies outside placeholders".into())
}

fn main() -> ExitCode {
    let work = tempfile::tempdir().expect("temp dir");
    let criteria: [Criterion; 9] = [
        ("pipeline oracle equivalence", criterion_1),
        ("alias dedup and merge conservation", criterion_2),
        ("metrics fidelity", criterion_3),
        ("classification round trip", criterion_4),
        ("determinism and replay", criterion_5),
        ("segmentation", criterion_6),
        ("subgraph sampling", criterion_7),
        ("balanced downsampling", criterion_8),
        ("prompt fidelity", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(|| check(work.path()))).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
