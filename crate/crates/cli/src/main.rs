mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use supplygraph_core::backend::{
    load_script, BackendError, CompletionBackend, HttpBackend, HttpConfig, RecordingBackend, ReplayBackend,
    ScriptedBackend,
};
use supplygraph_core::classification::{
    classify_graph, downsample_balanced, evaluate_all, gold_from_gazetteer, load_dataset, load_predictions,
    predictions_from_graph, to_jsonl, ClassificationError, ClassifyOptions,
};
use supplygraph_core::corpus::{load_corpus, CorpusSource};
use supplygraph_core::crawler::CrawlReport;
use supplygraph_core::graph_store::{
    load_alias_file, load_state, render_graph, state_to_string, ExportFormat, GraphError,
};
use supplygraph_core::{run_crawl, CategoryTaxonomy, CrawlConfig, StopwordLists, SupplyChainGraph};

use manifest::RunManifest;

const EXIT_OTHER: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_BUDGET: u8 = 3;
const EXIT_BACKEND: u8 = 4;
const EXIT_UNKNOWN_ENTITY: u8 = 5;

#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait OrExit<T> {
    fn or_exit(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrExit<T> for Result<T, E> {
    fn or_exit(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

fn fail(code: u8, error: anyhow::Error) -> Failure {
    Failure { code, error }
}

type Outcome = Result<(), Failure>;

#[derive(Parser)]
#[command(
    name = "supplygraph",
    version,
    about = "Build and evaluate supply-chain graphs from news text"
)]
struct Cli {
    /// TOML configuration file; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice (sampling, downsampling, retry jitter).
    #[arg(long, global = true)]
    rng_seed: Option<u64>,
    /// Repeat for more log output on standard error.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Crawl a corpus into a graph.
    Crawl(CrawlArgs),
    /// Label graph entities against the category taxonomy.
    Classify(ClassifyArgs),
    /// Score predictions against gold labels.
    Evaluate(EvaluateArgs),
    /// Write a saved graph in another format.
    Export(ExportArgs),
    /// Sample the neighborhood of one entity.
    Subgraph(SubgraphArgs),
    /// Crawl and classify while capturing backend traffic to a cassette.
    Record(RecordArgs),
}

#[derive(Args, Clone)]
struct StopwordArgs {
    /// Replacement company-suffix list, one token per line.
    #[arg(long)]
    suffixes: Option<PathBuf>,
    /// Replacement general stopword list, one token per line.
    #[arg(long)]
    stopwords: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct CrawlArgs {
    /// Article corpus in JSON Lines.
    #[arg(long)]
    corpus: PathBuf,
    /// `script:PATH`, `replay:PATH`, `http` or `http:URL`.
    #[arg(long)]
    backend: String,
    /// Seed keywords, comma separated or repeated.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    industry: Option<String>,
    #[arg(long)]
    max_nodes: Option<usize>,
    #[arg(long)]
    max_articles: Option<usize>,
    #[arg(long)]
    token_budget: Option<usize>,
    #[arg(long)]
    per_year_min: Option<usize>,
    #[arg(long)]
    year_start: Option<i32>,
    #[arg(long)]
    year_end: Option<i32>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_output_tokens: Option<u32>,
    /// Allow parallel, non-deterministic scheduling.
    #[arg(long)]
    nondeterministic: bool,
    /// Append a step-by-step instruction to every prompt.
    #[arg(long)]
    reasoning: bool,
    /// Tab-separated `variant<TAB>canonical` merges applied after the crawl.
    #[arg(long)]
    aliases: Option<PathBuf>,
    /// Reject corpus records with unknown fields.
    #[arg(long)]
    strict: bool,
    /// Exit with status 3 when a node or article budget stops the crawl.
    #[arg(long)]
    fail_on_budget: bool,
    #[command(flatten)]
    lists: StopwordArgs,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Graph state written by `crawl`.
    #[arg(long)]
    state: PathBuf,
    #[arg(long)]
    backend: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    description_budget: Option<usize>,
    #[arg(long)]
    reasoning: bool,
    #[command(flatten)]
    lists: StopwordArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Labeled dataset in JSON Lines.
    #[arg(long, conflicts_with = "gold_gazetteer")]
    dataset: Option<PathBuf>,
    /// Derive gold labels for the nodes of `--state` from a gazetteer script.
    #[arg(long, requires = "state")]
    gold_gazetteer: Option<PathBuf>,
    /// Predictions in JSON Lines.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Graph state; node categories serve as predictions when `--predictions` is absent.
    #[arg(long)]
    state: Option<PathBuf>,
    /// Evaluate on a class-balanced downsample of each category.
    #[arg(long)]
    balanced: bool,
    /// Metrics report path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    lists: StopwordArgs,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    state: PathBuf,
    /// graphml, dot or jsonl.
    #[arg(long)]
    format: ExportFormat,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SubgraphArgs {
    #[arg(long)]
    state: PathBuf,
    /// Entity name or canonical id.
    #[arg(long)]
    seed_entity: String,
    #[arg(long, default_value_t = 1)]
    hops: usize,
    #[arg(long, default_value_t = 50)]
    max_nodes: usize,
    #[arg(long, default_value = "graphml")]
    format: ExportFormat,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    lists: StopwordArgs,
}

#[derive(Args)]
struct RecordArgs {
    #[command(flatten)]
    crawl: CrawlArgs,
    /// Cassette file to append captured responses to.
    #[arg(long)]
    cassette: PathBuf,
    /// Stop after the crawl instead of also classifying.
    #[arg(long)]
    crawl_only: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    rng_seed: Option<u64>,
    crawl: Option<toml::Table>,
    #[serde(default)]
    classify: ClassifyFile,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifyFile {
    parallelism: Option<usize>,
    description_budget: Option<usize>,
    max_output_tokens: Option<u32>,
    reasoning_preamble: Option<bool>,
}

struct Settings {
    file: FileConfig,
    rng_seed: u64,
}

fn load_settings(cli: &Cli) -> Result<Settings, Failure> {
    let file = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))
                .or_exit(EXIT_INPUT)?;
            toml::from_str(&text)
                .with_context(|| format!("invalid config {}", path.display()))
                .or_exit(EXIT_INPUT)?
        }
        None => FileConfig::default(),
    };
    let rng_seed = cli.rng_seed.or(file.rng_seed).unwrap_or(0);
    Ok(Settings { file, rng_seed })
}

fn crawl_config(args: &CrawlArgs, settings: &Settings) -> Result<CrawlConfig, Failure> {
    let mut config: CrawlConfig = match &settings.file.crawl {
        Some(table) => table
            .clone()
            .try_into()
            .context("invalid [crawl] table in config")
            .or_exit(EXIT_INPUT)?,
        None => CrawlConfig::default(),
    };
    if !args.seeds.is_empty() {
        config.seeds = args
            .seeds
            .iter()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
    }
    if let Some(v) = &args.industry {
        config.industry = v.clone();
    }
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = args.$field { config.$field = v; })* };
    }
    set!(
        max_nodes,
        max_articles,
        token_budget,
        per_year_min,
        parallelism,
        temperature,
        max_output_tokens
    );
    if let Some(v) = args.year_start {
        config.year_range.0 = v;
    }
    if let Some(v) = args.year_end {
        config.year_range.1 = v;
    }
    if args.nondeterministic {
        config.deterministic = false;
    }
    if args.reasoning {
        config.reasoning_preamble = true;
    }
    config.validate().or_exit(EXIT_INPUT)?;
    Ok(config)
}

fn stopword_lists(args: &StopwordArgs, manifest: &mut RunManifest) -> Result<StopwordLists, Failure> {
    for path in [&args.suffixes, &args.stopwords].into_iter().flatten() {
        manifest.input(path).or_exit(EXIT_INPUT)?;
    }
    StopwordLists::with_overrides(args.suffixes.as_deref(), args.stopwords.as_deref()).or_exit(EXIT_INPUT)
}

fn open_backend(
    spec: &str,
    stopwords: &StopwordLists,
    rng_seed: u64,
    manifest: &mut RunManifest,
) -> Result<Box<dyn CompletionBackend>, Failure> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    let backend: Box<dyn CompletionBackend> = match kind {
        "script" | "replay" if arg.is_empty() => {
            return Err(fail(
                EXIT_INPUT,
                anyhow!("backend {kind:?} needs a file path, e.g. {kind}:PATH"),
            ));
        }
        "script" => {
            let path = Path::new(arg);
            manifest.input(path).or_exit(EXIT_INPUT)?;
            let script = load_script(path, stopwords).or_exit(EXIT_INPUT)?;
            Box::new(ScriptedBackend::new(script, stopwords.clone()).with_label(format!("script:{arg}")))
        }
        "replay" => {
            let path = Path::new(arg);
            manifest.input(path).or_exit(EXIT_INPUT)?;
            Box::new(ReplayBackend::open(path).or_exit(EXIT_INPUT)?)
        }
        "http" => {
            let mut config = if arg.is_empty() {
                HttpConfig::from_env().or_exit(EXIT_INPUT)?
            } else {
                HttpConfig::new(arg).with_env_settings()
            };
            config.jitter_seed = rng_seed;
            Box::new(HttpBackend::new(config))
        }
        other => {
            return Err(fail(
                EXIT_INPUT,
                anyhow!("unknown backend {other:?}; expected script:PATH, replay:PATH, http or http:URL"),
            ))
        }
    };
    manifest.backend(backend.identity());
    Ok(backend)
}

fn backend_exit(err: &BackendError) -> u8 {
    match err {
        BackendError::Unavailable { .. } | BackendError::Rejected { .. } => EXIT_BACKEND,
        BackendError::ReplayMiss { .. } | BackendError::ScriptMiss { .. } | BackendError::InvalidRequest(_) => {
            EXIT_INPUT
        }
        _ => EXIT_OTHER,
    }
}

fn load_graph(path: &Path, manifest: &mut RunManifest) -> Result<SupplyChainGraph, Failure> {
    manifest.input(path).or_exit(EXIT_INPUT)?;
    load_state(path).or_exit(EXIT_INPUT)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .or_exit(EXIT_OTHER)
}

fn create_parent(path: &Path) -> Result<(), Failure> {
    match path.parent() {
        Some(parent) if !parent.as_os_str().is_empty() => create_dir(parent),
        _ => Ok(()),
    }
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    text.into_bytes()
}

/// Writes a single-file command result next to its manifest.
fn write_single(manifest: &mut RunManifest, out: &Path, contents: &[u8]) -> Outcome {
    create_parent(out)?;
    let dir = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = out
        .file_name()
        .ok_or_else(|| fail(EXIT_INPUT, anyhow!("output path {} has no file name", out.display())))?
        .to_string_lossy()
        .to_string();
    manifest.output(dir, &name, contents).or_exit(EXIT_OTHER)?;
    Ok(())
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

/// Report without its wall-clock field, so identical runs write identical bytes.
fn stable_report(report: &CrawlReport) -> Value {
    let mut value = serde_json::to_value(report).expect("report serializes");
    if let Some(map) = value.as_object_mut() {
        map.remove("duration_ms");
    }
    value
}

struct CrawlRun {
    graph: SupplyChainGraph,
    report: CrawlReport,
}

fn crawl_into(
    args: &CrawlArgs,
    config: CrawlConfig,
    backend: &dyn CompletionBackend,
    stopwords: &StopwordLists,
    manifest: &mut RunManifest,
) -> Result<CrawlRun, Failure> {
    manifest.input(&args.corpus).or_exit(EXIT_INPUT)?;
    let corpus = load_corpus(&args.corpus, args.strict).or_exit(EXIT_INPUT)?;
    let aliases = match &args.aliases {
        Some(path) => {
            manifest.input(path).or_exit(EXIT_INPUT)?;
            load_alias_file(path).or_exit(EXIT_INPUT)?
        }
        None => Vec::new(),
    };
    let source = CorpusSource::new(corpus);
    let mut graph = SupplyChainGraph::new();
    let report = run_crawl(config, &source, backend, &mut graph, stopwords).or_exit(EXIT_INPUT)?;
    if !aliases.is_empty() {
        let merges = graph.apply_aliases(&aliases, stopwords).or_exit(EXIT_INPUT)?;
        log::info!("aliases applied merges={merges}");
    }
    Ok(CrawlRun { graph, report })
}

fn write_crawl_outputs(out: &Path, run: &CrawlRun, manifest: &mut RunManifest) -> Outcome {
    manifest
        .output(out, "state.json", state_to_string(&run.graph).as_bytes())
        .or_exit(EXIT_OTHER)?;
    for format in ExportFormat::ALL {
        let name = format!("graph.{}", format.extension());
        manifest
            .output(out, &name, render_graph(&run.graph, format).as_bytes())
            .or_exit(EXIT_OTHER)?;
    }
    manifest
        .output(out, "report.json", &json_bytes(&stable_report(&run.report)))
        .or_exit(EXIT_OTHER)?;
    Ok(())
}

fn check_crawl_outcome(run: &CrawlRun, fail_on_budget: bool) -> Outcome {
    let stats = &run.report.stats;
    println!(
        "termination={} nodes={} edges={} articles={} keywords={}",
        run.report.termination_reason.as_str(),
        run.graph.node_count(),
        run.graph.edge_count(),
        stats.articles_processed,
        stats.keywords_processed
    );
    if stats.backend_failures > 0 && stats.backend_failures >= stats.articles_processed {
        return Err(fail(
            EXIT_BACKEND,
            anyhow!(
                "every extraction request failed ({} backend failures)",
                stats.backend_failures
            ),
        ));
    }
    if fail_on_budget && run.report.termination_reason.is_budget() {
        return Err(fail(
            EXIT_BUDGET,
            anyhow!("crawl stopped by {}", run.report.termination_reason.as_str()),
        ));
    }
    Ok(())
}

fn cmd_crawl(args: &CrawlArgs, settings: &Settings) -> Outcome {
    let config = crawl_config(args, settings)?;
    let mut manifest = RunManifest::new(
        "crawl",
        json!({ "crawl": config, "rng_seed": settings.rng_seed, "strict": args.strict }),
    );
    let stopwords = stopword_lists(&args.lists, &mut manifest)?;
    let backend = open_backend(&args.backend, &stopwords, settings.rng_seed, &mut manifest)?;
    let run = crawl_into(args, config, backend.as_ref(), &stopwords, &mut manifest)?;
    create_dir(&args.out)?;
    write_crawl_outputs(&args.out, &run, &mut manifest)?;
    manifest.write(&args.out.join("manifest.json")).or_exit(EXIT_OTHER)?;
    check_crawl_outcome(&run, args.fail_on_budget)
}

fn classify_options(
    settings: &Settings,
    parallelism: Option<usize>,
    budget: Option<usize>,
    reasoning: bool,
) -> ClassifyOptions {
    let file = &settings.file.classify;
    let defaults = ClassifyOptions::default();
    ClassifyOptions {
        parallelism: parallelism.or(file.parallelism).unwrap_or(defaults.parallelism),
        description_budget: budget
            .or(file.description_budget)
            .unwrap_or(defaults.description_budget),
        max_output_tokens: file.max_output_tokens.unwrap_or(defaults.max_output_tokens),
        reasoning_preamble: reasoning || file.reasoning_preamble.unwrap_or(false),
        ..defaults
    }
}

fn run_classification(
    graph: &mut SupplyChainGraph,
    backend: &dyn CompletionBackend,
    options: &ClassifyOptions,
    out: &Path,
    manifest: &mut RunManifest,
) -> Outcome {
    let taxonomy = CategoryTaxonomy::default();
    let report = classify_graph(graph, &taxonomy, backend, options).map_err(|err| {
        let code = match &err {
            ClassificationError::Backend { source, .. } => backend_exit(source),
            _ => EXIT_OTHER,
        };
        fail(code, err.into())
    })?;
    manifest
        .output(out, "state.json", state_to_string(graph).as_bytes())
        .or_exit(EXIT_OTHER)?;
    manifest
        .output(out, "classification.json", &json_bytes(&report))
        .or_exit(EXIT_OTHER)?;
    manifest
        .output(out, "predictions.jsonl", to_jsonl(&report.predictions()).as_bytes())
        .or_exit(EXIT_OTHER)?;
    println!(
        "classified={} skipped={} unlabeled={} undetermined={}",
        report.entities_classified,
        report.entities_skipped_no_description,
        report.entities_unlabeled,
        report.undetermined.len()
    );
    Ok(())
}

fn cmd_classify(args: &ClassifyArgs, settings: &Settings) -> Outcome {
    let options = classify_options(settings, args.parallelism, args.description_budget, args.reasoning);
    let mut manifest = RunManifest::new(
        "classify",
        json!({
            "parallelism": options.parallelism,
            "description_budget": options.description_budget,
            "max_output_tokens": options.max_output_tokens,
            "reasoning_preamble": options.reasoning_preamble,
            "rng_seed": settings.rng_seed,
        }),
    );
    let mut graph = load_graph(&args.state, &mut manifest)?;
    let stopwords = stopword_lists(&args.lists, &mut manifest)?;
    let backend = open_backend(&args.backend, &stopwords, settings.rng_seed, &mut manifest)?;
    create_dir(&args.out)?;
    run_classification(&mut graph, backend.as_ref(), &options, &args.out, &mut manifest)?;
    manifest.write(&args.out.join("manifest.json")).or_exit(EXIT_OTHER)
}

fn cmd_evaluate(args: &EvaluateArgs, settings: &Settings) -> Outcome {
    let taxonomy = CategoryTaxonomy::default();
    let mut manifest = RunManifest::new(
        "evaluate",
        json!({ "balanced": args.balanced, "rng_seed": settings.rng_seed }),
    );
    let stopwords = stopword_lists(&args.lists, &mut manifest)?;
    let graph = match &args.state {
        Some(path) => Some(load_graph(path, &mut manifest)?),
        None => None,
    };
    let mut dataset = match (&args.dataset, &args.gold_gazetteer, &graph) {
        (Some(path), _, _) => {
            manifest.input(path).or_exit(EXIT_INPUT)?;
            load_dataset(path, &taxonomy).or_exit(EXIT_INPUT)?
        }
        (None, Some(path), Some(graph)) => {
            manifest.input(path).or_exit(EXIT_INPUT)?;
            let script = load_script(path, &stopwords).or_exit(EXIT_INPUT)?;
            let gazetteer = script
                .gazetteer
                .ok_or_else(|| fail(EXIT_INPUT, anyhow!("{} has no gazetteer record", path.display())))?;
            let budget = ClassifyOptions::default().description_budget;
            gold_from_gazetteer(graph, &gazetteer, &taxonomy, &stopwords, budget)
        }
        _ => {
            return Err(fail(
                EXIT_INPUT,
                anyhow!("provide --dataset, or --gold-gazetteer with --state"),
            ))
        }
    };
    let predictions = match (&args.predictions, &graph) {
        (Some(path), _) => {
            manifest.input(path).or_exit(EXIT_INPUT)?;
            load_predictions(path).or_exit(EXIT_INPUT)?
        }
        (None, Some(graph)) => predictions_from_graph(graph, &taxonomy),
        (None, None) => return Err(fail(EXIT_INPUT, anyhow!("provide --predictions or --state"))),
    };
    if args.balanced {
        let mut balanced = Vec::new();
        for category in taxonomy.labels() {
            if dataset.iter().any(|e| e.category == category) {
                balanced.extend(downsample_balanced(&dataset, category, settings.rng_seed).or_exit(EXIT_INPUT)?);
            }
        }
        dataset = balanced;
    }
    let report = evaluate_all(&dataset, &predictions, &taxonomy).or_exit(EXIT_INPUT)?;
    write_single(&mut manifest, &args.out, &json_bytes(&report))?;
    println!(
        "examples={} undetermined={} macro_accuracy={:.6} macro_f1={:.6} micro_accuracy={:.6} micro_f1={:.6}",
        report.examples,
        report.undetermined,
        report.macro_avg.accuracy,
        report.macro_avg.f1,
        report.micro.metrics.accuracy,
        report.micro.metrics.f1
    );
    manifest.write(&manifest_path(&args.out)).or_exit(EXIT_OTHER)
}

fn cmd_export(args: &ExportArgs) -> Outcome {
    let mut manifest = RunManifest::new("export", json!({ "format": args.format }));
    let graph = load_graph(&args.state, &mut manifest)?;
    write_single(&mut manifest, &args.out, render_graph(&graph, args.format).as_bytes())?;
    manifest.write(&manifest_path(&args.out)).or_exit(EXIT_OTHER)
}

fn cmd_subgraph(args: &SubgraphArgs, settings: &Settings) -> Outcome {
    let mut manifest = RunManifest::new(
        "subgraph",
        json!({
            "seed_entity": args.seed_entity,
            "hops": args.hops,
            "max_nodes": args.max_nodes,
            "format": args.format,
            "rng_seed": settings.rng_seed,
        }),
    );
    let stopwords = stopword_lists(&args.lists, &mut manifest)?;
    let graph = load_graph(&args.state, &mut manifest)?;
    let unknown = || fail(EXIT_UNKNOWN_ENTITY, anyhow!("unknown entity {:?}", args.seed_entity));
    let seed = if graph.contains(&args.seed_entity) {
        args.seed_entity.clone()
    } else {
        graph
            .canonicalize(&args.seed_entity, &stopwords)
            .map_err(|_| unknown())?
            .ok_or_else(unknown)?
    };
    let sample = graph
        .sample_k_hop(&seed, args.hops, args.max_nodes, settings.rng_seed)
        .map_err(|err| match err {
            GraphError::UnknownNode(_) => unknown(),
            other => fail(EXIT_INPUT, other.into()),
        })?;
    write_single(&mut manifest, &args.out, render_graph(&sample, args.format).as_bytes())?;
    println!(
        "seed={seed} nodes={} edges={}",
        sample.node_count(),
        sample.edge_count()
    );
    manifest.write(&manifest_path(&args.out)).or_exit(EXIT_OTHER)
}

fn cmd_record(args: &RecordArgs, settings: &Settings) -> Outcome {
    let config = crawl_config(&args.crawl, settings)?;
    let options = classify_options(settings, None, None, args.crawl.reasoning);
    let mut manifest = RunManifest::new(
        "record",
        json!({
            "crawl": config,
            "classify": !args.crawl_only,
            "cassette": args.cassette.display().to_string(),
            "rng_seed": settings.rng_seed,
            "strict": args.crawl.strict,
        }),
    );
    let stopwords = stopword_lists(&args.crawl.lists, &mut manifest)?;
    let live = open_backend(&args.crawl.backend, &stopwords, settings.rng_seed, &mut manifest)?;
    create_parent(&args.cassette)?;
    let recorder = RecordingBackend::open(live, &args.cassette).or_exit(EXIT_INPUT)?;
    manifest.backend(recorder.identity());
    let mut run = crawl_into(&args.crawl, config, &recorder, &stopwords, &mut manifest)?;
    create_dir(&args.crawl.out)?;
    write_crawl_outputs(&args.crawl.out, &run, &mut manifest)?;
    check_crawl_outcome(&run, args.crawl.fail_on_budget)?;
    if !args.crawl_only {
        let dir = args.crawl.out.join("classified");
        create_dir(&dir)?;
        let mut classify_manifest = RunManifest::new("classify", json!({ "rng_seed": settings.rng_seed }));
        run_classification(&mut run.graph, &recorder, &options, &dir, &mut classify_manifest)?;
        classify_manifest
            .write(&dir.join("manifest.json"))
            .or_exit(EXIT_OTHER)?;
    }
    manifest
        .write(&args.crawl.out.join("manifest.json"))
        .or_exit(EXIT_OTHER)
}

fn run(cli: &Cli) -> Outcome {
    let settings = load_settings(cli)?;
    match &cli.command {
        Command::Crawl(args) => cmd_crawl(args, &settings),
        Command::Classify(args) => cmd_classify(args, &settings),
        Command::Evaluate(args) => cmd_evaluate(args, &settings),
        Command::Export(args) => cmd_export(args),
        Command::Subgraph(args) => cmd_subgraph(args, &settings),
        Command::Record(args) => cmd_record(args, &settings),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
