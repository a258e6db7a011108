//! The keyword-queue crawl.
//!
//! Seeds go into a FIFO frontier. Each keyword is fetched, every article is
//! sent through the extraction prompt (segmented when over the token budget),
//! extracted names are canonicalized into the graph, the article's mention set
//! becomes a co-mention clique, and unseen entities join the frontier. The
//! loop ends when the frontier drains or a node or article budget is hit.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendRequest, CompletionBackend};
use crate::corpus::{content_token_count, fetch_articles, ArticleSource, FetchPolicy, StopwordLists};
use crate::graph_store::SupplyChainGraph;
use crate::llm_protocol::{
    build_extraction_prompt_with, parse_entity_list, segment_text, DiagnosticsSnapshot, ExtractedEntity,
    ParseDiagnostics, PromptOptions, TokenEstimator, WhitespaceEstimator,
};

/// Articles per keyword below which the report flags the keyword as thin.
pub const ARTICLE_FLOOR: usize = 50;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CrawlError {
    #[error("invalid crawl configuration: {0}")]
    Config(String),
}

fn default_industry() -> String {
    "civil engineering".into()
}
fn default_year_range() -> (i32, i32) {
    (2018, 2023)
}
fn default_per_year_min() -> usize {
    10
}
fn default_token_budget() -> usize {
    2048
}
fn default_max_nodes() -> usize {
    100_000
}
fn default_max_articles() -> usize {
    1_000_000
}
fn default_true() -> bool {
    true
}
fn default_one() -> usize {
    1
}
fn default_fetch_retries() -> u32 {
    2
}
fn default_max_output_tokens() -> u32 {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrawlConfig {
    #[serde(default)]
    pub seeds: Vec<String>,
    #[serde(default = "default_industry")]
    pub industry: String,
    /// Inclusive.
    #[serde(default = "default_year_range")]
    pub year_range: (i32, i32),
    #[serde(default = "default_per_year_min")]
    pub per_year_min: usize,
    /// Estimated tokens per article segment sent to the backend.
    #[serde(default = "default_token_budget")]
    pub token_budget: usize,
    #[serde(default = "default_max_nodes")]
    pub max_nodes: usize,
    #[serde(default = "default_max_articles")]
    pub max_articles: usize,
    #[serde(default = "default_true")]
    pub deterministic: bool,
    #[serde(default = "default_one")]
    pub parallelism: usize,
    #[serde(default = "default_fetch_retries")]
    pub fetch_retries: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default)]
    pub reasoning_preamble: bool,
}

impl Default for CrawlConfig {
    fn default() -> Self {
        Self {
            seeds: Vec::new(),
            industry: default_industry(),
            year_range: default_year_range(),
            per_year_min: default_per_year_min(),
            token_budget: default_token_budget(),
            max_nodes: default_max_nodes(),
            max_articles: default_max_articles(),
            deterministic: true,
            parallelism: 1,
            fetch_retries: default_fetch_retries(),
            temperature: 0.0,
            max_output_tokens: default_max_output_tokens(),
            reasoning_preamble: false,
        }
    }
}

impl CrawlConfig {
    pub fn validate(&self) -> Result<(), CrawlError> {
        let fail = |m: &str| Err(CrawlError::Config(m.to_string()));
        if self.seeds.iter().all(|s| s.trim().is_empty()) {
            return fail("at least one seed keyword is required");
        }
        if self.industry.trim().is_empty() {
            return fail("industry must not be empty");
        }
        if self.year_range.0 > self.year_range.1 {
            return fail("year range start is after its end");
        }
        if self.per_year_min == 0 || self.token_budget == 0 || self.max_nodes == 0 || self.max_articles == 0 {
            return fail("per_year_min, token_budget, max_nodes and max_articles must be at least 1");
        }
        if self.parallelism == 0 {
            return fail("parallelism must be at least 1");
        }
        if self.deterministic && self.temperature != 0.0 {
            return fail("deterministic mode requires temperature 0");
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return fail("temperature must be a non-negative number");
        }
        Ok(())
    }

    pub fn effective_parallelism(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.parallelism.max(1)
        }
    }

    pub fn fetch_policy(&self) -> FetchPolicy {
        FetchPolicy {
            year_range: self.year_range,
            per_year_min: self.per_year_min,
            retries: self.fetch_retries,
            ..FetchPolicy::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationReason {
    #[serde(rename = "exhausted")]
    Exhausted,
    #[serde(rename = "node budget")]
    NodeBudget,
    #[serde(rename = "article budget")]
    ArticleBudget,
}

impl TerminationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Exhausted => "exhausted",
            Self::NodeBudget => "node budget",
            Self::ArticleBudget => "article budget",
        }
    }

    pub fn is_budget(self) -> bool {
        !matches!(self, Self::Exhausted)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrawlStats {
    pub keywords_processed: u64,
    pub articles_processed: u64,
    pub segments: u64,
    pub entities_extracted: u64,
    pub nodes_created: u64,
    pub edges_created: u64,
    pub parse_failures: u64,
    pub backend_failures: u64,
    pub fetch_failures: u64,
    pub invalid_names: u64,
    pub entities_dropped_by_budget: u64,
    pub fetch_shortfall_years: u64,
    pub keywords_below_article_floor: u64,
    pub content_tokens: u64,
}

#[derive(Debug, Clone, Default)]
pub struct CrawlState {
    pub frontier: VecDeque<String>,
    pub visited: BTreeSet<String>,
    enqueued: HashSet<String>,
    pub stats: CrawlStats,
}

impl CrawlState {
    /// Appends `id` unless it has been enqueued before in this crawl.
    pub fn enqueue(&mut self, id: &str) -> bool {
        if self.enqueued.contains(id) {
            return false;
        }
        self.enqueued.insert(id.to_string());
        self.frontier.push_back(id.to_string());
        true
    }

    pub fn was_enqueued(&self, id: &str) -> bool {
        self.enqueued.contains(id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrawlReport {
    pub termination_reason: TerminationReason,
    pub stats: CrawlStats,
    pub diagnostics: DiagnosticsSnapshot,
    pub duration_ms: u64,
    pub config: CrawlConfig,
}

/// What happened to the graph while processing one keyword.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepDelta {
    pub keyword: String,
    pub articles: usize,
    pub nodes_created: usize,
    pub edges_created: usize,
    pub edges_touched: usize,
    pub enqueued: Vec<String>,
}

/// Extraction results for one article, before they touch the graph.
#[derive(Debug, Clone)]
struct ArticleHarvest {
    article_id: String,
    entities: Vec<ExtractedEntity>,
    segments: usize,
    parse_failures: usize,
    content_tokens: usize,
}

#[derive(Debug, Clone)]
struct KeywordHarvest {
    keyword: String,
    articles: Vec<ArticleHarvest>,
    backend_failures: usize,
    fetch_failed: bool,
    short_years: usize,
    fetched: usize,
}

/// True when the crawl should stop; budgets are checked before exhaustion.
pub fn should_terminate(state: &CrawlState, config: &CrawlConfig, node_count: usize) -> Option<TerminationReason> {
    if node_count >= config.max_nodes {
        Some(TerminationReason::NodeBudget)
    } else if state.stats.articles_processed >= config.max_articles as u64 {
        Some(TerminationReason::ArticleBudget)
    } else if state.frontier.is_empty() {
        Some(TerminationReason::Exhausted)
    } else {
        None
    }
}

pub struct Crawler<'a> {
    config: CrawlConfig,
    source: &'a dyn ArticleSource,
    backend: &'a dyn CompletionBackend,
    stopwords: &'a StopwordLists,
    estimator: Box<dyn TokenEstimator + 'a>,
    diagnostics: ParseDiagnostics,
}

impl<'a> Crawler<'a> {
    pub fn new(
        config: CrawlConfig,
        source: &'a dyn ArticleSource,
        backend: &'a dyn CompletionBackend,
        stopwords: &'a StopwordLists,
    ) -> Result<Self, CrawlError> {
        config.validate()?;
        Ok(Self {
            config,
            source,
            backend,
            stopwords,
            estimator: Box::new(WhitespaceEstimator::default()),
            diagnostics: ParseDiagnostics::default(),
        })
    }

    pub fn with_estimator(mut self, estimator: impl TokenEstimator + 'a) -> Self {
        self.estimator = Box::new(estimator);
        self
    }

    pub fn config(&self) -> &CrawlConfig {
        &self.config
    }

    pub fn diagnostics(&self) -> DiagnosticsSnapshot {
        self.diagnostics.snapshot()
    }

    /// Creates seed nodes and queues them.
    pub fn seed(&self, graph: &mut SupplyChainGraph) -> Result<CrawlState, CrawlError> {
        let mut state = CrawlState::default();
        for seed in &self.config.seeds {
            if seed.trim().is_empty() {
                continue;
            }
            let upsert = graph
                .upsert_entity(seed, "", "", self.stopwords)
                .map_err(|e| CrawlError::Config(format!("seed {seed:?}: {e}")))?;
            if upsert.created {
                state.stats.nodes_created += 1;
            }
            let id = upsert.id.to_string();
            state.enqueue(&id);
        }
        Ok(state)
    }

    pub fn run(&self, graph: &mut SupplyChainGraph) -> Result<CrawlReport, CrawlError> {
        let started = Instant::now();
        let mut state = self.seed(graph)?;
        let reason = loop {
            if let Some(reason) = should_terminate(&state, &self.config, graph.node_count()) {
                break reason;
            }
            let batch: Vec<String> = (0..self.config.effective_parallelism())
                .map_while(|_| state.frontier.pop_front())
                .collect();
            for harvest in self.harvest_batch(&batch) {
                self.apply(&mut state, harvest, graph);
            }
        };
        let report = CrawlReport {
            termination_reason: reason,
            stats: state.stats.clone(),
            diagnostics: self.diagnostics.snapshot(),
            duration_ms: started.elapsed().as_millis() as u64,
            config: self.config.clone(),
        };
        log::info!(
            "crawl done reason={:?} keywords={} articles={} nodes={} edges={}",
            reason.as_str(),
            report.stats.keywords_processed,
            report.stats.articles_processed,
            graph.node_count(),
            graph.edge_count()
        );
        Ok(report)
    }

    /// Processes the keyword at the head of the frontier.
    pub fn step(&self, state: &mut CrawlState, graph: &mut SupplyChainGraph) -> Option<StepDelta> {
        let keyword = state.frontier.pop_front()?;
        let harvest = self.harvest(&keyword);
        Some(self.apply(state, harvest, graph))
    }

    fn harvest_batch(&self, keywords: &[String]) -> Vec<KeywordHarvest> {
        if keywords.len() <= 1 {
            return keywords.iter().map(|k| self.harvest(k)).collect();
        }
        thread::scope(|scope| {
            let handles: Vec<_> = keywords.iter().map(|k| scope.spawn(move || self.harvest(k))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("harvest thread panicked"))
                .collect()
        })
    }

    fn harvest(&self, keyword: &str) -> KeywordHarvest {
        let mut out = KeywordHarvest {
            keyword: keyword.to_string(),
            articles: Vec::new(),
            backend_failures: 0,
            fetch_failed: false,
            short_years: 0,
            fetched: 0,
        };
        let batch = match fetch_articles(keyword, &self.config.fetch_policy(), self.source) {
            Ok(batch) => batch,
            Err(err) => {
                log::warn!("fetch failed keyword={keyword:?} error={err}");
                out.fetch_failed = true;
                return out;
            }
        };
        out.short_years = batch.short_years.len();
        out.fetched = batch.articles.len();
        let options = PromptOptions {
            reasoning_preamble: self.config.reasoning_preamble,
        };
        'articles: for article in &batch.articles {
            let news = article.prompt_text();
            let segments = if self.estimator.estimate(&news) > self.config.token_budget {
                match segment_text(&news, self.config.token_budget, self.estimator.as_ref()) {
                    Ok(plan) => plan.segments,
                    Err(err) => {
                        log::warn!("segmentation failed article={} error={err}", article.id);
                        out.articles.push(ArticleHarvest {
                            article_id: article.id.clone(),
                            entities: Vec::new(),
                            segments: 0,
                            parse_failures: 1,
                            content_tokens: 0,
                        });
                        continue;
                    }
                }
            } else {
                vec![news.clone()]
            };
            let mut harvest = ArticleHarvest {
                article_id: article.id.clone(),
                entities: Vec::new(),
                segments: segments.len(),
                parse_failures: 0,
                content_tokens: content_token_count(&news, self.stopwords),
            };
            let mut seen = HashSet::new();
            for (i, segment) in segments.iter().enumerate() {
                let segment = segment.trim();
                if segment.is_empty() {
                    continue;
                }
                let prompt = match build_extraction_prompt_with(segment, &self.config.industry, options) {
                    Ok(p) => p,
                    Err(_) => continue,
                };
                let request = BackendRequest::new(prompt, format!("extract:{}:{i}", article.id))
                    .with_temperature(self.config.temperature)
                    .with_max_output_tokens(self.config.max_output_tokens);
                let response = match self.backend.complete(&request) {
                    Ok(r) => r,
                    Err(err) => {
                        log::warn!("backend failure article={} segment={i} error={err}", article.id);
                        out.backend_failures += 1;
                        continue 'articles;
                    }
                };
                let parsed = parse_entity_list(&response.text);
                self.diagnostics.record(&parsed);
                match parsed {
                    Ok(parsed) => {
                        for entity in parsed.entities {
                            if seen.insert(entity.name.to_lowercase()) {
                                harvest.entities.push(entity);
                            }
                        }
                    }
                    Err(err) => {
                        log::warn!("parse failure article={} segment={i} error={err}", article.id);
                        harvest.parse_failures += 1;
                    }
                }
            }
            out.articles.push(harvest);
        }
        out
    }

    fn apply(&self, state: &mut CrawlState, harvest: KeywordHarvest, graph: &mut SupplyChainGraph) -> StepDelta {
        let stats = &mut state.stats;
        let keyword = harvest.keyword;
        let mut delta = StepDelta {
            keyword: keyword.clone(),
            ..StepDelta::default()
        };
        stats.keywords_processed += 1;
        stats.backend_failures += harvest.backend_failures as u64;
        stats.fetch_shortfall_years += harvest.short_years as u64;
        if harvest.fetch_failed {
            stats.fetch_failures += 1;
        }
        if harvest.fetched < ARTICLE_FLOOR {
            stats.keywords_below_article_floor += 1;
        }
        let mut new_ids = Vec::new();
        for article in harvest.articles {
            if stats.articles_processed >= self.config.max_articles as u64 {
                break;
            }
            stats.articles_processed += 1;
            stats.segments += article.segments as u64;
            stats.parse_failures += article.parse_failures as u64;
            stats.content_tokens += article.content_tokens as u64;
            delta.articles += 1;

            let mut mentioned = BTreeSet::from([keyword.clone()]);
            for entity in &article.entities {
                stats.entities_extracted += 1;
                let known = match graph.canonicalize(&entity.name, self.stopwords) {
                    Ok(known) => known,
                    Err(_) => {
                        stats.invalid_names += 1;
                        continue;
                    }
                };
                if known.is_none() && graph.node_count() >= self.config.max_nodes {
                    stats.entities_dropped_by_budget += 1;
                    continue;
                }
                let upsert = graph
                    .upsert_entity(&entity.name, &entity.description, &article.article_id, self.stopwords)
                    .expect("name normalized above");
                let id = upsert.id.to_string();
                if upsert.created {
                    stats.nodes_created += 1;
                    delta.nodes_created += 1;
                }
                mentioned.insert(id.clone());
                new_ids.push(id);
            }
            let before = graph.edge_count();
            delta.edges_touched += graph
                .add_comention(&article.article_id, &mentioned)
                .expect("all mentioned ids exist");
            let created = graph.edge_count() - before;
            delta.edges_created += created;
            stats.edges_created += created as u64;
        }
        state.visited.insert(keyword.clone());
        for id in new_ids {
            if !state.visited.contains(&id) && state.enqueue(&id) {
                delta.enqueued.push(id);
            }
        }
        log::info!(
            "keyword={keyword:?} articles={} nodes_created={} edges_created={} enqueued={} frontier={}",
            delta.articles,
            delta.nodes_created,
            delta.edges_created,
            delta.enqueued.len(),
            state.frontier.len()
        );
        delta
    }
}

/// Runs a full crawl into `graph`.
pub fn run_crawl(
    config: CrawlConfig,
    source: &dyn ArticleSource,
    backend: &dyn CompletionBackend,
    graph: &mut SupplyChainGraph,
    stopwords: &StopwordLists,
) -> Result<CrawlReport, CrawlError> {
    Crawler::new(config, source, backend, stopwords)?.run(graph)
}
