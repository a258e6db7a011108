//! Binary-relevance entity classification and the evaluation harness.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::thread;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, BackendRequest, CompletionBackend, Gazetteer};
use crate::corpus::{normalize_name, StopwordLists};
use crate::graph_store::{EntityNode, SupplyChainGraph};
use crate::llm_protocol::{
    build_classification_prompt_with, parse_yes_no, PromptOptions, ProtocolError, TokenEstimator, WhitespaceEstimator,
};

pub const DEFAULT_CATEGORIES: [&str; 9] = [
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

#[derive(Debug, Error)]
pub enum ClassificationError {
    #[error("entity {0:?} has no descriptions to classify from")]
    NoDescription(String),
    #[error("backend failed for entity {entity:?}, category {category:?}: {source}")]
    Backend {
        entity: String,
        category: String,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Prompt(#[from] ProtocolError),
    #[error("predictions ({predictions}) and golds ({golds}) differ in length")]
    LengthMismatch { predictions: usize, golds: usize },
    #[error("nothing to evaluate")]
    EmptyInput,
    #[error("no prediction for entity {entity_id:?}, category {category:?}")]
    MissingPrediction { entity_id: String, category: String },
    #[error("category {0:?} is not in the taxonomy")]
    UnknownCategory(String),
    #[error("category {category:?} has {positives} positives and {negatives} negatives; both are required")]
    DegenerateClass {
        category: String,
        positives: usize,
        negatives: usize,
    },
    #[error("invalid taxonomy: {0}")]
    Taxonomy(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryTaxonomy {
    categories: Vec<String>,
}

impl Default for CategoryTaxonomy {
    fn default() -> Self {
        Self {
            categories: DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl CategoryTaxonomy {
    pub fn from_labels<I, S>(labels: I) -> Result<Self, ClassificationError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = BTreeSet::new();
        let mut categories = Vec::new();
        for label in labels {
            let label: String = label.into();
            let trimmed = label.trim();
            if trimmed.is_empty() || trimmed != trimmed.to_lowercase() {
                return Err(ClassificationError::Taxonomy(format!(
                    "label {label:?} must be non-empty and lowercase"
                )));
            }
            if !seen.insert(trimmed.to_string()) {
                return Err(ClassificationError::Taxonomy(format!("duplicate label {trimmed:?}")));
            }
            categories.push(trimmed.to_string());
        }
        if categories.is_empty() {
            return Err(ClassificationError::Taxonomy("no labels".into()));
        }
        Ok(Self { categories })
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.categories.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.categories.iter().any(|c| c == label)
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyOptions {
    /// Token budget for the concatenated description.
    pub description_budget: usize,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Extra attempts after an answer that is neither yes nor no.
    pub ambiguity_retries: u32,
    pub parallelism: usize,
    pub reasoning_preamble: bool,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            description_budget: 1024,
            temperature: 0.0,
            max_output_tokens: 16,
            ambiguity_retries: 1,
            parallelism: 1,
            reasoning_preamble: false,
        }
    }
}

/// Stored descriptions joined newest first and cut to `budget` tokens.
pub fn entity_description(node: &EntityNode, budget: usize, estimator: &dyn TokenEstimator) -> String {
    let mut out = String::new();
    for word in node.descriptions.iter().rev().flat_map(|(_, d)| d.split_whitespace()) {
        let candidate = if out.is_empty() {
            word.to_string()
        } else {
            format!("{out} {word}")
        };
        if estimator.estimate(&candidate) > budget {
            break;
        }
        out = candidate;
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityClassification {
    pub entity_id: String,
    /// Categories answered "Yes".
    pub categories: BTreeSet<String>,
    /// Categories answered "No".
    pub rejected: BTreeSet<String>,
    /// Categories still ambiguous after retries, in taxonomy order.
    pub undetermined: Vec<String>,
    pub requests: usize,
}

impl EntityClassification {
    pub fn prediction(&self, category: &str) -> Option<bool> {
        if self.categories.contains(category) {
            Some(true)
        } else if self.rejected.contains(category) {
            Some(false)
        } else {
            None
        }
    }
}

/// Asks one yes/no question per taxonomy label.
pub fn classify_entity(
    node: &EntityNode,
    taxonomy: &CategoryTaxonomy,
    backend: &dyn CompletionBackend,
    options: &ClassifyOptions,
) -> Result<EntityClassification, ClassificationError> {
    let description = entity_description(node, options.description_budget, &WhitespaceEstimator::default());
    if description.is_empty() {
        return Err(ClassificationError::NoDescription(node.canonical_id.clone()));
    }
    let prompt_options = PromptOptions {
        reasoning_preamble: options.reasoning_preamble,
    };
    let mut result = EntityClassification {
        entity_id: node.canonical_id.clone(),
        ..Default::default()
    };
    for category in taxonomy.labels() {
        let prompt = build_classification_prompt_with(&node.display_name, &description, category, prompt_options)?;
        let mut answer = None;
        for attempt in 0..=options.ambiguity_retries {
            let request = BackendRequest::new(
                prompt.clone(),
                format!("classify:{}:{category}:{attempt}", node.canonical_id),
            )
            .with_temperature(if attempt == 0 { options.temperature } else { 0.0 })
            .with_max_output_tokens(options.max_output_tokens);
            result.requests += 1;
            let response = backend
                .complete(&request)
                .map_err(|source| ClassificationError::Backend {
                    entity: node.canonical_id.clone(),
                    category: category.to_string(),
                    source,
                })?;
            match parse_yes_no(&response.text) {
                Ok(yes) => {
                    answer = Some(yes);
                    break;
                }
                Err(err) => log::warn!(
                    "ambiguous answer entity={:?} category={category:?} attempt={attempt} error={err}",
                    node.canonical_id
                ),
            }
        }
        match answer {
            Some(true) => {
                result.categories.insert(category.to_string());
            }
            Some(false) => {
                result.rejected.insert(category.to_string());
            }
            None => result.undetermined.push(category.to_string()),
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndeterminedPair {
    pub entity_id: String,
    pub category: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub entities_classified: usize,
    pub entities_skipped_no_description: usize,
    /// Classified entities that received no "Yes".
    pub entities_unlabeled: usize,
    pub requests: usize,
    pub undetermined: Vec<UndeterminedPair>,
    pub results: Vec<EntityClassification>,
}

impl ClassificationReport {
    pub fn predictions(&self) -> Vec<Prediction> {
        let mut out = Vec::new();
        for result in &self.results {
            for category in result
                .categories
                .iter()
                .chain(&result.rejected)
                .chain(&result.undetermined)
            {
                out.push(Prediction {
                    entity_id: result.entity_id.clone(),
                    category: category.clone(),
                    prediction: result.prediction(category),
                });
            }
        }
        out.sort_by(|a, b| (&a.entity_id, &a.category).cmp(&(&b.entity_id, &b.category)));
        out
    }
}

/// Classifies every node that has a description and writes the "Yes" sets
/// back into the graph. Nodes are processed in id order; with
/// `options.parallelism > 1` they are split across scoped threads and the
/// results reassembled in the same order.
pub fn classify_graph(
    graph: &mut SupplyChainGraph,
    taxonomy: &CategoryTaxonomy,
    backend: &dyn CompletionBackend,
    options: &ClassifyOptions,
) -> Result<ClassificationReport, ClassificationError> {
    let mut report = ClassificationReport::default();
    let nodes: Vec<&EntityNode> = graph
        .nodes()
        .filter(|n| n.descriptions.iter().any(|(_, d)| !d.trim().is_empty()))
        .collect();
    report.entities_skipped_no_description = graph.node_count() - nodes.len();
    let workers = options.parallelism.max(1).min(nodes.len().max(1));
    let results: Vec<Result<EntityClassification, ClassificationError>> = if workers <= 1 {
        nodes
            .iter()
            .map(|n| classify_entity(n, taxonomy, backend, options))
            .collect()
    } else {
        let chunk = nodes.len().div_ceil(workers);
        thread::scope(|scope| {
            let handles: Vec<_> = nodes
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || {
                        part.iter()
                            .map(|n| classify_entity(n, taxonomy, backend, options))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("classification thread panicked"))
                .collect()
        })
    };
    for result in results {
        let result = result?;
        report.requests += result.requests;
        if result.categories.is_empty() {
            report.entities_unlabeled += 1;
        }
        for category in &result.undetermined {
            report.undetermined.push(UndeterminedPair {
                entity_id: result.entity_id.clone(),
                category: category.clone(),
            });
        }
        report.results.push(result);
    }
    report.entities_classified = report.results.len();
    for result in &report.results {
        graph
            .set_categories(&result.entity_id, result.categories.clone())
            .expect("classified node exists");
    }
    log::info!(
        "classification done classified={} skipped={} unlabeled={} undetermined={} requests={}",
        report.entities_classified,
        report.entities_skipped_no_description,
        report.entities_unlabeled,
        report.undetermined.len(),
        report.requests
    );
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub entity_id: String,
    pub category: String,
    pub gold: bool,
    pub description: String,
}

/// One model answer; `None` marks an undetermined pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub entity_id: String,
    pub category: String,
    pub prediction: Option<bool>,
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, ClassificationError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| ClassificationError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn read(path: &Path) -> Result<String, ClassificationError> {
    fs::read_to_string(path).map_err(|source| ClassificationError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn parse_dataset(text: &str, taxonomy: &CategoryTaxonomy) -> Result<Vec<LabeledExample>, ClassificationError> {
    let examples: Vec<LabeledExample> = parse_jsonl(text)?;
    if let Some(bad) = examples.iter().find(|e| !taxonomy.contains(&e.category)) {
        return Err(ClassificationError::UnknownCategory(bad.category.clone()));
    }
    Ok(examples)
}

pub fn load_dataset(path: &Path, taxonomy: &CategoryTaxonomy) -> Result<Vec<LabeledExample>, ClassificationError> {
    parse_dataset(&read(path)?, taxonomy)
}

pub fn parse_predictions(text: &str) -> Result<Vec<Prediction>, ClassificationError> {
    parse_jsonl(text)
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>, ClassificationError> {
    parse_predictions(&read(path)?)
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).expect("record serializes") + "\n")
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn record(&mut self, prediction: bool, gold: bool) {
        match (prediction, gold) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    pub fn metrics(&self) -> Metrics {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        Metrics {
            accuracy: ratio(self.tp + self.tn, self.total()),
            precision: ratio(self.tp, self.tp + self.fp),
            recall: ratio(self.tp, self.tp + self.fn_),
            f1: ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    pub fn mean(items: &[Metrics]) -> Metrics {
        if items.is_empty() {
            return Metrics::default();
        }
        let n = items.len() as f64;
        let sum = |f: fn(&Metrics) -> f64| items.iter().map(f).sum::<f64>() / n;
        Metrics {
            accuracy: sum(|m| m.accuracy),
            precision: sum(|m| m.precision),
            recall: sum(|m| m.recall),
            f1: sum(|m| m.f1),
        }
    }
}

pub fn evaluate_binary(
    predictions: &[bool],
    golds: &[bool],
) -> Result<(ConfusionCounts, Metrics), ClassificationError> {
    if predictions.len() != golds.len() {
        return Err(ClassificationError::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    if predictions.is_empty() {
        return Err(ClassificationError::EmptyInput);
    }
    let mut counts = ConfusionCounts::default();
    for (&p, &g) in predictions.iter().zip(golds) {
        counts.record(p, g);
    }
    Ok((counts, counts.metrics()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryResult {
    pub category: String,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    pub undetermined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledResult {
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub per_category: Vec<CategoryResult>,
    /// Unweighted mean over categories with at least one determined example.
    #[serde(rename = "macro")]
    pub macro_avg: Metrics,
    pub micro: PooledResult,
    pub undetermined: usize,
    pub examples: usize,
}

/// Scores `predictions` against `dataset`, per category in taxonomy order.
pub fn evaluate_all(
    dataset: &[LabeledExample],
    predictions: &[Prediction],
    taxonomy: &CategoryTaxonomy,
) -> Result<EvaluationReport, ClassificationError> {
    if dataset.is_empty() {
        return Err(ClassificationError::EmptyInput);
    }
    let lookup: BTreeMap<(&str, &str), Option<bool>> = predictions
        .iter()
        .map(|p| ((p.entity_id.as_str(), p.category.as_str()), p.prediction))
        .collect();
    let mut per: BTreeMap<usize, (ConfusionCounts, usize)> = BTreeMap::new();
    for example in dataset {
        let pos = taxonomy
            .position(&example.category)
            .ok_or_else(|| ClassificationError::UnknownCategory(example.category.clone()))?;
        let predicted = lookup
            .get(&(example.entity_id.as_str(), example.category.as_str()))
            .ok_or_else(|| ClassificationError::MissingPrediction {
                entity_id: example.entity_id.clone(),
                category: example.category.clone(),
            })?;
        let slot = per.entry(pos).or_default();
        match predicted {
            Some(p) => slot.0.record(*p, example.gold),
            None => slot.1 += 1,
        }
    }
    let labels: Vec<&str> = taxonomy.labels().collect();
    let mut pooled = ConfusionCounts::default();
    let mut per_category = Vec::new();
    for (pos, (counts, undetermined)) in per {
        pooled.add(&counts);
        per_category.push(CategoryResult {
            category: labels[pos].to_string(),
            counts,
            metrics: counts.metrics(),
            undetermined,
        });
    }
    let scored: Vec<Metrics> = per_category
        .iter()
        .filter(|c| c.counts.total() > 0)
        .map(|c| c.metrics)
        .collect();
    Ok(EvaluationReport {
        macro_avg: Metrics::mean(&scored),
        micro: PooledResult {
            counts: pooled,
            metrics: pooled.metrics(),
        },
        undetermined: per_category.iter().map(|c| c.undetermined).sum(),
        examples: dataset.len(),
        per_category,
    })
}

/// Keeps every example of the minority class for `category` and a seeded
/// uniform sample of the same size from the majority class, in input order.
pub fn downsample_balanced(
    dataset: &[LabeledExample],
    category: &str,
    rng_seed: u64,
) -> Result<Vec<LabeledExample>, ClassificationError> {
    let (positives, negatives): (Vec<usize>, Vec<usize>) = dataset
        .iter()
        .enumerate()
        .filter(|(_, e)| e.category == category)
        .map(|(i, _)| i)
        .partition(|&i| dataset[i].gold);
    if positives.is_empty() || negatives.is_empty() {
        return Err(ClassificationError::DegenerateClass {
            category: category.to_string(),
            positives: positives.len(),
            negatives: negatives.len(),
        });
    }
    let (minority, majority) = if positives.len() <= negatives.len() {
        (positives, negatives)
    } else {
        (negatives, positives)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut keep: BTreeSet<usize> = minority.iter().copied().collect();
    keep.extend(
        index::sample(&mut rng, majority.len(), minority.len())
            .into_iter()
            .map(|i| majority[i]),
    );
    Ok(keep.into_iter().map(|i| dataset[i].clone()).collect())
}

/// Gold labels for every described node the gazetteer knows, one example per
/// (node, category) pair.
pub fn gold_from_gazetteer(
    graph: &SupplyChainGraph,
    gazetteer: &Gazetteer,
    taxonomy: &CategoryTaxonomy,
    stopwords: &StopwordLists,
    description_budget: usize,
) -> Vec<LabeledExample> {
    let estimator = WhitespaceEstimator::default();
    let mut out = Vec::new();
    for node in graph.nodes() {
        let Ok(key) = normalize_name(&node.canonical_id, stopwords) else {
            continue;
        };
        let Some(entry) = gazetteer.get(&key) else {
            continue;
        };
        let description = entity_description(node, description_budget, &estimator);
        if description.is_empty() {
            continue;
        }
        for category in taxonomy.labels() {
            out.push(LabeledExample {
                entity_id: node.canonical_id.clone(),
                category: category.to_string(),
                gold: entry.categories.contains(category),
                description: description.clone(),
            });
        }
    }
    out
}

/// Predictions read off node categories, for graphs classified earlier.
pub fn predictions_from_graph(graph: &SupplyChainGraph, taxonomy: &CategoryTaxonomy) -> Vec<Prediction> {
    graph
        .nodes()
        .flat_map(|node| {
            taxonomy.labels().map(move |category| Prediction {
                entity_id: node.canonical_id.clone(),
                category: category.to_string(),
                prediction: Some(node.categories.contains(category)),
            })
        })
        .collect()
}
