//! The supply-chain graph.
//!
//! Nodes are keyed by the normalized canonical name of an entity. Every
//! spelling seen for an entity is kept in its alias set, and the alias table
//! maps each normalized variant to exactly one node. Edges are undirected
//! co-mention links carrying the set of articles that produced them; an
//! edge's weight is the size of that set.

mod export;
mod state;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::io;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize_name, surface_form, NameError, StopwordLists};

pub use export::{export_graph, render_graph, ExportFormat};
pub use state::{load_state, parse_state, save_state, state_to_string, SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error(transparent)]
    Name(#[from] NameError),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("cannot merge node {0:?} into itself")]
    SameNode(String),
    #[error("hop count and node cap must be at least 1")]
    InvalidSample,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("state file parse error: {0}")]
    Parse(String),
    #[error("state schema version {found:?} does not match expected {expected}")]
    SchemaVersionMismatch { found: Option<u64>, expected: u64 },
    #[error("state violates graph invariants: {0}")]
    InvalidState(String),
    #[error("alias file line {line}: {message}")]
    AliasFile { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityNode {
    pub canonical_id: String,
    pub display_name: String,
    pub aliases: BTreeSet<String>,
    /// `(article id, description)` in insertion order.
    pub descriptions: Vec<(String, String)>,
    pub categories: BTreeSet<String>,
}

impl EntityNode {
    fn new(canonical_id: &str, display_name: &str) -> Self {
        Self {
            canonical_id: canonical_id.to_string(),
            display_name: display_name.to_string(),
            aliases: BTreeSet::from([canonical_id.to_string()]),
            descriptions: Vec::new(),
            categories: BTreeSet::new(),
        }
    }

    fn add_description(&mut self, article_id: &str, description: &str) {
        let description = description.trim();
        if description.is_empty() {
            return;
        }
        if !self
            .descriptions
            .iter()
            .any(|(a, d)| a == article_id && d == description)
        {
            self.descriptions
                .push((article_id.to_string(), description.to_string()));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComentionEdge {
    /// Ordered so that `endpoints.0 < endpoints.1`.
    pub endpoints: (String, String),
    pub provenance: BTreeSet<String>,
}

impl ComentionEdge {
    pub fn weight(&self) -> usize {
        self.provenance.len()
    }
}

fn edge_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Upsert<'a> {
    pub id: &'a str,
    pub created: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MergeOutcome {
    pub edges_repointed: usize,
    /// Provenance of the survivor–duplicate edge, dropped as a self-loop.
    pub dropped_provenance: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SupplyChainGraph {
    nodes: BTreeMap<String, EntityNode>,
    edges: BTreeMap<(String, String), ComentionEdge>,
    alias_table: BTreeMap<String, String>,
    /// Operator-supplied variant → canonical mappings; the target may not exist yet.
    redirects: BTreeMap<String, String>,
    adjacency: BTreeMap<String, BTreeSet<String>>,
}

impl SupplyChainGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: &str) -> Option<&EntityNode> {
        self.nodes.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    /// Nodes in canonical id order.
    pub fn nodes(&self) -> impl Iterator<Item = &EntityNode> {
        self.nodes.values()
    }

    /// Edges in endpoint order.
    pub fn edges(&self) -> impl Iterator<Item = &ComentionEdge> {
        self.edges.values()
    }

    pub fn edge(&self, a: &str, b: &str) -> Option<&ComentionEdge> {
        self.edges.get(&edge_key(a, b))
    }

    pub fn alias_table(&self) -> &BTreeMap<String, String> {
        &self.alias_table
    }

    pub fn redirects(&self) -> &BTreeMap<String, String> {
        &self.redirects
    }

    pub fn neighbors(&self, id: &str) -> impl Iterator<Item = &str> {
        self.adjacency.get(id).into_iter().flatten().map(String::as_str)
    }

    pub fn degree(&self, id: &str) -> usize {
        self.adjacency.get(id).map_or(0, BTreeSet::len)
    }

    pub fn set_categories(&mut self, id: &str, categories: BTreeSet<String>) -> Result<(), GraphError> {
        let node = self
            .nodes
            .get_mut(id)
            .ok_or_else(|| GraphError::UnknownNode(id.to_string()))?;
        node.categories = categories;
        Ok(())
    }

    fn resolve_normalized(&self, normalized: &str) -> Option<&str> {
        if let Some(id) = self.alias_table.get(normalized) {
            return Some(id);
        }
        let target = self.redirects.get(normalized)?;
        self.alias_table.get(target).map(String::as_str)
    }

    /// Canonical id for `raw_name`, or `None` for an entity not yet in the graph.
    /// Lookup is exact on the normalized name; there is no fuzzy matching.
    pub fn canonicalize(&self, raw_name: &str, stopwords: &StopwordLists) -> Result<Option<String>, GraphError> {
        let normalized = normalize_name(raw_name, stopwords)?;
        Ok(self.resolve_normalized(&normalized).map(str::to_string))
    }

    /// Records a sighting of `raw_name`: an existing node gains the spelling as
    /// an alias and the description; otherwise a node is created whose
    /// canonical id is the normalized name.
    pub fn upsert_entity(
        &mut self,
        raw_name: &str,
        description: &str,
        article_id: &str,
        stopwords: &StopwordLists,
    ) -> Result<Upsert<'_>, GraphError> {
        let normalized = normalize_name(raw_name, stopwords)?;
        let surface = surface_form(raw_name);
        let (id, created) = match self.resolve_normalized(&normalized) {
            Some(id) => (id.to_string(), false),
            None => {
                let id = self
                    .redirects
                    .get(&normalized)
                    .cloned()
                    .unwrap_or_else(|| normalized.clone());
                self.nodes.insert(id.clone(), EntityNode::new(&id, raw_name.trim()));
                self.alias_table.insert(id.clone(), id.clone());
                (id, true)
            }
        };
        self.alias_table.insert(normalized, id.clone());
        let node = self.nodes.get_mut(&id).expect("resolved node exists");
        node.aliases.insert(surface);
        node.add_description(article_id, description);
        Ok(Upsert {
            id: &node.canonical_id,
            created,
        })
    }

    /// Adds the co-mention clique over `mentioned` for one article and returns
    /// the number of pairs touched. Re-adding the same article is a no-op.
    pub fn add_comention(&mut self, article_id: &str, mentioned: &BTreeSet<String>) -> Result<usize, GraphError> {
        if let Some(missing) = mentioned.iter().find(|id| !self.nodes.contains_key(*id)) {
            return Err(GraphError::UnknownNode(missing.clone()));
        }
        let ids: Vec<&String> = mentioned.iter().collect();
        let mut touched = 0;
        for (i, a) in ids.iter().enumerate() {
            for b in &ids[i + 1..] {
                self.link(a, b, [article_id.to_string()]);
                touched += 1;
            }
        }
        Ok(touched)
    }

    fn link(&mut self, a: &str, b: &str, provenance: impl IntoIterator<Item = String>) {
        debug_assert_ne!(a, b);
        let key = edge_key(a, b);
        self.edges
            .entry(key.clone())
            .or_insert_with(|| ComentionEdge {
                endpoints: key,
                provenance: BTreeSet::new(),
            })
            .provenance
            .extend(provenance);
        self.adjacency.entry(a.to_string()).or_default().insert(b.to_string());
        self.adjacency.entry(b.to_string()).or_default().insert(a.to_string());
    }

    /// Folds `duplicate` into `survivor`: aliases, descriptions and categories
    /// are unioned, edges re-pointed with provenance unioned per pair, and the
    /// survivor–duplicate edge dropped.
    pub fn merge_nodes(&mut self, survivor: &str, duplicate: &str) -> Result<MergeOutcome, GraphError> {
        if survivor == duplicate {
            return Err(GraphError::SameNode(survivor.to_string()));
        }
        for id in [survivor, duplicate] {
            if !self.nodes.contains_key(id) {
                return Err(GraphError::UnknownNode(id.to_string()));
            }
        }
        let dup = self.nodes.remove(duplicate).expect("checked above");
        let mut outcome = MergeOutcome::default();
        let neighbors = self.adjacency.remove(duplicate).unwrap_or_default();
        for other in neighbors {
            let edge = self
                .edges
                .remove(&edge_key(duplicate, &other))
                .expect("adjacency mirrors edges");
            if let Some(adj) = self.adjacency.get_mut(&other) {
                adj.remove(duplicate);
            }
            if other == survivor {
                outcome.dropped_provenance = edge.provenance;
                continue;
            }
            self.link(survivor, &other, edge.provenance);
            outcome.edges_repointed += 1;
        }
        for target in self.alias_table.values_mut() {
            if target == duplicate {
                *target = survivor.to_string();
            }
        }
        let node = self.nodes.get_mut(survivor).expect("checked above");
        node.aliases.extend(dup.aliases);
        for (article, description) in &dup.descriptions {
            node.add_description(article, description);
        }
        node.categories.extend(dup.categories);
        Ok(outcome)
    }

    /// Registers operator aliases (`variant → canonical`) and merges nodes that
    /// already exist under both names. Returns the number of merges.
    pub fn apply_aliases(
        &mut self,
        aliases: &[(String, String)],
        stopwords: &StopwordLists,
    ) -> Result<usize, GraphError> {
        let mut merges = 0;
        for (variant, canonical) in aliases {
            let variant = normalize_name(variant, stopwords)?;
            let canonical = normalize_name(canonical, stopwords)?;
            if variant == canonical {
                continue;
            }
            let target = self.resolve_normalized(&canonical).map(str::to_string);
            let existing = self.alias_table.get(&variant).cloned();
            match (target, existing) {
                (Some(target), Some(dup)) if target != dup => {
                    self.merge_nodes(&target, &dup)?;
                    merges += 1;
                }
                (Some(target), None) => {
                    self.alias_table.insert(variant.clone(), target);
                }
                _ => {}
            }
            self.redirects.insert(variant, canonical);
        }
        Ok(merges)
    }

    fn induced(&self, keep: &BTreeSet<String>) -> Self {
        let mut sub = Self::new();
        for id in keep {
            sub.nodes.insert(id.clone(), self.nodes[id].clone());
        }
        for (key, edge) in &self.edges {
            if keep.contains(&key.0) && keep.contains(&key.1) {
                sub.link(&key.0, &key.1, edge.provenance.iter().cloned());
            }
        }
        sub.alias_table = self
            .alias_table
            .iter()
            .filter(|(_, target)| keep.contains(*target))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        sub
    }

    /// Breadth-first neighborhood of `seed` up to `hops`, always containing the
    /// seed. When it holds more than `max_nodes` nodes, `max_nodes - 1` of the
    /// non-seed nodes are drawn uniformly with `rng_seed`. Induced edges kept.
    pub fn sample_k_hop(&self, seed: &str, hops: usize, max_nodes: usize, rng_seed: u64) -> Result<Self, GraphError> {
        if !self.nodes.contains_key(seed) {
            return Err(GraphError::UnknownNode(seed.to_string()));
        }
        if hops == 0 || max_nodes == 0 {
            return Err(GraphError::InvalidSample);
        }
        let mut depth: BTreeMap<&str, usize> = BTreeMap::from([(seed, 0)]);
        let mut queue = VecDeque::from([seed]);
        while let Some(id) = queue.pop_front() {
            let d = depth[id];
            if d == hops {
                continue;
            }
            for next in self.neighbors(id) {
                if !depth.contains_key(next) {
                    depth.insert(next, d + 1);
                    queue.push_back(next);
                }
            }
        }
        let others: Vec<&str> = depth.keys().copied().filter(|id| *id != seed).collect();
        let mut keep: BTreeSet<String> = BTreeSet::from([seed.to_string()]);
        if others.len() < max_nodes {
            keep.extend(others.iter().map(|s| s.to_string()));
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            let picked = rand::seq::index::sample(&mut rng, others.len(), max_nodes - 1);
            keep.extend(picked.into_iter().map(|i| others[i].to_string()));
        }
        Ok(self.induced(&keep))
    }

    /// Checks every structural invariant; used after loading and in tests.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
        for (id, node) in &self.nodes {
            if &node.canonical_id != id {
                return Err(format!("node keyed {id:?} has canonical id {:?}", node.canonical_id));
            }
            if !node.aliases.contains(id) {
                return Err(format!("node {id:?} does not list its canonical id as an alias"));
            }
            for alias in &node.aliases {
                if let Some(prev) = owner.insert(alias, id) {
                    return Err(format!("alias {alias:?} belongs to both {prev:?} and {id:?}"));
                }
            }
            if self.alias_table.get(id) != Some(id) {
                return Err(format!("alias table does not map {id:?} to itself"));
            }
        }
        for (variant, target) in &self.alias_table {
            if !self.nodes.contains_key(target) {
                return Err(format!("alias {variant:?} points at missing node {target:?}"));
            }
        }
        let mut adjacency: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (key, edge) in &self.edges {
            if key != &edge.endpoints || key.0 >= key.1 {
                return Err(format!("edge {key:?} is not stored in canonical order"));
            }
            for end in [&key.0, &key.1] {
                if !self.nodes.contains_key(end) {
                    return Err(format!("edge {key:?} touches missing node {end:?}"));
                }
            }
            if edge.provenance.is_empty() {
                return Err(format!("edge {key:?} has no provenance"));
            }
            adjacency.entry(key.0.clone()).or_default().insert(key.1.clone());
            adjacency.entry(key.1.clone()).or_default().insert(key.0.clone());
        }
        let mut expected = self.adjacency.clone();
        expected.retain(|_, set| !set.is_empty());
        if adjacency != expected {
            return Err("adjacency index out of sync with edges".into());
        }
        Ok(())
    }

    pub(crate) fn from_parts(
        nodes: Vec<EntityNode>,
        edges: Vec<ComentionEdge>,
        alias_table: BTreeMap<String, String>,
        redirects: BTreeMap<String, String>,
    ) -> Result<Self, String> {
        let mut graph = Self {
            alias_table,
            redirects,
            ..Self::default()
        };
        for node in nodes {
            let id = node.canonical_id.clone();
            if graph.nodes.insert(id.clone(), node).is_some() {
                return Err(format!("duplicate node {id:?}"));
            }
        }
        for edge in edges {
            let (a, b) = edge.endpoints.clone();
            if a == b {
                return Err(format!("self-loop on {a:?}"));
            }
            if graph.edges.contains_key(&edge_key(&a, &b)) {
                return Err(format!("duplicate edge {a:?}-{b:?}"));
            }
            graph.link(&a, &b, edge.provenance);
        }
        graph.check_invariants()?;
        Ok(graph)
    }
}

/// Reads a `variant<TAB>canonical` alias file; `#` lines are comments.
pub fn load_alias_file(path: &Path) -> Result<Vec<(String, String)>, GraphError> {
    let text = fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_alias_file(&text)
}

pub fn parse_alias_file(text: &str) -> Result<Vec<(String, String)>, GraphError> {
    let mut pairs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let (variant, canonical) = line.split_once('\t').ok_or_else(|| GraphError::AliasFile {
            line: idx + 1,
            message: "expected variant<TAB>canonical".into(),
        })?;
        pairs.push((variant.trim().to_string(), canonical.trim().to_string()));
    }
    Ok(pairs)
}
