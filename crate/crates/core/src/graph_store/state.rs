use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ComentionEdge, EntityNode, GraphError, SupplyChainGraph};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct EdgeRecord {
    source: String,
    target: String,
    provenance: BTreeSet<String>,
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    schema_version: u64,
    nodes: Vec<EntityNode>,
    edges: Vec<EdgeRecord>,
    alias_table: BTreeMap<String, String>,
    #[serde(default)]
    redirects: BTreeMap<String, String>,
}

pub fn state_to_string(graph: &SupplyChainGraph) -> String {
    let state = StateFile {
        schema_version: SCHEMA_VERSION,
        nodes: graph.nodes().cloned().collect(),
        edges: graph
            .edges()
            .map(|e| EdgeRecord {
                source: e.endpoints.0.clone(),
                target: e.endpoints.1.clone(),
                provenance: e.provenance.clone(),
            })
            .collect(),
        alias_table: graph.alias_table().clone(),
        redirects: graph.redirects().clone(),
    };
    let mut text = serde_json::to_string_pretty(&state).expect("state serializes");
    text.push('\n');
    text
}

pub fn save_state(graph: &SupplyChainGraph, path: &Path) -> Result<(), GraphError> {
    fs::write(path, state_to_string(graph)).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn parse_state(text: &str) -> Result<SupplyChainGraph, GraphError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))?;
    let found = value.get("schema_version").and_then(serde_json::Value::as_u64);
    if found != Some(SCHEMA_VERSION) {
        return Err(GraphError::SchemaVersionMismatch {
            found,
            expected: SCHEMA_VERSION,
        });
    }
    let state: StateFile = serde_json::from_value(value).map_err(|e| GraphError::Parse(e.to_string()))?;
    let edges = state
        .edges
        .into_iter()
        .map(|e| ComentionEdge {
            endpoints: (e.source, e.target),
            provenance: e.provenance,
        })
        .collect();
    SupplyChainGraph::from_parts(state.nodes, edges, state.alias_table, state.redirects)
        .map_err(GraphError::InvalidState)
}

pub fn load_state(path: &Path) -> Result<SupplyChainGraph, GraphError> {
    let text = fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_state(&text)
}
