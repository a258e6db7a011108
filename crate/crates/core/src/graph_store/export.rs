use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use serde_json::json;

use super::{GraphError, SupplyChainGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Graphml,
    Dot,
    Jsonl,
}

impl ExportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Graphml => "graphml",
            Self::Dot => "dot",
            Self::Jsonl => "jsonl",
        }
    }

    pub const ALL: [ExportFormat; 3] = [Self::Graphml, Self::Dot, Self::Jsonl];
}

impl FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "graphml" => Ok(Self::Graphml),
            "dot" => Ok(Self::Dot),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(format!(
                "unknown export format {other:?} (expected graphml, dot or jsonl)"
            )),
        }
    }
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn dot_quote(s: &str) -> String {
    format!(
        "\"{}\"",
        s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n")
    )
}

fn joined_categories(categories: &std::collections::BTreeSet<String>) -> String {
    categories.iter().map(String::as_str).collect::<Vec<_>>().join(";")
}

/// Renders `graph` with nodes sorted by id and edges by endpoint pair, so the
/// output is byte-for-byte reproducible.
pub fn render_graph(graph: &SupplyChainGraph, format: ExportFormat) -> String {
    let mut out = String::new();
    match format {
        ExportFormat::Graphml => {
            out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
            out.push_str("<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n");
            out.push_str("  <key id=\"display_name\" for=\"node\" attr.name=\"display_name\" attr.type=\"string\"/>\n");
            out.push_str("  <key id=\"categories\" for=\"node\" attr.name=\"categories\" attr.type=\"string\"/>\n");
            out.push_str("  <key id=\"weight\" for=\"edge\" attr.name=\"weight\" attr.type=\"int\"/>\n");
            out.push_str("  <graph id=\"supply_chain\" edgedefault=\"undirected\">\n");
            for node in graph.nodes() {
                let _ = writeln!(
                    out,
                    "    <node id=\"{}\"><data key=\"display_name\">{}</data><data key=\"categories\">{}</data></node>",
                    xml_escape(&node.canonical_id),
                    xml_escape(&node.display_name),
                    xml_escape(&joined_categories(&node.categories)),
                );
            }
            for edge in graph.edges() {
                let _ = writeln!(
                    out,
                    "    <edge source=\"{}\" target=\"{}\"><data key=\"weight\">{}</data></edge>",
                    xml_escape(&edge.endpoints.0),
                    xml_escape(&edge.endpoints.1),
                    edge.weight(),
                );
            }
            out.push_str("  </graph>\n</graphml>\n");
        }
        ExportFormat::Dot => {
            out.push_str("graph supply_chain {\n");
            for node in graph.nodes() {
                let _ = writeln!(
                    out,
                    "  {} [display_name={}, categories={}];",
                    dot_quote(&node.canonical_id),
                    dot_quote(&node.display_name),
                    dot_quote(&joined_categories(&node.categories)),
                );
            }
            for edge in graph.edges() {
                let _ = writeln!(
                    out,
                    "  {} -- {} [weight={}];",
                    dot_quote(&edge.endpoints.0),
                    dot_quote(&edge.endpoints.1),
                    edge.weight(),
                );
            }
            out.push_str("}\n");
        }
        ExportFormat::Jsonl => {
            for node in graph.nodes() {
                let line = json!({
                    "kind": "node",
                    "id": node.canonical_id,
                    "display_name": node.display_name,
                    "categories": node.categories,
                    "aliases": node.aliases,
                });
                let _ = writeln!(out, "{line}");
            }
            for edge in graph.edges() {
                let line = json!({
                    "kind": "edge",
                    "source": edge.endpoints.0,
                    "target": edge.endpoints.1,
                    "weight": edge.weight(),
                });
                let _ = writeln!(out, "{line}");
            }
        }
    }
    out
}

pub fn export_graph(graph: &SupplyChainGraph, format: ExportFormat, path: &Path) -> Result<(), GraphError> {
    fs::write(path, render_graph(graph, format)).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}
