//! Supply-chain network construction from news text.
//!
//! The pipeline keeps a FIFO queue of entity keywords. For every keyword it
//! fetches news articles, asks a completion backend for the entities mentioned
//! in each article, folds those entities into a canonicalized graph with
//! co-mention edges, and enqueues every entity it has not seen before. A
//! second stage labels each entity against a fixed category taxonomy with one
//! yes/no question per category, and an evaluation harness scores the labels.
//!
//! Modules, bottom-up:
//! - [`corpus`]: articles, corpus files, text and company-name normalization, fetching.
//! - [`llm_protocol`]: prompt templates, token budgeting and segmentation, response parsing.
//! - [`backend`]: the completion interface plus HTTP, scripted, replay and recording backends.
//! - [`graph_store`]: entity nodes, aliases, co-mention edges, merging, sampling, persistence, export.
//! - [`crawler`]: the keyword-queue loop.
//! - [`classification`]: binary-relevance labelling and metrics.

pub mod backend;
pub mod classification;
pub mod corpus;
pub mod crawler;
pub mod graph_store;
pub mod llm_protocol;

pub use backend::{BackendError, BackendRequest, BackendResponse, CompletionBackend};
pub use classification::{CategoryTaxonomy, ConfusionCounts, LabeledExample, Metrics};
pub use corpus::{Article, Corpus, StopwordLists};
pub use crawler::{run_crawl, CrawlConfig, CrawlReport, TerminationReason};
pub use graph_store::{ComentionEdge, EntityNode, SupplyChainGraph};
pub use llm_protocol::{ExtractedEntity, PromptTriple, SegmentPlan};
