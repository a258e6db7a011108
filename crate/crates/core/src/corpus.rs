//! News articles, corpus files and text normalization.
//!
//! A corpus file is JSON Lines with exactly the fields of [`Article`]. Company
//! names go through [`normalize_name`] before they are used as graph keys;
//! article text goes through [`preprocess_text`] before it is embedded in a
//! prompt.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEFAULT_COMPANY_SUFFIXES: &str = include_str!("../assets/company_suffixes.txt");
const DEFAULT_GENERAL_STOPWORDS: &str = include_str!("../assets/general_stopwords.txt");

const ARTICLE_FIELDS: [&str; 6] = ["id", "url", "title", "body", "published_year", "retrieved_for_keyword"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NameError {
    #[error("name {0:?} is empty after normalization")]
    EmptyName(String),
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate article id {0:?}")]
    DuplicateId(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FetchError {
    #[error("article source failed: {0}")]
    Source(String),
    #[error("fetching {keyword:?} failed after {attempts} attempts: {last}")]
    RetriesExhausted {
        keyword: String,
        attempts: u32,
        last: String,
    },
}

/// Token lists used by normalization and text statistics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopwordLists {
    pub company_suffixes: BTreeSet<String>,
    pub general_stopwords: BTreeSet<String>,
}

impl Default for StopwordLists {
    fn default() -> Self {
        Self {
            company_suffixes: parse_token_list(DEFAULT_COMPANY_SUFFIXES),
            general_stopwords: parse_token_list(DEFAULT_GENERAL_STOPWORDS),
        }
    }
}

impl StopwordLists {
    pub fn from_files(company_suffixes: &Path, general_stopwords: &Path) -> Result<Self, CorpusError> {
        Ok(Self {
            company_suffixes: parse_token_list(&read_file(company_suffixes)?),
            general_stopwords: parse_token_list(&read_file(general_stopwords)?),
        })
    }

    /// Defaults, with either list replaced by a file when given.
    pub fn with_overrides(
        company_suffixes: Option<&Path>,
        general_stopwords: Option<&Path>,
    ) -> Result<Self, CorpusError> {
        let mut lists = Self::default();
        if let Some(path) = company_suffixes {
            lists.company_suffixes = parse_token_list(&read_file(path)?);
        }
        if let Some(path) = general_stopwords {
            lists.general_stopwords = parse_token_list(&read_file(path)?);
        }
        Ok(lists)
    }

    fn is_suffix(&self, token: &str) -> bool {
        self.company_suffixes.contains(token)
            || self
                .company_suffixes
                .contains(token.trim_end_matches(|c: char| !c.is_alphanumeric()))
    }
}

/// One token per line, lowercased; `#` starts a comment.
pub fn parse_token_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|line| line.split('#').next().unwrap_or("").trim())
        .filter(|token| !token.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn read_file(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn collapse_whitespace(text: &str) -> String {
    text.split(|c: char| c.is_whitespace() || c.is_control())
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

fn trim_non_alphanumeric(text: &str) -> &str {
    text.trim_matches(|c: char| !c.is_alphanumeric())
}

/// Canonical key for a company name: lowercase, outer punctuation trimmed,
/// trailing corporate suffixes stripped right-to-left, whitespace collapsed.
///
/// Internal tokens are never removed, only the final one.
pub fn normalize_name(raw: &str, stopwords: &StopwordLists) -> Result<String, NameError> {
    let mut current = collapse_whitespace(&raw.to_lowercase());
    loop {
        let trimmed = trim_non_alphanumeric(&current);
        let mut tokens: Vec<&str> = trimmed.split(' ').filter(|t| !t.is_empty()).collect();
        while tokens.last().is_some_and(|t| stopwords.is_suffix(t)) {
            tokens.pop();
        }
        let next = trim_non_alphanumeric(&tokens.join(" ")).to_string();
        if next == current {
            break;
        }
        current = next;
    }
    if current.is_empty() {
        return Err(NameError::EmptyName(raw.to_string()));
    }
    Ok(current)
}

/// The surface spelling of a name as recorded in alias sets: lowercase with
/// whitespace collapsed, punctuation and suffixes kept.
pub fn surface_form(raw: &str) -> String {
    collapse_whitespace(&raw.to_lowercase())
}

/// Lowercases and collapses control characters and whitespace runs into
/// single spaces. Sentence punctuation is left untouched.
pub fn preprocess_text(body: &str) -> String {
    collapse_whitespace(&body.to_lowercase())
}

/// Number of whitespace tokens that are not general stopwords.
pub fn content_token_count(text: &str, stopwords: &StopwordLists) -> usize {
    text.split_whitespace()
        .map(|t| trim_non_alphanumeric(t).to_lowercase())
        .filter(|t| !t.is_empty() && !stopwords.general_stopwords.contains(t))
        .count()
}

/// One fetched news item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub url: String,
    pub title: String,
    pub body: String,
    pub published_year: i32,
    pub retrieved_for_keyword: String,
}

impl Article {
    /// Title and body, each preprocessed, separated by a blank line.
    pub fn prompt_text(&self) -> String {
        let title = preprocess_text(&self.title);
        let body = preprocess_text(&self.body);
        if title.is_empty() {
            body
        } else {
            format!("{title}\n\n{body}")
        }
    }
}

/// Immutable, insertion-ordered collection of articles.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    articles: Vec<Article>,
    keyword_index: BTreeMap<String, Vec<usize>>,
}

impl Corpus {
    pub fn from_articles(articles: Vec<Article>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        let mut keyword_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (pos, article) in articles.iter().enumerate() {
            if !seen.insert(article.id.clone()) {
                return Err(CorpusError::DuplicateId(article.id.clone()));
            }
            keyword_index
                .entry(article.retrieved_for_keyword.clone())
                .or_default()
                .push(pos);
        }
        Ok(Self {
            articles,
            keyword_index,
        })
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn articles(&self) -> &[Article] {
        &self.articles
    }

    pub fn get(&self, id: &str) -> Option<&Article> {
        self.articles.iter().find(|a| a.id == id)
    }

    pub fn keywords(&self) -> impl Iterator<Item = &str> {
        self.keyword_index.keys().map(String::as_str)
    }

    /// Articles retrieved for `keyword`, in corpus order.
    pub fn by_keyword<'a>(&'a self, keyword: &str) -> impl Iterator<Item = &'a Article> + 'a {
        self.keyword_index
            .get(keyword)
            .map(Vec::as_slice)
            .unwrap_or(&[])
            .iter()
            .map(move |&pos| &self.articles[pos])
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for article in &self.articles {
            serde_json::to_writer(&mut out, article)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

/// Loads a JSON Lines corpus file. In strict mode unknown fields are rejected.
pub fn load_corpus(path: &Path, strict: bool) -> Result<Corpus, CorpusError> {
    parse_corpus(&read_file(path)?, strict)
}

pub fn parse_corpus(text: &str, strict: bool) -> Result<Corpus, CorpusError> {
    let mut articles = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| CorpusError::Parse { line: line_no, message };
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let object = value
            .as_object()
            .ok_or_else(|| parse_err("record is not a JSON object".into()))?;
        if strict {
            if let Some(unknown) = object.keys().find(|k| !ARTICLE_FIELDS.contains(&k.as_str())) {
                return Err(parse_err(format!("unknown field {unknown:?}")));
            }
        }
        let article: Article = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
        if preprocess_text(&article.body).is_empty() {
            return Err(parse_err(format!("article {:?} has an empty body", article.id)));
        }
        if article.id.is_empty() {
            return Err(parse_err("article id is empty".into()));
        }
        articles.push(article);
    }
    Corpus::from_articles(articles)
}

/// Anything that can return news articles for a keyword and year.
pub trait ArticleSource: Send + Sync {
    fn fetch(&self, keyword: &str, year: i32, limit: usize) -> Result<Vec<Article>, FetchError>;
}

/// Serves a loaded corpus through its keyword index.
#[derive(Debug, Clone)]
pub struct CorpusSource {
    corpus: Corpus,
}

impl CorpusSource {
    pub fn new(corpus: Corpus) -> Self {
        Self { corpus }
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }
}

impl ArticleSource for CorpusSource {
    fn fetch(&self, keyword: &str, year: i32, limit: usize) -> Result<Vec<Article>, FetchError> {
        Ok(self
            .corpus
            .by_keyword(keyword)
            .filter(|a| a.published_year == year)
            .take(limit)
            .cloned()
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchPolicy {
    /// Inclusive.
    pub year_range: (i32, i32),
    pub per_year_min: usize,
    pub retries: u32,
    pub retry_delay: Duration,
}

impl Default for FetchPolicy {
    fn default() -> Self {
        Self {
            year_range: (2018, 2023),
            per_year_min: 10,
            retries: 2,
            retry_delay: Duration::from_millis(200),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FetchBatch {
    pub articles: Vec<Article>,
    /// Years that returned fewer than `per_year_min` articles.
    pub short_years: Vec<i32>,
}

/// Collects up to `per_year_min` articles for every year in the policy range.
///
/// A year that comes back short is logged and recorded, not treated as an
/// error. A source failure is retried `retries` times.
pub fn fetch_articles(
    keyword: &str,
    policy: &FetchPolicy,
    source: &dyn ArticleSource,
) -> Result<FetchBatch, FetchError> {
    let mut batch = FetchBatch::default();
    let (start, end) = policy.year_range;
    for year in start..=end {
        let mut attempt = 0;
        let articles = loop {
            attempt += 1;
            match source.fetch(keyword, year, policy.per_year_min) {
                Ok(articles) => break articles,
                Err(err) if attempt > policy.retries => {
                    return Err(FetchError::RetriesExhausted {
                        keyword: keyword.to_string(),
                        attempts: attempt,
                        last: err.to_string(),
                    })
                }
                Err(err) => {
                    log::debug!("fetch retry keyword={keyword} year={year} attempt={attempt} error={err}");
                    thread::sleep(policy.retry_delay * attempt);
                }
            }
        };
        if articles.len() < policy.per_year_min {
            log::debug!("fetch shortfall keyword={keyword} year={year} got={}", articles.len());
            batch.short_years.push(year);
        }
        batch
            .articles
            .extend(articles.into_iter().take(policy.per_year_min).map(|mut a| {
                a.retrieved_for_keyword = keyword.to_string();
                a
            }));
    }
    if !batch.short_years.is_empty() {
        log::warn!(
            "fetch shortfall keyword={keyword} short_years={:?} wanted_per_year={} got={}",
            batch.short_years,
            policy.per_year_min,
            batch.articles.len()
        );
    }
    Ok(batch)
}
