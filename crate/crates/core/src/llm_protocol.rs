//! Prompt rendering, token budgeting and response parsing.
//!
//! Two fixed templates are shipped as data assets: one asks for the entities
//! mentioned in a news article as a numbered `name: description` list, the
//! other asks a yes/no category question about one entity. Everything here is
//! a pure function of its inputs.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EXTRACTION_TEMPLATE: &str = include_str!("../assets/templates/extraction.txt");
pub const CLASSIFICATION_TEMPLATE: &str = include_str!("../assets/templates/classification.txt");

/// Appended to the question prompt when the reasoning toggle is on.
pub const REASONING_PREAMBLE: &str = "Think step by step before answering.";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("prompt input {0} is empty")]
    EmptyInput(&'static str),
    #[error("malformed template: {0}")]
    MalformedTemplate(String),
    #[error("template placeholder {{{0}}} has no value")]
    UnresolvedPlaceholder(String),
    #[error("token budget must be at least 1")]
    InvalidBudget,
    #[error("unbreakable span of {tokens} tokens exceeds budget {budget}")]
    OversizeAtom { tokens: usize, budget: usize },
    #[error("no entities recovered from a {lines}-line response")]
    EmptyParse { lines: usize },
    #[error("answer is neither yes nor no: {0:?}")]
    AmbiguousAnswer(String),
}

/// The system / user / question structure shared by both prompts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptTriple {
    pub system: String,
    pub user: String,
    pub question: String,
}

/// A template split into its three parts, each possibly containing
/// `{placeholder}` markers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub system: String,
    pub user: String,
    pub question: String,
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").unwrap())
}

impl PromptTemplate {
    /// Parses the `[system]` / `[user]` / `[question]` asset layout.
    pub fn parse(text: &str) -> Result<Self, ProtocolError> {
        let mut sections: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        let mut current: Option<&str> = None;
        for line in text.lines() {
            match line.trim() {
                "[system]" => current = Some("system"),
                "[user]" => current = Some("user"),
                "[question]" => current = Some("question"),
                _ => match current {
                    Some(name) => sections.entry(name).or_default().push(line),
                    None if line.trim().is_empty() => {}
                    None => {
                        return Err(ProtocolError::MalformedTemplate(format!(
                            "text before first section: {line:?}"
                        )))
                    }
                },
            }
        }
        let mut take = |name: &str| -> Result<String, ProtocolError> {
            let body = sections
                .remove(name)
                .map(|lines| lines.join("\n").trim().to_string())
                .unwrap_or_default();
            if body.is_empty() {
                return Err(ProtocolError::MalformedTemplate(format!("missing [{name}] section")));
            }
            Ok(body)
        };
        Ok(Self {
            system: take("system")?,
            user: take("user")?,
            question: take("question")?,
        })
    }

    pub fn extraction() -> &'static Self {
        static T: OnceLock<PromptTemplate> = OnceLock::new();
        T.get_or_init(|| Self::parse(EXTRACTION_TEMPLATE).expect("bundled extraction template"))
    }

    pub fn classification() -> &'static Self {
        static T: OnceLock<PromptTemplate> = OnceLock::new();
        T.get_or_init(|| Self::parse(CLASSIFICATION_TEMPLATE).expect("bundled classification template"))
    }

    pub fn placeholders(&self) -> Vec<String> {
        let mut names = Vec::new();
        for part in [&self.system, &self.user, &self.question] {
            for cap in placeholder_re().captures_iter(part) {
                let name = cap[1].to_string();
                if !names.contains(&name) {
                    names.push(name);
                }
            }
        }
        names
    }

    /// Substitutes every placeholder in a single pass, so braces inside the
    /// substituted values are never re-read as markers.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<PromptTriple, ProtocolError> {
        for name in self.placeholders() {
            if !vars.iter().any(|(k, _)| *k == name) {
                return Err(ProtocolError::UnresolvedPlaceholder(name));
            }
        }
        let fill = |part: &str| {
            placeholder_re()
                .replace_all(part, |cap: &regex::Captures<'_>| {
                    vars.iter()
                        .find(|(k, _)| *k == &cap[1])
                        .map(|(_, v)| v.to_string())
                        .unwrap_or_default()
                })
                .into_owned()
        };
        Ok(PromptTriple {
            system: fill(&self.system),
            user: fill(&self.user),
            question: fill(&self.question),
        })
    }

    /// Inverse of [`render`](Self::render): recovers placeholder values from a
    /// rendered prompt, or `None` when the prompt was not produced by this
    /// template. A trailing reasoning preamble on the question is ignored.
    pub fn match_rendered(&self, prompt: &PromptTriple) -> Option<BTreeMap<String, String>> {
        let question = prompt
            .question
            .strip_suffix(REASONING_PREAMBLE)
            .map(str::trim_end)
            .unwrap_or(&prompt.question);
        let mut values = BTreeMap::new();
        for (template, rendered) in [
            (&self.system, prompt.system.as_str()),
            (&self.user, prompt.user.as_str()),
            (&self.question, question),
        ] {
            let mut pattern = String::from("(?s)^");
            let mut names = Vec::new();
            let mut last = 0;
            for cap in placeholder_re().captures_iter(template) {
                let whole = cap.get(0).unwrap();
                pattern.push_str(&regex::escape(&template[last..whole.start()]));
                pattern.push_str("(.*?)");
                names.push(cap[1].to_string());
                last = whole.end();
            }
            pattern.push_str(&regex::escape(&template[last..]));
            pattern.push('$');
            let re = Regex::new(&pattern).ok()?;
            let caps = re.captures(rendered)?;
            for (i, name) in names.into_iter().enumerate() {
                let value = caps.get(i + 1)?.as_str().to_string();
                match values.get(&name) {
                    Some(existing) if existing != &value => return None,
                    _ => {
                        values.insert(name, value);
                    }
                }
            }
        }
        Some(values)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOptions {
    pub reasoning_preamble: bool,
}

fn with_options(mut prompt: PromptTriple, options: PromptOptions) -> PromptTriple {
    if options.reasoning_preamble {
        prompt.question = format!("{} {}", prompt.question, REASONING_PREAMBLE);
    }
    prompt
}

pub fn build_extraction_prompt(news: &str, industry: &str) -> Result<PromptTriple, ProtocolError> {
    build_extraction_prompt_with(news, industry, PromptOptions::default())
}

pub fn build_extraction_prompt_with(
    news: &str,
    industry: &str,
    options: PromptOptions,
) -> Result<PromptTriple, ProtocolError> {
    if news.trim().is_empty() {
        return Err(ProtocolError::EmptyInput("news"));
    }
    if industry.trim().is_empty() {
        return Err(ProtocolError::EmptyInput("industry"));
    }
    let prompt = PromptTemplate::extraction().render(&[("news", news), ("industry", industry)])?;
    Ok(with_options(prompt, options))
}

pub fn build_classification_prompt(
    company_name: &str,
    company_description: &str,
    company_category: &str,
) -> Result<PromptTriple, ProtocolError> {
    build_classification_prompt_with(
        company_name,
        company_description,
        company_category,
        PromptOptions::default(),
    )
}

pub fn build_classification_prompt_with(
    company_name: &str,
    company_description: &str,
    company_category: &str,
    options: PromptOptions,
) -> Result<PromptTriple, ProtocolError> {
    for (label, value) in [
        ("company_name", company_name),
        ("company_description", company_description),
        ("company_category", company_category),
    ] {
        if value.trim().is_empty() {
            return Err(ProtocolError::EmptyInput(label));
        }
    }
    let prompt = PromptTemplate::classification().render(&[
        ("company_name", company_name),
        ("company_description", company_description),
        ("company_category", company_category),
    ])?;
    Ok(with_options(prompt, options))
}

/// News text embedded in an extraction prompt.
pub fn extraction_news(prompt: &PromptTriple) -> Option<String> {
    PromptTemplate::extraction()
        .match_rendered(prompt)
        .and_then(|mut v| v.remove("news"))
}

/// `(company_name, company_category)` of a classification prompt.
pub fn classification_subject(prompt: &PromptTriple) -> Option<(String, String)> {
    let mut values = PromptTemplate::classification().match_rendered(prompt)?;
    Some((values.remove("company_name")?, values.remove("company_category")?))
}

/// Token counting strategy used for budgeting.
pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, text: &str) -> usize;
}

/// Whitespace-token count scaled by a safety factor, rounded up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WhitespaceEstimator {
    /// Safety factor in thousandths; 1000 means the raw token count.
    pub factor_per_mille: u32,
}

impl WhitespaceEstimator {
    pub const fn plain() -> Self {
        Self { factor_per_mille: 1000 }
    }
}

impl Default for WhitespaceEstimator {
    fn default() -> Self {
        Self { factor_per_mille: 1300 }
    }
}

impl TokenEstimator for WhitespaceEstimator {
    fn estimate(&self, text: &str) -> usize {
        let words = text.split_whitespace().count();
        (words * self.factor_per_mille as usize).div_ceil(1000)
    }
}

/// Characters-per-token estimate, closer to subword tokenizers on long words.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CharEstimator {
    pub chars_per_token: usize,
}

impl Default for CharEstimator {
    fn default() -> Self {
        Self { chars_per_token: 4 }
    }
}

impl TokenEstimator for CharEstimator {
    fn estimate(&self, text: &str) -> usize {
        let chars = text.chars().filter(|c| !c.is_whitespace()).count();
        chars.div_ceil(self.chars_per_token.max(1))
    }
}

pub fn estimate_tokens(text: &str) -> usize {
    WhitespaceEstimator::default().estimate(text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub segments: Vec<String>,
    pub budget: usize,
}

impl SegmentPlan {
    pub fn concatenated(&self) -> String {
        self.segments.concat()
    }
}

/// Splits after runs of `.`, `!` or `?` that are followed by whitespace; the
/// whitespace stays with the preceding piece.
fn sentence_pieces(text: &str) -> Vec<&str> {
    split_keeping_trailing_space(text, |prev, _| matches!(prev, Some('.' | '!' | '?')))
}

fn word_pieces(text: &str) -> Vec<&str> {
    split_keeping_trailing_space(text, |_, _| true)
}

/// Cuts `text` at every transition from whitespace to non-whitespace where
/// `boundary(char before the whitespace run, run start)` holds. Leading
/// whitespace belongs to the first piece.
fn split_keeping_trailing_space(text: &str, boundary: impl Fn(Option<char>, usize) -> bool) -> Vec<&str> {
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut last_non_ws: Option<char> = None;
    let mut run_start: Option<usize> = None;
    let mut seen_content = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if run_start.is_none() {
                run_start = Some(i);
            }
            continue;
        }
        if let Some(rs) = run_start.take() {
            if seen_content && boundary(last_non_ws, rs) {
                pieces.push(&text[start..i]);
                start = i;
            }
        }
        seen_content = true;
        last_non_ws = Some(c);
    }
    if start < text.len() {
        pieces.push(&text[start..]);
    }
    pieces
}

/// Splits `text` into consecutive spans each within `budget` tokens.
///
/// Sentences are packed greedily; a sentence that alone exceeds the budget is
/// broken at whitespace. Concatenating the segments gives back `text`.
pub fn segment_text(text: &str, budget: usize, estimator: &dyn TokenEstimator) -> Result<SegmentPlan, ProtocolError> {
    if budget == 0 {
        return Err(ProtocolError::InvalidBudget);
    }
    let mut pieces: Vec<&str> = Vec::new();
    for sentence in sentence_pieces(text) {
        if estimator.estimate(sentence) <= budget {
            pieces.push(sentence);
        } else {
            pieces.extend(word_pieces(sentence));
        }
    }
    let mut segments = Vec::new();
    let mut current = String::new();
    for piece in pieces {
        let mut candidate = current.clone();
        candidate.push_str(piece);
        if estimator.estimate(&candidate) <= budget {
            current = candidate;
            continue;
        }
        let tokens = estimator.estimate(piece);
        if tokens > budget {
            return Err(ProtocolError::OversizeAtom { tokens, budget });
        }
        if !current.is_empty() {
            segments.push(std::mem::take(&mut current));
        }
        current.push_str(piece);
    }
    if !current.is_empty() {
        segments.push(current);
    }
    Ok(SegmentPlan { segments, budget })
}

/// One `name: description` line from an extraction response.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExtractedEntity {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedEntities {
    pub entities: Vec<ExtractedEntity>,
    pub lines_parsed: usize,
    pub lines_skipped: usize,
}

fn strip_list_marker(line: &str) -> (bool, &str) {
    let digits = line.len() - line.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(after) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            if after.starts_with(char::is_whitespace) {
                return (true, after.trim_start());
            }
        }
    }
    for bullet in ["- ", "* ", "• "] {
        if let Some(rest) = line.strip_prefix(bullet) {
            return (true, rest.trim_start());
        }
    }
    (false, line)
}

fn parse_entity_line(line: &str) -> Option<ExtractedEntity> {
    let (listed, rest) = strip_list_marker(line);
    let (name, description) = rest.split_once(':')?;
    let name = name.trim().trim_matches('*').trim();
    let description = description.trim();
    if name.is_empty() || (!listed && description.is_empty()) {
        return None;
    }
    Some(ExtractedEntity {
        name: name.to_string(),
        description: description.to_string(),
    })
}

/// Parses the numbered `name: description` list. Lines that do not fit the
/// pattern are skipped and tallied; only the first colon splits a line.
pub fn parse_entity_list(response: &str) -> Result<ParsedEntities, ProtocolError> {
    let mut parsed = ParsedEntities::default();
    let mut content_lines = 0;
    for line in response.lines().map(str::trim).filter(|l| !l.is_empty()) {
        content_lines += 1;
        match parse_entity_line(line) {
            Some(entity) => {
                parsed.entities.push(entity);
                parsed.lines_parsed += 1;
            }
            None => parsed.lines_skipped += 1,
        }
    }
    if content_lines > 0 && parsed.entities.is_empty() {
        return Err(ProtocolError::EmptyParse { lines: content_lines });
    }
    Ok(parsed)
}

/// Renders entities in the numbered format the extraction prompt asks for.
pub fn render_entity_list(entities: &[ExtractedEntity]) -> String {
    entities
        .iter()
        .enumerate()
        .map(|(i, e)| format!("{}. {}: {}", i + 1, e.name, e.description))
        .collect::<Vec<_>>()
        .join("\n")
}

/// `true` for a leading "yes", `false` for a leading "no".
pub fn parse_yes_no(response: &str) -> Result<bool, ProtocolError> {
    let first = response
        .split(|c: char| !c.is_alphabetic())
        .find(|w| !w.is_empty())
        .map(str::to_lowercase);
    match first.as_deref() {
        Some("yes") => Ok(true),
        Some("no") => Ok(false),
        _ => Err(ProtocolError::AmbiguousAnswer(response.to_string())),
    }
}

/// Running parse counters, shared across threads.
#[derive(Debug, Default)]
pub struct ParseDiagnostics {
    lines_parsed: AtomicU64,
    lines_skipped: AtomicU64,
    empty_parses: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosticsSnapshot {
    pub lines_parsed: u64,
    pub lines_skipped: u64,
    pub empty_parses: u64,
}

impl ParseDiagnostics {
    pub fn record(&self, outcome: &Result<ParsedEntities, ProtocolError>) {
        match outcome {
            Ok(parsed) => {
                self.lines_parsed
                    .fetch_add(parsed.lines_parsed as u64, Ordering::Relaxed);
                self.lines_skipped
                    .fetch_add(parsed.lines_skipped as u64, Ordering::Relaxed);
            }
            Err(ProtocolError::EmptyParse { lines }) => {
                self.lines_skipped.fetch_add(*lines as u64, Ordering::Relaxed);
                self.empty_parses.fetch_add(1, Ordering::Relaxed);
            }
            Err(_) => {}
        }
    }

    pub fn snapshot(&self) -> DiagnosticsSnapshot {
        DiagnosticsSnapshot {
            lines_parsed: self.lines_parsed.load(Ordering::Relaxed),
            lines_skipped: self.lines_skipped.load(Ordering::Relaxed),
            empty_parses: self.empty_parses.load(Ordering::Relaxed),
        }
    }
}
