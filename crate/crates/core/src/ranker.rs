//! Per-candidate LLM scoring. Each call reasons about one item and ends in a
//! bucket phrase; the phrase maps to a score and the reasoning becomes the
//! explanation shown next to the slate.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::llm::{templates, Gateway, LlmRequest, SlotValues};
use crate::retrieval::CandidateSet;
use crate::session::Session;
use crate::text::clip_chars;

pub const NO_EXPLANATION: &str = "(no explanation available)";
pub const DEFAULT_SLATE_SIZE: usize = 5;
pub const CONTEXT_FALLBACK_CHARS: usize = 256;
const CONTEXT_FALLBACK_TURNS: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum BucketError {
    #[error("bucket table is empty")]
    Empty,
    #[error("bucket phrase `{0}` appears twice")]
    DuplicatePhrase(String),
    #[error("bucket value {0} appears twice")]
    DuplicateValue(f64),
    #[error("bucket value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("malformed bucket spec `{0}`")]
    Malformed(String),
}

/// Phrase ↔ score table; a bijection by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketTable {
    entries: Vec<(String, f64)>,
}

impl Default for BucketTable {
    fn default() -> Self {
        Self::new(vec![
            ("terrible fit".into(), 0.0),
            ("poor fit".into(), 0.25),
            ("acceptable fit".into(), 0.5),
            ("good fit".into(), 0.75),
            ("excellent fit".into(), 1.0),
        ])
        .expect("default table is valid")
    }
}

impl BucketTable {
    pub fn new(mut entries: Vec<(String, f64)>) -> Result<Self, BucketError> {
        if entries.is_empty() {
            return Err(BucketError::Empty);
        }
        for (i, (phrase, value)) in entries.iter().enumerate() {
            if !(0.0..=1.0).contains(value) {
                return Err(BucketError::OutOfRange(*value));
            }
            for (other_phrase, other_value) in &entries[..i] {
                if normalize_phrase(other_phrase) == normalize_phrase(phrase) {
                    return Err(BucketError::DuplicatePhrase(phrase.clone()));
                }
                if other_value == value {
                    return Err(BucketError::DuplicateValue(*value));
                }
            }
        }
        for e in &mut entries {
            e.0 = normalize_phrase(&e.0);
        }
        entries.sort_by(|a, b| a.1.total_cmp(&b.1));
        Ok(Self { entries })
    }

    /// Parses `phrase:value, phrase:value, …`.
    pub fn parse(spec: &str) -> Result<Self, BucketError> {
        let entries = spec
            .split(',')
            .map(|part| {
                let (phrase, value) = part
                    .rsplit_once(':')
                    .ok_or_else(|| BucketError::Malformed(part.into()))?;
                let value: f64 = value
                    .trim()
                    .parse()
                    .map_err(|_| BucketError::Malformed(part.into()))?;
                Ok((phrase.trim().to_string(), value))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(entries)
    }

    pub fn to_spec(&self) -> String {
        self.entries
            .iter()
            .map(|(p, v)| format!("{p}:{v}"))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn score_of(&self, phrase: &str) -> Option<f64> {
        let phrase = normalize_phrase(phrase);
        self.entries
            .iter()
            .find(|(p, _)| *p == phrase)
            .map(|(_, v)| *v)
    }

    pub fn phrase_of(&self, score: f64) -> Option<&str> {
        self.entries
            .iter()
            .find(|(_, v)| *v == score)
            .map(|(p, _)| p.as_str())
    }

    /// The middle bucket, used when a model answer cannot be read.
    pub fn default_entry(&self) -> (&str, f64) {
        let (p, v) = &self.entries[(self.entries.len() - 1) / 2];
        (p, *v)
    }
}

fn normalize_phrase(phrase: &str) -> String {
    phrase
        .trim()
        .trim_end_matches(['.', '!'])
        .trim()
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub item_id: String,
    pub title: String,
    pub score: f64,
    pub bucket_phrase: String,
    pub explanation: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub raw_output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incident: Option<String>,
}

impl ScoredItem {
    /// Middle-bucket item with the placeholder explanation.
    pub fn fallback(item_id: impl Into<String>, title: impl Into<String>) -> Self {
        let table = BucketTable::default();
        let (phrase, score) = table.default_entry();
        Self {
            item_id: item_id.into(),
            title: title.into(),
            score,
            bucket_phrase: phrase.to_string(),
            explanation: NO_EXPLANATION.to_string(),
            raw_output: String::new(),
            incident: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationSlate {
    pub items: Vec<ScoredItem>,
    pub created_at_turn: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incident: Option<String>,
}

impl RecommendationSlate {
    pub fn new(items: Vec<ScoredItem>, created_at_turn: usize) -> Self {
        Self {
            items,
            created_at_turn,
            incident: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedScore {
    pub reasoning: Option<String>,
    pub phrase: Option<String>,
}

/// Reads the first `Reasoning:` and first `Score:` lines.
pub fn parse_score_output(raw: &str) -> ParsedScore {
    let mut reasoning = None;
    let mut phrase = None;
    for line in raw.lines() {
        if reasoning.is_none() {
            if let Some(rest) = line.strip_prefix("Reasoning:") {
                let rest = rest.trim();
                if !rest.is_empty() {
                    reasoning = Some(rest.to_string());
                }
                continue;
            }
        }
        if phrase.is_none() {
            if let Some(rest) = line.strip_prefix("Score:") {
                let rest = rest.trim();
                if !rest.is_empty() {
                    phrase = Some(rest.to_string());
                }
            }
        }
    }
    ParsedScore { reasoning, phrase }
}

pub fn score_line(phrase: &str) -> String {
    format!("Score: {phrase}")
}

#[derive(Debug, Clone)]
pub struct RankerConfig {
    pub buckets: BucketTable,
    pub slate_size: usize,
    pub parallelism: usize,
}

impl Default for RankerConfig {
    fn default() -> Self {
        Self {
            buckets: BucketTable::default(),
            slate_size: DEFAULT_SLATE_SIZE,
            parallelism: 4,
        }
    }
}

pub struct Ranker {
    gateway: Arc<Gateway>,
    corpus: Arc<Corpus>,
    config: RankerConfig,
    pool: rayon::ThreadPool,
}

impl Ranker {
    pub fn new(gateway: Arc<Gateway>, corpus: Arc<Corpus>, config: RankerConfig) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallelism.max(1))
            .build()
            .expect("ranker thread pool");
        Self {
            gateway,
            corpus,
            config,
            pool,
        }
    }

    pub fn config(&self) -> &RankerConfig {
        &self.config
    }

    /// One context-summary call; falls back to the last three user
    /// utterances clipped to 256 chars.
    pub fn summarize_context(&self, session: &Session) -> String {
        let slots = SlotValues::new().with("conversation", session.transcript());
        match self
            .gateway
            .complete(&LlmRequest::new(templates::CONTEXT_SUMMARY, slots))
        {
            Ok(resp) if !resp.fixture_miss && !resp.text.trim().is_empty() => {
                resp.text.trim().to_string()
            }
            _ => fallback_context_summary(session),
        }
    }

    /// Scores one item. Unreadable output gets the middle bucket and an
    /// incident; a missing reasoning line gets the placeholder explanation.
    pub fn score_item(&self, context_summary: &str, item_id: &str) -> ScoredItem {
        let Some(idx) = self.corpus.index_of(item_id) else {
            let mut item = self.default_scored(item_id, item_id);
            item.incident = Some(format!("item `{item_id}` not in corpus"));
            return item;
        };
        let item = self.corpus.item(idx);
        let summary = self.corpus.summary(idx);
        let slots = SlotValues::new()
            .with("context", context_summary)
            .with("title", item.title.clone())
            .with("item", summary.summary_text.clone());
        let raw = match self
            .gateway
            .complete(&LlmRequest::new(templates::RANK_ITEM, slots))
        {
            Ok(resp) => resp.text,
            Err(err) => {
                let mut scored = self.default_scored(&item.id, &item.title);
                scored.incident = Some(format!("ranker call failed: {err}"));
                return scored;
            }
        };
        score_from_output(&self.config.buckets, &item.id, &item.title, raw)
    }

    fn default_scored(&self, item_id: &str, title: &str) -> ScoredItem {
        let (phrase, score) = self.config.buckets.default_entry();
        ScoredItem {
            item_id: item_id.to_string(),
            title: title.to_string(),
            score,
            bucket_phrase: phrase.to_string(),
            explanation: NO_EXPLANATION.to_string(),
            raw_output: String::new(),
            incident: None,
        }
    }

    /// Scores every candidate (concurrently), stable-sorts by score and
    /// keeps the top `slate_size`. Retrieval order breaks ties.
    pub fn rank(&self, candidates: &CandidateSet, session: &Session) -> RecommendationSlate {
        let context = self.summarize_context(session);
        let ids: Vec<&str> = candidates
            .candidates
            .iter()
            .map(|c| c.item_id.as_str())
            .collect();
        let scored: Vec<ScoredItem> = self.pool.install(|| {
            ids.par_iter()
                .map(|id| self.score_item(&context, id))
                .collect()
        });
        let all_failed = !scored.is_empty() && scored.iter().all(|s| s.incident.is_some());
        let mut slate = RecommendationSlate::new(
            order_slate(scored, self.config.slate_size),
            session.turns.len(),
        );
        if all_failed {
            slate.incident = Some("every ranker call failed; slate follows retrieval order".into());
        }
        slate
    }
}

/// Stable sort by descending score, truncated.
pub fn order_slate(mut scored: Vec<ScoredItem>, slate_size: usize) -> Vec<ScoredItem> {
    scored.sort_by(|a, b| b.score.total_cmp(&a.score));
    scored.truncate(slate_size);
    scored
}

pub fn score_from_output(
    buckets: &BucketTable,
    item_id: &str,
    title: &str,
    raw: String,
) -> ScoredItem {
    let parsed = parse_score_output(&raw);
    let (default_phrase, default_score) = buckets.default_entry();
    let known = parsed.phrase.as_deref().and_then(|p| {
        buckets
            .score_of(p)
            .map(|s| (s, buckets.phrase_of(s).unwrap_or(p).to_string()))
    });
    match known {
        Some((score, phrase)) => ScoredItem {
            item_id: item_id.to_string(),
            title: title.to_string(),
            score,
            bucket_phrase: phrase,
            explanation: parsed
                .reasoning
                .unwrap_or_else(|| NO_EXPLANATION.to_string()),
            raw_output: raw,
            incident: None,
        },
        None => ScoredItem {
            item_id: item_id.to_string(),
            title: title.to_string(),
            score: default_score,
            bucket_phrase: default_phrase.to_string(),
            explanation: NO_EXPLANATION.to_string(),
            incident: Some(match &parsed.phrase {
                Some(p) => format!("unknown bucket phrase `{p}`"),
                None => "no Score: line in ranker output".to_string(),
            }),
            raw_output: raw,
        },
    }
}

pub fn fallback_context_summary(session: &Session) -> String {
    let utterances: Vec<&str> = session.user_utterances().collect();
    let start = utterances.len().saturating_sub(CONTEXT_FALLBACK_TURNS);
    clip_chars(&utterances[start..].join(" "), CONTEXT_FALLBACK_CHARS)
}
