//! Item corpus: line-delimited ingestion, offline summaries and the hashed
//! item embeddings every retriever works from.

mod embed;
pub mod synthetic;

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{
    cosine, dot, embed_text, l2_norm, Embedder, EmbeddingVector, DEFAULT_DIM, DEFAULT_HASH_SEED,
};

use crate::llm::{templates, Gateway, LlmRequest, SlotValues};
use crate::text::clip_chars;

pub const SUMMARY_MAX_CHARS: usize = 512;
const TEMPLATE_ENTITY_LIMIT: usize = 5;
const TEMPLATE_DESCRIPTION_CHARS: usize = 300;
const PROMPT_FIELD_CHARS: usize = 1500;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("summary sidecar line {line}: {reason}")]
    Sidecar { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Item {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub entities: Vec<String>,
    #[serde(default)]
    pub transcript: String,
    #[serde(default)]
    pub comments: Vec<String>,
}

impl Item {
    pub fn new(id: impl Into<String>, title: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            description: String::new(),
            entities: Vec::new(),
            transcript: String::new(),
            comments: Vec::new(),
        }
    }

    pub fn with_entities<I, S>(mut self, entities: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.entities = entities.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("item serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummarySource {
    Llm,
    Template,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemSummary {
    pub item_id: String,
    pub summary_text: String,
    pub source: SummarySource,
}

/// `title | entities (≤5) | description`, each part omitted when empty,
/// clipped to 512 chars.
pub fn template_summary(item: &Item) -> ItemSummary {
    let mut parts = vec![item.title.trim().to_string()];
    let entities: Vec<&str> = item
        .entities
        .iter()
        .map(|e| e.trim())
        .filter(|e| !e.is_empty())
        .take(TEMPLATE_ENTITY_LIMIT)
        .collect();
    if !entities.is_empty() {
        parts.push(entities.join(", "));
    }
    let description = item.description.trim();
    if !description.is_empty() {
        let clipped = clip_chars(description, TEMPLATE_DESCRIPTION_CHARS);
        if clipped.len() < description.len() {
            parts.push(format!("{}…", clipped.trim_end()));
        } else {
            parts.push(clipped);
        }
    }
    ItemSummary {
        item_id: item.id.clone(),
        summary_text: clip_chars(&parts.join(" | "), SUMMARY_MAX_CHARS),
        source: SummarySource::Template,
    }
}

/// One gateway call with the item-summary template; falls back to the
/// template summary when the gateway is absent, misses, fails or answers
/// with blank text.
pub fn summarize_item(item: &Item, gateway: Option<&Gateway>) -> ItemSummary {
    let Some(gateway) = gateway else {
        return template_summary(item);
    };
    let slots = SlotValues::new()
        .with("title", item.title.clone())
        .with("entities", item.entities.join(", "))
        .with(
            "description",
            clip_chars(&item.description, PROMPT_FIELD_CHARS),
        )
        .with(
            "transcript",
            clip_chars(&item.transcript, PROMPT_FIELD_CHARS),
        )
        .with(
            "comments",
            clip_chars(&item.comments.join(" / "), PROMPT_FIELD_CHARS),
        );
    match gateway.complete(&LlmRequest::new(templates::ITEM_SUMMARY, slots)) {
        Ok(resp) if !resp.fixture_miss && !resp.text.trim().is_empty() => ItemSummary {
            item_id: item.id.clone(),
            summary_text: clip_chars(resp.text.trim(), SUMMARY_MAX_CHARS),
            source: SummarySource::Llm,
        },
        Ok(_) => template_summary(item),
        Err(err) => {
            log::warn!("summary for {} fell back to template: {err}", item.id);
            template_summary(item)
        }
    }
}

/// The text an item is embedded from.
pub fn embedding_text(item: &Item, summary: &ItemSummary) -> String {
    format!(
        "{} {} {}",
        item.title,
        item.entities.join(" "),
        summary.summary_text
    )
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub loaded: usize,
    pub skipped: usize,
    pub diagnostics: Vec<String>,
}

/// Immutable once built; share it behind an `Arc`.
#[derive(Debug, Clone)]
pub struct Corpus {
    items: Vec<Item>,
    summaries: Vec<ItemSummary>,
    embeddings: Vec<EmbeddingVector>,
    by_id: HashMap<String, usize>,
    embedder: Embedder,
}

impl Corpus {
    /// Builds a corpus from items, dropping duplicates and blank titles.
    /// Summaries come from `summaries` when present for an id, else from the
    /// template.
    pub fn build(
        items: Vec<Item>,
        embedder: Embedder,
        summaries: &HashMap<String, ItemSummary>,
    ) -> (Self, IngestReport) {
        let mut report = IngestReport::default();
        let mut seen = HashSet::new();
        let mut kept = Vec::with_capacity(items.len());
        for item in items {
            if item.id.is_empty() || item.title.trim().is_empty() {
                report.skipped += 1;
                report
                    .diagnostics
                    .push(format!("item `{}`: empty id or title", item.id));
                continue;
            }
            if !seen.insert(item.id.clone()) {
                report.skipped += 1;
                report
                    .diagnostics
                    .push(format!("duplicate id `{}`", item.id));
                continue;
            }
            kept.push(item);
        }
        report.loaded = kept.len();
        let summaries: Vec<ItemSummary> = kept
            .iter()
            .map(|item| match summaries.get(&item.id) {
                Some(s) if !s.summary_text.trim().is_empty() => s.clone(),
                _ => template_summary(item),
            })
            .collect();
        (Self::assemble(kept, summaries, embedder), report)
    }

    fn assemble(items: Vec<Item>, summaries: Vec<ItemSummary>, embedder: Embedder) -> Self {
        let embeddings = items
            .iter()
            .zip(&summaries)
            .map(|(item, summary)| embedder.embed(&embedding_text(item, summary)))
            .collect();
        let by_id = items
            .iter()
            .enumerate()
            .map(|(i, item)| (item.id.clone(), i))
            .collect();
        Self {
            items,
            summaries,
            embeddings,
            by_id,
            embedder,
        }
    }

    /// Reads a corpus file (one JSON record per line). Malformed lines and
    /// duplicate ids are skipped with a diagnostic; an unreadable file is
    /// fatal. Summaries are read from the sidecar when it exists.
    pub fn ingest(
        path: impl AsRef<Path>,
        embedder: Embedder,
    ) -> Result<(Self, IngestReport), CorpusError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        let (items, mut parse_report) = parse_items(&text);
        let sidecar = summary_sidecar_path(path);
        let summaries = if sidecar.exists() {
            read_summaries(&sidecar)?
        } else {
            HashMap::new()
        };
        let (corpus, report) = Self::build(items, embedder, &summaries);
        parse_report.loaded = report.loaded;
        parse_report.skipped += report.skipped;
        parse_report.diagnostics.extend(report.diagnostics);
        for d in &parse_report.diagnostics {
            log::warn!("{}: {d}", path.display());
        }
        Ok((corpus, parse_report))
    }

    /// Re-summarizes every item through the gateway and re-embeds.
    pub fn summarize_with(self, gateway: Option<&Gateway>) -> Self {
        let summaries = self
            .items
            .iter()
            .map(|item| summarize_item(item, gateway))
            .collect();
        Self::assemble(self.items, summaries, self.embedder)
    }

    pub fn write_summaries(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let mut out = fs::File::create(path)?;
        for s in &self.summaries {
            writeln!(
                out,
                "{}",
                serde_json::to_string(s).expect("summary serializes")
            )?;
        }
        Ok(())
    }

    pub fn write_items(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let mut out = fs::File::create(path)?;
        for item in &self.items {
            writeln!(out, "{}", item.to_line())?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn item(&self, idx: usize) -> &Item {
        &self.items[idx]
    }

    pub fn summary(&self, idx: usize) -> &ItemSummary {
        &self.summaries[idx]
    }

    pub fn summaries(&self) -> &[ItemSummary] {
        &self.summaries
    }

    pub fn embedding(&self, idx: usize) -> &EmbeddingVector {
        &self.embeddings[idx]
    }

    pub fn embeddings(&self) -> &[EmbeddingVector] {
        &self.embeddings
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&Item> {
        self.index_of(id).map(|i| &self.items[i])
    }

    pub fn summary_of(&self, id: &str) -> Option<&ItemSummary> {
        self.index_of(id).map(|i| &self.summaries[i])
    }

    pub fn embedder(&self) -> Embedder {
        self.embedder
    }

    pub fn embed(&self, text: &str) -> EmbeddingVector {
        self.embedder.embed(text)
    }

    pub fn dim(&self) -> usize {
        self.embedder.dim()
    }

    /// Fingerprint of the embedding configuration plus the item ids.
    pub fn config_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.embedder.fingerprint().as_bytes());
        for (item, s) in self.items.iter().zip(&self.summaries) {
            h.update(item.id.as_bytes());
            h.update([0u8]);
            h.update(s.summary_text.as_bytes());
            h.update([0u8]);
        }
        h.finalize()
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub fn summary_sidecar_path(corpus_path: &Path) -> PathBuf {
    let mut name = corpus_path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".summaries.jsonl");
    corpus_path.with_file_name(name)
}

fn parse_items(text: &str) -> (Vec<Item>, IngestReport) {
    let mut report = IngestReport::default();
    let mut items = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Item>(line) {
            Ok(item) => items.push(item),
            Err(err) => {
                report.skipped += 1;
                report.diagnostics.push(format!("line {}: {err}", idx + 1));
            }
        }
    }
    (items, report)
}

fn read_summaries(path: &Path) -> Result<HashMap<String, ItemSummary>, CorpusError> {
    let text = fs::read_to_string(path)?;
    let mut out = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s: ItemSummary = serde_json::from_str(line).map_err(|e| CorpusError::Sidecar {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        out.insert(s.item_id.clone(), s);
    }
    Ok(out)
}
