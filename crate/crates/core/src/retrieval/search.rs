use std::collections::{HashMap, HashSet};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use super::{Candidate, CandidateSet, Scheme};
use crate::corpus::Corpus;
use crate::http;
use crate::llm::BackendError;
use crate::text::tokenize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("search backend: {0}")]
    Backend(#[from] BackendError),
    #[error("search backend returned malformed results: {0}")]
    Malformed(String),
}

/// A black-box search engine: query text in, ordered (id, score) out.
pub trait SearchClient: Send + Sync {
    fn search(&self, query: &str, k: usize) -> Result<Vec<(String, f64)>, SearchError>;
}

/// Token-overlap search over title, entities and summary, weighting each
/// query term by `ln(1 + tf) · idf` with a smoothed BM25 idf.
#[derive(Debug, Clone)]
pub struct BuiltinSearch {
    ids: Vec<String>,
    term_freqs: Vec<HashMap<String, u32>>,
    idf: HashMap<String, f64>,
}

impl BuiltinSearch {
    pub fn new(corpus: &Corpus) -> Self {
        let term_freqs: Vec<HashMap<String, u32>> = corpus
            .items()
            .iter()
            .zip(corpus.summaries())
            .map(|(item, summary)| {
                let text = format!(
                    "{} {} {}",
                    item.title,
                    item.entities.join(" "),
                    summary.summary_text
                );
                let mut tf = HashMap::new();
                for t in tokenize(&text) {
                    *tf.entry(t).or_insert(0) += 1;
                }
                tf
            })
            .collect();
        let mut df: HashMap<String, u32> = HashMap::new();
        for tf in &term_freqs {
            for t in tf.keys() {
                *df.entry(t.clone()).or_insert(0) += 1;
            }
        }
        let n = term_freqs.len() as f64;
        let idf = df
            .into_iter()
            .map(|(t, d)| {
                let d = f64::from(d);
                (t, (1.0 + (n - d + 0.5) / (d + 0.5)).ln())
            })
            .collect();
        Self {
            ids: corpus.items().iter().map(|i| i.id.clone()).collect(),
            term_freqs,
            idf,
        }
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.idf.get(term).copied()
    }

    pub fn score(&self, query: &str, row: usize) -> f64 {
        let terms: HashSet<String> = tokenize(query).into_iter().collect();
        let tf = &self.term_freqs[row];
        terms
            .iter()
            .filter_map(|t| {
                let f = *tf.get(t)?;
                Some((1.0 + f64::from(f)).ln() * self.idf[t])
            })
            .sum()
    }
}

impl SearchClient for BuiltinSearch {
    fn search(&self, query: &str, k: usize) -> Result<Vec<(String, f64)>, SearchError> {
        let scored: Vec<(usize, f64)> = (0..self.ids.len())
            .map(|r| (r, self.score(query, r)))
            .filter(|(_, s)| *s > 0.0)
            .collect();
        Ok(super::index::top_k_by(scored, k, |r| self.ids[r].as_str())
            .into_iter()
            .map(|(r, s)| (self.ids[r].clone(), s))
            .collect())
    }
}

#[derive(Deserialize)]
struct RemoteHit {
    #[serde(alias = "item_id")]
    id: String,
    score: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RemoteReply {
    Hits(Vec<RemoteHit>),
    Wrapped { results: Vec<RemoteHit> },
}

/// HTTP search backend: `GET <url>?q=<query>&k=<k>` answering with a JSON
/// list of `{"id", "score"}` (optionally wrapped in `{"results": …}`).
#[derive(Debug, Clone)]
pub struct RemoteSearch {
    url: String,
    agent: ureq::Agent,
}

impl RemoteSearch {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            url: url.into(),
            agent: http::agent(timeout),
        }
    }
}

impl SearchClient for RemoteSearch {
    fn search(&self, query: &str, k: usize) -> Result<Vec<(String, f64)>, SearchError> {
        let req = self
            .agent
            .get(&self.url)
            .query("q", query)
            .query("k", k.to_string());
        let body = http::read_text(req.call())?;
        let reply: RemoteReply =
            serde_json::from_str(&body).map_err(|e| SearchError::Malformed(e.to_string()))?;
        let hits = match reply {
            RemoteReply::Hits(h) | RemoteReply::Wrapped { results: h } => h,
        };
        Ok(hits.into_iter().map(|h| (h.id, h.score)).collect())
    }
}

/// Sends the query to the client and keeps its order. Ids outside the
/// corpus and repeats are dropped; an empty query short-circuits.
pub(crate) fn retrieve_search_api(
    client: &dyn SearchClient,
    corpus: &Corpus,
    query: &str,
    k: usize,
) -> Result<CandidateSet, SearchError> {
    if tokenize(query).is_empty() {
        return Ok(CandidateSet::empty(Scheme::SearchApi));
    }
    let hits = client.search(query, k)?;
    let mut seen = HashSet::new();
    let candidates = hits
        .into_iter()
        .filter(|(id, _)| corpus.index_of(id).is_some() && seen.insert(id.clone()))
        .take(k)
        .map(|(item_id, score)| Candidate { item_id, score })
        .collect();
    Ok(CandidateSet {
        scheme: Scheme::SearchApi,
        candidates,
    })
}
