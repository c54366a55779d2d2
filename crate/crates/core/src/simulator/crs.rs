use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::http;
use crate::ranker::{BucketTable, RecommendationSlate, ScoredItem, DEFAULT_SLATE_SIZE};
use crate::retrieval::{BuiltinSearch, SearchClient};
use crate::session::SystemTurn;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrsError {
    #[error("recommender unavailable: {0}")]
    Unavailable(String),
    #[error("recommender rejected the request: {0}")]
    Rejected(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlateEntry {
    pub item_id: String,
    pub title: String,
    pub score: f64,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrsReply {
    pub utterance: String,
    #[serde(default)]
    pub slate: Vec<SlateEntry>,
    pub turn_index: usize,
}

impl CrsReply {
    /// The reply as a system turn, bucket phrases restored from scores.
    pub fn to_system_turn(&self) -> SystemTurn {
        let mut turn = SystemTurn::plain(self.utterance.clone());
        if !self.slate.is_empty() {
            let table = BucketTable::default();
            let items = self
                .slate
                .iter()
                .map(|e| ScoredItem {
                    item_id: e.item_id.clone(),
                    title: e.title.clone(),
                    score: e.score,
                    bucket_phrase: table.phrase_of(e.score).unwrap_or_default().to_string(),
                    explanation: e.explanation.clone(),
                    raw_output: String::new(),
                    incident: None,
                })
                .collect();
            turn.slate = Some(RecommendationSlate::new(items, self.turn_index));
        }
        turn
    }
}

/// The recommender as seen by the simulator.
pub trait CrsClient: Send + Sync {
    fn open_session(&self, user_id: Option<&str>) -> Result<String, CrsError>;
    fn send(
        &self,
        session_id: &str,
        user_id: Option<&str>,
        text: &str,
    ) -> Result<CrsReply, CrsError>;
}

/// Talks to a running service over its HTTP API.
pub struct HttpCrs {
    base: String,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct OpenBody<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    user_id: Option<&'a str>,
}

#[derive(Deserialize)]
struct Opened {
    session_id: String,
}

#[derive(Serialize)]
struct MessageBody<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    user_id: Option<&'a str>,
    text: &'a str,
}

impl HttpCrs {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            base: base_url.into().trim_end_matches('/').to_string(),
            agent: http::agent(timeout),
        }
    }

    fn post<T: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &impl Serialize,
    ) -> Result<T, CrsError> {
        let url = format!("{}{path}", self.base);
        let text = http::read_text(self.agent.post(&url).send_json(body)).map_err(|e| match e {
            crate::llm::BackendError::Rejected(code) => {
                CrsError::Rejected(format!("status {code}"))
            }
            other => CrsError::Unavailable(other.to_string()),
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CrsError::Unavailable(format!("malformed reply: {e}")))
    }
}

impl CrsClient for HttpCrs {
    fn open_session(&self, user_id: Option<&str>) -> Result<String, CrsError> {
        Ok(self
            .post::<Opened>("/sessions", &OpenBody { user_id })?
            .session_id)
    }

    fn send(
        &self,
        session_id: &str,
        user_id: Option<&str>,
        text: &str,
    ) -> Result<CrsReply, CrsError> {
        self.post(
            &format!("/sessions/{session_id}/messages"),
            &MessageBody { user_id, text },
        )
    }
}

/// A stand-in recommender: keyword search over the corpus, a canned
/// utterance and template explanations.
pub struct ScriptedCrs {
    corpus: Arc<Corpus>,
    search: BuiltinSearch,
    next: AtomicU64,
    turns: std::sync::Mutex<std::collections::HashMap<String, usize>>,
}

impl ScriptedCrs {
    pub fn new(corpus: Arc<Corpus>) -> Self {
        Self {
            search: BuiltinSearch::new(&corpus),
            corpus,
            next: AtomicU64::new(1),
            turns: Default::default(),
        }
    }
}

impl CrsClient for ScriptedCrs {
    fn open_session(&self, _user_id: Option<&str>) -> Result<String, CrsError> {
        let id = format!("sim-{:05}", self.next.fetch_add(1, Ordering::SeqCst));
        self.turns
            .lock()
            .expect("turns poisoned")
            .insert(id.clone(), 0);
        Ok(id)
    }

    fn send(
        &self,
        session_id: &str,
        _user_id: Option<&str>,
        text: &str,
    ) -> Result<CrsReply, CrsError> {
        let turn_index = {
            let mut turns = self.turns.lock().expect("turns poisoned");
            let t = turns
                .get_mut(session_id)
                .ok_or_else(|| CrsError::Rejected(format!("unknown session {session_id}")))?;
            *t += 1;
            *t
        };
        let hits = self
            .search
            .search(text, DEFAULT_SLATE_SIZE)
            .map_err(|e| CrsError::Unavailable(e.to_string()))?;
        if hits.is_empty() {
            return Ok(CrsReply {
                utterance: "What kind of videos are you in the mood for?".into(),
                slate: Vec::new(),
                turn_index,
            });
        }
        let table = BucketTable::default();
        let top = hits[0].1;
        let slate = hits
            .into_iter()
            .map(|(id, s)| {
                let item = self.corpus.get(&id).expect("search returns corpus ids");
                let score = if s >= top {
                    1.0
                } else {
                    table.default_entry().1
                };
                SlateEntry {
                    title: item.title.clone(),
                    explanation: format!("Matches your request for {}.", item.entities.join(", ")),
                    item_id: id,
                    score,
                }
            })
            .collect();
        Ok(CrsReply {
            utterance: "Here are some videos you might enjoy.".into(),
            slate,
            turn_index,
        })
    }
}
