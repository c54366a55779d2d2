use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use thiserror::Error;

use super::{DecodeParams, LlmError, SlotDigest};
use crate::text::{escape_line, unescape_line};

pub const DEFAULT_SCRIPTED_RESPONSE: &str = "Response: I'm not sure.";

/// What a backend sees for one call.
#[derive(Debug, Clone, Copy)]
pub struct BackendCall<'a> {
    pub template: &'a str,
    pub slot_digest: &'a SlotDigest,
    pub prompt: &'a str,
    pub params: &'a DecodeParams,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendReply {
    pub text: String,
    pub miss: bool,
    pub latency_ms: u64,
}

impl BackendReply {
    pub fn hit(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            miss: false,
            latency_ms: 0,
        }
    }

    pub fn miss(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            miss: true,
            latency_ms: 0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("server error (status {0})")]
    Server(u16),
    #[error("rejected (status {0})")]
    Rejected(u16),
    #[error("transport: {0}")]
    Transport(String),
    #[error("backend unavailable")]
    Unavailable,
}

impl BackendError {
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Timeout | BackendError::Server(_))
    }
}

pub trait LlmBackend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, call: &BackendCall<'_>) -> Result<BackendReply, BackendError>;
}

/// One `template <TAB> digest <TAB> response` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureEntry {
    pub template: String,
    pub digest: SlotDigest,
    pub response: String,
}

impl FixtureEntry {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}",
            self.template,
            self.digest,
            escape_line(&self.response)
        )
    }
}

/// Answers by exact match on (template name, slot digest).
#[derive(Debug)]
pub struct ScriptedBackend {
    fixtures: RwLock<HashMap<(String, SlotDigest), String>>,
    default_response: String,
    misses: AtomicU64,
}

impl Default for ScriptedBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self {
            fixtures: RwLock::new(HashMap::new()),
            default_response: DEFAULT_SCRIPTED_RESPONSE.to_string(),
            misses: AtomicU64::new(0),
        }
    }

    pub fn with_default_response(mut self, text: impl Into<String>) -> Self {
        self.default_response = text.into();
        self
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parses fixture lines. Blank lines and `#` comments are skipped; any
    /// other malformed line is fatal.
    pub fn parse(text: &str) -> Result<Self, LlmError> {
        let backend = Self::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let (Some(template), Some(digest), Some(response)) =
                (parts.next(), parts.next(), parts.next())
            else {
                return Err(LlmError::Fixture {
                    line: idx + 1,
                    reason: "expected 3 tab-separated fields".into(),
                });
            };
            if template.is_empty() {
                return Err(LlmError::Fixture {
                    line: idx + 1,
                    reason: "empty template name".into(),
                });
            }
            let digest = SlotDigest::parse(digest).ok_or_else(|| LlmError::Fixture {
                line: idx + 1,
                reason: format!("digest `{digest}` is not hex"),
            })?;
            backend.insert(template, digest, unescape_line(response));
        }
        Ok(backend)
    }

    pub fn insert(
        &self,
        template: impl Into<String>,
        digest: SlotDigest,
        response: impl Into<String>,
    ) {
        self.fixtures
            .write()
            .expect("fixture lock poisoned")
            .insert((template.into(), digest), response.into());
    }

    pub fn len(&self) -> usize {
        self.fixtures.read().expect("fixture lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    /// Fixture lines sorted by (template, digest).
    pub fn to_fixture_text(&self) -> String {
        let map = self.fixtures.read().expect("fixture lock poisoned");
        let mut entries: Vec<FixtureEntry> = map
            .iter()
            .map(|((t, d), r)| FixtureEntry {
                template: t.clone(),
                digest: d.clone(),
                response: r.clone(),
            })
            .collect();
        entries.sort_by(|a, b| (&a.template, &a.digest).cmp(&(&b.template, &b.digest)));
        entries.iter().map(|e| e.to_line() + "\n").collect()
    }
}

impl LlmBackend for ScriptedBackend {
    fn id(&self) -> &str {
        "scripted"
    }

    fn complete(&self, call: &BackendCall<'_>) -> Result<BackendReply, BackendError> {
        let map = self.fixtures.read().expect("fixture lock poisoned");
        match map.get(&(call.template.to_string(), call.slot_digest.clone())) {
            Some(text) => Ok(BackendReply::hit(text.clone())),
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                log::debug!("scripted miss: {} {}", call.template, call.slot_digest);
                Ok(BackendReply::miss(self.default_response.clone()))
            }
        }
    }
}

/// Wraps another backend and keeps every non-miss answer as a fixture, so a
/// live run can be replayed through [`ScriptedBackend`].
pub struct RecordingBackend<B> {
    inner: B,
    recorded: Mutex<Vec<FixtureEntry>>,
}

impl<B: LlmBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            recorded: Mutex::new(Vec::new()),
        }
    }

    pub fn entries(&self) -> Vec<FixtureEntry> {
        self.recorded
            .lock()
            .expect("recording lock poisoned")
            .clone()
    }

    pub fn to_fixture_text(&self) -> String {
        self.entries().iter().map(|e| e.to_line() + "\n").collect()
    }
}

impl<B: LlmBackend> LlmBackend for RecordingBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, call: &BackendCall<'_>) -> Result<BackendReply, BackendError> {
        let reply = self.inner.complete(call)?;
        if !reply.miss {
            self.recorded
                .lock()
                .expect("recording lock poisoned")
                .push(FixtureEntry {
                    template: call.template.to_string(),
                    digest: call.slot_digest.clone(),
                    response: reply.text.clone(),
                });
        }
        Ok(reply)
    }
}

type ResponderFn = dyn Fn(&BackendCall<'_>) -> Result<BackendReply, BackendError> + Send + Sync;

/// Backend driven by a closure; handy for rule-based test doubles.
pub struct FnBackend {
    id: String,
    responder: Box<ResponderFn>,
}

impl FnBackend {
    pub fn new<F>(id: impl Into<String>, responder: F) -> Self
    where
        F: Fn(&BackendCall<'_>) -> Result<BackendReply, BackendError> + Send + Sync + 'static,
    {
        Self {
            id: id.into(),
            responder: Box::new(responder),
        }
    }
}

impl LlmBackend for FnBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, call: &BackendCall<'_>) -> Result<BackendReply, BackendError> {
        (self.responder)(call)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Gateway, LlmRequest, SlotValues};
    use std::sync::Arc;

    fn call<'a>(
        template: &'a str,
        digest: &'a SlotDigest,
        params: &'a DecodeParams,
    ) -> BackendCall<'a> {
        BackendCall {
            template,
            slot_digest: digest,
            prompt: "",
            params,
        }
    }

    #[test]
    fn fixture_file_parses_and_answers() {
        let slots = SlotValues::new()
            .with("profile", "")
            .with("conversation", "User: play jazz");
        let text = format!(
            "# comment\n\ndialogue_plan\t{}\tRequest: jazz videos\n",
            slots.digest()
        );
        let backend = ScriptedBackend::parse(&text).unwrap();
        let gw = Gateway::new(Arc::new(backend));
        let resp = gw
            .complete(&LlmRequest::new("dialogue_plan", slots))
            .unwrap();
        assert_eq!(resp.text, "Request: jazz videos");
    }

    #[test]
    fn unmatched_key_returns_default_and_counts_miss() {
        let backend = ScriptedBackend::new();
        let digest = SlotValues::new().with("a", "b").digest();
        let params = DecodeParams::default();
        let reply = backend
            .complete(&call("dialogue_plan", &digest, &params))
            .unwrap();
        assert_eq!(reply.text, DEFAULT_SCRIPTED_RESPONSE);
        assert!(reply.miss);
        assert_eq!(backend.misses(), 1);
    }

    #[test]
    fn fixtures_differing_in_one_slot_answer_differently() {
        let backend = ScriptedBackend::new();
        let params = DecodeParams::default();
        let pairs: Vec<(SlotValues, String)> = (0..50)
            .map(|i| {
                let slots = SlotValues::new()
                    .with("context", "same context")
                    .with("item", format!("item {i}"));
                (slots, format!("Score: answer {i}"))
            })
            .collect();
        for (slots, resp) in &pairs {
            backend.insert("rank_item", slots.digest(), resp.clone());
        }
        assert_eq!(
            backend.len(),
            pairs.len(),
            "digest collision among fixtures"
        );
        for (slots, resp) in &pairs {
            let d = slots.digest();
            assert_eq!(
                &backend
                    .complete(&call("rank_item", &d, &params))
                    .unwrap()
                    .text,
                resp
            );
        }
    }

    #[test]
    fn malformed_fixture_file_is_fatal() {
        let err = ScriptedBackend::parse("dialogue_plan\tabc\n").unwrap_err();
        assert!(matches!(err, LlmError::Fixture { line: 1, .. }));
        let err = ScriptedBackend::parse("ok\tabc\tfine\nt\tnot-hex!\tx\n").unwrap_err();
        assert!(matches!(err, LlmError::Fixture { line: 2, .. }));
    }

    #[test]
    fn multiline_responses_survive_the_file_format() {
        let backend = ScriptedBackend::new();
        let digest = SlotValues::new().with("x", "1").digest();
        backend.insert("t", digest.clone(), "Reasoning: a\tb\nScore: good fit");
        let reparsed = ScriptedBackend::parse(&backend.to_fixture_text()).unwrap();
        let params = DecodeParams::default();
        assert_eq!(
            reparsed
                .complete(&call("t", &digest, &params))
                .unwrap()
                .text,
            "Reasoning: a\tb\nScore: good fit"
        );
    }

    #[test]
    fn recording_backend_replays_through_scripted() {
        let live = FnBackend::new("live", |c| {
            Ok(BackendReply::hit(format!("Response: {}", c.prompt.len())))
        });
        let recorder = Arc::new(RecordingBackend::new(live));
        let gw = Gateway::new(recorder.clone());
        let req = LlmRequest::new(
            "context_summary",
            SlotValues::new().with("conversation", "User: hi"),
        );
        let live_text = gw.complete(&req).unwrap().text;

        let replay = Gateway::new(Arc::new(
            ScriptedBackend::parse(&recorder.to_fixture_text()).unwrap(),
        ));
        let replayed = replay.complete(&req).unwrap();
        assert_eq!(replayed.text, live_text);
        assert!(!replayed.fixture_miss);
    }
}
