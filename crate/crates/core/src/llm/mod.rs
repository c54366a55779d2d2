//! One entry point for every language-model call: templates are registered
//! by name, rendered against ordered slot values, and sent to a pluggable
//! backend.

mod backend;
mod remote;
mod rules;
mod template;
pub mod templates;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{
    BackendCall, BackendError, BackendReply, FixtureEntry, FnBackend, LlmBackend, RecordingBackend,
    ScriptedBackend, DEFAULT_SCRIPTED_RESPONSE,
};
pub use remote::{RemoteBackend, LLM_KEY_ENV, LLM_URL_ENV};
pub use rules::RuleBackend;
pub use template::{PromptTemplate, Segment, SlotDigest, SlotValues, EXAMPLES_SLOT};

pub const DEFAULT_CONTEXT_BUDGET: usize = 8192;
pub const DEFAULT_RETRIES: u32 = 2;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("unknown prompt template `{0}`")]
    UnknownTemplate(String),
    #[error("template `{template}`: {reason}")]
    TemplateSyntax { template: String, reason: String },
    #[error("template `{template}`: slot `{slot}` not filled")]
    MissingSlot { template: String, slot: String },
    #[error("template `{template}`: unknown slot `{slot}`")]
    UnknownSlot { template: String, slot: String },
    #[error("template `{template}`: rendered prompt is {rendered_chars} chars, budget {budget_chars}; largest slot `{slot}`")]
    OverBudget {
        template: String,
        slot: String,
        rendered_chars: usize,
        budget_chars: usize,
    },
    #[error("backend `{backend}` failed after {attempts} attempt(s): {source}")]
    Backend {
        backend: String,
        attempts: u32,
        #[source]
        source: BackendError,
    },
    #[error("fixture file line {line}: {reason}")]
    Fixture { line: usize, reason: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub max_output_chars: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            max_output_chars: 2048,
            temperature: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmRequest {
    pub template: String,
    pub slots: SlotValues,
    pub params: DecodeParams,
}

impl LlmRequest {
    pub fn new(template: impl Into<String>, slots: SlotValues) -> Self {
        Self {
            template: template.into(),
            slots,
            params: DecodeParams::default(),
        }
    }

    pub fn with_params(mut self, params: DecodeParams) -> Self {
        self.params = params;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmResponse {
    pub text: String,
    pub backend_id: String,
    pub latency_ms: u64,
    /// The backend had nothing better than its default answer.
    pub fixture_miss: bool,
}

#[derive(Debug, Default)]
pub struct GatewayCounters {
    calls: AtomicU64,
    misses: AtomicU64,
    retries: AtomicU64,
    failures: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CounterSnapshot {
    pub calls: u64,
    pub misses: u64,
    pub retries: u64,
    pub failures: u64,
}

impl GatewayCounters {
    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            calls: self.calls.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
            failures: self.failures.load(Ordering::Relaxed),
        }
    }
}

pub struct Gateway {
    templates: HashMap<String, PromptTemplate>,
    backend: Arc<dyn LlmBackend>,
    retries: u32,
    context_budget: usize,
    counters: GatewayCounters,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.id())
            .field("templates", &self.templates.len())
            .field("retries", &self.retries)
            .field("context_budget", &self.context_budget)
            .finish()
    }
}

impl Gateway {
    /// A gateway with the stock templates registered.
    pub fn new(backend: Arc<dyn LlmBackend>) -> Self {
        let mut gw = Self::bare(backend);
        for t in templates::default_templates() {
            gw.register(t);
        }
        gw
    }

    /// A gateway with no templates registered.
    pub fn bare(backend: Arc<dyn LlmBackend>) -> Self {
        Self {
            templates: HashMap::new(),
            backend,
            retries: DEFAULT_RETRIES,
            context_budget: DEFAULT_CONTEXT_BUDGET,
            counters: GatewayCounters::default(),
        }
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn with_context_budget(mut self, chars: usize) -> Self {
        self.context_budget = chars;
        self
    }

    pub fn register(&mut self, template: PromptTemplate) {
        self.templates.insert(template.name().to_string(), template);
    }

    pub fn template(&self, name: &str) -> Option<&PromptTemplate> {
        self.templates.get(name)
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn context_budget(&self) -> usize {
        self.context_budget
    }

    pub fn counters(&self) -> CounterSnapshot {
        self.counters.snapshot()
    }

    pub fn render(&self, request: &LlmRequest) -> Result<String, LlmError> {
        let template = self
            .templates
            .get(&request.template)
            .ok_or_else(|| LlmError::UnknownTemplate(request.template.clone()))?;
        template.render(&request.slots, self.context_budget)
    }

    /// Renders and sends one request, retrying transient backend failures.
    /// The backend's text comes back unmodified.
    pub fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let prompt = self.render(request)?;
        let digest = request.slots.digest();
        let call = BackendCall {
            template: &request.template,
            slot_digest: &digest,
            prompt: &prompt,
            params: &request.params,
        };
        self.counters.calls.fetch_add(1, Ordering::Relaxed);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.backend.complete(&call) {
                Ok(reply) => {
                    if reply.miss {
                        self.counters.misses.fetch_add(1, Ordering::Relaxed);
                    }
                    return Ok(LlmResponse {
                        text: reply.text,
                        backend_id: self.backend.id().to_string(),
                        latency_ms: reply.latency_ms,
                        fixture_miss: reply.miss,
                    });
                }
                Err(err) if err.is_transient() && attempt <= self.retries => {
                    self.counters.retries.fetch_add(1, Ordering::Relaxed);
                    log::warn!(
                        "backend {} attempt {attempt} failed: {err}",
                        self.backend.id()
                    );
                }
                Err(err) => {
                    self.counters.failures.fetch_add(1, Ordering::Relaxed);
                    return Err(LlmError::Backend {
                        backend: self.backend.id().to_string(),
                        attempts: attempt,
                        source: err,
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;

    fn echo_gateway(fixture: &str) -> (Gateway, SlotValues) {
        let slots = SlotValues::new()
            .with("profile", "")
            .with("conversation", "User: hi");
        let backend = ScriptedBackend::new();
        backend.insert("dialogue_plan", slots.digest(), fixture);
        (Gateway::new(Arc::new(backend)), slots)
    }

    #[test]
    fn scripted_fixture_is_echoed() {
        let (gw, slots) = echo_gateway("Response: Hi!");
        let resp = gw
            .complete(&LlmRequest::new("dialogue_plan", slots))
            .unwrap();
        assert_eq!(resp.text, "Response: Hi!");
        assert!(!resp.fixture_miss);
        assert_eq!(resp.backend_id, "scripted");
    }

    #[test]
    fn unknown_template_is_fatal() {
        let (gw, slots) = echo_gateway("Response: Hi!");
        let err = gw.complete(&LlmRequest::new("nope", slots)).unwrap_err();
        assert!(matches!(err, LlmError::UnknownTemplate(ref t) if t == "nope"));
    }

    #[test]
    fn over_budget_prompt_names_slot() {
        let (gw, _) = echo_gateway("Response: Hi!");
        let gw = gw.with_context_budget(200);
        let slots = SlotValues::new()
            .with("profile", "")
            .with("conversation", "User: ".to_string() + &"la ".repeat(500));
        let err = gw
            .complete(&LlmRequest::new("dialogue_plan", slots))
            .unwrap_err();
        assert!(matches!(err, LlmError::OverBudget { ref slot, .. } if slot == "conversation"));
    }

    struct Flaky {
        failures_left: AtomicU32,
    }

    impl LlmBackend for Flaky {
        fn id(&self) -> &str {
            "flaky"
        }
        fn complete(&self, _call: &BackendCall<'_>) -> Result<BackendReply, BackendError> {
            if self.failures_left.load(Ordering::SeqCst) > 0 {
                self.failures_left.fetch_sub(1, Ordering::SeqCst);
                return Err(BackendError::Server(503));
            }
            Ok(BackendReply::hit("Response: ok"))
        }
    }

    #[test]
    fn transient_failures_are_retried_then_surfaced() {
        let slots = SlotValues::new().with("conversation", "x");
        let gw = Gateway::new(Arc::new(Flaky {
            failures_left: AtomicU32::new(2),
        }));
        let resp = gw
            .complete(&LlmRequest::new("context_summary", slots.clone()))
            .unwrap();
        assert_eq!(resp.text, "Response: ok");
        assert_eq!(gw.counters().retries, 2);

        let gw = Gateway::new(Arc::new(Flaky {
            failures_left: AtomicU32::new(3),
        }));
        let err = gw
            .complete(&LlmRequest::new("context_summary", slots))
            .unwrap_err();
        assert!(matches!(err, LlmError::Backend { attempts: 3, .. }));
        assert_eq!(gw.counters().failures, 1);
    }
}
