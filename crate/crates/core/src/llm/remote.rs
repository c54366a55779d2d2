use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{BackendCall, BackendError, BackendReply, LlmBackend};
use crate::http;

pub const LLM_URL_ENV: &str = "CONVREC_LLM_URL";
pub const LLM_KEY_ENV: &str = "CONVREC_LLM_KEY";

#[derive(Serialize)]
struct CompletionBody<'a> {
    prompt: &'a str,
    max_output_chars: usize,
    temperature: f64,
    seed: u64,
}

#[derive(Deserialize)]
struct CompletionReply {
    text: String,
}

/// Text-in/text-out completion endpoint spoken over HTTP POST.
///
/// The request body is `{"prompt", "max_output_chars", "temperature",
/// "seed"}`; the reply is either `{"text": ...}` or a plain-text body.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    url: String,
    key: Option<String>,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(url: impl Into<String>, key: Option<String>, timeout: Duration) -> Self {
        Self {
            url: url.into(),
            key,
            agent: http::agent(timeout),
        }
    }

    /// Reads the endpoint and key from the environment.
    pub fn from_env(timeout: Duration) -> Option<Self> {
        let url = std::env::var(LLM_URL_ENV).ok().filter(|u| !u.is_empty())?;
        let key = std::env::var(LLM_KEY_ENV).ok().filter(|k| !k.is_empty());
        Some(Self::new(url, key, timeout))
    }
}

impl LlmBackend for RemoteBackend {
    fn id(&self) -> &str {
        "remote"
    }

    fn complete(&self, call: &BackendCall<'_>) -> Result<BackendReply, BackendError> {
        let started = Instant::now();
        let body = CompletionBody {
            prompt: call.prompt,
            max_output_chars: call.params.max_output_chars,
            temperature: call.params.temperature,
            seed: call.params.seed,
        };
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let text = http::read_text(req.send_json(&body))?;
        let text = match serde_json::from_str::<CompletionReply>(&text) {
            Ok(reply) => reply.text,
            Err(_) => text,
        };
        Ok(BackendReply {
            text,
            miss: false,
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}
