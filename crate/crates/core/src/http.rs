//! Blocking HTTP helpers shared by the remote LLM backend, the remote search
//! client and the remote CRS client.

use std::time::Duration;

use crate::llm::BackendError;

pub(crate) fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

/// Maps a response to its body text, classifying failures.
pub(crate) fn read_text(
    result: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
) -> Result<String, BackendError> {
    let mut resp = result.map_err(classify)?;
    let status = resp.status().as_u16();
    if status >= 500 {
        return Err(BackendError::Server(status));
    }
    if status >= 400 {
        return Err(BackendError::Rejected(status));
    }
    resp.body_mut().read_to_string().map_err(classify)
}

fn classify(err: ureq::Error) -> BackendError {
    match err {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        ureq::Error::StatusCode(code) if code >= 500 => BackendError::Server(code),
        ureq::Error::StatusCode(code) => BackendError::Rejected(code),
        ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => BackendError::Timeout,
        other => BackendError::Transport(other.to_string()),
    }
}
