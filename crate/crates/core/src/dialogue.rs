//! The unified dialogue controller. One model call plans the turn as
//! prefixed lines; the first `Request:`/`Response:` line is the single
//! action the system executes.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::llm::{templates, DecodeParams, Gateway, LlmRequest, SlotValues};
use crate::profile::profile_line;
use crate::ranker::RecommendationSlate;
use crate::session::{
    ActionKind, ArtifactKind, DialogueArtifact, Session, SystemAction, SystemTurn, Turn,
};

pub const OMITTED_MARKER: &str = "[earlier turns omitted]";
pub const FALLBACK_REPHRASE: &str = "Could you rephrase that?";
pub const APOLOGY: &str = "Sorry, something went wrong on my side. Could you say that again?";
pub const DEFAULT_CONTEXT_CHARS: usize = 6000;

const ARTIFACT_PREFIXES: [(&str, ArtifactKind); 3] = [
    ("Context:", ArtifactKind::ContextTracking),
    ("Reasoning:", ArtifactKind::Reasoning),
    ("Memory:", ArtifactKind::MemoryExtraction),
];
const REQUEST_PREFIX: &str = "Request:";
const RESPONSE_PREFIX: &str = "Response:";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("model output has no Request:/Response: line")]
    NoTerminal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedOutput {
    pub artifacts: Vec<DialogueArtifact>,
    pub action: SystemAction,
    /// Set when the fallback action was substituted.
    pub error: Option<ParseError>,
}

/// Scans `raw` top-down. Total: without a terminal line the result is the
/// fallback `respond("Could you rephrase that?")` plus an incident artifact.
pub fn parse_actions(raw: &str) -> ParsedOutput {
    let mut artifacts: Vec<DialogueArtifact> = Vec::new();
    let mut terminal = None;
    for line in raw.lines() {
        if let Some(rest) = line.strip_prefix(REQUEST_PREFIX) {
            if !rest.trim().is_empty() {
                terminal = Some(SystemAction::request(rest.trim()));
                break;
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix(RESPONSE_PREFIX) {
            if !rest.trim().is_empty() {
                terminal = Some(SystemAction::respond(rest.trim()));
                break;
            }
            continue;
        }
        if let Some((kind, rest)) = ARTIFACT_PREFIXES
            .iter()
            .find_map(|(p, k)| line.strip_prefix(p).map(|rest| (*k, rest)))
        {
            artifacts.push(DialogueArtifact::new(kind, rest.trim()));
            continue;
        }
        let folded = line.trim();
        if let (Some(last), false) = (artifacts.last_mut(), folded.is_empty()) {
            if !last.text.is_empty() {
                last.text.push('\n');
            }
            last.text.push_str(folded);
        }
    }
    artifacts.retain(|a| !a.text.is_empty());
    match terminal {
        Some(action) => ParsedOutput {
            artifacts,
            action,
            error: None,
        },
        None => {
            artifacts.push(DialogueArtifact::incident(
                "model output had no terminal action",
            ));
            ParsedOutput {
                artifacts,
                action: SystemAction::respond(FALLBACK_REPHRASE),
                error: Some(ParseError::NoTerminal),
            }
        }
    }
}

/// Writes artifacts and the action back as prefixed lines.
pub fn serialize_actions(artifacts: &[DialogueArtifact], action: &SystemAction) -> String {
    let mut out = String::new();
    for a in artifacts {
        let prefix = match a.kind {
            ArtifactKind::ContextTracking => "Context:",
            ArtifactKind::Reasoning => "Reasoning:",
            ArtifactKind::MemoryExtraction => "Memory:",
            ArtifactKind::Incident => continue,
        };
        out.push_str(prefix);
        out.push(' ');
        out.push_str(&a.text);
        out.push('\n');
    }
    out.push_str(match action.kind {
        ActionKind::Request => REQUEST_PREFIX,
        ActionKind::Respond => RESPONSE_PREFIX,
    });
    out.push(' ');
    out.push_str(&action.payload);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedContext {
    pub profile: String,
    pub conversation: String,
    pub omitted_turns: usize,
}

impl RenderedContext {
    pub fn slots(&self) -> SlotValues {
        SlotValues::new()
            .with("profile", self.profile.clone())
            .with("conversation", self.conversation.clone())
    }
}

pub fn slate_line(slate: &RecommendationSlate) -> String {
    let mut line = String::from("Slate:");
    for (i, item) in slate.items.iter().enumerate() {
        line.push_str(&format!(" {}. {}", i + 1, item.title));
    }
    line
}

fn turn_block(turn: &Turn) -> String {
    match turn {
        Turn::User { utterance } => format!("User: {utterance}\n"),
        Turn::System(s) => {
            let mut block = format!("System: {}\n", s.utterance);
            if let Some(slate) = s.slate.as_ref().filter(|sl| !sl.items.is_empty()) {
                block.push_str(&slate_line(slate));
                block.push('\n');
            }
            block
        }
    }
}

/// Serializes profile facts and the conversation for the planning prompt.
/// When the text would exceed `budget_chars`, the oldest turns go first;
/// profile lines and the newest turn are always kept.
pub fn render_context(
    session: &Session,
    profile_facts: &[String],
    budget_chars: usize,
) -> RenderedContext {
    let profile: String = profile_facts
        .iter()
        .map(|f| profile_line(f) + "\n")
        .collect();
    let blocks: Vec<String> = session.turns.iter().map(turn_block).collect();
    let marker_len = OMITTED_MARKER.chars().count() + 1;
    let available = budget_chars.saturating_sub(profile.chars().count());

    let total: usize = blocks.iter().map(|b| b.chars().count()).sum();
    let mut kept_from = 0;
    if total > available {
        let mut used = marker_len;
        kept_from = blocks.len();
        for (idx, block) in blocks.iter().enumerate().rev() {
            let len = block.chars().count();
            if used + len > available && kept_from < blocks.len() {
                break;
            }
            used += len;
            kept_from = idx;
        }
    }
    let mut conversation = String::new();
    if kept_from > 0 {
        conversation.push_str(OMITTED_MARKER);
        conversation.push('\n');
    }
    for block in &blocks[kept_from..] {
        conversation.push_str(block);
    }
    RenderedContext {
        profile,
        conversation,
        omitted_turns: kept_from,
    }
}

/// Runs retrieval and ranking for a `Request:` query.
pub trait SlateProvider {
    fn recommend(&self, query: &str, session: &Session) -> Result<RecommendationSlate, String>;
}

/// Receives `Memory:` artifacts for the user profile.
pub trait MemorySink {
    fn remember(&self, artifact: &DialogueArtifact);
}

/// Discards memories; for callers without a profile store.
pub struct NoMemory;

impl MemorySink for NoMemory {
    fn remember(&self, _artifact: &DialogueArtifact) {}
}

#[derive(Debug, Error)]
pub enum DialogueError {
    #[error("a system turn needs a session ending with a user turn")]
    NotUsersTurn,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnOutcome {
    pub turn: SystemTurn,
    pub action: SystemAction,
    pub plan_prompt: String,
    pub plan_output: String,
    pub llm_calls: u32,
    pub latency_ms: u64,
}

#[derive(Debug, Clone)]
pub struct DialogueConfig {
    pub context_chars: usize,
    pub decode: DecodeParams,
}

impl Default for DialogueConfig {
    fn default() -> Self {
        Self {
            context_chars: DEFAULT_CONTEXT_CHARS,
            decode: DecodeParams::default(),
        }
    }
}

pub struct DialogueManager {
    gateway: Arc<Gateway>,
    config: DialogueConfig,
}

impl DialogueManager {
    pub fn new(gateway: Arc<Gateway>, config: DialogueConfig) -> Self {
        Self { gateway, config }
    }

    /// Plans one system turn. A `Request:` triggers `slates` and a second,
    /// grounded call that writes the user-facing message about the slate.
    /// Stage failures become an apology turn with an incident artifact.
    pub fn take_system_turn(
        &self,
        session: &Session,
        profile_facts: &[String],
        slates: &dyn SlateProvider,
        memory: &dyn MemorySink,
    ) -> Result<TurnOutcome, DialogueError> {
        if !session.ends_with_user() {
            return Err(DialogueError::NotUsersTurn);
        }
        let context = render_context(session, profile_facts, self.config.context_chars);
        let request = LlmRequest::new(templates::DIALOGUE_PLAN, context.slots())
            .with_params(self.config.decode.clone());
        let plan_prompt = self.gateway.render(&request).unwrap_or_default();
        let mut outcome = TurnOutcome {
            turn: SystemTurn::plain(APOLOGY),
            action: SystemAction::respond(APOLOGY),
            plan_prompt,
            plan_output: String::new(),
            llm_calls: 1,
            latency_ms: 0,
        };
        let response = match self.gateway.complete(&request) {
            Ok(r) => r,
            Err(err) => {
                outcome
                    .turn
                    .artifacts
                    .push(DialogueArtifact::incident(format!(
                        "dialogue plan failed: {err}"
                    )));
                return Ok(outcome);
            }
        };
        outcome.latency_ms += response.latency_ms;
        outcome.plan_output = response.text.clone();
        let parsed = parse_actions(&response.text);
        for artifact in parsed
            .artifacts
            .iter()
            .filter(|a| a.kind == ArtifactKind::MemoryExtraction)
        {
            memory.remember(artifact);
        }
        outcome.turn.artifacts = parsed.artifacts;
        outcome.action = parsed.action.clone();

        match parsed.action.kind {
            ActionKind::Respond => {
                outcome.turn.utterance = parsed.action.payload;
            }
            ActionKind::Request => {
                self.ground(session, &parsed.action.payload, slates, &mut outcome)
            }
        }
        Ok(outcome)
    }

    fn ground(
        &self,
        session: &Session,
        query: &str,
        slates: &dyn SlateProvider,
        outcome: &mut TurnOutcome,
    ) {
        let slate = match slates.recommend(query, session) {
            Ok(slate) if !slate.items.is_empty() => slate,
            Ok(_) => {
                outcome.turn.utterance =
                    format!("Sorry, I couldn't find anything for \"{query}\". Could you describe it differently?");
                outcome
                    .turn
                    .artifacts
                    .push(DialogueArtifact::incident(format!(
                        "no candidates for `{query}`"
                    )));
                return;
            }
            Err(err) => {
                outcome.turn.utterance = APOLOGY.to_string();
                outcome
                    .turn
                    .artifacts
                    .push(DialogueArtifact::incident(format!(
                        "recommendation failed: {err}"
                    )));
                return;
            }
        };
        let slate_text: String = slate
            .items
            .iter()
            .enumerate()
            .map(|(i, item)| {
                format!(
                    "{}. {} ({}): {}\n",
                    i + 1,
                    item.title,
                    item.bucket_phrase,
                    item.explanation
                )
            })
            .collect();
        let context = render_context(session, &[], self.config.context_chars);
        let slots = SlotValues::new()
            .with("query", query)
            .with("slate", slate_text)
            .with("conversation", context.conversation);
        let request = LlmRequest::new(templates::DIALOGUE_GROUNDED_RESPONSE, slots)
            .with_params(self.config.decode.clone());
        outcome.llm_calls += 1;
        let fallback = format!("Here are some videos for \"{query}\".");
        outcome.turn.utterance = match self.gateway.complete(&request) {
            Ok(resp) => {
                outcome.latency_ms += resp.latency_ms;
                let parsed = parse_actions(&resp.text);
                match parsed.action.kind {
                    ActionKind::Respond if parsed.error.is_none() => parsed.action.payload,
                    _ => {
                        outcome.turn.artifacts.push(DialogueArtifact::incident(
                            "grounded response had no Response: line",
                        ));
                        fallback
                    }
                }
            }
            Err(err) => {
                outcome
                    .turn
                    .artifacts
                    .push(DialogueArtifact::incident(format!(
                        "grounded response failed: {err}"
                    )));
                fallback
            }
        };
        outcome.turn.slate = Some(slate);
    }
}
