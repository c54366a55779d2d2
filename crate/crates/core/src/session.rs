//! The conversation object every module reads: alternating user and system
//! turns, where system turns may carry a slate and the artifacts of the
//! dialogue model's planning output.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ranker::RecommendationSlate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    ContextTracking,
    Reasoning,
    MemoryExtraction,
    /// Recorded by the system itself when a stage fails; never parsed from
    /// model output.
    Incident,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueArtifact {
    pub kind: ArtifactKind,
    pub text: String,
}

impl DialogueArtifact {
    pub fn new(kind: ArtifactKind, text: impl Into<String>) -> Self {
        Self {
            kind,
            text: text.into(),
        }
    }

    pub fn incident(text: impl Into<String>) -> Self {
        Self::new(ArtifactKind::Incident, text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Respond,
    Request,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemAction {
    pub kind: ActionKind,
    pub payload: String,
}

impl SystemAction {
    pub fn respond(text: impl Into<String>) -> Self {
        Self {
            kind: ActionKind::Respond,
            payload: text.into(),
        }
    }

    pub fn request(query: impl Into<String>) -> Self {
        Self {
            kind: ActionKind::Request,
            payload: query.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemTurn {
    pub utterance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slate: Option<RecommendationSlate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub artifacts: Vec<DialogueArtifact>,
}

impl SystemTurn {
    pub fn plain(utterance: impl Into<String>) -> Self {
        Self {
            utterance: utterance.into(),
            slate: None,
            artifacts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum Turn {
    User { utterance: String },
    System(SystemTurn),
}

impl Turn {
    pub fn is_user(&self) -> bool {
        matches!(self, Turn::User { .. })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SessionError {
    #[error("turns must alternate between user and system")]
    NotAlternating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_id: Option<String>,
    #[serde(default)]
    pub turns: Vec<Turn>,
}

impl Session {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            user_id: None,
            turns: Vec::new(),
        }
    }

    pub fn with_user(mut self, user_id: impl Into<String>) -> Self {
        self.user_id = Some(user_id.into());
        self
    }

    pub fn push(&mut self, turn: Turn) -> Result<(), SessionError> {
        if let Some(last) = self.turns.last() {
            if last.is_user() == turn.is_user() {
                return Err(SessionError::NotAlternating);
            }
        }
        self.turns.push(turn);
        Ok(())
    }

    pub fn push_user(&mut self, utterance: impl Into<String>) -> Result<(), SessionError> {
        self.push(Turn::User {
            utterance: utterance.into(),
        })
    }

    pub fn push_system(&mut self, turn: SystemTurn) -> Result<(), SessionError> {
        self.push(Turn::System(turn))
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn ends_with_user(&self) -> bool {
        self.turns.last().is_some_and(Turn::is_user)
    }

    pub fn user_utterances(&self) -> impl Iterator<Item = &str> {
        self.turns.iter().filter_map(|t| match t {
            Turn::User { utterance } => Some(utterance.as_str()),
            Turn::System(_) => None,
        })
    }

    pub fn user_turn_count(&self) -> usize {
        self.user_utterances().count()
    }

    pub fn last_user_utterance(&self) -> Option<&str> {
        self.user_utterances().last()
    }

    pub fn system_turns(&self) -> impl Iterator<Item = &SystemTurn> {
        self.turns.iter().filter_map(|t| match t {
            Turn::System(s) => Some(s),
            Turn::User { .. } => None,
        })
    }

    /// The prefix ending with the `n`-th user turn (1-based).
    pub fn prefix_through_user_turn(&self, n: usize) -> Option<Session> {
        let mut seen = 0;
        for (idx, turn) in self.turns.iter().enumerate() {
            if turn.is_user() {
                seen += 1;
                if seen == n {
                    return Some(Session {
                        session_id: self.session_id.clone(),
                        user_id: self.user_id.clone(),
                        turns: self.turns[..=idx].to_vec(),
                    });
                }
            }
        }
        None
    }

    /// `User: …` / `System: …` lines, without slates.
    pub fn transcript(&self) -> String {
        let mut out = String::new();
        for turn in &self.turns {
            match turn {
                Turn::User { utterance } => {
                    out.push_str("User: ");
                    out.push_str(utterance);
                }
                Turn::System(s) => {
                    out.push_str("System: ");
                    out.push_str(&s.utterance);
                }
            }
            out.push('\n');
        }
        out
    }
}
