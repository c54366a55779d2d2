//! Line-delimited session records: a header line followed by one line per
//! completed turn. The same format stores service sessions and simulated
//! corpora.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::{Session, SystemAction, SystemTurn, Turn};
use crate::simulator::ControlVariable;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{path}: line {line}: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub session_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_id: Option<String>,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub controls: Vec<ControlVariable>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTrace {
    pub scheme: String,
    pub query: String,
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    /// 1-based index of the user turn.
    pub turn_index: usize,
    pub user: String,
    pub system: SystemTurn,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<SystemAction>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub profile_injections: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub memory_writes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<RetrievalTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_output: Option<String>,
    #[serde(default)]
    pub llm_calls: u32,
    #[serde(default)]
    pub latency_ms: u64,
}

impl TurnRecord {
    pub fn plain(turn_index: usize, user: impl Into<String>, system: SystemTurn) -> Self {
        Self {
            turn_index,
            user: user.into(),
            system,
            action: None,
            profile_injections: Vec::new(),
            memory_writes: Vec::new(),
            retrieval: None,
            plan_prompt: None,
            plan_output: None,
            llm_calls: 0,
            latency_ms: 0,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Header(SessionHeader),
    Turn(Box<TurnRecord>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub header: SessionHeader,
    pub turns: Vec<TurnRecord>,
}

impl SessionRecord {
    pub fn new(
        session_id: impl Into<String>,
        user_id: Option<String>,
        config_hash: impl Into<String>,
    ) -> Self {
        Self {
            header: SessionHeader {
                session_id: session_id.into(),
                user_id,
                config_hash: config_hash.into(),
                controls: Vec::new(),
                labels: BTreeMap::new(),
            },
            turns: Vec::new(),
        }
    }

    pub fn session_id(&self) -> &str {
        &self.header.session_id
    }

    pub fn push(&mut self, turn: TurnRecord) {
        self.turns.push(turn);
    }

    pub fn session(&self) -> Session {
        let mut s = Session {
            session_id: self.header.session_id.clone(),
            user_id: self.header.user_id.clone(),
            turns: Vec::with_capacity(self.turns.len() * 2),
        };
        for t in &self.turns {
            s.turns.push(Turn::User {
                utterance: t.user.clone(),
            });
            s.turns.push(Turn::System(t.system.clone()));
        }
        s
    }

    pub fn header_line(&self) -> String {
        serde_json::to_string(&Line::Header(self.header.clone())).expect("header serializes")
    }

    pub fn turn_line(turn: &TurnRecord) -> String {
        serde_json::to_string(&Line::Turn(Box::new(turn.clone()))).expect("turn serializes")
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = self.header_line();
        out.push('\n');
        for t in &self.turns {
            out.push_str(&Self::turn_line(t));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, RecordError> {
        let bad = |line: usize, reason: String| RecordError::Malformed {
            path: origin.to_string(),
            line,
            reason,
        };
        let mut header = None;
        let mut turns = Vec::new();
        for (n, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            match serde_json::from_str::<Line>(line).map_err(|e| bad(n + 1, e.to_string()))? {
                Line::Header(h) if header.is_none() && turns.is_empty() => header = Some(h),
                Line::Header(_) => return Err(bad(n + 1, "unexpected header".into())),
                Line::Turn(_) if header.is_none() => {
                    return Err(bad(n + 1, "turn before header".into()))
                }
                Line::Turn(t) => turns.push(*t),
            }
        }
        let header = header.ok_or_else(|| bad(0, "missing header".into()))?;
        Ok(Self { header, turns })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RecordError> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path)?, &path.display().to_string())
    }

    /// Writes the whole record through a temporary file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RecordError> {
        let path = path.as_ref();
        let tmp = path.with_extension("jsonl.tmp");
        fs::write(&tmp, self.to_jsonl())?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    /// Appends one turn line to an existing record file.
    pub fn append_turn(path: impl AsRef<Path>, turn: &TurnRecord) -> Result<(), RecordError> {
        let mut f = fs::OpenOptions::new().append(true).open(path)?;
        writeln!(f, "{}", Self::turn_line(turn))?;
        f.sync_data()?;
        Ok(())
    }
}

pub fn record_path(dir: &Path, session_id: &str) -> PathBuf {
    dir.join(format!("{session_id}.jsonl"))
}

/// Every `*.jsonl` record in `dir`, ordered by session id.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<SessionRecord>, RecordError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "jsonl") {
            out.push(SessionRecord::load(&path)?);
        }
    }
    out.sort_by(|a, b| a.header.session_id.cmp(&b.header.session_id));
    Ok(out)
}

pub fn save_dir(dir: impl AsRef<Path>, records: &[SessionRecord]) -> Result<(), RecordError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for r in records {
        r.save(record_path(dir, r.session_id()))?;
    }
    Ok(())
}
