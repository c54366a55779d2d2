//! Per-user natural-language profiles: facts written from the dialogue
//! model's `Memory:` lines, retrieved by cosine distance to the last user
//! utterance, and injected back into the planning prompt.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{cosine, Embedder, EmbeddingVector};
use crate::session::{ArtifactKind, DialogueArtifact};

pub const DEFAULT_THRESHOLD: f64 = 0.35;
pub const PROFILE_PREFIX: &str = "User profile: ";

pub fn profile_line(text: &str) -> String {
    format!("{PROFILE_PREFIX}{text}")
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("profile fact text is empty")]
    EmptyFact,
    #[error("invalid user id {0:?}")]
    BadUserId(String),
    #[error("profile file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileFact {
    pub fact_id: String,
    pub user_id: String,
    pub text: String,
    #[serde(skip)]
    pub embedding: Option<EmbeddingVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_session_id: Option<String>,
    /// Logical insertion sequence within the user's profile.
    pub created_at: u64,
}

impl ProfileFact {
    fn embedding(&self, embedder: &Embedder) -> EmbeddingVector {
        self.embedding
            .clone()
            .unwrap_or_else(|| embedder.embed(&self.text))
    }
}

/// `1 - cosine`; the zero vector is at distance 1 from everything.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - cosine(a, b)
}

/// The closest fact to `utterance` when its distance is at most
/// `threshold`. Ties go to the earliest fact.
pub fn trigger_and_retrieve<'a>(
    facts: &'a [ProfileFact],
    utterance: &str,
    threshold: f64,
    embedder: &Embedder,
) -> Option<(&'a ProfileFact, f64)> {
    let query = embedder.embed(utterance);
    let mut best: Option<(&ProfileFact, f64)> = None;
    for fact in facts {
        let d = cosine_distance(query.as_slice(), fact.embedding(embedder).as_slice());
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((fact, d));
        }
    }
    best.filter(|(_, d)| *d <= threshold)
}

/// Prompt lines for the triggered fact, if any.
pub fn integrate(fact: Option<&ProfileFact>) -> Vec<String> {
    fact.map(|f| vec![profile_line(&f.text)])
        .unwrap_or_default()
}

fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn valid_user_id(user_id: &str) -> bool {
    !user_id.is_empty()
        && user_id.len() <= 128
        && user_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !user_id.starts_with('.')
}

/// Facts keyed by user, optionally persisted as one JSON-lines file per
/// user. Writes for a user are serialized; edits are visible to the next
/// read.
pub struct ProfileStore {
    dir: Option<PathBuf>,
    embedder: Embedder,
    users: Mutex<HashMap<String, Arc<Mutex<Vec<ProfileFact>>>>>,
}

impl ProfileStore {
    pub fn in_memory(embedder: Embedder) -> Self {
        Self {
            dir: None,
            embedder,
            users: Mutex::new(HashMap::new()),
        }
    }

    pub fn open(dir: impl Into<PathBuf>, embedder: Embedder) -> Result<Self, ProfileError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir: Some(dir),
            embedder,
            users: Mutex::new(HashMap::new()),
        })
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    fn path(&self, user_id: &str) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(format!("{user_id}.jsonl")))
    }

    fn slot(&self, user_id: &str) -> Result<Arc<Mutex<Vec<ProfileFact>>>, ProfileError> {
        if !valid_user_id(user_id) {
            return Err(ProfileError::BadUserId(user_id.to_string()));
        }
        let mut users = self.users.lock().expect("profile map poisoned");
        if let Some(slot) = users.get(user_id) {
            return Ok(slot.clone());
        }
        let facts = match self.path(user_id) {
            Some(path) if path.exists() => self.load(&path)?,
            _ => Vec::new(),
        };
        let slot = Arc::new(Mutex::new(facts));
        users.insert(user_id.to_string(), slot.clone());
        Ok(slot)
    }

    fn load(&self, path: &Path) -> Result<Vec<ProfileFact>, ProfileError> {
        let text = fs::read_to_string(path)?;
        let mut facts = Vec::new();
        for (n, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let mut fact: ProfileFact =
                serde_json::from_str(line).map_err(|e| ProfileError::Corrupt {
                    path: path.to_path_buf(),
                    reason: format!("line {}: {e}", n + 1),
                })?;
            fact.embedding = Some(self.embedder.embed(&fact.text));
            facts.push(fact);
        }
        Ok(facts)
    }

    fn persist(&self, user_id: &str, facts: &[ProfileFact]) -> Result<(), ProfileError> {
        let Some(path) = self.path(user_id) else {
            return Ok(());
        };
        let tmp = path.with_extension("jsonl.tmp");
        let mut file = fs::File::create(&tmp)?;
        for fact in facts {
            writeln!(
                file,
                "{}",
                serde_json::to_string(fact).expect("fact serializes")
            )?;
        }
        file.sync_all()?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    fn make_fact(
        &self,
        user_id: &str,
        text: String,
        session_id: Option<&str>,
        seq: u64,
    ) -> ProfileFact {
        ProfileFact {
            fact_id: format!("{user_id}-f{seq}"),
            user_id: user_id.to_string(),
            embedding: Some(self.embedder.embed(&text)),
            text,
            source_session_id: session_id.map(str::to_string),
            created_at: seq,
        }
    }

    pub fn facts(&self, user_id: &str) -> Result<Vec<ProfileFact>, ProfileError> {
        let slot = self.slot(user_id)?;
        let facts = slot.lock().expect("profile poisoned").clone();
        Ok(facts)
    }

    /// Inserts `text` unless a case-insensitive duplicate exists, in which
    /// case the existing fact is returned.
    pub fn add(
        &self,
        user_id: &str,
        text: &str,
        session_id: Option<&str>,
    ) -> Result<ProfileFact, ProfileError> {
        let text = normalize_text(text);
        if text.is_empty() {
            return Err(ProfileError::EmptyFact);
        }
        let slot = self.slot(user_id)?;
        let mut facts = slot.lock().expect("profile poisoned");
        let key = text.to_lowercase();
        if let Some(existing) = facts.iter().find(|f| f.text.to_lowercase() == key) {
            return Ok(existing.clone());
        }
        let seq = facts.iter().map(|f| f.created_at + 1).max().unwrap_or(0);
        let fact = self.make_fact(user_id, text, session_id, seq);
        let mut next = facts.clone();
        next.push(fact.clone());
        self.persist(user_id, &next)?;
        *facts = next;
        Ok(fact)
    }

    /// Replaces the whole fact list. Any blank text rejects the request
    /// without touching the stored profile; duplicates collapse.
    pub fn replace(
        &self,
        user_id: &str,
        texts: &[String],
    ) -> Result<Vec<ProfileFact>, ProfileError> {
        let cleaned: Vec<String> = texts.iter().map(|t| normalize_text(t)).collect();
        if cleaned.iter().any(String::is_empty) {
            return Err(ProfileError::EmptyFact);
        }
        let slot = self.slot(user_id)?;
        let mut facts = slot.lock().expect("profile poisoned");
        let mut next: Vec<ProfileFact> = Vec::new();
        for text in cleaned {
            let key = text.to_lowercase();
            if next.iter().any(|f| f.text.to_lowercase() == key) {
                continue;
            }
            let seq = next.len() as u64;
            next.push(self.make_fact(user_id, text, None, seq));
        }
        self.persist(user_id, &next)?;
        *facts = next.clone();
        Ok(next)
    }

    pub fn trigger(
        &self,
        user_id: &str,
        utterance: &str,
        threshold: f64,
    ) -> Result<Option<(ProfileFact, f64)>, ProfileError> {
        let facts = self.facts(user_id)?;
        Ok(
            trigger_and_retrieve(&facts, utterance, threshold, &self.embedder)
                .map(|(f, d)| (f.clone(), d)),
        )
    }
}

/// Stores the fact carried by a `Memory:` artifact. Other artifact kinds
/// are ignored.
pub fn extract_memory(
    store: &ProfileStore,
    artifact: &DialogueArtifact,
    user_id: &str,
    session_id: &str,
) -> Result<Option<ProfileFact>, ProfileError> {
    if artifact.kind != ArtifactKind::MemoryExtraction {
        return Ok(None);
    }
    store
        .add(user_id, &artifact.text, Some(session_id))
        .map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DEFAULT_DIM;

    fn store() -> ProfileStore {
        ProfileStore::in_memory(Embedder::new(DEFAULT_DIM))
    }

    fn memory(text: &str) -> DialogueArtifact {
        DialogueArtifact::new(ArtifactKind::MemoryExtraction, text)
    }

    #[test]
    fn memory_line_becomes_fact() {
        let s = store();
        let text = "I do not like listening to jazz while in the car";
        let f = extract_memory(&s, &memory(text), "u1", "s1")
            .unwrap()
            .unwrap();
        assert_eq!(f.text, text);
        assert_eq!(f.source_session_id.as_deref(), Some("s1"));
        assert_eq!(s.facts("u1").unwrap().len(), 1);
    }

    #[test]
    fn duplicate_insert_is_noop() {
        let s = store();
        let a = s.add("u1", "Allergic to seafood", None).unwrap();
        let b = s.add("u1", "allergic  to SEAFOOD", None).unwrap();
        assert_eq!(a, b);
        assert_eq!(s.facts("u1").unwrap().len(), 1);
    }

    #[test]
    fn blank_memory_rejected() {
        let s = store();
        assert!(matches!(
            extract_memory(&s, &memory("  "), "u1", "s1"),
            Err(ProfileError::EmptyFact)
        ));
        assert!(s.facts("u1").unwrap().is_empty());
    }

    #[test]
    fn non_memory_artifacts_ignored() {
        let s = store();
        let a = DialogueArtifact::new(ArtifactKind::Reasoning, "likes jazz");
        assert!(extract_memory(&s, &a, "u1", "s1").unwrap().is_none());
    }

    #[test]
    fn bad_user_ids_rejected() {
        let s = store();
        for id in ["", "../x", "a/b", ".hidden"] {
            assert!(
                matches!(s.facts(id), Err(ProfileError::BadUserId(_))),
                "{id}"
            );
        }
    }

    #[test]
    fn identical_utterance_triggers_at_zero() {
        let s = store();
        s.add("u1", "allergic to seafood", None).unwrap();
        s.add("u1", "loves retro speedruns", None).unwrap();
        let (f, d) = s
            .trigger("u1", "allergic to seafood", DEFAULT_THRESHOLD)
            .unwrap()
            .unwrap();
        assert_eq!(f.text, "allergic to seafood");
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn empty_profile_never_triggers() {
        assert!(store()
            .trigger("u1", "anything", DEFAULT_THRESHOLD)
            .unwrap()
            .is_none());
    }

    #[test]
    fn far_utterance_does_not_trigger() {
        let s = store();
        s.add("u1", "allergic to seafood", None).unwrap();
        assert!(s
            .trigger("u1", "show me chess openings", DEFAULT_THRESHOLD)
            .unwrap()
            .is_none());
    }

    #[test]
    fn ties_go_to_earliest_fact() {
        let s = store();
        s.add("u1", "jazz piano", None).unwrap();
        s.add("u1", "piano jazz", None).unwrap();
        let (f, _) = s.trigger("u1", "jazz piano", 1.0).unwrap().unwrap();
        assert_eq!(f.created_at, 0);
    }

    #[test]
    fn integrate_wraps_fact() {
        let s = store();
        let f = s.add("u1", "allergic to seafood", None).unwrap();
        assert_eq!(
            integrate(Some(&f)),
            vec!["User profile: allergic to seafood".to_string()]
        );
        assert!(integrate(None).is_empty());
    }

    #[test]
    fn replace_is_all_or_nothing() {
        let s = store();
        s.add("u1", "a fact", None).unwrap();
        assert!(s.replace("u1", &["x".into(), " ".into()]).is_err());
        assert_eq!(s.facts("u1").unwrap()[0].text, "a fact");
        let out = s
            .replace("u1", &["one".into(), "ONE".into(), "two".into()])
            .unwrap();
        assert_eq!(
            out.iter().map(|f| f.text.as_str()).collect::<Vec<_>>(),
            ["one", "two"]
        );
    }

    #[test]
    fn profiles_survive_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = ProfileStore::open(dir.path(), Embedder::new(DEFAULT_DIM)).unwrap();
            s.add("u1", "allergic to seafood", Some("s9")).unwrap();
            s.add("u1", "likes jazz", None).unwrap();
        }
        let s = ProfileStore::open(dir.path(), Embedder::new(DEFAULT_DIM)).unwrap();
        let facts = s.facts("u1").unwrap();
        assert_eq!(facts.len(), 2);
        assert_eq!(facts[0].source_session_id.as_deref(), Some("s9"));
        assert_eq!(
            facts[1].embedding,
            Some(Embedder::new(DEFAULT_DIM).embed("likes jazz"))
        );
    }
}
