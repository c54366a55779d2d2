//! Composition root: wires corpus, retrieval, ranking, dialogue, profiles
//! and persistence into one turn-handling pipeline.

mod config;

use std::cell::RefCell;
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use thiserror::Error;

pub use config::{BackendChoice, ConfigError, CorpusSource, IndexChoice, ServiceConfig};

use crate::corpus::{synthetic, Corpus, CorpusError, Embedder};
use crate::dialogue::{DialogueConfig, DialogueManager, MemorySink, SlateProvider};
use crate::llm::{Gateway, LlmBackend, LlmError, RemoteBackend, RuleBackend, ScriptedBackend};
use crate::profile::{integrate, ProfileError, ProfileFact, ProfileStore};
use crate::ranker::{Ranker, RankerConfig, RecommendationSlate, NO_EXPLANATION};
use crate::record::{self, RecordError, RetrievalTrace, SessionRecord, TurnRecord};
use crate::retrieval::{
    load_index, save_index, BuiltinSearch, DualEncoderRetriever, IndexKind, RemoteSearch,
    RetrievalRequest, Retriever, RetrieverConfig, Scheme, SearchClient, VectorIndex,
};
use crate::session::{ArtifactKind, DialogueArtifact, Session};
use crate::simulator::{CrsClient, CrsError, CrsReply, SlateEntry};
use crate::trainer::{TowerParams, TrainError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("message text is empty")]
    EmptyText,
    #[error("invalid id `{0}`")]
    InvalidId(String),
    #[error("session `{0}` not found")]
    NotFound(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{0}")]
    Setup(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    /// Caused by the request rather than the server.
    pub fn is_client_error(&self) -> bool {
        matches!(
            self,
            ServiceError::EmptyText
                | ServiceError::InvalidId(_)
                | ServiceError::Profile(ProfileError::EmptyFact | ProfileError::BadUserId(_))
        )
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

pub fn load_corpus(source: &CorpusSource, dim: usize) -> Result<Corpus, ServiceError> {
    let embedder = Embedder::new(dim);
    let (corpus, report) = match source {
        CorpusSource::Fixture => {
            Corpus::build(synthetic::fixture_corpus(), embedder, &HashMap::new())
        }
        CorpusSource::Synthetic { n, seed } => {
            Corpus::build(synthetic::generate(*n, *seed), embedder, &HashMap::new())
        }
        CorpusSource::File(path) => Corpus::ingest(path, embedder)?,
    };
    for d in &report.diagnostics {
        log::warn!("corpus: {d}");
    }
    if corpus.is_empty() {
        return Err(ServiceError::Setup(format!(
            "corpus `{source}` has no items"
        )));
    }
    Ok(corpus)
}

pub fn build_backend(
    choice: &BackendChoice,
    timeout: Duration,
) -> Result<Arc<dyn LlmBackend>, ServiceError> {
    Ok(match choice {
        BackendChoice::Scripted(None) => Arc::new(ScriptedBackend::new()),
        BackendChoice::Scripted(Some(path)) => Arc::new(ScriptedBackend::from_file(path)?),
        BackendChoice::Rules => Arc::new(RuleBackend),
        BackendChoice::Remote => Arc::new(RemoteBackend::from_env(timeout).ok_or_else(|| {
            ServiceError::Setup(format!(
                "remote backend needs {} to be set",
                crate::llm::LLM_URL_ENV
            ))
        })?),
    })
}

type SessionSlot = Arc<Mutex<SessionRecord>>;

pub struct Service {
    config: ServiceConfig,
    config_hash: String,
    corpus: Arc<Corpus>,
    gateway: Arc<Gateway>,
    dialogue: DialogueManager,
    ranker: Ranker,
    retriever: Retriever,
    profiles: ProfileStore,
    sessions: Mutex<HashMap<String, SessionSlot>>,
    next_id: AtomicU64,
    session_dir: Option<PathBuf>,
}

impl Service {
    pub fn from_config(config: ServiceConfig) -> Result<Self, ServiceError> {
        let corpus = Arc::new(load_corpus(&config.corpus, config.embedding_dim)?);
        let backend = build_backend(&config.backend, Duration::from_millis(config.timeout_ms))?;
        let gateway = Arc::new(Gateway::new(backend).with_retries(2));
        Self::with_gateway(config, corpus, gateway)
    }

    pub fn with_gateway(
        config: ServiceConfig,
        corpus: Arc<Corpus>,
        gateway: Arc<Gateway>,
    ) -> Result<Self, ServiceError> {
        config.validate()?;
        let config_hash = config.hash();
        let towers = match &config.towers {
            Some(path) => TowerParams::load(path)?,
            None => TowerParams::identity(corpus.dim()),
        };
        if towers.dim() != corpus.dim() {
            return Err(ServiceError::Setup(format!(
                "towers are {}-dimensional but the corpus is {}",
                towers.dim(),
                corpus.dim()
            )));
        }
        let kind = match config.index {
            IndexChoice::Exact => IndexKind::Exact,
            IndexChoice::Clustered => IndexKind::clustered_for(corpus.len()),
        };
        let dual = Self::dual_encoder(&config, corpus.clone(), towers, kind)?;
        let search: Arc<dyn SearchClient> = match &config.search_url {
            Some(url) => Arc::new(RemoteSearch::new(
                url.clone(),
                Duration::from_millis(config.timeout_ms),
            )),
            None => Arc::new(BuiltinSearch::new(&corpus)),
        };
        let retriever = Retriever::with_dual_encoder(
            corpus.clone(),
            dual,
            search,
            &RetrieverConfig {
                index_kind: kind,
                seed: config.seed,
                ..RetrieverConfig::default()
            },
        );
        let ranker = Ranker::new(
            gateway.clone(),
            corpus.clone(),
            RankerConfig {
                buckets: config.buckets.clone(),
                slate_size: config.slate_size,
                parallelism: config.parallelism,
            },
        );
        let dialogue = DialogueManager::new(
            gateway.clone(),
            DialogueConfig {
                context_chars: config.context_chars,
                ..DialogueConfig::default()
            },
        );
        let (profiles, session_dir) = match &config.data_dir {
            Some(dir) => {
                let sessions = dir.join("sessions");
                std::fs::create_dir_all(&sessions)?;
                (
                    ProfileStore::open(dir.join("profiles"), corpus.embedder())?,
                    Some(sessions),
                )
            }
            None => (ProfileStore::in_memory(corpus.embedder()), None),
        };
        let mut sessions = HashMap::new();
        let mut next = 1;
        if let Some(dir) = &session_dir {
            for rec in record::load_dir(dir)? {
                if let Some(n) = rec
                    .session_id()
                    .strip_prefix('s')
                    .and_then(|n| n.parse::<u64>().ok())
                {
                    next = next.max(n + 1);
                }
                sessions.insert(rec.session_id().to_string(), Arc::new(Mutex::new(rec)));
            }
            log::info!("reloaded {} sessions", sessions.len());
        }
        Ok(Self {
            config,
            config_hash,
            corpus,
            gateway,
            dialogue,
            ranker,
            retriever,
            profiles,
            sessions: Mutex::new(sessions),
            next_id: AtomicU64::new(next),
            session_dir,
        })
    }

    fn dual_encoder(
        config: &ServiceConfig,
        corpus: Arc<Corpus>,
        towers: TowerParams,
        kind: IndexKind,
    ) -> Result<DualEncoderRetriever, ServiceError> {
        let fresh = DualEncoderRetriever::build(corpus.clone(), towers.clone(), kind, config.seed);
        let Some(dir) = &config.data_dir else {
            return Ok(fresh);
        };
        let path = dir.join("index.json");
        let hash = format!("{}-{}", fresh.config_hash(), config.seed);
        if let Some(index) = load_index(&path, &hash) {
            log::info!("reusing persisted index {}", path.display());
            return Ok(DualEncoderRetriever::with_index(corpus, towers, index));
        }
        std::fs::create_dir_all(dir)?;
        save_index(&path, &hash, fresh.index())?;
        Ok(fresh)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn profiles(&self) -> &ProfileStore {
        &self.profiles
    }

    pub fn index(&self) -> &VectorIndex {
        self.retriever.dual_encoder().index()
    }

    fn persist_new(&self, rec: &SessionRecord) -> Result<(), ServiceError> {
        if let Some(dir) = &self.session_dir {
            rec.save(record::record_path(dir, rec.session_id()))?;
        }
        Ok(())
    }

    fn insert_session(
        &self,
        id: String,
        user_id: Option<String>,
    ) -> Result<SessionSlot, ServiceError> {
        let rec = SessionRecord::new(id.clone(), user_id, self.config_hash.clone());
        self.persist_new(&rec)?;
        let slot = Arc::new(Mutex::new(rec));
        self.sessions
            .lock()
            .expect("sessions poisoned")
            .insert(id, slot.clone());
        Ok(slot)
    }

    pub fn create_session(&self, user_id: Option<&str>) -> Result<String, ServiceError> {
        if let Some(u) = user_id {
            if !valid_id(u) {
                return Err(ServiceError::InvalidId(u.to_string()));
            }
        }
        let id = format!("s{:06}", self.next_id.fetch_add(1, Ordering::SeqCst));
        self.insert_session(id.clone(), user_id.map(str::to_string))?;
        Ok(id)
    }

    pub fn session(&self, session_id: &str) -> Option<SessionRecord> {
        let slot = self
            .sessions
            .lock()
            .expect("sessions poisoned")
            .get(session_id)
            .cloned()?;
        let rec = slot.lock().expect("session poisoned").clone();
        Some(rec)
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .sessions
            .lock()
            .expect("sessions poisoned")
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    pub fn profile(&self, user_id: &str) -> Result<Vec<ProfileFact>, ServiceError> {
        Ok(self.profiles.facts(user_id)?)
    }

    pub fn replace_profile(
        &self,
        user_id: &str,
        texts: &[String],
    ) -> Result<Vec<ProfileFact>, ServiceError> {
        Ok(self.profiles.replace(user_id, texts)?)
    }

    fn retrieval_request(&self, query: &str, session: &Session) -> RetrievalRequest {
        match self.config.scheme {
            Scheme::DualEncoder => {
                let mut text: Vec<&str> = session.user_utterances().collect();
                text.push(query);
                RetrievalRequest::ContextText(text.join(" "))
            }
            Scheme::Direct => RetrievalRequest::ItemRef(query.to_string()),
            Scheme::Concepts => RetrievalRequest::Concepts(
                query
                    .split(',')
                    .map(|c| c.trim().to_string())
                    .filter(|c| !c.is_empty())
                    .collect(),
            ),
            Scheme::SearchApi => RetrievalRequest::Query(query.to_string()),
        }
    }

    /// Runs one user message through profile triggering, planning,
    /// retrieval, ranking, grounding and memory writes, then appends the
    /// turn to the session record. Stage failures become an apology turn
    /// with an incident; only bad input or storage failures are errors.
    pub fn handle_user_message(
        &self,
        session_id: &str,
        user_id: Option<&str>,
        text: &str,
    ) -> Result<CrsReply, ServiceError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(ServiceError::EmptyText);
        }
        if !valid_id(session_id) {
            return Err(ServiceError::InvalidId(session_id.to_string()));
        }
        if let Some(u) = user_id {
            if !valid_id(u) {
                return Err(ServiceError::InvalidId(u.to_string()));
            }
        }
        let existing = self
            .sessions
            .lock()
            .expect("sessions poisoned")
            .get(session_id)
            .cloned();
        let slot = match existing {
            Some(s) => s,
            None => self.insert_session(session_id.to_string(), user_id.map(str::to_string))?,
        };
        let mut rec = slot.lock().expect("session poisoned");
        let user = rec.header.user_id.clone();
        let mut incidents = Vec::new();

        let (facts, injections) = match user.as_deref() {
            Some(u) => match self
                .profiles
                .trigger(u, text, self.config.profile_threshold)
            {
                Ok(hit) => {
                    let fact = hit.map(|(f, _)| f);
                    let injections = integrate(fact.as_ref());
                    (fact.map(|f| vec![f.text]).unwrap_or_default(), injections)
                }
                Err(e) => {
                    incidents.push(format!("profile lookup failed: {e}"));
                    (Vec::new(), Vec::new())
                }
            },
            None => (Vec::new(), Vec::new()),
        };

        let mut session = rec.session();
        session
            .push_user(text)
            .map_err(|e| ServiceError::Setup(e.to_string()))?;
        let pipeline = Pipeline {
            service: self,
            trace: RefCell::new(None),
        };
        let memories = MemoryCollector::default();
        let outcome = self
            .dialogue
            .take_system_turn(&session, &facts, &pipeline, &memories)
            .map_err(|e| ServiceError::Setup(e.to_string()))?;
        let mut turn = outcome.turn;

        let mut memory_writes = Vec::new();
        for m in memories.0.into_inner() {
            match user.as_deref() {
                Some(u) => match self.profiles.add(u, &m, Some(session_id)) {
                    Ok(f) => memory_writes.push(f.text),
                    Err(e) => incidents.push(format!("memory write failed: {e}")),
                },
                None => log::debug!("memory without a user dropped: {m}"),
            }
        }
        turn.artifacts
            .extend(incidents.into_iter().map(DialogueArtifact::incident));
        if let Some(slate) = turn.slate.as_mut() {
            ensure_explanations(slate);
        }

        let turn_index = rec.turns.len() + 1;
        let tr = TurnRecord {
            turn_index,
            user: text.to_string(),
            system: turn.clone(),
            action: Some(outcome.action),
            profile_injections: injections,
            memory_writes,
            retrieval: pipeline.trace.into_inner(),
            plan_prompt: Some(outcome.plan_prompt),
            plan_output: Some(outcome.plan_output),
            llm_calls: outcome.llm_calls,
            latency_ms: outcome.latency_ms,
        };
        if let Some(dir) = &self.session_dir {
            SessionRecord::append_turn(record::record_path(dir, session_id), &tr)?;
        }
        rec.push(tr);
        if turn
            .artifacts
            .iter()
            .any(|a| a.kind == ArtifactKind::Incident)
        {
            log::warn!("session {session_id} turn {turn_index} recorded an incident");
        }
        Ok(reply_for(&turn, turn_index))
    }

    /// Writes every session record to `dir`; returns how many.
    pub fn export_sessions(&self, dir: impl AsRef<Path>) -> Result<usize, ServiceError> {
        let records: Vec<SessionRecord> = self
            .session_ids()
            .iter()
            .filter_map(|id| self.session(id))
            .collect();
        record::save_dir(dir, &records)?;
        Ok(records.len())
    }
}

fn ensure_explanations(slate: &mut RecommendationSlate) {
    for item in &mut slate.items {
        if item.explanation.trim().is_empty() {
            item.explanation = NO_EXPLANATION.to_string();
        }
    }
}

fn reply_for(turn: &crate::session::SystemTurn, turn_index: usize) -> CrsReply {
    CrsReply {
        utterance: turn.utterance.clone(),
        slate: turn
            .slate
            .iter()
            .flat_map(|s| &s.items)
            .map(|i| SlateEntry {
                item_id: i.item_id.clone(),
                title: i.title.clone(),
                score: i.score,
                explanation: i.explanation.clone(),
            })
            .collect(),
        turn_index,
    }
}

struct Pipeline<'a> {
    service: &'a Service,
    trace: RefCell<Option<RetrievalTrace>>,
}

impl SlateProvider for Pipeline<'_> {
    fn recommend(&self, query: &str, session: &Session) -> Result<RecommendationSlate, String> {
        let svc = self.service;
        let request = svc.retrieval_request(query, session);
        let candidates = svc
            .retriever
            .retrieve(&request, svc.config.candidate_count)
            .map_err(|e| e.to_string())?;
        *self.trace.borrow_mut() = Some(RetrievalTrace {
            scheme: format!("{:?}", candidates.scheme),
            query: query.to_string(),
            candidates: candidates.ids().into_iter().map(str::to_string).collect(),
        });
        Ok(svc.ranker.rank(&candidates, session))
    }
}

#[derive(Default)]
struct MemoryCollector(RefCell<Vec<String>>);

impl MemorySink for MemoryCollector {
    fn remember(&self, artifact: &DialogueArtifact) {
        self.0.borrow_mut().push(artifact.text.clone());
    }
}

impl CrsClient for Service {
    fn open_session(&self, user_id: Option<&str>) -> Result<String, CrsError> {
        self.create_session(user_id)
            .map_err(|e| CrsError::Unavailable(e.to_string()))
    }

    fn send(
        &self,
        session_id: &str,
        user_id: Option<&str>,
        text: &str,
    ) -> Result<CrsReply, CrsError> {
        self.handle_user_message(session_id, user_id, text)
            .map_err(|e| {
                if e.is_client_error() {
                    CrsError::Rejected(e.to_string())
                } else {
                    CrsError::Unavailable(e.to_string())
                }
            })
    }
}
