//! A controllable simulated user that converses with the recommender, plus
//! the tools for judging simulated corpora: classifier-ensemble statistics,
//! entropy, a discriminator, and labeled training-data generation.

mod controls;
mod crs;
mod data;
mod discriminator;
mod metrics;

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub use controls::{
    sentiment_sentence, ControlKind, ControlScope, ControlSpec, ControlValue, ControlVariable,
    Intent, SessionControls, Weighted,
};
pub use crs::{CrsClient, CrsError, CrsReply, HttpCrs, ScriptedCrs, SlateEntry};
pub use data::{
    encode_retrieval, generate_ranking, generate_retrieval, generate_sentiment, mentions_target,
    read_examples, relevancy, retrieval_context, write_examples, RankingSpec, RetrievalSpec,
    SentimentSpec, TrainingExample,
};
pub use discriminator::{auc, train_discriminator, Discriminator, DiscriminatorConfig};
pub use metrics::{
    default_ensemble, ensemble_entropy, ensemble_match, entropy_bits, total_variation,
    ClassifierDistance, EntropyReport, KeywordTopicClassifier, LexiconSentimentClassifier,
    MatchReport, SessionClassifier, TurnCountClassifier,
};

use crate::llm::{templates, DecodeParams, Gateway, LlmRequest, SlotValues};
use crate::record::{self, RecordError, SessionRecord, TurnRecord};
use crate::session::Session;

/// Utterance used when the simulator's model call fails outright.
pub const FAILED_UTTERANCE: &str = "ok";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid control: {0}")]
    Control(String),
    #[error("the simulator speaks only after a system turn")]
    NotSimulatorsTurn,
    #[error("need at least {needed} sessions in each corpus, got {q} and {r}")]
    TooFewSessions { needed: usize, q: usize, r: usize },
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
    #[error(transparent)]
    Crs(#[from] CrsError),
    #[error(transparent)]
    Record(#[from] RecordError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedTurn {
    pub utterance: String,
    pub prompt: String,
    /// The utterance came from the intent realizer, not the model.
    pub realized: bool,
    pub incident: Option<String>,
}

fn turn_seed(seed: u64, turn: usize) -> u64 {
    seed ^ (turn as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn tint(sentiment: Option<&str>, rng: &mut ChaCha8Rng) -> &'static str {
    let options: &[&str] = match sentiment {
        Some("angry") => &[
            "Ugh, this is frustrating. ",
            "Seriously, this is annoying. ",
            "I hate waiting. ",
        ],
        Some("satisfied") => &["Great, thanks! ", "Nice, I love this. ", "Perfect. "],
        Some("confused") => &[
            "Hmm, I'm confused. ",
            "Sorry, I don't understand. ",
            "Wait, what? ",
        ],
        _ => &[""],
    };
    options.choose(rng).expect("non-empty")
}

/// Turns an intent into a user utterance without a model. Every term the
/// intent names appears verbatim.
pub fn realize_intent(intent: &Intent, sentiment: Option<&str>, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prefix = tint(sentiment, &mut rng);
    let body = match intent {
        Intent::Ask { topic } => {
            let forms = [
                "Can you show me some {} videos?",
                "I want to watch something about {}.",
                "Got any {} videos?",
            ];
            forms.choose(&mut rng).expect("forms").replace("{}", topic)
        }
        Intent::Narrow { terms } => {
            let forms = [
                "Something more about {} please.",
                "Can you focus on {}?",
                "I'd like ones with {}.",
            ];
            forms
                .choose(&mut rng)
                .expect("forms")
                .replace("{}", &terms.join(" and "))
        }
        Intent::Target { terms } => {
            let forms = [
                "I'm looking for {} videos.",
                "Specifically {}.",
                "Show me {}.",
            ];
            forms
                .choose(&mut rng)
                .expect("forms")
                .replace("{}", &terms.join(" "))
        }
        Intent::React => match sentiment {
            Some("angry") => "These are not what I asked for.".to_string(),
            Some("satisfied") => "These look good.".to_string(),
            Some("confused") => "I don't get why you picked these.".to_string(),
            _ => "Tell me more about the first one.".to_string(),
        },
        Intent::Close => "That's all for now.".to_string(),
    };
    format!("{prefix}{body}")
}

fn clean_output(text: &str) -> Option<String> {
    let line = text.lines().map(str::trim).find(|l| !l.is_empty())?;
    let line = line.strip_prefix("User:").unwrap_or(line).trim();
    (!line.is_empty()).then(|| line.to_string())
}

/// The simulated user's next utterance for `session`. The prompt carries
/// the session controls as a preamble and the turn's intent; a scripted
/// miss is answered by the intent realizer and a failed call by "ok".
pub fn simulate_turn(
    session: &Session,
    controls: &SessionControls,
    gateway: &Gateway,
    params: &SimParams,
) -> Result<SimulatedTurn, SimError> {
    if session.ends_with_user() {
        return Err(SimError::NotSimulatorsTurn);
    }
    let turn = session.user_turn_count() + 1;
    let intent = controls.intent_at(turn);
    let intent_line = intent
        .as_ref()
        .map(|i| format!("Your goal this turn: {i}"))
        .unwrap_or_default();
    let slots = SlotValues::new()
        .with("preamble", controls.preamble(turn))
        .with("conversation", session.transcript())
        .with("intent", intent_line);
    let seed = turn_seed(params.seed, turn);
    let request = LlmRequest::new(templates::USER_SIMULATOR, slots).with_params(DecodeParams {
        temperature: params.temperature,
        seed,
        ..DecodeParams::default()
    });
    let prompt = gateway.render(&request).unwrap_or_default();
    let realize = || {
        realize_intent(
            intent.as_ref().unwrap_or(&Intent::React),
            controls.sentiment_at(turn),
            seed,
        )
    };
    Ok(match gateway.complete(&request) {
        Ok(resp) if !resp.fixture_miss => match clean_output(&resp.text) {
            Some(u) => SimulatedTurn {
                utterance: u,
                prompt,
                realized: false,
                incident: None,
            },
            None => SimulatedTurn {
                utterance: realize(),
                prompt,
                realized: true,
                incident: None,
            },
        },
        Ok(_) => SimulatedTurn {
            utterance: realize(),
            prompt,
            realized: true,
            incident: None,
        },
        Err(e) => SimulatedTurn {
            utterance: FAILED_UTTERANCE.to_string(),
            prompt,
            realized: false,
            incident: Some(format!("simulator call failed: {e}")),
        },
    })
}

/// Where a session corpus came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusTag {
    Simulated,
    Reference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionCorpus {
    pub tag: CorpusTag,
    pub records: Vec<SessionRecord>,
}

impl SessionCorpus {
    pub fn new(tag: CorpusTag, records: Vec<SessionRecord>) -> Self {
        Self { tag, records }
    }

    pub fn from_sessions(tag: CorpusTag, sessions: Vec<Session>) -> Self {
        let records = sessions
            .into_iter()
            .map(|s| {
                let mut r = SessionRecord::new(s.session_id.clone(), s.user_id.clone(), "");
                let mut turn = 0;
                let mut pending: Option<String> = None;
                for t in s.turns {
                    match t {
                        crate::session::Turn::User { utterance } => pending = Some(utterance),
                        crate::session::Turn::System(sys) => {
                            turn += 1;
                            r.push(TurnRecord::plain(
                                turn,
                                pending.take().unwrap_or_default(),
                                sys,
                            ));
                        }
                    }
                }
                if let Some(u) = pending {
                    r.push(TurnRecord::plain(
                        turn + 1,
                        u,
                        crate::session::SystemTurn::plain(""),
                    ));
                }
                r
            })
            .collect();
        Self { tag, records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn sessions(&self) -> Vec<Session> {
        self.records.iter().map(SessionRecord::session).collect()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), SimError> {
        Ok(record::save_dir(dir, &self.records)?)
    }

    pub fn load(dir: impl AsRef<Path>, tag: CorpusTag) -> Result<Self, SimError> {
        Ok(Self::new(tag, record::load_dir(dir)?))
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub n_sessions: usize,
    pub max_turns: usize,
    pub seed: u64,
    pub parallelism: usize,
    pub temperature: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_sessions: 10,
            max_turns: 4,
            seed: 0,
            parallelism: 4,
            temperature: 0.7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub corpus: SessionCorpus,
    pub failures: Vec<String>,
}

fn session_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x2545_f491_4f6c_dd1d)
        ^ (index as u64)
            .wrapping_add(1)
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Plays `max_turns` user turns against the recommender under `controls`.
pub fn drive_session(
    crs: &dyn CrsClient,
    gateway: &Gateway,
    session_id: &str,
    user_id: Option<&str>,
    controls: &SessionControls,
    max_turns: usize,
    params: &SimParams,
) -> Result<SessionRecord, SimError> {
    let mut record = SessionRecord::new(session_id, user_id.map(str::to_string), "");
    record.header.controls = controls.variables.clone();
    if let Some(s) = controls.session_sentiment() {
        record
            .header
            .labels
            .insert("sentiment".into(), s.to_string());
    }
    let mut session = Session::new(session_id);
    for turn in 1..=max_turns {
        let sim = simulate_turn(&session, controls, gateway, params)?;
        let reply = crs.send(session_id, user_id, &sim.utterance)?;
        let system = reply.to_system_turn();
        session
            .push_user(sim.utterance.clone())
            .expect("alternating");
        session.push_system(system.clone()).expect("alternating");
        let mut tr = TurnRecord::plain(turn, sim.utterance, system);
        tr.plan_prompt = Some(sim.prompt);
        record.push(tr);
    }
    Ok(record)
}

/// Runs `n_sessions` simulated conversations. Sessions are opened in
/// order, then played concurrently; a failing session is dropped and
/// reported.
pub fn run_sessions(
    crs: &dyn CrsClient,
    gateway: &Gateway,
    spec: &ControlSpec,
    config: &RunConfig,
) -> RunReport {
    let mut failures = Vec::new();
    let mut plans = Vec::new();
    for i in 0..config.n_sessions {
        let mut rng = ChaCha8Rng::seed_from_u64(session_seed(config.seed, i));
        let controls = match spec.sample(&mut rng, config.max_turns) {
            Ok(c) => c,
            Err(e) => {
                failures.push(format!("session {i}: {e}"));
                continue;
            }
        };
        match crs.open_session(None) {
            Ok(id) => plans.push((i, id, controls, rng.random::<u64>())),
            Err(e) => {
                log::warn!("session {i} could not be opened: {e}");
                failures.push(format!("session {i}: {e}"));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<(usize, Result<SessionRecord, SimError>)> = pool.install(|| {
        plans
            .par_iter()
            .map(|(i, id, controls, seed)| {
                let params = SimParams {
                    temperature: config.temperature,
                    seed: *seed,
                };
                (
                    *i,
                    drive_session(crs, gateway, id, None, controls, config.max_turns, &params),
                )
            })
            .collect()
    });
    let mut records = Vec::new();
    for (i, r) in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => {
                log::warn!("session {i} dropped: {e}");
                failures.push(format!("session {i}: {e}"));
            }
        }
    }
    RunReport {
        corpus: SessionCorpus::new(CorpusTag::Simulated, records),
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::fixture_corpus;
    use crate::corpus::{Corpus, Embedder};
    use crate::llm::{BackendError, BackendReply, FnBackend, ScriptedBackend};
    use std::collections::HashMap;
    use std::sync::Arc;

    fn gateway_with(text: &'static str) -> Gateway {
        Gateway::new(Arc::new(FnBackend::new("fn", move |_| {
            Ok(BackendReply::hit(text))
        })))
    }

    fn miss_gateway() -> Gateway {
        Gateway::new(Arc::new(ScriptedBackend::new()))
    }

    fn scripted_crs() -> ScriptedCrs {
        let (c, _) = Corpus::build(fixture_corpus(), Embedder::default(), &HashMap::new());
        ScriptedCrs::new(Arc::new(c))
    }

    struct DownCrs;
    impl CrsClient for DownCrs {
        fn open_session(&self, _: Option<&str>) -> Result<String, CrsError> {
            Err(CrsError::Unavailable("connection refused".into()))
        }
        fn send(&self, _: &str, _: Option<&str>, _: &str) -> Result<CrsReply, CrsError> {
            Err(CrsError::Unavailable("connection refused".into()))
        }
    }

    #[test]
    fn prompt_carries_preamble_and_intent() {
        let persona = "I am a twelve year old boy who enjoys painting and video games";
        let c = SessionControls::new(vec![
            ControlVariable::persona(persona),
            ControlVariable::sentiment("angry"),
            ControlVariable::intent(
                1,
                &Intent::Ask {
                    topic: "painting".into(),
                },
            ),
        ]);
        let t = simulate_turn(
            &Session::new("s"),
            &c,
            &gateway_with("User: show me painting videos"),
            &SimParams::default(),
        )
        .unwrap();
        assert_eq!(t.utterance, "show me painting videos");
        assert!(!t.realized);
        assert!(t.prompt.contains(persona));
        assert!(t.prompt.contains("You are an angry user"));
        assert!(t
            .prompt
            .contains("Your goal this turn: Ask for videos about painting."));
    }

    #[test]
    fn miss_realizes_intent_deterministically() {
        let c = SessionControls::new(vec![
            ControlVariable::sentiment("angry"),
            ControlVariable::intent(
                1,
                &Intent::Ask {
                    topic: "jazz".into(),
                },
            ),
        ]);
        let p = SimParams {
            temperature: 0.7,
            seed: 9,
        };
        let a = simulate_turn(&Session::new("s"), &c, &miss_gateway(), &p).unwrap();
        let b = simulate_turn(&Session::new("s"), &c, &miss_gateway(), &p).unwrap();
        assert!(a.realized);
        assert_eq!(a, b);
        assert!(a.utterance.contains("jazz"));
    }

    #[test]
    fn gateway_failure_says_ok() {
        let g = Gateway::new(Arc::new(FnBackend::new("down", |_| {
            Err(BackendError::Rejected(400))
        })));
        let t = simulate_turn(
            &Session::new("s"),
            &SessionControls::default(),
            &g,
            &SimParams::default(),
        )
        .unwrap();
        assert_eq!(t.utterance, FAILED_UTTERANCE);
        assert!(t.incident.is_some());
    }

    #[test]
    fn refuses_to_speak_twice() {
        let mut s = Session::new("s");
        s.push_user("hi").unwrap();
        let r = simulate_turn(
            &s,
            &SessionControls::default(),
            &miss_gateway(),
            &SimParams::default(),
        );
        assert!(matches!(r, Err(SimError::NotSimulatorsTurn)));
    }

    #[test]
    fn run_produces_full_sessions() {
        let config = RunConfig {
            n_sessions: 3,
            max_turns: 4,
            seed: 5,
            ..RunConfig::default()
        };
        let spec = ControlSpec::sentiments(&["angry", "satisfied", "confused"]);
        let report = run_sessions(&scripted_crs(), &miss_gateway(), &spec, &config);
        assert!(report.failures.is_empty());
        assert_eq!(report.corpus.len(), 3);
        assert!(report
            .corpus
            .sessions()
            .iter()
            .all(|s| s.user_turn_count() == 4));
        let again = run_sessions(&scripted_crs(), &miss_gateway(), &spec, &config);
        assert_eq!(report.corpus, again.corpus);
        let labels: Vec<_> = report
            .corpus
            .records
            .iter()
            .map(|r| r.header.labels["sentiment"].clone())
            .collect();
        let labels2: Vec<_> = again
            .corpus
            .records
            .iter()
            .map(|r| r.header.labels["sentiment"].clone())
            .collect();
        assert_eq!(labels, labels2);
    }

    #[test]
    fn crs_down_yields_empty_corpus() {
        let report = run_sessions(
            &DownCrs,
            &miss_gateway(),
            &ControlSpec::default(),
            &RunConfig::default(),
        );
        assert!(report.corpus.is_empty());
        assert_eq!(report.failures.len(), RunConfig::default().n_sessions);
    }

    #[test]
    fn corpus_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let config = RunConfig {
            n_sessions: 2,
            max_turns: 2,
            ..RunConfig::default()
        };
        let report = run_sessions(
            &scripted_crs(),
            &miss_gateway(),
            &ControlSpec::default(),
            &config,
        );
        report.corpus.save(dir.path()).unwrap();
        let back = SessionCorpus::load(dir.path(), CorpusTag::Simulated).unwrap();
        assert_eq!(back, report.corpus);
    }
}
