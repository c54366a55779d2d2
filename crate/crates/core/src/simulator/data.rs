use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    drive_session, run_sessions, ControlSpec, ControlVariable, CrsClient, Intent, RunConfig,
    SessionControls, SimError, SimParams, Weighted,
};
use crate::corpus::{Corpus, Item};
use crate::llm::Gateway;
use crate::ranker::BucketTable;
use crate::session::Session;
use crate::text::tokenize;
use crate::trainer::EncodedExample;

pub const DEFAULT_NEGATIVES: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainingExample {
    Sentiment {
        session: Session,
        label: String,
    },
    Retrieval {
        session: Session,
        positive: String,
        negatives: Vec<String>,
        turn: usize,
    },
    Ranking {
        session: Session,
        slate: Vec<String>,
        relevancy: Vec<f64>,
    },
}

impl TrainingExample {
    pub fn session(&self) -> &Session {
        match self {
            TrainingExample::Sentiment { session, .. }
            | TrainingExample::Retrieval { session, .. }
            | TrainingExample::Ranking { session, .. } => session,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SentimentSpec {
    pub labels: Vec<Weighted>,
    pub n: usize,
    pub max_turns: usize,
}

#[derive(Debug, Clone)]
pub struct RetrievalSpec {
    pub n: usize,
    /// Target turns are drawn uniformly from `1..=max_turn`.
    pub max_turn: usize,
    pub negatives: usize,
}

impl Default for RetrievalSpec {
    fn default() -> Self {
        Self {
            n: 200,
            max_turn: 3,
            negatives: DEFAULT_NEGATIVES,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RankingSpec {
    pub n: usize,
}

/// Sessions conditioned on a sampled sentiment and labeled with it.
pub fn generate_sentiment(
    crs: &dyn CrsClient,
    gateway: &Gateway,
    spec: &SentimentSpec,
    seed: u64,
) -> Vec<TrainingExample> {
    let controls = ControlSpec {
        sentiments: spec.labels.clone(),
        ..ControlSpec::default()
    };
    let config = RunConfig {
        n_sessions: spec.n,
        max_turns: spec.max_turns,
        seed,
        ..RunConfig::default()
    };
    run_sessions(crs, gateway, &controls, &config)
        .corpus
        .records
        .iter()
        .filter_map(|r| {
            Some(TrainingExample::Sentiment {
                session: r.session(),
                label: r.header.labels.get("sentiment")?.clone(),
            })
        })
        .collect()
}

fn metadata_tokens(item: &Item) -> HashSet<String> {
    item.entities
        .iter()
        .flat_map(|e| tokenize(e))
        .chain(tokenize(&item.title))
        .collect()
}

/// Whether the user side of `session` names one of the item's metadata
/// tokens.
pub fn mentions_target(session: &Session, item: &Item) -> bool {
    let wanted = metadata_tokens(item);
    session
        .user_utterances()
        .flat_map(tokenize)
        .any(|t| wanted.contains(&t))
}

/// Broad topic first, one entity per middle turn, the item's title and
/// remaining entities on turn `j`.
fn trajectory(item: &Item, j: usize) -> Vec<Intent> {
    let topic = item
        .entities
        .first()
        .cloned()
        .unwrap_or_else(|| tokenize(&item.title).join(" "));
    let mut intents = Vec::with_capacity(j);
    if j > 1 {
        intents.push(Intent::Ask { topic });
        for t in 2..j {
            let term = item
                .entities
                .get(t - 1)
                .or(item.entities.last())
                .cloned()
                .unwrap_or_default();
            intents.push(Intent::Narrow { terms: vec![term] });
        }
    }
    let mut terms = vec![item.title.to_lowercase()];
    terms.extend(item.entities.iter().skip(1).cloned());
    intents.push(Intent::Target { terms });
    intents
}

/// `(S', x_pos, {x_neg}, j)` examples where the session is steered toward
/// the sampled item by turn `j`. Items without usable metadata are skipped.
pub fn generate_retrieval(
    corpus: &Corpus,
    crs: &dyn CrsClient,
    gateway: &Gateway,
    spec: &RetrievalSpec,
    seed: u64,
) -> Result<Vec<TrainingExample>, SimError> {
    if corpus.len() <= spec.negatives {
        return Err(SimError::Control(format!(
            "corpus of {} items cannot supply {} negatives",
            corpus.len(),
            spec.negatives
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.n);
    let rows: Vec<usize> = (0..corpus.len()).collect();
    for i in 0..spec.n {
        let row = *rows.choose(&mut rng).expect("non-empty corpus");
        let item = corpus.item(row);
        let j = rng.random_range(1..=spec.max_turn.max(1));
        let mut negatives: Vec<usize> = rows.iter().copied().filter(|r| *r != row).collect();
        negatives.shuffle(&mut rng);
        negatives.truncate(spec.negatives);
        let sim_seed: u64 = rng.random();
        if metadata_tokens(item).is_empty() {
            log::warn!("item {} has no usable metadata; skipped", item.id);
            continue;
        }
        let mut vars = vec![ControlVariable::target(item.id.clone(), j)?];
        vars.extend(
            trajectory(item, j)
                .iter()
                .enumerate()
                .map(|(t, intent)| ControlVariable::intent(t + 1, intent)),
        );
        let controls = SessionControls::new(vars);
        let session_id = crs.open_session(None)?;
        let params = SimParams {
            temperature: 0.7,
            seed: sim_seed,
        };
        let record = match drive_session(crs, gateway, &session_id, None, &controls, j, &params) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("retrieval example {i} dropped: {e}");
                continue;
            }
        };
        let session = record
            .session()
            .prefix_through_user_turn(j)
            .expect("j user turns");
        if !mentions_target(&session, item) {
            log::warn!("retrieval example {i} never mentions {}; skipped", item.id);
            continue;
        }
        out.push(TrainingExample::Retrieval {
            session,
            positive: item.id.clone(),
            negatives: negatives
                .iter()
                .map(|r| corpus.item(*r).id.clone())
                .collect(),
            turn: j,
        });
    }
    Ok(out)
}

/// Graded relevance of `candidate` to `target` as a bucket-table value:
/// same item, shares topic and another entity, shares topic, shares any
/// token, nothing.
pub fn relevancy(target: &Item, candidate: &Item, table: &BucketTable) -> f64 {
    let mut values: Vec<f64> = table.entries().iter().map(|(_, v)| *v).collect();
    values.sort_by(f64::total_cmp);
    let top = values.len() - 1;
    let level = if target.id == candidate.id {
        4
    } else {
        let same_topic =
            !target.entities.is_empty() && target.entities.first() == candidate.entities.first();
        let shared_entities = target
            .entities
            .iter()
            .skip(1)
            .filter(|e| candidate.entities.contains(e))
            .count();
        if same_topic && shared_entities > 0 {
            3
        } else if same_topic {
            2
        } else if !metadata_tokens(target).is_disjoint(&metadata_tokens(candidate)) {
            1
        } else {
            0
        }
    };
    values[level.min(top)]
}

/// One-turn sessions aimed at a sampled item, with the recommender's slate
/// graded against that item.
pub fn generate_ranking(
    corpus: &Corpus,
    crs: &dyn CrsClient,
    gateway: &Gateway,
    spec: &RankingSpec,
    seed: u64,
) -> Result<Vec<TrainingExample>, SimError> {
    let table = BucketTable::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..spec.n {
        let row = rng.random_range(0..corpus.len());
        let target = corpus.item(row);
        let intent = trajectory(target, 1).remove(0);
        let controls = SessionControls::new(vec![ControlVariable::intent(1, &intent)]);
        let session_id = crs.open_session(None)?;
        let params = SimParams {
            temperature: 0.7,
            seed: rng.random(),
        };
        let record = match drive_session(crs, gateway, &session_id, None, &controls, 1, &params) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("ranking example {i} dropped: {e}");
                continue;
            }
        };
        let Some(slate) = record.turns[0]
            .system
            .slate
            .as_ref()
            .filter(|s| !s.items.is_empty())
        else {
            continue;
        };
        let ids: Vec<String> = slate.items.iter().map(|s| s.item_id.clone()).collect();
        let relevancy = ids
            .iter()
            .map(|id| {
                corpus
                    .get(id)
                    .map(|c| relevancy(target, c, &table))
                    .unwrap_or(0.0)
            })
            .collect();
        out.push(TrainingExample::Ranking {
            session: record.session(),
            slate: ids,
            relevancy,
        });
    }
    Ok(out)
}

/// Dual-encoder context text: the user side of the conversation.
pub fn retrieval_context(session: &Session) -> String {
    session.user_utterances().collect::<Vec<_>>().join(" ")
}

/// Encodes the retrieval examples; others, and examples naming items
/// missing from `corpus`, are skipped.
pub fn encode_retrieval(corpus: &Corpus, examples: &[TrainingExample]) -> Vec<EncodedExample> {
    examples
        .iter()
        .filter_map(|e| match e {
            TrainingExample::Retrieval {
                session,
                positive,
                negatives,
                ..
            } => EncodedExample::from_corpus(
                corpus,
                &retrieval_context(session),
                positive,
                negatives,
            ),
            _ => None,
        })
        .collect()
}

pub fn write_examples(path: impl AsRef<Path>, examples: &[TrainingExample]) -> std::io::Result<()> {
    let mut f = fs::File::create(path)?;
    for e in examples {
        writeln!(
            f,
            "{}",
            serde_json::to_string(e).expect("example serializes")
        )?;
    }
    Ok(())
}

pub fn read_examples(path: impl AsRef<Path>) -> std::io::Result<Vec<TrainingExample>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
        })
        .collect()
}
