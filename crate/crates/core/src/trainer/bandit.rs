use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::corpus::{dot, Embedder};
use crate::retrieval::{BuiltinSearch, SearchClient};
use crate::text::tokenize;

pub const FEATURE_DIM: usize = 128;
pub const MAX_CANDIDATES: usize = 20;
const FEATURE_SEED: u64 = 0x51ed_270b;

/// Hashed bag-of-words features of a query plus a length bucket.
pub fn query_features(query: &str) -> Vec<f64> {
    let mut f = Embedder::new(FEATURE_DIM - 1)
        .with_seed(FEATURE_SEED)
        .raw_counts(query);
    f.push(tokenize(query).len() as f64 / 3.0);
    f
}

/// Candidate search queries from the context: every 1- to 3-gram of the
/// context tokens, scored by `tf · Σ idf(token)`, best 20 kept. Ties keep
/// first-occurrence order.
pub fn candidate_queries(context: &str, search: &BuiltinSearch) -> Vec<String> {
    let tokens = tokenize(context);
    let mut order: Vec<String> = Vec::new();
    let mut tf: HashMap<String, usize> = HashMap::new();
    for n in 1..=3 {
        for w in tokens.windows(n) {
            let gram = w.join(" ");
            let count = tf.entry(gram.clone()).or_insert(0);
            if *count == 0 {
                order.push(gram);
            }
            *count += 1;
        }
    }
    let mut scored: Vec<(usize, String, f64)> = order
        .into_iter()
        .enumerate()
        .map(|(i, g)| {
            let idf: f64 = g.split(' ').map(|t| search.idf(t).unwrap_or(0.0)).sum();
            let s = tf[&g] as f64 * idf;
            (i, g, s)
        })
        .filter(|(_, _, s)| *s > 0.0)
        .collect();
    scored.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    scored
        .into_iter()
        .take(MAX_CANDIDATES)
        .map(|(_, g, _)| g)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditPolicy {
    pub weights: Vec<f64>,
    pub baseline: f64,
    pub steps: u64,
    pub learning_rate: f64,
}

impl BanditPolicy {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            weights: vec![0.0; FEATURE_DIM],
            baseline: 0.0,
            steps: 0,
            learning_rate,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.weights.len() != FEATURE_DIM {
            return Err(TrainError::Params(format!(
                "policy needs {FEATURE_DIM} weights"
            )));
        }
        if !self.baseline.is_finite() || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(TrainError::Params("non-finite policy weight".into()));
        }
        Ok(())
    }

    pub fn probabilities(&self, candidates: &[String]) -> Vec<f64> {
        let feats: Vec<Vec<f64>> = candidates.iter().map(|q| query_features(q)).collect();
        softmax(
            &feats
                .iter()
                .map(|f| dot(&self.weights, f))
                .collect::<Vec<_>>(),
        )
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditOutcome {
    pub chosen: usize,
    pub query: String,
    pub probability: f64,
    /// `None` when the search client failed.
    pub reward: Option<f64>,
    /// `r - baseline`, with the baseline read before this step's update.
    pub advantage: f64,
}

/// One REINFORCE step: sample a query, observe `reward(hits)` from the
/// search client and move the weights along `(r - b) ∇ log π(query)`.
/// A client failure leaves the policy untouched.
pub fn bandit_step<R: Rng + ?Sized>(
    policy: &mut BanditPolicy,
    candidates: &[String],
    client: &dyn SearchClient,
    k: usize,
    reward: impl Fn(&[(String, f64)]) -> f64,
    rng: &mut R,
) -> Result<BanditOutcome, TrainError> {
    if candidates.is_empty() {
        return Err(TrainError::NoCandidates);
    }
    let feats: Vec<Vec<f64>> = candidates.iter().map(|q| query_features(q)).collect();
    let probs = softmax(
        &feats
            .iter()
            .map(|f| dot(&policy.weights, f))
            .collect::<Vec<_>>(),
    );
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = probs.len() - 1;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            chosen = i;
            break;
        }
    }
    let query = candidates[chosen].clone();
    let hits = match client.search(&query, k) {
        Ok(h) => h,
        Err(e) => {
            log::warn!("bandit search failed for {query:?}: {e}");
            return Ok(BanditOutcome {
                chosen,
                query,
                probability: probs[chosen],
                reward: None,
                advantage: 0.0,
            });
        }
    };
    let r = reward(&hits);
    let advantage = r - policy.baseline;
    // ∇ log π(a) = φ(a) - Σ π_i φ(i)
    for d in 0..FEATURE_DIM {
        let expected: f64 = probs.iter().zip(&feats).map(|(p, f)| p * f[d]).sum();
        policy.weights[d] += policy.learning_rate * advantage * (feats[chosen][d] - expected);
    }
    policy.steps += 1;
    policy.baseline += (r - policy.baseline) / policy.steps as f64;
    policy.validate()?;
    Ok(BanditOutcome {
        chosen,
        query,
        probability: probs[chosen],
        reward: Some(r),
        advantage,
    })
}

/// Reward 1 when `target` appears in the hit list, else 0.
pub fn hit_reward(target: &str) -> impl Fn(&[(String, f64)]) -> f64 + '_ {
    move |hits| {
        if hits.iter().any(|(id, _)| id == target) {
            1.0
        } else {
            0.0
        }
    }
}
