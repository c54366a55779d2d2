use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::towers::{matvec, TowerParams};
use super::TrainError;
use crate::corpus::{dot, Corpus};
use crate::retrieval::{IndexKind, VectorIndex};

/// One retrieval example with embeddings resolved. `candidates[0]` is the
/// positive; the rest are negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub context: Vec<f64>,
    pub candidates: Vec<Vec<f64>>,
}

impl EncodedExample {
    /// Resolves item ids through the corpus; `None` when any id is unknown.
    pub fn from_corpus(
        corpus: &Corpus,
        context_text: &str,
        positive: &str,
        negatives: &[String],
    ) -> Option<Self> {
        let mut candidates = Vec::with_capacity(negatives.len() + 1);
        for id in std::iter::once(positive).chain(negatives.iter().map(String::as_str)) {
            candidates.push(corpus.embedding(corpus.index_of(id)?).as_slice().to_vec());
        }
        Some(Self {
            context: corpus.embed(context_text).into_vec(),
            candidates,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub context: Vec<f64>,
    pub item: Vec<f64>,
}

impl Gradients {
    fn zeros(dim: usize) -> Self {
        Self {
            context: vec![0.0; dim * dim],
            item: vec![0.0; dim * dim],
        }
    }
}

fn softmax_loss(scores: &[f64]) -> (f64, Vec<f64>) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let lse = max + z.ln();
    (lse - scores[0], exps.into_iter().map(|e| e / z).collect())
}

/// Mean over the batch of `-log softmax(score(c, x_pos))` against the
/// negatives, with analytic gradients for both towers.
pub fn dual_encoder_loss(
    batch: &[EncodedExample],
    params: &TowerParams,
) -> Result<(f64, Gradients), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let dim = params.dim();
    let inv_tau = 1.0 / params.tau();
    let mut grads = Gradients::zeros(dim);
    let mut total = 0.0;
    for ex in batch {
        if ex.context.len() != dim
            || ex.candidates.iter().any(|c| c.len() != dim)
            || ex.candidates.is_empty()
        {
            return Err(TrainError::Shape(dim));
        }
        let u = matvec(&params.context, dim, &ex.context);
        let vs: Vec<Vec<f64>> = ex
            .candidates
            .iter()
            .map(|x| matvec(&params.item, dim, x))
            .collect();
        let scores: Vec<f64> = vs.iter().map(|v| dot(&u, v) * inv_tau).collect();
        let (loss, probs) = softmax_loss(&scores);
        total += loss;

        // dL/ds_i = p_i - [i = 0]
        let mut du = vec![0.0; dim];
        for (i, (v, x)) in vs.iter().zip(&ex.candidates).enumerate() {
            let g = (probs[i] - if i == 0 { 1.0 } else { 0.0 }) * inv_tau;
            for (d, vv) in du.iter_mut().zip(v) {
                *d += g * vv;
            }
            // dL/dW_x += g · u ⊗ x
            for (r, ur) in u.iter().enumerate() {
                let row = &mut grads.item[r * dim..(r + 1) * dim];
                for (w, xc) in row.iter_mut().zip(x) {
                    *w += g * ur * xc;
                }
            }
        }
        for (r, dr) in du.iter().enumerate() {
            let row = &mut grads.context[r * dim..(r + 1) * dim];
            for (w, cc) in row.iter_mut().zip(&ex.context) {
                *w += dr * cc;
            }
        }
    }
    let n = batch.len() as f64;
    let loss = total / n;
    grads
        .context
        .iter_mut()
        .chain(grads.item.iter_mut())
        .for_each(|g| *g /= n);
    if !loss.is_finite()
        || grads
            .context
            .iter()
            .chain(&grads.item)
            .any(|g| !g.is_finite())
    {
        return Err(TrainError::NonFinite { loss });
    }
    Ok((loss, grads))
}

pub fn mean_loss(data: &[EncodedExample], params: &TowerParams) -> Result<f64, TrainError> {
    Ok(dual_encoder_loss(data, params)?.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 20,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: TowerParams,
    pub initial_loss: f64,
    /// Full-dataset loss after each completed epoch.
    pub epoch_losses: Vec<f64>,
    pub diverged: bool,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses
            .last()
            .copied()
            .unwrap_or(self.initial_loss)
    }
}

/// Minibatch gradient descent from `initial` (identity towers when the
/// caller has nothing better). Stops early when the epoch loss exceeds ten
/// times the initial loss, returning the last good parameters.
pub fn train_dual_encoder(
    data: &[EncodedExample],
    initial: TowerParams,
    config: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let initial_loss = mean_loss(data, &initial)?;
    let mut params = initial;
    let mut report = TrainReport {
        params: params.clone(),
        initial_loss,
        epoch_losses: Vec::new(),
        diverged: false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch_size = config.batch_size.max(1);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let batch: Vec<EncodedExample> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (_, grads) = match dual_encoder_loss(&batch, &params) {
                Ok(v) => v,
                Err(TrainError::NonFinite { .. }) => {
                    report.diverged = true;
                    return Ok(report);
                }
                Err(e) => return Err(e),
            };
            for (w, g) in params.context.iter_mut().zip(&grads.context) {
                *w -= config.learning_rate * g;
            }
            for (w, g) in params.item.iter_mut().zip(&grads.item) {
                *w -= config.learning_rate * g;
            }
        }
        let loss = match mean_loss(data, &params) {
            Ok(l) => l,
            Err(TrainError::NonFinite { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if loss > 10.0 * initial_loss {
            log::warn!("dual encoder diverged at epoch {epoch}: loss {loss}");
            report.diverged = true;
            return Ok(report);
        }
        log::debug!("epoch {epoch}: loss {loss:.5}");
        report.epoch_losses.push(loss);
        report.params = params.clone();
    }
    Ok(report)
}

/// Fraction of (context embedding, positive row) pairs whose positive is in
/// the exact top-`k` over all corpus items under `params`.
pub fn recall_at_k(
    params: &TowerParams,
    corpus: &Corpus,
    queries: &[(Vec<f64>, usize)],
    k: usize,
) -> f64 {
    if queries.is_empty() {
        return 0.0;
    }
    let ids = corpus.items().iter().map(|i| i.id.clone()).collect();
    let vectors = corpus
        .embeddings()
        .iter()
        .map(|e| params.project_item(e.as_slice()))
        .collect();
    let index = VectorIndex::build(ids, vectors, IndexKind::Exact, 0);
    let hits = queries
        .iter()
        .filter(|(ctx, pos)| {
            index
                .search_exact(&params.project_context(ctx), k)
                .iter()
                .any(|(r, _)| r == pos)
        })
        .count();
    hits as f64 / queries.len() as f64
}
