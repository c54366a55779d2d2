use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SimError;
use crate::corpus::{dot, Embedder};
use crate::session::Session;

pub const MIN_SESSIONS: usize = 10;

#[derive(Debug, Clone)]
pub struct DiscriminatorConfig {
    pub feature_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub folds: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            feature_dim: 256,
            epochs: 300,
            learning_rate: 1.0,
            l2: 1e-3,
            folds: 5,
        }
    }
}

/// Logistic model scoring how much a session looks like the reference
/// corpus rather than the simulated one.
#[derive(Debug, Clone)]
pub struct Discriminator {
    embedder: Embedder,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Cross-validated area under the ROC curve; 0.5 means
    /// indistinguishable.
    pub auc: f64,
    pub sessions: usize,
    pub folds: usize,
}

impl Discriminator {
    fn features(embedder: &Embedder, session: &Session) -> Vec<f64> {
        embedder.embed(&session.transcript()).into_vec()
    }

    /// Probability that `session` is a reference session.
    pub fn score(&self, session: &Session) -> f64 {
        sigmoid(dot(&self.weights, &Self::features(&self.embedder, session)) + self.bias)
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Mann-Whitney estimate of P(score of a positive > score of a negative),
/// ties counting one half.
pub fn auc(positives: &[f64], negatives: &[f64]) -> f64 {
    if positives.is_empty() || negatives.is_empty() {
        return 0.5;
    }
    let mut wins = 0.0;
    for p in positives {
        for n in negatives {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (positives.len() * negatives.len()) as f64
}

/// Assigns each of `n` rows to one of `folds` folds after a shuffle.
fn fold_of(n: usize, folds: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut fold = vec![0; n];
    for (pos, row) in idx.into_iter().enumerate() {
        fold[row] = pos % folds;
    }
    fold
}

fn fit(train: &[(&Vec<f64>, f64)], config: &DiscriminatorConfig) -> (Vec<f64>, f64) {
    let mut w = vec![0.0; config.feature_dim];
    let mut b = 0.0;
    let n = train.len() as f64;
    for _ in 0..config.epochs {
        let mut gw = vec![0.0; config.feature_dim];
        let mut gb = 0.0;
        for (x, y) in train {
            let err = sigmoid(dot(&w, x) + b) - y;
            for (g, xi) in gw.iter_mut().zip(x.iter()) {
                *g += err * xi;
            }
            gb += err;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= config.learning_rate * (g / n + config.l2 * *wi);
        }
        b -= config.learning_rate * gb / n;
    }
    (w, b)
}

/// Trains a simulated-vs-reference classifier. The reported AUC pools the
/// out-of-fold scores of a stratified k-fold cross-validation; the
/// returned weights are fit on every session.
pub fn train_discriminator(
    q: &[Session],
    r: &[Session],
    seed: u64,
    config: &DiscriminatorConfig,
) -> Result<Discriminator, SimError> {
    if q.len() < MIN_SESSIONS || r.len() < MIN_SESSIONS {
        return Err(SimError::TooFewSessions {
            needed: MIN_SESSIONS,
            q: q.len(),
            r: r.len(),
        });
    }
    if config.folds < 2 || config.folds > q.len().min(r.len()) {
        return Err(SimError::DegenerateSplit(format!(
            "{} folds for {} and {} sessions",
            config.folds,
            q.len(),
            r.len()
        )));
    }
    let embedder = Embedder::new(config.feature_dim).with_seed(seed ^ 0x0d15_c0de);
    let encode = |s: &[Session]| -> Vec<Vec<f64>> {
        s.iter()
            .map(|x| Discriminator::features(&embedder, x))
            .collect()
    };
    let (xq, xr) = (encode(q), encode(r));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<(&Vec<f64>, f64, usize)> = xq
        .iter()
        .zip(fold_of(xq.len(), config.folds, &mut rng))
        .map(|(x, f)| (x, 0.0, f))
        .chain(
            xr.iter()
                .zip(fold_of(xr.len(), config.folds, &mut rng))
                .map(|(x, f)| (x, 1.0, f)),
        )
        .collect();
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for fold in 0..config.folds {
        let train: Vec<(&Vec<f64>, f64)> = rows
            .iter()
            .filter(|r| r.2 != fold)
            .map(|r| (r.0, r.1))
            .collect();
        let (w, b) = fit(&train, config);
        for (x, y, _) in rows.iter().filter(|r| r.2 == fold) {
            let s = dot(&w, x) + b;
            if *y == 1.0 {
                pos.push(s);
            } else {
                neg.push(s);
            }
        }
    }
    let all: Vec<(&Vec<f64>, f64)> = rows.iter().map(|r| (r.0, r.1)).collect();
    let (weights, bias) = fit(&all, config);
    Ok(Discriminator {
        embedder,
        auc: auc(&pos, &neg),
        sessions: rows.len(),
        folds: config.folds,
        weights,
        bias,
    })
}
