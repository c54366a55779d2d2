//! Inner-product top-k over a fixed set of item vectors: an exact scan and
//! a k-means bucketed approximation behind the same interface.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::dot;

/// Orders by score descending, then key ascending.
pub(crate) fn rank_order(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Top `k` of `scored` under [`rank_order`]; entries are (row, score).
pub(crate) fn top_k_by<'a>(
    mut scored: Vec<(usize, f64)>,
    k: usize,
    key: impl Fn(usize) -> &'a str,
) -> Vec<(usize, f64)> {
    let cmp = |a: &(usize, f64), b: &(usize, f64)| rank_order((a.1, key(a.0)), (b.1, key(b.0)));
    if k == 0 {
        return Vec::new();
    }
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    scored
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum IndexKind {
    Exact,
    Clustered { lists: usize, probes: usize },
}

impl IndexKind {
    /// √n lists with half of them probed.
    pub fn clustered_for(n: usize) -> Self {
        let lists = ((n as f64).sqrt().round() as usize).max(1);
        IndexKind::Clustered {
            lists,
            probes: lists.div_ceil(2),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Clusters {
    centroids: Vec<Vec<f64>>,
    /// Half the squared norm of each lifted centroid.
    offsets: Vec<f64>,
    members: Vec<Vec<usize>>,
    probes: usize,
}

/// Row-major item vectors plus an optional clustering.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VectorIndex {
    ids: Vec<String>,
    dim: usize,
    rows: Vec<f64>,
    clusters: Option<Clusters>,
}

impl VectorIndex {
    pub fn build(ids: Vec<String>, vectors: Vec<Vec<f64>>, kind: IndexKind, seed: u64) -> Self {
        assert_eq!(ids.len(), vectors.len());
        let dim = vectors.first().map_or(0, Vec::len);
        let rows: Vec<f64> = vectors.into_iter().flatten().collect();
        let mut index = Self {
            ids,
            dim,
            rows,
            clusters: None,
        };
        if let IndexKind::Clustered { lists, probes } = kind {
            index.clusters = Some(index.kmeans(lists, probes, seed));
        }
        index
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.rows[row * self.dim..(row + 1) * self.dim]
    }

    pub fn kind(&self) -> IndexKind {
        match &self.clusters {
            None => IndexKind::Exact,
            Some(c) => IndexKind::Clustered {
                lists: c.centroids.len(),
                probes: c.probes,
            },
        }
    }

    /// Exact top-k by inner product; ties go to the smaller id.
    pub fn search_exact(&self, query: &[f64], k: usize) -> Vec<(usize, f64)> {
        let scored = (0..self.len())
            .map(|r| (r, dot(self.row(r), query)))
            .collect();
        top_k_by(scored, k, |r| self.ids[r].as_str())
    }

    /// Uses the clustering when present, otherwise the exact scan.
    pub fn search(&self, query: &[f64], k: usize) -> Vec<(usize, f64)> {
        let Some(clusters) = &self.clusters else {
            return self.search_exact(query, k);
        };
        let probe_scores: Vec<(usize, f64)> = clusters
            .centroids
            .iter()
            .zip(&clusters.offsets)
            .enumerate()
            .map(|(c, (centroid, offset))| (c, dot(centroid, query) - offset))
            .collect();
        let scored: Vec<(usize, f64)> = top_k_by(probe_scores, clusters.probes, |_| "")
            .iter()
            .flat_map(|(c, _)| clusters.members[*c].iter())
            .map(|&r| (r, dot(self.row(r), query)))
            .collect();
        top_k_by(scored, k, |r| self.ids[r].as_str())
    }

    /// Rows lifted by `sqrt(M^2 - |x|^2)` so that every lifted row has norm
    /// `M`; nearest-centroid order in the lifted space then follows the
    /// inner product with the unlifted query.
    fn lifted_rows(&self) -> Vec<Vec<f64>> {
        let norms: Vec<f64> = (0..self.len())
            .map(|r| dot(self.row(r), self.row(r)))
            .collect();
        let max = norms.iter().cloned().fold(0.0, f64::max);
        (0..self.len())
            .map(|r| {
                let mut v = self.row(r).to_vec();
                v.push((max - norms[r]).max(0.0).sqrt());
                v
            })
            .collect()
    }

    fn kmeans(&self, lists: usize, probes: usize, seed: u64) -> Clusters {
        let n = self.len();
        let lists = lists.clamp(1, n.max(1));
        let rows = self.lifted_rows();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut centroids: Vec<Vec<f64>> = if n == 0 {
            vec![vec![0.0; self.dim + 1]]
        } else {
            sample(&mut rng, n, lists)
                .iter()
                .map(|r| rows[r].clone())
                .collect()
        };
        let mut assignment = vec![0usize; n];
        for _ in 0..20 {
            let mut changed = false;
            for (r, slot) in assignment.iter_mut().enumerate() {
                let best = nearest(&centroids, &rows[r]);
                if *slot != best {
                    *slot = best;
                    changed = true;
                }
            }
            let mut sums = vec![vec![0.0; self.dim + 1]; centroids.len()];
            let mut counts = vec![0usize; centroids.len()];
            for (r, &c) in assignment.iter().enumerate() {
                counts[c] += 1;
                for (s, v) in sums[c].iter_mut().zip(&rows[r]) {
                    *s += v;
                }
            }
            for (c, sum) in sums.into_iter().enumerate() {
                if counts[c] > 0 {
                    centroids[c] = sum.into_iter().map(|s| s / counts[c] as f64).collect();
                }
            }
            if !changed {
                break;
            }
        }
        let mut members = vec![Vec::new(); centroids.len()];
        for (r, &c) in assignment.iter().enumerate() {
            members[c].push(r);
        }
        // |q' - c|^2 = |q|^2 + |c|^2 - 2 <q, c[..d]> for the lifted query
        // q' = (q, 0), so probes rank by <q, c[..d]> - |c|^2 / 2.
        let offsets = centroids.iter().map(|c| dot(c, c) / 2.0).collect();
        for c in &mut centroids {
            c.truncate(self.dim);
        }
        Clusters {
            centroids,
            offsets,
            members,
            probes: probes.clamp(1, lists),
        }
    }
}

fn nearest(centroids: &[Vec<f64>], v: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d: f64 = centroid.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    config_hash: String,
    index: VectorIndex,
}

/// Writes the index with the hash it was built under.
pub fn save_index(
    path: impl AsRef<Path>,
    config_hash: &str,
    index: &VectorIndex,
) -> std::io::Result<()> {
    let file = IndexFile {
        config_hash: config_hash.to_string(),
        index: index.clone(),
    };
    fs::write(
        path,
        serde_json::to_vec(&file).map_err(std::io::Error::other)?,
    )
}

/// Loads a persisted index, or `None` when it is missing, unreadable or was
/// built under a different configuration hash.
pub fn load_index(path: impl AsRef<Path>, config_hash: &str) -> Option<VectorIndex> {
    let bytes = fs::read(path).ok()?;
    let file: IndexFile = serde_json::from_slice(&bytes).ok()?;
    (file.config_hash == config_hash).then_some(file.index)
}
