//! Candidate generation. The dialogue model's request is turned into one of
//! four retrieval requests (an embedding, an item reference, a concept list
//! or a search query), each answered by a tractable search over the corpus.

mod index;
mod search;

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use index::{load_index, save_index, IndexKind, VectorIndex};
pub use search::{BuiltinSearch, RemoteSearch, SearchClient, SearchError};

use crate::corpus::{Corpus, EmbeddingVector};
use crate::text::tokenize;
use crate::trainer::TowerParams;

pub const DEFAULT_CANDIDATE_COUNT: usize = 100;
pub const DEFAULT_FUZZY_THRESHOLD: f64 = 0.3;
pub const DEFAULT_CONCEPT_ITEMS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    DualEncoder,
    Direct,
    Concepts,
    SearchApi,
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dual_encoder" | "embedding" => Ok(Scheme::DualEncoder),
            "direct" | "item_ref" => Ok(Scheme::Direct),
            "concepts" => Ok(Scheme::Concepts),
            "search_api" | "query" => Ok(Scheme::SearchApi),
            other => Err(format!("unknown retrieval scheme `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub item_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub scheme: Scheme,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn empty(scheme: Scheme) -> Self {
        Self {
            scheme,
            candidates: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.candidates.iter().map(|c| c.item_id.as_str()).collect()
    }

    /// Ids known to the corpus, unique, scores non-increasing.
    pub fn is_well_formed(&self, corpus: &Corpus) -> bool {
        let mut seen = HashSet::new();
        self.candidates
            .iter()
            .all(|c| corpus.index_of(&c.item_id).is_some() && seen.insert(&c.item_id))
            && self.candidates.windows(2).all(|w| w[0].score >= w[1].score)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RetrievalRequest {
    Embedding(EmbeddingVector),
    /// Free context text embedded through the context tower.
    ContextText(String),
    ItemRef(String),
    Concepts(Vec<String>),
    Query(String),
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("concept list is empty")]
    NoConcepts,
    #[error("embedding has dimension {got}, index expects {expected}")]
    Dimension { got: usize, expected: usize },
    #[error(transparent)]
    Search(#[from] SearchError),
}

/// Generalized dual encoder over projected hash embeddings.
#[derive(Debug, Clone)]
pub struct DualEncoderRetriever {
    corpus: Arc<Corpus>,
    towers: TowerParams,
    index: VectorIndex,
}

impl DualEncoderRetriever {
    pub fn build(corpus: Arc<Corpus>, towers: TowerParams, kind: IndexKind, seed: u64) -> Self {
        let ids = corpus.items().iter().map(|i| i.id.clone()).collect();
        let vectors = corpus
            .embeddings()
            .iter()
            .map(|e| towers.project_item(e.as_slice()))
            .collect();
        let index = VectorIndex::build(ids, vectors, kind, seed);
        Self {
            corpus,
            towers,
            index,
        }
    }

    /// Reuses a persisted index when its hash matches.
    pub fn with_index(corpus: Arc<Corpus>, towers: TowerParams, index: VectorIndex) -> Self {
        Self {
            corpus,
            towers,
            index,
        }
    }

    /// Hash that a persisted index must carry to be reused.
    pub fn config_hash(&self) -> String {
        format!(
            "{}-{}-{:?}",
            self.corpus.config_hash(),
            self.towers.fingerprint(),
            self.index.kind()
        )
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn towers(&self) -> &TowerParams {
        &self.towers
    }

    pub fn context_vector(&self, context_text: &str) -> Vec<f64> {
        self.towers
            .project_context(self.corpus.embed(context_text).as_slice())
    }

    pub fn retrieve_text(&self, context_text: &str, k: usize) -> CandidateSet {
        self.retrieve_vector(&self.context_vector(context_text), k)
    }

    /// Searches with an already-projected context vector.
    pub fn retrieve_vector(&self, context: &[f64], k: usize) -> CandidateSet {
        to_set(
            Scheme::DualEncoder,
            &self.index,
            self.index.search(context, k),
        )
    }

    pub fn retrieve_exact(&self, context: &[f64], k: usize) -> CandidateSet {
        to_set(
            Scheme::DualEncoder,
            &self.index,
            self.index.search_exact(context, k),
        )
    }
}

fn to_set(scheme: Scheme, index: &VectorIndex, hits: Vec<(usize, f64)>) -> CandidateSet {
    CandidateSet {
        scheme,
        candidates: hits
            .into_iter()
            .map(|(r, score)| Candidate {
                item_id: index.id(r).to_string(),
                score,
            })
            .collect(),
    }
}

/// Exact id match, else token-Jaccard over titles with a normalized edit
/// distance tie-break.
#[derive(Debug, Clone)]
pub struct DirectMatcher {
    corpus: Arc<Corpus>,
    title_tokens: Vec<HashSet<String>>,
    threshold: f64,
}

impl DirectMatcher {
    pub fn new(corpus: Arc<Corpus>, threshold: f64) -> Self {
        let title_tokens = corpus
            .items()
            .iter()
            .map(|i| tokenize(&i.title).into_iter().collect())
            .collect();
        Self {
            corpus,
            title_tokens,
            threshold,
        }
    }

    pub fn similarity(&self, item_ref: &str, row: usize) -> (f64, f64) {
        let query: HashSet<String> = tokenize(item_ref).into_iter().collect();
        let jaccard = jaccard(&query, &self.title_tokens[row]);
        let edit = strsim::normalized_levenshtein(
            &item_ref.trim().to_lowercase(),
            &self.corpus.item(row).title.to_lowercase(),
        );
        (jaccard, edit)
    }

    pub fn retrieve(&self, item_ref: &str, k: usize) -> CandidateSet {
        if let Some(row) = self.corpus.index_of(item_ref.trim()) {
            return CandidateSet {
                scheme: Scheme::Direct,
                candidates: vec![Candidate {
                    item_id: self.corpus.item(row).id.clone(),
                    score: 1.0,
                }],
            };
        }
        let mut matches: Vec<(usize, f64, f64)> = (0..self.corpus.len())
            .map(|row| {
                let (j, e) = self.similarity(item_ref, row);
                (row, j, e)
            })
            .filter(|(_, j, _)| *j >= self.threshold)
            .collect();
        matches.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| b.2.total_cmp(&a.2))
                .then_with(|| self.corpus.item(a.0).id.cmp(&self.corpus.item(b.0).id))
        });
        matches.truncate(k);
        CandidateSet {
            scheme: Scheme::Direct,
            candidates: matches
                .into_iter()
                .map(|(row, j, _)| Candidate {
                    item_id: self.corpus.item(row).id.clone(),
                    score: j,
                })
                .collect(),
        }
    }
}

fn jaccard(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Concept activation vectors: the normalized centroid of the items whose
/// title or entity tokens overlap the concept.
#[derive(Debug, Clone)]
pub struct ConceptRetriever {
    corpus: Arc<Corpus>,
    items_by_token: HashMap<String, Vec<usize>>,
    index: VectorIndex,
    max_items: usize,
}

impl ConceptRetriever {
    pub fn new(corpus: Arc<Corpus>, max_items: usize) -> Self {
        let mut items_by_token: HashMap<String, Vec<usize>> = HashMap::new();
        for (row, item) in corpus.items().iter().enumerate() {
            let mut tokens: HashSet<String> = tokenize(&item.title).into_iter().collect();
            tokens.extend(item.entities.iter().flat_map(|e| tokenize(e)));
            for t in tokens {
                items_by_token.entry(t).or_default().push(row);
            }
        }
        let ids = corpus.items().iter().map(|i| i.id.clone()).collect();
        let vectors = corpus
            .embeddings()
            .iter()
            .map(|e| e.as_slice().to_vec())
            .collect();
        let index = VectorIndex::build(ids, vectors, IndexKind::Exact, 0);
        Self {
            corpus,
            items_by_token,
            index,
            max_items,
        }
    }

    /// The activation vector for one concept.
    pub fn concept_vector(&self, concept: &str) -> EmbeddingVector {
        let tokens: HashSet<String> = tokenize(concept).into_iter().collect();
        let mut overlap: HashMap<usize, usize> = HashMap::new();
        for t in &tokens {
            for &row in self
                .items_by_token
                .get(t)
                .map(Vec::as_slice)
                .unwrap_or_default()
            {
                *overlap.entry(row).or_default() += 1;
            }
        }
        if overlap.is_empty() {
            return self.corpus.embed(concept);
        }
        let mut rows: Vec<(usize, usize)> = overlap.into_iter().collect();
        rows.sort_by(|a, b| {
            b.1.cmp(&a.1)
                .then_with(|| self.corpus.item(a.0).id.cmp(&self.corpus.item(b.0).id))
        });
        rows.truncate(self.max_items);
        rows.sort_by_key(|(row, _)| *row);
        let mut centroid = vec![0.0; self.corpus.dim()];
        for (row, _) in rows {
            for (c, v) in centroid
                .iter_mut()
                .zip(self.corpus.embedding(row).as_slice())
            {
                *c += v;
            }
        }
        EmbeddingVector::normalized_from(centroid)
    }

    /// Normalized mean over the distinct concepts. Concepts are sorted
    /// first so the sum is order-independent bit for bit.
    pub fn aggregate(&self, concepts: &[String]) -> Result<EmbeddingVector, RetrievalError> {
        let mut distinct: Vec<&str> = concepts
            .iter()
            .map(|c| c.trim())
            .filter(|c| !c.is_empty())
            .collect();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.is_empty() {
            return Err(RetrievalError::NoConcepts);
        }
        let mut sum = vec![0.0; self.corpus.dim()];
        for c in &distinct {
            for (s, v) in sum.iter_mut().zip(self.concept_vector(c).as_slice()) {
                *s += v;
            }
        }
        let n = distinct.len() as f64;
        Ok(EmbeddingVector::normalized_from(
            sum.into_iter().map(|s| s / n).collect(),
        ))
    }

    pub fn retrieve(&self, concepts: &[String], k: usize) -> Result<CandidateSet, RetrievalError> {
        let query = self.aggregate(concepts)?;
        Ok(to_set(
            Scheme::Concepts,
            &self.index,
            self.index.search_exact(query.as_slice(), k),
        ))
    }
}

/// All four schemes over one corpus.
pub struct Retriever {
    corpus: Arc<Corpus>,
    dual: DualEncoderRetriever,
    direct: DirectMatcher,
    concepts: ConceptRetriever,
    search: Arc<dyn SearchClient>,
}

#[derive(Debug, Clone)]
pub struct RetrieverConfig {
    pub index_kind: IndexKind,
    pub fuzzy_threshold: f64,
    pub concept_items: usize,
    pub seed: u64,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        Self {
            index_kind: IndexKind::Exact,
            fuzzy_threshold: DEFAULT_FUZZY_THRESHOLD,
            concept_items: DEFAULT_CONCEPT_ITEMS,
            seed: 0,
        }
    }
}

impl Retriever {
    pub fn new(
        corpus: Arc<Corpus>,
        towers: TowerParams,
        search: Arc<dyn SearchClient>,
        config: &RetrieverConfig,
    ) -> Self {
        let dual =
            DualEncoderRetriever::build(corpus.clone(), towers, config.index_kind, config.seed);
        Self::with_dual_encoder(corpus, dual, search, config)
    }

    pub fn with_dual_encoder(
        corpus: Arc<Corpus>,
        dual: DualEncoderRetriever,
        search: Arc<dyn SearchClient>,
        config: &RetrieverConfig,
    ) -> Self {
        Self {
            direct: DirectMatcher::new(corpus.clone(), config.fuzzy_threshold),
            concepts: ConceptRetriever::new(corpus.clone(), config.concept_items),
            corpus,
            dual,
            search,
        }
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    pub fn dual_encoder(&self) -> &DualEncoderRetriever {
        &self.dual
    }

    pub fn concepts(&self) -> &ConceptRetriever {
        &self.concepts
    }

    pub fn direct(&self) -> &DirectMatcher {
        &self.direct
    }

    pub fn retrieve(
        &self,
        request: &RetrievalRequest,
        k: usize,
    ) -> Result<CandidateSet, RetrievalError> {
        match request {
            RetrievalRequest::Embedding(v) => {
                if v.dim() != self.corpus.dim() {
                    return Err(RetrievalError::Dimension {
                        got: v.dim(),
                        expected: self.corpus.dim(),
                    });
                }
                let context = self.dual.towers().project_context(v.as_slice());
                Ok(self.dual.retrieve_vector(&context, k))
            }
            RetrievalRequest::ContextText(text) => Ok(self.dual.retrieve_text(text, k)),
            RetrievalRequest::ItemRef(r) => Ok(self.direct.retrieve(r, k)),
            RetrievalRequest::Concepts(c) => self.concepts.retrieve(c, k),
            RetrievalRequest::Query(q) => Ok(search::retrieve_search_api(
                self.search.as_ref(),
                &self.corpus,
                q,
                k,
            )?),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthetic, Embedder, Item};
    use crate::trainer::TowerParams;

    fn corpus_of(items: Vec<Item>) -> Arc<Corpus> {
        Arc::new(Corpus::build(items, Embedder::default(), &HashMap::new()).0)
    }

    fn fixture() -> Arc<Corpus> {
        corpus_of(synthetic::fixture_corpus())
    }

    #[test]
    fn identity_towers_put_title_match_first() {
        let corpus = corpus_of(vec![
            Item::new("a", "saxophone quartet"),
            Item::new("b", "carbonara recipe"),
            Item::new("c", "mountain biking"),
        ]);
        let dual = DualEncoderRetriever::build(
            corpus.clone(),
            TowerParams::identity(64),
            IndexKind::Exact,
            0,
        );
        for (i, item) in corpus.items().iter().enumerate() {
            let set = dual.retrieve_text(&item.title, 3);
            let brute: Vec<f64> = corpus
                .embeddings()
                .iter()
                .map(|e| e.dot(&corpus.embed(&item.title)))
                .collect();
            let best = (0..3)
                .max_by(|&a, &b| brute[a].total_cmp(&brute[b]))
                .unwrap();
            assert_eq!(best, i);
            assert_eq!(set.candidates[0].item_id, item.id);
            assert!(set.is_well_formed(&corpus));
        }
    }

    #[test]
    fn k_larger_than_corpus_returns_everything() {
        let corpus = fixture();
        let dual = DualEncoderRetriever::build(
            corpus.clone(),
            TowerParams::identity(64),
            IndexKind::Exact,
            0,
        );
        assert_eq!(dual.retrieve_text("anything", 50).len(), 10);
        let empty = corpus_of(vec![]);
        let dual =
            DualEncoderRetriever::build(empty, TowerParams::identity(64), IndexKind::Exact, 0);
        assert!(dual.retrieve_text("jazz", 5).is_empty());
    }

    #[test]
    fn direct_exact_id() {
        let m = DirectMatcher::new(fixture(), DEFAULT_FUZZY_THRESHOLD);
        let set = m.retrieve("v05", 10);
        assert_eq!(set.ids(), ["v05"]);
        assert_eq!(set.candidates[0].score, 1.0);
    }

    #[test]
    fn direct_fuzzy_title() {
        let corpus = fixture();
        let m = DirectMatcher::new(corpus.clone(), DEFAULT_FUZZY_THRESHOLD);
        // {top, jaz, standards} vs {top, jazz, standards}: 2 shared of 4
        assert_eq!(m.similarity("Top Jaz Standards", 0).0, 0.5);
        let set = m.retrieve("Top Jaz Standards", 10);
        assert_eq!(set.candidates[0].item_id, "v01");
        assert_eq!(set.candidates[0].score, 0.5);
        assert!(set.is_well_formed(&corpus));
    }

    #[test]
    fn direct_no_match_is_empty() {
        let corpus = fixture();
        let m = DirectMatcher::new(corpus.clone(), DEFAULT_FUZZY_THRESHOLD);
        for row in 0..corpus.len() {
            assert!(m.similarity("zzzzzz", row).0 < DEFAULT_FUZZY_THRESHOLD);
        }
        assert!(m.retrieve("zzzzzz", 10).is_empty());
    }

    #[test]
    fn concept_matching_single_tagged_item_comes_first() {
        let corpus = fixture();
        let c = ConceptRetriever::new(corpus.clone(), DEFAULT_CONCEPT_ITEMS);
        // "speedrun" tags v07 only
        let v = c.concept_vector("speedrun");
        let item = corpus.embedding(6).as_slice();
        assert!(v
            .as_slice()
            .iter()
            .zip(item)
            .all(|(a, b)| (a - b).abs() < 1e-12));
        let set = c.retrieve(&["speedrun".into()], 3).unwrap();
        assert_eq!(set.candidates[0].item_id, "v07");
    }

    #[test]
    fn duplicate_concepts_are_idempotent_and_order_free() {
        let c = ConceptRetriever::new(fixture(), DEFAULT_CONCEPT_ITEMS);
        let one = c.retrieve(&["jazz".into()], 10).unwrap();
        let two = c.retrieve(&["jazz".into(), "jazz".into()], 10).unwrap();
        assert_eq!(one, two);
        let ab = c
            .retrieve(&["jazz".into(), "cooking".into(), "yoga".into()], 10)
            .unwrap();
        let ba = c
            .retrieve(&["yoga".into(), "jazz".into(), "cooking".into()], 10)
            .unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn unknown_concept_falls_back_to_hash() {
        let corpus = fixture();
        let c = ConceptRetriever::new(corpus.clone(), DEFAULT_CONCEPT_ITEMS);
        assert_eq!(c.concept_vector("qwxzt"), corpus.embed("qwxzt"));
        assert_eq!(c.retrieve(&["qwxzt".into()], 4).unwrap().len(), 4);
        assert!(matches!(
            c.retrieve(&[], 4),
            Err(RetrievalError::NoConcepts)
        ));
    }

    #[test]
    fn facade_dispatches_every_scheme() {
        let corpus = fixture();
        let r = Retriever::new(
            corpus.clone(),
            TowerParams::identity(64),
            Arc::new(BuiltinSearch::new(&corpus)),
            &RetrieverConfig::default(),
        );
        let requests = [
            RetrievalRequest::Embedding(corpus.embed("late night jazz piano")),
            RetrievalRequest::ContextText("late night jazz piano".into()),
            RetrievalRequest::ItemRef("Late Night Jazz Piano".into()),
            RetrievalRequest::Concepts(vec!["jazz".into()]),
            RetrievalRequest::Query("jazz piano".into()),
        ];
        for req in &requests {
            let set = r.retrieve(req, 5).unwrap();
            assert!(set.is_well_formed(&corpus), "{req:?}");
            let first = set.candidates[0].item_id.as_str();
            assert!(
                first == "v02" || (first == "v01" && matches!(req, RetrievalRequest::Concepts(_))),
                "{req:?}"
            );
        }
        let bad = RetrievalRequest::Embedding(EmbeddingVector::zeros(3));
        assert!(matches!(
            r.retrieve(&bad, 5),
            Err(RetrievalError::Dimension { .. })
        ));
    }
}
