//! Acceptance suite. Runs every criterion, prints one line each and exits
//! non-zero when any fails.

use std::collections::HashMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use convrec_core::corpus::{synthetic, Corpus, Embedder, Item};
use convrec_core::dialogue::{parse_actions, FALLBACK_REPHRASE};
use convrec_core::llm::{
    BackendReply, FnBackend, Gateway, LlmBackend, RecordingBackend, RuleBackend, ScriptedBackend,
};
use convrec_core::profile::{trigger_and_retrieve, ProfileFact, ProfileStore};
use convrec_core::ranker::{score_from_output, score_line, BucketTable, Ranker, RankerConfig};
use convrec_core::record::{record_path, SessionRecord};
use convrec_core::retrieval::{Candidate, CandidateSet, DualEncoderRetriever, IndexKind, Scheme};
use convrec_core::service::{BackendChoice, CorpusSource, Service, ServiceConfig};
use convrec_core::session::{ActionKind, Session, SystemAction, SystemTurn};
use convrec_core::simulator::{
    default_ensemble, encode_retrieval, ensemble_entropy, ensemble_match, generate_retrieval,
    retrieval_context, run_sessions, train_discriminator, ControlSpec, DiscriminatorConfig,
    RetrievalSpec, RunConfig, ScriptedCrs, TrainingExample, TurnCountClassifier, Weighted,
};
use convrec_core::trainer::{
    bandit_step, dual_encoder_loss, hit_reward, mean_loss, recall_at_k, train_dual_encoder,
    BanditPolicy, TowerParams, TrainConfig,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn synthetic_corpus(n: usize, seed: u64) -> Corpus {
    Corpus::build(
        synthetic::generate(n, seed),
        Embedder::default(),
        &HashMap::new(),
    )
    .0
}

// Reference hashed embedding, written independently of the crate:
// FNV-1a 64 over the lowercased alphanumeric token with the seed folded
// into the offset basis, bucket = h mod d, sign = bit 32 of a second hash
// with the seed mixed by the golden-ratio constant, then L2 normalization.
mod reference {
    const OFFSET: u64 = 14695981039346656037;
    const PRIME: u64 = 1099511628211;
    const SEED: u64 = 0x5bd1e995;
    const MIX: u64 = 0x9e3779b97f4a7c15;
    pub const DIM: usize = 64;

    fn fnv(s: &str, seed: u64) -> u64 {
        s.bytes()
            .fold(OFFSET ^ seed, |h, b| (h ^ b as u64).wrapping_mul(PRIME))
    }

    pub fn embed(text: &str) -> Vec<f64> {
        let mut v = vec![0.0; DIM];
        let lower = text.to_lowercase();
        for tok in lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let sign = if (fnv(tok, SEED ^ MIX) >> 32) & 1 == 0 {
                1.0
            } else {
                -1.0
            };
            v[(fnv(tok, SEED) % DIM as u64) as usize] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }

    pub fn distance(a: &[f64], b: &[f64]) -> f64 {
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return 1.0;
        }
        1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
    }
}

// 1. Action-grammar totality.

fn random_plan_text(rng: &mut ChaCha8Rng) -> String {
    const HEADS: &[&str] = &[
        "Request:",
        "Response:",
        "Memory:",
        "Context:",
        "Reasoning:",
        "request:",
        " Request:",
        "Request",
        "Response :",
        "User:",
        "",
        "Score:",
        "Memory",
        "Response:\t",
    ];
    const BODY: &[char] = &[
        'a', 'z', 'Q', ' ', ' ', '\t', ':', '.', '?', '0', '9', 'é', 'ß', '中', '😀', '\r',
        '\u{200b}', '-', '"',
    ];
    let lines = rng.random_range(0..8);
    let mut out = String::new();
    for i in 0..lines {
        if i > 0 {
            out.push_str(if rng.random_bool(0.2) { "\r\n" } else { "\n" });
        }
        out.push_str(HEADS.choose(rng).unwrap());
        for _ in 0..rng.random_range(0..12) {
            out.push(*BODY.choose(rng).unwrap());
        }
    }
    out
}

fn expected_action(raw: &str) -> SystemAction {
    for line in raw.lines() {
        for (prefix, request) in [("Request:", true), ("Response:", false)] {
            if let Some(rest) = line.strip_prefix(prefix) {
                let rest = rest.trim();
                if !rest.is_empty() {
                    return if request {
                        SystemAction::request(rest)
                    } else {
                        SystemAction::respond(rest)
                    };
                }
            }
        }
    }
    SystemAction::respond(FALLBACK_REPHRASE)
}

fn action_grammar() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut fallbacks = 0;
    for case in 0..100_000 {
        let raw = random_plan_text(&mut rng);
        let parsed = panic::catch_unwind(|| parse_actions(&raw))
            .map_err(|_| format!("case {case} panicked: {raw:?}"))?;
        let want = expected_action(&raw);
        check(
            parsed.action == want,
            format!("case {case}: {:?} != {want:?} for {raw:?}", parsed.action),
        )?;
        check(
            !parsed.action.payload.trim().is_empty(),
            format!("case {case}: empty payload"),
        )?;
        check(
            parsed.artifacts.iter().all(|a| !a.text.is_empty()),
            format!("case {case}: empty artifact"),
        )?;
        if parsed.error.is_some() {
            fallbacks += 1;
            check(
                parsed.action.kind == ActionKind::Respond,
                "fallback must respond",
            )?;
        }
    }
    let elapsed = start.elapsed();
    check(
        elapsed < Duration::from_secs(10),
        format!("took {elapsed:?}"),
    )?;
    Ok(format!(
        "100000 cases, {fallbacks} fallbacks, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

// 2. Retrieval oracle equivalence.

fn tie_corpus() -> Corpus {
    let mut items = synthetic::generate(980, 2);
    let clones: Vec<Item> = items[..20]
        .iter()
        .map(|i| {
            let mut c = i.clone();
            c.id = format!("a-{}", i.id);
            c
        })
        .collect();
    items.extend(clones);
    Corpus::build(items, Embedder::default(), &HashMap::new()).0
}

fn random_matrix(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn naive_matvec(m: &[f64], d: usize, v: &[f64]) -> Vec<f64> {
    (0..d)
        .map(|r| (0..d).map(|c| m[r * d + c] * v[c]).sum())
        .collect()
}

fn oracle_item_vectors(corpus: &Corpus, towers: &TowerParams) -> Vec<Vec<f64>> {
    (0..corpus.len())
        .map(|r| naive_matvec(&towers.item, corpus.dim(), corpus.embedding(r).as_slice()))
        .collect()
}

fn oracle_top_k(
    corpus: &Corpus,
    items: &[Vec<f64>],
    towers: &TowerParams,
    context: &[f64],
    k: usize,
) -> Vec<(String, f64)> {
    let q = naive_matvec(&towers.context, corpus.dim(), context);
    let mut scored: Vec<(String, f64)> = corpus
        .items()
        .iter()
        .zip(items)
        .map(|(item, x)| (item.id.clone(), x.iter().zip(&q).map(|(a, b)| a * b).sum()))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

fn retrieval_oracle() -> Outcome {
    let start = Instant::now();
    let corpus = Arc::new(tie_corpus());
    check(corpus.len() == 1000, "corpus size")?;
    let d = corpus.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let towers = TowerParams::from_parts(
        d,
        random_matrix(&mut rng, d),
        random_matrix(&mut rng, d),
        0.1,
    )
    .unwrap();
    let exact = DualEncoderRetriever::build(corpus.clone(), towers.clone(), IndexKind::Exact, 0);
    let approx = DualEncoderRetriever::build(
        corpus.clone(),
        towers.clone(),
        IndexKind::clustered_for(1000),
        0,
    );
    let item_vectors = oracle_item_vectors(&corpus, &towers);
    let mut recall_sum = 0.0;
    let mut ties_seen = 0;
    for c in 0..100 {
        let context: Vec<f64> = if c % 4 == 0 {
            corpus
                .embedding(rng.random_range(0..20))
                .as_slice()
                .to_vec()
        } else {
            (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        let want = oracle_top_k(&corpus, &item_vectors, &towers, &context, 50);
        ties_seen += want.windows(2).filter(|w| w[0].1 == w[1].1).count();
        let projected = towers.project_context(&context);
        let got = exact.retrieve_exact(&projected, 50);
        let got_ids = got.ids();
        let want_ids: Vec<&str> = want.iter().map(|(id, _)| id.as_str()).collect();
        check(
            got_ids == want_ids,
            format!("context {c}: exact order differs"),
        )?;
        for (g, w) in got.candidates.iter().zip(&want) {
            check(
                (g.score - w.1).abs() <= 1e-9 * w.1.abs().max(1.0),
                format!("context {c}: score mismatch"),
            )?;
        }
        let top10: Vec<&str> = want_ids[..10].to_vec();
        let approx_ids = approx
            .retrieve_vector(&projected, 10)
            .ids()
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>();
        recall_sum += top10
            .iter()
            .filter(|id| approx_ids.iter().any(|a| a == *id))
            .count() as f64
            / 10.0;
    }
    let recall = recall_sum / 100.0;
    let elapsed = start.elapsed();
    check(ties_seen > 0, "tie-break path never exercised")?;
    check(
        recall >= 0.95,
        format!("approximate recall@10 {recall:.3} < 0.95"),
    )?;
    check(
        elapsed < Duration::from_secs(30),
        format!("took {elapsed:?}"),
    )?;
    Ok(format!(
        "100 contexts exact, {ties_seen} ties, approx recall@10 {recall:.3}, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

// 3. Gradient correctness.

fn gradient_check() -> Outcome {
    use convrec_core::trainer::EncodedExample;
    let d = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for batch_no in 0..20 {
        let unit = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        };
        let batch: Vec<EncodedExample> = (0..rng.random_range(1..6))
            .map(|_| EncodedExample {
                context: unit(&mut rng),
                candidates: (0..rng.random_range(2..6))
                    .map(|_| unit(&mut rng))
                    .collect(),
            })
            .collect();
        let tau = rng.random_range(0.2..2.0);
        let params = TowerParams::from_parts(
            d,
            random_matrix(&mut rng, d),
            random_matrix(&mut rng, d),
            tau,
        )
        .unwrap();
        let (_, grads) = dual_encoder_loss(&batch, &params).map_err(|e| e.to_string())?;
        let h = 1e-5;
        for which in 0..2 {
            for idx in 0..d * d {
                let mut plus = params.clone();
                let mut minus = params.clone();
                let (p, m) = if which == 0 {
                    (&mut plus.context, &mut minus.context)
                } else {
                    (&mut plus.item, &mut minus.item)
                };
                p[idx] += h;
                m[idx] -= h;
                let lp = dual_encoder_loss(&batch, &plus).unwrap().0;
                let lm = dual_encoder_loss(&batch, &minus).unwrap().0;
                let numeric = (lp - lm) / (2.0 * h);
                let analytic = if which == 0 {
                    grads.context[idx]
                } else {
                    grads.item[idx]
                };
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-3);
                worst = worst.max(rel);
                check(
                    rel <= 1e-4,
                    format!("batch {batch_no}: relative error {rel:e}"),
                )?;
            }
        }
    }
    Ok(format!("20 batches, max relative error {worst:.2e}"))
}

// 4. Training efficacy.

fn held_out_queries(corpus: &Corpus, examples: &[TrainingExample]) -> Vec<(Vec<f64>, usize)> {
    examples
        .iter()
        .filter_map(|e| match e {
            TrainingExample::Retrieval {
                session, positive, ..
            } => Some((
                corpus.embed(&retrieval_context(session)).into_vec(),
                corpus.index_of(positive)?,
            )),
            _ => None,
        })
        .collect()
}

fn training_efficacy() -> Outcome {
    let start = Instant::now();
    let corpus = Arc::new(synthetic_corpus(1000, 5));
    let crs = ScriptedCrs::new(corpus.clone());
    let gateway = Gateway::new(Arc::new(ScriptedBackend::new()));
    let spec = RetrievalSpec {
        n: 200,
        ..RetrievalSpec::default()
    };
    let examples =
        generate_retrieval(&corpus, &crs, &gateway, &spec, 5).map_err(|e| e.to_string())?;
    check(
        examples.len() == 200,
        format!("only {} examples generated", examples.len()),
    )?;
    let (train, test) = examples.split_at(160);
    let train_enc = encode_retrieval(&corpus, train);
    let test_enc = encode_retrieval(&corpus, test);
    let identity = TowerParams::identity(corpus.dim());
    let report = train_dual_encoder(&train_enc, identity.clone(), &TrainConfig::default())
        .map_err(|e| e.to_string())?;
    check(!report.diverged, "training diverged")?;
    let before = mean_loss(&test_enc, &identity).unwrap();
    let after = mean_loss(&test_enc, &report.params).unwrap();
    let queries = held_out_queries(&corpus, test);
    let r_id = recall_at_k(&identity, &corpus, &queries, 10);
    let r_tr = recall_at_k(&report.params, &corpus, &queries, 10);
    let elapsed = start.elapsed();
    check(
        after < before,
        format!("held-out loss {after:.4} not below {before:.4}"),
    )?;
    check(
        r_tr >= r_id,
        format!("recall@10 {r_tr:.3} below identity {r_id:.3}"),
    )?;
    check(
        r_tr >= 0.8,
        format!("planted positive in top-10 for only {:.1}%", 100.0 * r_tr),
    )?;
    check(
        elapsed < Duration::from_secs(300),
        format!("took {elapsed:?}"),
    )?;
    Ok(format!(
        "held-out loss {before:.4} -> {after:.4}, recall@10 {r_id:.3} -> {r_tr:.3}, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

// 5. Bandit convergence.

fn bandit_convergence() -> Outcome {
    let corpus = Corpus::build(
        synthetic::fixture_corpus(),
        Embedder::default(),
        &HashMap::new(),
    )
    .0;
    let search = convrec_core::retrieval::BuiltinSearch::new(&corpus);
    let cands = vec!["fish tacos".to_string(), "retro speedrun".to_string()];
    let reward = hit_reward("v07");
    let r_good =
        reward(&convrec_core::retrieval::SearchClient::search(&search, &cands[1], 3).unwrap());
    let r_bad =
        reward(&convrec_core::retrieval::SearchClient::search(&search, &cands[0], 3).unwrap());
    check(
        r_good == 1.0 && r_bad == 0.0,
        format!("environment not separating: {r_good} vs {r_bad}"),
    )?;
    let mut policy = BanditPolicy::new(0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        bandit_step(&mut policy, &cands, &search, 3, &reward, &mut rng)
            .map_err(|e| e.to_string())?;
    }
    let p = policy.probabilities(&cands)[1];
    check(p >= 0.9, format!("rewarded query probability {p:.3}"))?;
    Ok(format!("p(rewarded) = {p:.4} after 500 steps"))
}

// 6. Ranker contracts.

fn ranker_contracts() -> Outcome {
    let table = BucketTable::default();
    let entries = table.entries().to_vec();
    check(entries.len() == 5, "expected five buckets")?;
    for (phrase, value) in &entries {
        check(
            table.score_of(phrase) == Some(*value),
            format!("score_of({phrase})"),
        )?;
        check(
            table.phrase_of(*value) == Some(phrase.as_str()),
            format!("phrase_of({value})"),
        )?;
        let scored = score_from_output(
            &table,
            "x",
            "X",
            format!("Reasoning: r\n{}", score_line(phrase)),
        );
        check(
            scored.score == *value && scored.bucket_phrase == *phrase,
            "score line round trip",
        )?;
    }
    let corpus = Arc::new(synthetic_corpus(12, 7));
    let assignment: Arc<Mutex<HashMap<String, String>>> = Arc::default();
    let shared = assignment.clone();
    let backend = FnBackend::new("buckets", move |call| {
        if call.template != "rank_item" {
            return Ok(BackendReply::miss(""));
        }
        let map = shared.lock().unwrap();
        let phrase = map
            .iter()
            .find(|(title, _)| call.prompt.contains(title.as_str()))
            .map(|(_, p)| p.clone())
            .unwrap_or_default();
        Ok(BackendReply::hit(format!(
            "Reasoning: fits.\nScore: {phrase}"
        )))
    });
    let ranker = Ranker::new(
        Arc::new(Gateway::new(Arc::new(backend))),
        corpus.clone(),
        RankerConfig {
            buckets: table.clone(),
            slate_size: 12,
            parallelism: 4,
        },
    );
    let mut session = Session::new("s");
    session.push_user("anything").unwrap();
    let rank = |order: &[usize], buckets: &[usize]| -> Vec<String> {
        {
            let mut map = assignment.lock().unwrap();
            map.clear();
            for (row, b) in buckets.iter().enumerate() {
                map.insert(corpus.item(row).title.clone(), entries[*b].0.clone());
            }
        }
        let set = CandidateSet {
            scheme: Scheme::DualEncoder,
            candidates: order
                .iter()
                .map(|r| Candidate {
                    item_id: corpus.item(*r).id.clone(),
                    score: 0.0,
                })
                .collect(),
        };
        ranker
            .rank(&set, &session)
            .items
            .into_iter()
            .map(|s| s.item_id)
            .collect()
    };
    let oracle = |order: &[usize], buckets: &[usize]| -> Vec<String> {
        let mut pos: Vec<(usize, usize)> = order.iter().enumerate().map(|(p, r)| (p, *r)).collect();
        pos.sort_by(|a, b| buckets[b.1].cmp(&buckets[a.1]).then(a.0.cmp(&b.0)));
        pos.into_iter()
            .map(|(_, r)| corpus.item(r).id.clone())
            .collect()
    };
    let titles: std::collections::HashSet<&str> =
        corpus.items().iter().map(|i| i.title.as_str()).collect();
    check(titles.len() == 12, "titles must be distinct")?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut upgrades = 0;
    for p in 0..100 {
        let mut order: Vec<usize> = (0..12).collect();
        order.shuffle(&mut rng);
        let buckets: Vec<usize> = if p % 10 == 0 {
            vec![p / 10 % 5; 12]
        } else {
            (0..12).map(|_| rng.random_range(0..5)).collect()
        };
        let got = rank(&order, &buckets);
        check(
            got == oracle(&order, &buckets),
            format!("permutation {p}: order differs"),
        )?;
        if p % 10 == 0 {
            let retrieval: Vec<String> = order.iter().map(|r| corpus.item(*r).id.clone()).collect();
            check(
                got == retrieval,
                format!("permutation {p}: equal scores reordered"),
            )?;
        }
        let row = rng.random_range(0..12);
        for b in buckets[row] + 1..5 {
            let mut up = buckets.clone();
            up[row] = b;
            let after = rank(&order, &up);
            let id = &corpus.item(row).id;
            let before_pos = got.iter().position(|x| x == id).unwrap();
            let after_pos = after.iter().position(|x| x == id).unwrap();
            check(
                after_pos <= before_pos,
                format!("permutation {p}: upgrade moved item down"),
            )?;
            let others_before: Vec<&String> = got.iter().filter(|x| *x != id).collect();
            let others_after: Vec<&String> = after.iter().filter(|x| *x != id).collect();
            check(
                others_before == others_after,
                format!("permutation {p}: upgrade reordered others"),
            )?;
            upgrades += 1;
        }
    }
    Ok(format!(
        "5-bucket bijection, 100 permutations, {upgrades} upgrades"
    ))
}

// 7. Profile triggering semantics.

fn profile_triggering() -> Outcome {
    const VOCAB: &[&str] = &[
        "jazz",
        "car",
        "seafood",
        "allergic",
        "morning",
        "running",
        "cats",
        "spicy",
        "night",
        "loud",
        "quiet",
        "kids",
        "vegan",
        "guitar",
        "rain",
        "beach",
        "coffee",
        "horror",
        "subtitles",
        "short",
    ];
    let embedder = Embedder::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut below, mut above) = (0, 0);
    let mut attempts = 0;
    while below + above < 50 {
        attempts += 1;
        if attempts > 200_000 {
            return Err(format!(
                "could not construct cases ({below} below, {above} above)"
            ));
        }
        let words: Vec<&str> = (0..rng.random_range(3..7))
            .map(|_| *VOCAB.choose(&mut rng).unwrap())
            .collect();
        let utterance = words.join(" ");
        let facts: Vec<String> = (0..rng.random_range(1..5))
            .map(|_| {
                let mut f: Vec<&str> = words
                    .iter()
                    .copied()
                    .filter(|_| rng.random_bool(0.7))
                    .collect();
                for _ in 0..rng.random_range(0..3) {
                    f.push(VOCAB.choose(&mut rng).unwrap());
                }
                f.join(" ")
            })
            .filter(|f| !f.is_empty())
            .collect();
        if facts.is_empty() {
            continue;
        }
        let q = reference::embed(&utterance);
        let dists: Vec<f64> = facts
            .iter()
            .map(|f| reference::distance(&q, &reference::embed(f)))
            .collect();
        let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
        let trigger = min <= 0.35;
        if !(0.2..=0.5).contains(&min) || (min - 0.35).abs() < 1e-6 {
            continue;
        }
        if (trigger && below >= 25) || (!trigger && above >= 25) {
            continue;
        }
        let expected = dists.iter().position(|d| *d == min).unwrap();
        let store = ProfileStore::in_memory(embedder);
        let stored = store.replace("u", &facts).map_err(|e| e.to_string())?;
        let direct: Vec<ProfileFact> = stored.clone();
        let got = trigger_and_retrieve(&direct, &utterance, 0.35, &embedder);
        let via_store = store
            .trigger("u", &utterance, 0.35)
            .map_err(|e| e.to_string())?;
        match (trigger, got, via_store) {
            (true, Some((f, d)), Some((sf, _))) => {
                check(
                    f.text == facts[expected],
                    format!("{utterance:?}: wrong fact {:?}", f.text),
                )?;
                check(sf.text == facts[expected], "store disagrees")?;
                check(
                    (d - min).abs() < 1e-9,
                    format!("distance {d} vs oracle {min}"),
                )?;
                below += 1;
            }
            (false, None, None) => above += 1,
            (t, g, _) => {
                return Err(format!(
                    "{utterance:?} vs {facts:?}: oracle {t} (min {min:.4}), got {:?}",
                    g.map(|x| x.1)
                ))
            }
        }
    }
    Ok(format!("50 cases ({below} trigger, {above} silent)"))
}

// 8. Simulator metrics.

fn sessions_with_turns(turns: &[usize]) -> Vec<Session> {
    turns
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let mut s = Session::new(format!("c{i}"));
            for t in 0..*n {
                s.push_user(format!("turn {t}")).unwrap();
                s.push_system(SystemTurn::plain("ok")).unwrap();
            }
            s
        })
        .collect()
}

fn simulated(spec: &ControlSpec, n: usize, seed: u64) -> Vec<Session> {
    let corpus = Arc::new(synthetic_corpus(200, 10));
    let crs = ScriptedCrs::new(corpus);
    let gateway = Gateway::new(Arc::new(ScriptedBackend::new()));
    let config = RunConfig {
        n_sessions: n,
        max_turns: 3,
        seed,
        ..RunConfig::default()
    };
    run_sessions(&crs, &gateway, spec, &config)
        .corpus
        .sessions()
}

fn simulator_metrics() -> Outcome {
    let ensemble = default_ensemble();
    let same = simulated(&ControlSpec::default(), 50, 1);
    let m = ensemble_match(&same, &same, &ensemble);
    check(m.max_tv == 0.0, format!("TV(Q, Q) = {}", m.max_tv))?;

    let turn_only: Vec<Box<dyn convrec_core::simulator::SessionClassifier>> =
        vec![Box::new(TurnCountClassifier)];
    let uniform = sessions_with_turns(&[[1usize; 50], [3; 50], [5; 50], [7; 50]].concat());
    let h4 = ensemble_entropy(&uniform, &turn_only)[0].bits;
    check((h4 - 2.0).abs() <= 1e-9, format!("uniform entropy {h4}"))?;
    let skewed = sessions_with_turns(&[[1usize; 150].as_slice(), [3; 50].as_slice()].concat());
    let h2 = ensemble_entropy(&skewed, &turn_only)[0].bits;
    check((h2 - 0.8113).abs() <= 1e-4, format!("75/25 entropy {h2}"))?;

    let topic = |t: &str| ControlSpec {
        topics: vec![Weighted::new(t, 1.0)],
        ..ControlSpec::default()
    };
    let q = simulated(&topic("cooking"), 200, 2);
    let r = simulated(&topic("gaming"), 200, 3);
    let sep = train_discriminator(&q, &r, 0, &DiscriminatorConfig::default())
        .map_err(|e| e.to_string())?;
    check(sep.auc >= 0.95, format!("separable AUC {:.3}", sep.auc))?;

    let q = simulated(&ControlSpec::default(), 200, 4);
    let r = simulated(&ControlSpec::default(), 200, 5);
    let same = train_discriminator(&q, &r, 0, &DiscriminatorConfig::default())
        .map_err(|e| e.to_string())?;
    check(
        (0.4..=0.6).contains(&same.auc),
        format!("identical-generator AUC {:.3}", same.auc),
    )?;
    Ok(format!(
        "TV 0, H {h4:.9} / {h2:.6} bits, AUC separable {:.3}, identical {:.3}",
        sep.auc, same.auc
    ))
}

// 9. Golden transcript.

const GOLDEN_TURNS: [&str; 4] = [
    "play some jazz",
    "something more upbeat",
    "remember that I do not like listening to jazz while in the car",
    "listening to jazz while in the car tonight",
];

fn golden_config(backend: BackendChoice, data_dir: &Path) -> ServiceConfig {
    ServiceConfig {
        corpus: CorpusSource::Fixture,
        backend,
        candidate_count: 10,
        data_dir: Some(data_dir.to_path_buf()),
        ..ServiceConfig::default()
    }
}

fn play(svc: &Service, id: &str, turns: &[&str]) -> Result<(), String> {
    for t in turns {
        svc.handle_user_message(id, Some("u1"), t)
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn golden_transcript() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let recorder = Arc::new(RecordingBackend::new(RuleBackend));
    let fixture_corpus =
        Arc::new(convrec_core::service::load_corpus(&CorpusSource::Fixture, 64).unwrap());
    let rec_svc = Service::with_gateway(
        golden_config(BackendChoice::Rules, &tmp.path().join("recording")),
        fixture_corpus,
        Arc::new(Gateway::new(recorder.clone() as Arc<dyn LlmBackend>)),
    )
    .map_err(|e| e.to_string())?;
    let id = rec_svc
        .create_session(Some("u1"))
        .map_err(|e| e.to_string())?;
    play(&rec_svc, &id, &GOLDEN_TURNS)?;
    let fixture = tmp.path().join("golden.fixture");
    std::fs::write(&fixture, recorder.to_fixture_text()).map_err(|e| e.to_string())?;
    let scripted = || BackendChoice::Scripted(Some(fixture.clone()));

    let run = |dir: &str, split: usize| -> Result<Vec<u8>, String> {
        let data = tmp.path().join(dir);
        let id = {
            let svc = Service::from_config(golden_config(scripted(), &data))
                .map_err(|e| e.to_string())?;
            let id = svc.create_session(Some("u1")).map_err(|e| e.to_string())?;
            play(&svc, &id, &GOLDEN_TURNS[..split])?;
            id
        };
        let svc =
            Service::from_config(golden_config(scripted(), &data)).map_err(|e| e.to_string())?;
        play(&svc, &id, &GOLDEN_TURNS[split..])?;
        std::fs::read(record_path(&data.join("sessions"), &id)).map_err(|e| e.to_string())
    };
    let first = run("run1", 4)?;
    let second = run("run2", 4)?;
    let restarted = run("run3", 2)?;
    check(first == second, "two runs differ")?;
    check(first == restarted, "run across restart differs")?;
    let recorded = SessionRecord::load(record_path(&tmp.path().join("recording/sessions"), &id))
        .map_err(|e| e.to_string())?;

    let record = SessionRecord::parse(std::str::from_utf8(&first).unwrap(), "golden")
        .map_err(|e| e.to_string())?;
    check(
        record.turns == recorded.turns,
        "replay turns differ from the recorded session",
    )?;
    check(record.turns.len() == 4, "four turns")?;
    let t = &record.turns;
    let slate_len = |i: usize| t[i].system.slate.as_ref().map_or(0, |s| s.items.len());
    check(slate_len(0) > 0, "turn 1 has no slate")?;
    check(
        t[0].system
            .slate
            .as_ref()
            .unwrap()
            .items
            .iter()
            .all(|s| !s.explanation.is_empty()),
        "unexplained item",
    )?;
    let payload = |i: usize| t[i].action.as_ref().map(|a| (a.kind, a.payload.clone()));
    check(
        payload(1).is_some_and(|(k, _)| k == ActionKind::Request) && payload(0) != payload(1),
        "refinement kept query",
    )?;
    check(slate_len(1) > 0, "refinement has no slate")?;
    check(t[2].memory_writes.len() == 1, "memory turn wrote nothing")?;
    let fact = &t[2].memory_writes[0];
    let d = reference::distance(&reference::embed(GOLDEN_TURNS[3]), &reference::embed(fact));
    check(d <= 0.35, format!("fact distance {d:.3} above threshold"))?;
    check(
        t[3].profile_injections == vec![format!("User profile: {fact}")],
        "profile not injected",
    )?;
    check(
        t[3].plan_prompt
            .as_ref()
            .is_some_and(|p| p.contains(&format!("User profile: {fact}"))),
        "fact missing from prompt",
    )?;
    Ok(format!(
        "{} bytes identical over 2 runs and a restart, fact distance {d:.3}",
        first.len()
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("action grammar totality", action_grammar),
        ("retrieval oracle equivalence", retrieval_oracle),
        ("gradient correctness", gradient_check),
        ("training efficacy", training_efficacy),
        ("bandit convergence", bandit_convergence),
        ("ranker contracts", ranker_contracts),
        ("profile triggering", profile_triggering),
        ("simulator metrics", simulator_metrics),
        ("golden transcript", golden_transcript),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", i + 1)
            }
        }
    }
    println!(
        "acceptance: {}/{} passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
