use std::collections::BTreeMap;

use serde::Serialize;

use crate::corpus::synthetic::TOPICS;
use crate::session::Session;
use crate::text::tokenize;

/// A total labeling of sessions into a fixed label set.
pub trait SessionClassifier: Send + Sync {
    fn name(&self) -> &str;
    fn labels(&self) -> Vec<String>;
    fn classify(&self, session: &Session) -> Result<String, String>;
}

/// Buckets sessions by the number of user turns.
pub struct TurnCountClassifier;

impl SessionClassifier for TurnCountClassifier {
    fn name(&self) -> &str {
        "turn_count"
    }

    fn labels(&self) -> Vec<String> {
        ["0-2", "3-4", "5-6", "7+"].map(String::from).to_vec()
    }

    fn classify(&self, session: &Session) -> Result<String, String> {
        let label = match session.user_turn_count() {
            0..=2 => "0-2",
            3..=4 => "3-4",
            5..=6 => "5-6",
            _ => "7+",
        };
        Ok(label.to_string())
    }
}

/// Labels a session with the topic whose words its user turns mention
/// most; earlier topics win ties, no mention gives `other`.
pub struct KeywordTopicClassifier {
    topics: Vec<(String, Vec<String>)>,
}

impl Default for KeywordTopicClassifier {
    fn default() -> Self {
        Self {
            topics: TOPICS
                .iter()
                .map(|(t, words)| {
                    let mut all = vec![t.to_string()];
                    all.extend(words.iter().map(|w| w.to_string()));
                    (t.to_string(), all)
                })
                .collect(),
        }
    }
}

impl SessionClassifier for KeywordTopicClassifier {
    fn name(&self) -> &str {
        "topic"
    }

    fn labels(&self) -> Vec<String> {
        let mut l: Vec<String> = self.topics.iter().map(|(t, _)| t.clone()).collect();
        l.push("other".into());
        l
    }

    fn classify(&self, session: &Session) -> Result<String, String> {
        let tokens: Vec<String> = session.user_utterances().flat_map(tokenize).collect();
        let mut best = ("other", 0usize);
        for (topic, words) in &self.topics {
            let hits = tokens.iter().filter(|t| words.contains(t)).count();
            if hits > best.1 {
                best = (topic, hits);
            }
        }
        Ok(best.0.to_string())
    }
}

const ANGRY: &[&str] = &[
    "ugh",
    "frustrating",
    "annoying",
    "hate",
    "seriously",
    "useless",
    "terrible",
    "worst",
    "angry",
];
const SATISFIED: &[&str] = &[
    "great", "thanks", "love", "perfect", "nice", "awesome", "good", "enjoy",
];
const CONFUSED: &[&str] = &[
    "confused",
    "understand",
    "what",
    "hmm",
    "huh",
    "unsure",
    "why",
    "get",
];

/// Counts lexicon hits over user turns; ties and silence give `neutral`.
pub struct LexiconSentimentClassifier;

impl SessionClassifier for LexiconSentimentClassifier {
    fn name(&self) -> &str {
        "sentiment"
    }

    fn labels(&self) -> Vec<String> {
        ["angry", "satisfied", "confused", "neutral"]
            .map(String::from)
            .to_vec()
    }

    fn classify(&self, session: &Session) -> Result<String, String> {
        let tokens: Vec<String> = session.user_utterances().flat_map(tokenize).collect();
        let count = |lex: &[&str]| tokens.iter().filter(|t| lex.contains(&t.as_str())).count();
        let scores = [
            ("angry", count(ANGRY)),
            ("satisfied", count(SATISFIED)),
            ("confused", count(CONFUSED)),
        ];
        let max = scores.iter().map(|s| s.1).max().unwrap_or(0);
        let winners: Vec<_> = scores.iter().filter(|s| s.1 == max).collect();
        Ok(if max == 0 || winners.len() > 1 {
            "neutral"
        } else {
            winners[0].0
        }
        .to_string())
    }
}

pub fn default_ensemble() -> Vec<Box<dyn SessionClassifier>> {
    vec![
        Box::new(TurnCountClassifier),
        Box::new(KeywordTopicClassifier::default()),
        Box::new(LexiconSentimentClassifier),
    ]
}

/// Label histogram plus the number of sessions the classifier failed on.
fn histogram(
    classifier: &dyn SessionClassifier,
    sessions: &[Session],
) -> (BTreeMap<String, usize>, usize) {
    let mut hist = BTreeMap::new();
    let mut failed = 0;
    for s in sessions {
        match classifier.classify(s) {
            Ok(label) => *hist.entry(label).or_insert(0) += 1,
            Err(e) => {
                log::debug!("{} failed on {}: {e}", classifier.name(), s.session_id);
                failed += 1;
            }
        }
    }
    (hist, failed)
}

fn distribution(hist: &BTreeMap<String, usize>) -> BTreeMap<String, f64> {
    let total: usize = hist.values().sum();
    hist.iter()
        .map(|(k, v)| {
            (
                k.clone(),
                if total == 0 {
                    0.0
                } else {
                    *v as f64 / total as f64
                },
            )
        })
        .collect()
}

/// Half the L1 distance between two label distributions.
pub fn total_variation(p: &BTreeMap<String, f64>, q: &BTreeMap<String, f64>) -> f64 {
    let keys: std::collections::BTreeSet<&String> = p.keys().chain(q.keys()).collect();
    0.5 * keys
        .into_iter()
        .map(|k| (p.get(k).unwrap_or(&0.0) - q.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

/// Shannon entropy in bits of the empirical distribution of `counts`.
pub fn entropy_bits<'a>(counts: impl IntoIterator<Item = &'a usize>) -> f64 {
    let counts: Vec<usize> = counts.into_iter().copied().filter(|c| *c > 0).collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    -counts
        .iter()
        .map(|c| {
            let p = *c as f64 / total as f64;
            p * p.log2()
        })
        .sum::<f64>()
        + 0.0
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassifierDistance {
    pub classifier: String,
    pub tv: f64,
    pub q: BTreeMap<String, f64>,
    pub r: BTreeMap<String, f64>,
    pub excluded_q: usize,
    pub excluded_r: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MatchReport {
    pub per_classifier: Vec<ClassifierDistance>,
    pub max_tv: f64,
    pub mean_tv: f64,
}

/// Per-classifier total-variation distance between the label distributions
/// of `q` and `r`.
pub fn ensemble_match(
    q: &[Session],
    r: &[Session],
    ensemble: &[Box<dyn SessionClassifier>],
) -> MatchReport {
    let per_classifier: Vec<ClassifierDistance> = ensemble
        .iter()
        .map(|g| {
            let (hq, eq) = histogram(g.as_ref(), q);
            let (hr, er) = histogram(g.as_ref(), r);
            let (dq, dr) = (distribution(&hq), distribution(&hr));
            ClassifierDistance {
                classifier: g.name().to_string(),
                tv: total_variation(&dq, &dr),
                q: dq,
                r: dr,
                excluded_q: eq,
                excluded_r: er,
            }
        })
        .collect();
    let max_tv = per_classifier.iter().map(|c| c.tv).fold(0.0, f64::max);
    let mean_tv = if per_classifier.is_empty() {
        0.0
    } else {
        per_classifier.iter().map(|c| c.tv).sum::<f64>() / per_classifier.len() as f64
    };
    MatchReport {
        per_classifier,
        max_tv,
        mean_tv,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropyReport {
    pub classifier: String,
    pub bits: f64,
    pub labels: usize,
}

pub fn ensemble_entropy(
    q: &[Session],
    ensemble: &[Box<dyn SessionClassifier>],
) -> Vec<EntropyReport> {
    ensemble
        .iter()
        .map(|g| {
            let (h, _) = histogram(g.as_ref(), q);
            EntropyReport {
                classifier: g.name().to_string(),
                bits: entropy_bits(h.values()),
                labels: g.labels().len(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(id: usize, utterances: &[&str]) -> Session {
        let mut s = Session::new(format!("s{id}"));
        for u in utterances {
            s.push_user(*u).unwrap();
            s.push_system(crate::session::SystemTurn::plain("ok"))
                .unwrap();
        }
        s
    }

    /// Labels by the first utterance verbatim.
    struct FirstWord;
    impl SessionClassifier for FirstWord {
        fn name(&self) -> &str {
            "first"
        }
        fn labels(&self) -> Vec<String> {
            vec![]
        }
        fn classify(&self, s: &Session) -> Result<String, String> {
            s.user_utterances()
                .next()
                .map(str::to_string)
                .ok_or_else(|| "empty".to_string())
        }
    }

    fn corpus(labels: &[(&str, usize)]) -> Vec<Session> {
        let mut out = Vec::new();
        for (l, n) in labels {
            for _ in 0..*n {
                out.push(session(out.len(), &[l]));
            }
        }
        out
    }

    #[test]
    fn identical_corpora_match_exactly() {
        let q = corpus(&[("a", 3), ("b", 5)]);
        let g: Vec<Box<dyn SessionClassifier>> = vec![Box::new(FirstWord)];
        assert_eq!(ensemble_match(&q, &q, &g).max_tv, 0.0);
        assert_eq!(ensemble_match(&q, &q, &default_ensemble()).max_tv, 0.0);
    }

    #[test]
    fn disjoint_support_is_one() {
        let g: Vec<Box<dyn SessionClassifier>> = vec![Box::new(FirstWord)];
        let r = ensemble_match(&corpus(&[("angry", 4)]), &corpus(&[("satisfied", 7)]), &g);
        assert_eq!(r.max_tv, 1.0);
    }

    #[test]
    fn sixty_forty_vs_even() {
        let g: Vec<Box<dyn SessionClassifier>> = vec![Box::new(FirstWord)];
        let r = ensemble_match(
            &corpus(&[("a", 6), ("b", 4)]),
            &corpus(&[("a", 5), ("b", 5)]),
            &g,
        );
        assert!((r.max_tv - 0.1).abs() < 1e-12);
    }

    #[test]
    fn failures_are_excluded_and_counted() {
        let g: Vec<Box<dyn SessionClassifier>> = vec![Box::new(FirstWord)];
        let mut q = corpus(&[("a", 2)]);
        q.push(Session::new("empty"));
        let r = ensemble_match(&q, &corpus(&[("a", 1)]), &g);
        assert_eq!(r.per_classifier[0].excluded_q, 1);
        assert_eq!(r.max_tv, 0.0);
    }

    #[test]
    fn entropy_values() {
        assert_eq!(entropy_bits(&[5]), 0.0);
        assert!((entropy_bits(&[3, 3, 3, 3]) - 2.0).abs() < 1e-12);
        assert!((entropy_bits(&[75, 25]) - 0.811_278_124_459_132_8).abs() < 1e-12);
        assert_eq!(entropy_bits(&[]), 0.0);
    }

    #[test]
    fn lexicon_labels() {
        let c = LexiconSentimentClassifier;
        assert_eq!(
            c.classify(&session(0, &["Ugh, this is frustrating. jazz"]))
                .unwrap(),
            "angry"
        );
        assert_eq!(
            c.classify(&session(0, &["Great, thanks!"])).unwrap(),
            "satisfied"
        );
        assert_eq!(
            c.classify(&session(0, &["Hmm, I'm confused."])).unwrap(),
            "confused"
        );
        assert_eq!(
            c.classify(&session(0, &["jazz please"])).unwrap(),
            "neutral"
        );
    }

    #[test]
    fn topic_and_turn_labels() {
        let s = session(0, &["some jazz", "with saxophone", "and cake"]);
        assert_eq!(
            KeywordTopicClassifier::default().classify(&s).unwrap(),
            "jazz"
        );
        assert_eq!(TurnCountClassifier.classify(&s).unwrap(), "3-4");
        assert_eq!(
            KeywordTopicClassifier::default()
                .classify(&session(0, &["hello"]))
                .unwrap(),
            "other"
        );
    }
}
