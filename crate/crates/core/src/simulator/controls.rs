use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::corpus::synthetic::TOPICS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlScope {
    Session,
    Turn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    PersonaProfile,
    SentimentLabel,
    Intent,
    TargetItem,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ControlValue {
    Text(String),
    Target { item_id: String, turn: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlVariable {
    pub scope: ControlScope,
    pub kind: ControlKind,
    pub value: ControlValue,
    /// 1-based user turn for turn-scoped controls.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn: Option<usize>,
}

impl ControlVariable {
    fn session(kind: ControlKind, text: impl Into<String>) -> Self {
        Self {
            scope: ControlScope::Session,
            kind,
            value: ControlValue::Text(text.into()),
            turn: None,
        }
    }

    fn at_turn(kind: ControlKind, turn: usize, text: impl Into<String>) -> Self {
        Self {
            scope: ControlScope::Turn,
            kind,
            value: ControlValue::Text(text.into()),
            turn: Some(turn),
        }
    }

    pub fn persona(text: impl Into<String>) -> Self {
        Self::session(ControlKind::PersonaProfile, text)
    }

    pub fn sentiment(label: impl Into<String>) -> Self {
        Self::session(ControlKind::SentimentLabel, label)
    }

    pub fn turn_sentiment(turn: usize, label: impl Into<String>) -> Self {
        Self::at_turn(ControlKind::SentimentLabel, turn, label)
    }

    pub fn intent(turn: usize, intent: &Intent) -> Self {
        Self::at_turn(ControlKind::Intent, turn, intent.to_string())
    }

    pub fn target(item_id: impl Into<String>, turn: usize) -> Result<Self, SimError> {
        if turn == 0 {
            return Err(SimError::Control("target turn must be at least 1".into()));
        }
        Ok(Self {
            scope: ControlScope::Session,
            kind: ControlKind::TargetItem,
            value: ControlValue::Target {
                item_id: item_id.into(),
                turn,
            },
            turn: None,
        })
    }

    pub fn text(&self) -> Option<&str> {
        match &self.value {
            ControlValue::Text(t) => Some(t),
            ControlValue::Target { .. } => None,
        }
    }
}

/// What the simulated user tries to do on one turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Intent {
    Ask { topic: String },
    Narrow { terms: Vec<String> },
    Target { terms: Vec<String> },
    React,
    Close,
}

const ASK: &str = "Ask for videos about ";
const NARROW: &str = "Narrow the request to ";
const TARGET: &str = "Ask specifically for ";
const REACT: &str = "React to the latest recommendations.";
const CLOSE: &str = "Wrap up the conversation.";

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Intent::Ask { topic } => write!(f, "{ASK}{topic}."),
            Intent::Narrow { terms } => write!(f, "{NARROW}{}.", terms.join(", ")),
            Intent::Target { terms } => write!(f, "{TARGET}{}.", terms.join(", ")),
            Intent::React => f.write_str(REACT),
            Intent::Close => f.write_str(CLOSE),
        }
    }
}

impl FromStr for Intent {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let terms = |rest: &str| -> Vec<String> {
            rest.trim_end_matches('.')
                .split(',')
                .map(|t| t.trim().to_string())
                .filter(|t| !t.is_empty())
                .collect()
        };
        let s = s.trim();
        if let Some(rest) = s.strip_prefix(ASK) {
            return Ok(Intent::Ask {
                topic: rest.trim_end_matches('.').to_string(),
            });
        }
        if let Some(rest) = s.strip_prefix(NARROW) {
            return Ok(Intent::Narrow { terms: terms(rest) });
        }
        if let Some(rest) = s.strip_prefix(TARGET) {
            return Ok(Intent::Target { terms: terms(rest) });
        }
        match s {
            REACT => Ok(Intent::React),
            CLOSE => Ok(Intent::Close),
            _ => Err(SimError::Control(format!("unrecognized intent {s:?}"))),
        }
    }
}

/// All controls for one simulated session.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionControls {
    pub variables: Vec<ControlVariable>,
}

impl SessionControls {
    pub fn new(variables: Vec<ControlVariable>) -> Self {
        Self { variables }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for v in &self.variables {
            match (v.scope, v.turn) {
                (ControlScope::Turn, None | Some(0)) => {
                    return Err(SimError::Control(
                        "turn-scoped control without a turn".into(),
                    ))
                }
                (ControlScope::Session, Some(_)) => {
                    return Err(SimError::Control(
                        "session-scoped control with a turn".into(),
                    ))
                }
                _ => {}
            }
            if let ControlValue::Target { turn: 0, .. } = v.value {
                return Err(SimError::Control("target turn must be at least 1".into()));
            }
            if v.kind == ControlKind::Intent {
                v.text().unwrap_or_default().parse::<Intent>()?;
            }
        }
        Ok(())
    }

    fn session_text(&self, kind: ControlKind) -> Option<&str> {
        self.variables
            .iter()
            .find(|v| v.kind == kind && v.scope == ControlScope::Session)
            .and_then(ControlVariable::text)
    }

    fn turn_text(&self, kind: ControlKind, turn: usize) -> Option<&str> {
        self.variables
            .iter()
            .find(|v| v.kind == kind && v.turn == Some(turn))
            .and_then(ControlVariable::text)
    }

    pub fn persona(&self) -> Option<&str> {
        self.session_text(ControlKind::PersonaProfile)
    }

    /// Turn-level sentiment overrides the session-level one.
    pub fn sentiment_at(&self, turn: usize) -> Option<&str> {
        self.turn_text(ControlKind::SentimentLabel, turn)
            .or_else(|| self.session_text(ControlKind::SentimentLabel))
    }

    pub fn session_sentiment(&self) -> Option<&str> {
        self.session_text(ControlKind::SentimentLabel)
    }

    pub fn intent_at(&self, turn: usize) -> Option<Intent> {
        self.turn_text(ControlKind::Intent, turn)
            .and_then(|t| t.parse().ok())
    }

    pub fn target(&self) -> Option<(&str, usize)> {
        self.variables.iter().find_map(|v| match &v.value {
            ControlValue::Target { item_id, turn } => Some((item_id.as_str(), *turn)),
            ControlValue::Text(_) => None,
        })
    }

    /// Session controls as first-person instructions for the simulator
    /// prompt.
    pub fn preamble(&self, turn: usize) -> String {
        let mut lines = Vec::new();
        if let Some(p) = self.persona() {
            lines.push(p.to_string());
        }
        if let Some(s) = self.sentiment_at(turn) {
            lines.push(sentiment_sentence(s));
        }
        lines.join("\n")
    }
}

pub fn sentiment_sentence(label: &str) -> String {
    let article = if label.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    };
    format!("You are {article} {label} user.")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weighted {
    pub value: String,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

impl Weighted {
    pub fn new(value: impl Into<String>, weight: f64) -> Self {
        Self {
            value: value.into(),
            weight,
        }
    }
}

/// Samplers for session controls, read from a JSON control-spec file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    #[serde(default)]
    pub personas: Vec<Weighted>,
    #[serde(default)]
    pub sentiments: Vec<Weighted>,
    /// Draw a fresh sentiment for every turn instead of once per session.
    #[serde(default)]
    pub turn_level_sentiment: bool,
    /// Topics for the opening request; the built-in topic list when empty.
    #[serde(default)]
    pub topics: Vec<Weighted>,
}

fn pick<'a, R: Rng + ?Sized>(
    options: &'a [Weighted],
    rng: &mut R,
) -> Result<Option<&'a str>, SimError> {
    if options.is_empty() {
        return Ok(None);
    }
    let dist = WeightedIndex::new(options.iter().map(|w| w.weight))
        .map_err(|e| SimError::Control(format!("bad weights: {e}")))?;
    Ok(Some(options[dist.sample(rng)].value.as_str()))
}

fn entity_pool(topic: &str) -> &'static [&'static str] {
    TOPICS
        .iter()
        .find(|(t, _)| *t == topic)
        .map(|(_, p)| *p)
        .unwrap_or(&[])
}

impl ControlSpec {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let spec: Self =
            serde_json::from_str(text).map_err(|e| SimError::Control(e.to_string()))?;
        for w in spec
            .personas
            .iter()
            .chain(&spec.sentiments)
            .chain(&spec.topics)
        {
            if !(w.weight.is_finite() && w.weight >= 0.0) {
                return Err(SimError::Control(format!(
                    "weight for {:?} must be non-negative",
                    w.value
                )));
            }
        }
        Ok(spec)
    }

    pub fn sentiments(labels: &[&str]) -> Self {
        Self {
            sentiments: labels.iter().map(|l| Weighted::new(*l, 1.0)).collect(),
            ..Self::default()
        }
    }

    /// Draws persona, sentiment and an intent trajectory: ask about a topic,
    /// narrow to one of its entities, react to the slate, narrow again.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        max_turns: usize,
    ) -> Result<SessionControls, SimError> {
        let mut vars = Vec::new();
        if let Some(p) = pick(&self.personas, rng)? {
            vars.push(ControlVariable::persona(p));
        }
        if self.turn_level_sentiment {
            for turn in 1..=max_turns {
                if let Some(s) = pick(&self.sentiments, rng)? {
                    vars.push(ControlVariable::turn_sentiment(turn, s));
                }
            }
        } else if let Some(s) = pick(&self.sentiments, rng)? {
            vars.push(ControlVariable::sentiment(s));
        }
        let topic = match pick(&self.topics, rng)? {
            Some(t) => t.to_string(),
            None => TOPICS.choose(rng).expect("topics").0.to_string(),
        };
        let pool = entity_pool(&topic);
        for turn in 1..=max_turns {
            let intent = if turn == 1 {
                Intent::Ask {
                    topic: topic.clone(),
                }
            } else if turn % 2 == 0 && !pool.is_empty() {
                Intent::Narrow {
                    terms: vec![pool.choose(rng).expect("non-empty").to_string()],
                }
            } else {
                Intent::React
            };
            vars.push(ControlVariable::intent(turn, &intent));
        }
        Ok(SessionControls::new(vars))
    }
}
