use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::LlmError;

/// Reserved slot filled with the template's few-shot examples.
pub const EXAMPLES_SLOT: &str = "examples";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Literal(String),
    Slot(String),
}

/// A prompt made of literal text and `{named}` slots. `{{` and `}}` escape
/// literal braces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    segments: Vec<Segment>,
    few_shot_examples: Vec<String>,
}

impl PromptTemplate {
    pub fn parse(name: impl Into<String>, text: &str) -> Result<Self, LlmError> {
        let name = name.into();
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut chars = text.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '{' if chars.peek() == Some(&'{') => {
                    chars.next();
                    literal.push('{');
                }
                '}' if chars.peek() == Some(&'}') => {
                    chars.next();
                    literal.push('}');
                }
                '{' => {
                    let mut slot = String::new();
                    loop {
                        match chars.next() {
                            Some('}') => break,
                            Some(c) if c.is_alphanumeric() || c == '_' => slot.push(c),
                            _ => {
                                return Err(LlmError::TemplateSyntax {
                                    template: name,
                                    reason: format!("bad slot name after `{{{slot}`"),
                                })
                            }
                        }
                    }
                    if slot.is_empty() {
                        return Err(LlmError::TemplateSyntax {
                            template: name,
                            reason: "empty slot name".into(),
                        });
                    }
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    segments.push(Segment::Slot(slot));
                }
                '}' => {
                    return Err(LlmError::TemplateSyntax {
                        template: name,
                        reason: "unmatched `}`".into(),
                    })
                }
                c => literal.push(c),
            }
        }
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        Ok(Self {
            name,
            segments,
            few_shot_examples: Vec::new(),
        })
    }

    pub fn with_examples<I, S>(mut self, examples: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.few_shot_examples = examples.into_iter().map(Into::into).collect();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn few_shot_examples(&self) -> &[String] {
        &self.few_shot_examples
    }

    /// Named slots the caller must fill, in first-appearance order.
    pub fn slot_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = Vec::new();
        for seg in &self.segments {
            if let Segment::Slot(s) = seg {
                if s != EXAMPLES_SLOT && !names.contains(&s.as_str()) {
                    names.push(s);
                }
            }
        }
        names
    }

    /// Renders the prompt. Every named slot must be filled and no unknown
    /// slot may be supplied. The result must fit in `budget_chars`.
    pub fn render(&self, slots: &SlotValues, budget_chars: usize) -> Result<String, LlmError> {
        let expected = self.slot_names();
        for (key, _) in slots.iter() {
            if !expected.contains(&key) {
                return Err(LlmError::UnknownSlot {
                    template: self.name.clone(),
                    slot: key.to_string(),
                });
            }
        }
        let examples = self.few_shot_examples.join("\n\n");
        let mut out = String::new();
        let mut has_examples_slot = false;
        for seg in &self.segments {
            match seg {
                Segment::Literal(text) => out.push_str(text),
                Segment::Slot(name) if name == EXAMPLES_SLOT => {
                    has_examples_slot = true;
                    out.push_str(&examples);
                }
                Segment::Slot(name) => match slots.get(name) {
                    Some(value) => out.push_str(value),
                    None => {
                        return Err(LlmError::MissingSlot {
                            template: self.name.clone(),
                            slot: name.clone(),
                        })
                    }
                },
            }
        }
        if !has_examples_slot && !examples.is_empty() {
            out = format!("{examples}\n\n{out}");
        }
        let len = out.chars().count();
        if len > budget_chars {
            let offending = slots
                .iter()
                .max_by_key(|(_, v)| v.chars().count())
                .map(|(k, _)| k.to_string())
                .unwrap_or_default();
            return Err(LlmError::OverBudget {
                template: self.name.clone(),
                slot: offending,
                rendered_chars: len,
                budget_chars,
            });
        }
        Ok(out)
    }
}

/// Ordered slot assignments. Order matters for the digest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotValues(Vec<(String, String)>);

impl SlotValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.set(name, value);
        self
    }

    /// Replaces an existing assignment in place, or appends.
    pub fn set(&mut self, name: impl Into<String>, value: impl Into<String>) {
        let name = name.into();
        let value = value.into();
        match self.0.iter_mut().find(|(k, _)| *k == name) {
            Some(entry) => entry.1 = value,
            None => self.0.push((name, value)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Order-sensitive SHA-256 over the (name, value) pairs, first 16 bytes
    /// in lowercase hex.
    pub fn digest(&self) -> SlotDigest {
        let mut hasher = Sha256::new();
        for (k, v) in &self.0 {
            hasher.update((k.len() as u64).to_le_bytes());
            hasher.update(k.as_bytes());
            hasher.update((v.len() as u64).to_le_bytes());
            hasher.update(v.as_bytes());
        }
        let bytes = hasher.finalize();
        let hex: String = bytes.iter().take(16).map(|b| format!("{b:02x}")).collect();
        SlotDigest(hex)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotDigest(String);

impl SlotDigest {
    pub fn parse(hex: &str) -> Option<Self> {
        let ok = !hex.is_empty() && hex.chars().all(|c| c.is_ascii_hexdigit());
        ok.then(|| SlotDigest(hex.to_ascii_lowercase()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SlotDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}
