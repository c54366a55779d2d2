//! A deterministic, keyword-driven stand-in for a language model. It reads
//! the rendered stock prompts and answers in their output formats, which
//! makes it useful for demos and for recording scripted fixtures.

use std::collections::HashSet;

use super::{templates, BackendCall, BackendError, BackendReply, LlmBackend};
use crate::text::tokenize;

const STOPWORDS: &[&str] = &[
    "a",
    "about",
    "am",
    "an",
    "and",
    "any",
    "anything",
    "are",
    "can",
    "could",
    "do",
    "else",
    "for",
    "get",
    "give",
    "got",
    "hello",
    "hey",
    "hi",
    "i",
    "i'm",
    "im",
    "in",
    "is",
    "it",
    "just",
    "let",
    "like",
    "m",
    "me",
    "more",
    "my",
    "of",
    "ok",
    "okay",
    "on",
    "one",
    "ones",
    "play",
    "please",
    "recommend",
    "s",
    "see",
    "show",
    "so",
    "some",
    "something",
    "thank",
    "thanks",
    "that",
    "the",
    "them",
    "these",
    "this",
    "to",
    "user",
    "videos",
    "video",
    "want",
    "wants",
    "watch",
    "what",
    "while",
    "with",
    "would",
    "you",
    "your",
];

const MEMORY_CUES: &[&str] = &[
    "remember that ",
    "i am allergic",
    "i'm allergic",
    "i do not like",
    "i don't like",
    "i never",
    "i always",
];

const REFINE_CUES: &[&str] = &["more", "something", "instead", "another", "else", "less"];

fn content_words(text: &str) -> Vec<String> {
    let stop: HashSet<&str> = STOPWORDS.iter().copied().collect();
    let mut seen = HashSet::new();
    tokenize(text)
        .into_iter()
        .filter(|t| !stop.contains(t.as_str()) && t.len() > 1 && seen.insert(t.clone()))
        .collect()
}

const BLOCK_PREFIXES: &[&str] = &["User", "System:", "Slate:", "[earlier"];

/// The trailing profile and conversation lines of a prompt.
fn final_block(prompt: &str) -> Vec<&str> {
    let lines: Vec<&str> = prompt.trim_end().lines().collect();
    let start = lines
        .iter()
        .rposition(|l| !l.trim().is_empty() && !BLOCK_PREFIXES.iter().any(|p| l.starts_with(p)))
        .map_or(0, |i| i + 1);
    lines[start..]
        .iter()
        .copied()
        .filter(|l| !l.trim().is_empty())
        .collect()
}

fn user_lines<'a>(block: &[&'a str]) -> Vec<&'a str> {
    block
        .iter()
        .filter_map(|l| l.strip_prefix("User: "))
        .collect()
}

fn field<'a>(prompt: &'a str, prefix: &str) -> &'a str {
    prompt
        .lines()
        .find_map(|l| l.strip_prefix(prefix))
        .unwrap_or("")
        .trim()
}

fn sentence_case(text: &str) -> String {
    let mut chars = text.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

/// The search query implied by the latest user turn; refinements carry the
/// previous turn's topic words forward.
fn query_for(users: &[&str]) -> Vec<String> {
    let Some(last) = users.last() else {
        return Vec::new();
    };
    let mut words = content_words(last);
    let lower = last.to_lowercase();
    let refining = tokenize(&lower)
        .iter()
        .any(|t| REFINE_CUES.contains(&t.as_str()));
    if refining && users.len() > 1 {
        for w in query_for(&users[..users.len() - 1]) {
            if !words.contains(&w) {
                words.push(w);
            }
        }
    }
    words
}

fn plan(prompt: &str) -> String {
    let block = final_block(prompt);
    let users = user_lines(&block);
    let Some(last) = users.last() else {
        return "Response: Hi! What would you like to watch today?".into();
    };
    let lower = last.to_lowercase();
    let mut out = Vec::new();
    let profile: Vec<&str> = block
        .iter()
        .filter_map(|l| l.strip_prefix("User profile: "))
        .collect();

    if let Some(cue) = MEMORY_CUES.iter().find(|c| lower.contains(*c)) {
        let start = lower.find(cue).expect("cue found");
        let fact = last[start..].trim_start_matches(|c: char| !c.is_alphanumeric());
        let fact = fact.strip_prefix("remember that ").unwrap_or(fact);
        let fact = fact.trim_end_matches(['.', '!', '?']);
        out.push(format!("Memory: {}", sentence_case(fact)));
        out.push("Response: Got it, I'll keep that in mind.".to_string());
        return out.join("\n");
    }
    for fact in &profile {
        out.push(format!("Context: the user profile says \"{fact}\""));
        let f = fact.to_lowercase();
        if f.contains("not like") || f.contains("don't like") || f.contains("allergic") {
            out.push(
                "Reasoning: the request conflicts with a stated preference, so check first"
                    .to_string(),
            );
            out.push(format!(
                "Response: You mentioned before: \"{fact}\". Would you like something different this time?"
            ));
            return out.join("\n");
        }
    }
    let query = query_for(&users);
    if query.is_empty() {
        if lower.contains("thank") {
            out.push("Response: You're welcome! Ask me anytime for more.".to_string());
        } else {
            out.push("Response: What kind of videos are you in the mood for?".to_string());
        }
        return out.join("\n");
    }
    let q = query.join(" ");
    out.push(format!("Context: user wants {q} videos"));
    out.push("Reasoning: the request is specific enough to search".to_string());
    out.push(format!("Request: {q}"));
    out.join("\n")
}

fn grounded(prompt: &str) -> String {
    let query = prompt
        .lines()
        .next()
        .and_then(|l| l.split('"').nth(1))
        .unwrap_or("")
        .trim();
    format!("Response: Here are some {query} videos you might enjoy.")
}

fn summary(prompt: &str) -> String {
    let block = final_block(prompt.trim_end().trim_end_matches("Summary:"));
    let q = query_for(&user_lines(&block));
    if q.is_empty() {
        "The user has not asked for anything specific yet.".into()
    } else {
        format!("The user wants {} videos.", q.join(" "))
    }
}

fn rank(prompt: &str) -> String {
    let wants = content_words(field(prompt, "User wants:"));
    let title = field(prompt, "Video:");
    let about: HashSet<String> =
        tokenize(&format!("{title} {}", field(prompt, "About the video:")))
            .into_iter()
            .collect();
    let matched: Vec<&String> = wants.iter().filter(|w| about.contains(*w)).collect();
    let (phrase, reason) = match matched.len() {
        0 => (
            "poor fit",
            format!("\"{title}\" does not touch on what the user asked for"),
        ),
        1 if wants.len() > 1 => (
            "good fit",
            format!("\"{title}\" covers {}, part of the request", matched[0]),
        ),
        _ => (
            "excellent fit",
            format!(
                "\"{title}\" is about {}, exactly what the user asked for",
                matched
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(" and ")
            ),
        ),
    };
    format!("Reasoning: {reason}.\nScore: {phrase}")
}

fn item_summary(prompt: &str) -> String {
    let title = field(prompt, "Title:");
    let description = field(prompt, "Description:");
    format!("{title}. {description}").trim().to_string()
}

#[derive(Debug, Default, Clone)]
pub struct RuleBackend;

impl LlmBackend for RuleBackend {
    fn id(&self) -> &str {
        "rules"
    }

    fn complete(&self, call: &BackendCall<'_>) -> Result<BackendReply, BackendError> {
        let text = match call.template {
            templates::DIALOGUE_PLAN => plan(call.prompt),
            templates::DIALOGUE_GROUNDED_RESPONSE => grounded(call.prompt),
            templates::CONTEXT_SUMMARY => summary(call.prompt),
            templates::RANK_ITEM => rank(call.prompt),
            templates::ITEM_SUMMARY => item_summary(call.prompt),
            _ => return Ok(BackendReply::miss("")),
        };
        Ok(BackendReply::hit(text))
    }
}
