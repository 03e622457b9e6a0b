//! Offline stand-in for the chat endpoint.
//!
//! The reply guesses the task keyword from a small built-in lexicon and
//! echoes the cue words it saw, so response features carry some signal.
//! It is a pure function of the prompt.

use affectfuse_core::featurize::tokenize;
use affectfuse_core::llm::MockTransport;
use affectfuse_core::{TaskSpec, Trait};
use sha2::{Digest, Sha256};

const SENTIMENT: (&[&str], &[&str]) = (
    &["good", "great", "happy", "love", "fun", "wonderful"],
    &["bad", "sad", "hate", "awful", "boring", "terrible"],
);
const SUICIDE: (&[&str], &[&str]) = (
    &["hopeless", "alone", "worthless", "tired", "goodbye", "pain"],
    &["plans", "friends", "tomorrow", "excited", "weekend", "family"],
);

fn trait_lexicon(t: Trait) -> (&'static [&'static str], &'static [&'static str]) {
    match t {
        Trait::Openness => (&["curious", "art", "ideas"], &["routine", "usual", "familiar"]),
        Trait::Conscientiousness => (&["organized", "careful", "schedule"], &["messy", "late", "forgot"]),
        Trait::Extraversion => (&["party", "talk", "crowd"], &["quiet", "home", "reading"]),
        Trait::Agreeableness => (&["kind", "help", "trust"], &["argue", "rude", "annoyed"]),
        Trait::Neuroticism => (&["worried", "anxious", "stress"], &["calm", "relaxed", "steady"]),
    }
}

/// Recovers the task from the prompt wording.
fn task_of(prompt: &str) -> TaskSpec {
    if let Some(t) = Trait::ALL.into_iter().find(|t| prompt.contains(&format!("\"{}\"", t.full_name()))) {
        return TaskSpec::personality(t);
    }
    if prompt.contains("suicid") {
        TaskSpec::SUICIDE
    } else {
        TaskSpec::SENTIMENT
    }
}

pub fn respond(prompt: &str) -> String {
    let task = task_of(prompt);
    let (pos_words, neg_words) = match task.kind {
        affectfuse_core::TaskKind::Sentiment => SENTIMENT,
        affectfuse_core::TaskKind::Suicide => SUICIDE,
        affectfuse_core::TaskKind::Personality(t) => trait_lexicon(t),
    };
    let tokens = tokenize(prompt);
    let cues: Vec<&str> = tokens
        .iter()
        .map(String::as_str)
        .filter(|t| pos_words.contains(t) || neg_words.contains(t))
        .collect();
    let score: i64 = cues.iter().map(|t| if pos_words.contains(t) { 1 } else { -1 }).sum();
    let (pos, neg) = task.keywords();
    let digest = Sha256::digest(prompt.as_bytes());
    let answer = match score {
        s if s > 0 => pos.to_string(),
        s if s < 0 => neg.to_string(),
        // undecided prompts sometimes name both keywords or neither
        _ => match digest[0] % 3 {
            0 => format!("either {pos} or {neg}"),
            1 => "uncertain".to_string(),
            _ => pos.to_string(),
        },
    };
    let because = if cues.is_empty() {
        "there are no clear cues in the text".to_string()
    } else {
        format!("the text mentions {}", cues.join(", "))
    };
    format!("My guess is {answer}, because {because}.")
}

pub fn transport() -> MockTransport {
    MockTransport::new(respond)
}
