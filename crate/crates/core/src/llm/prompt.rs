use crate::corpus::{TaskKind, TaskSpec};

const SENTIMENT_TEMPLATE: &str = "What is your guess for the sentiment of the text \"{text}\"?
Answer positive or negative, but not neutral.
Try to narrow down the answer to be one of those two.
It does not have to be fully correct.
Explain your answer briefly.
Do not show any warning after.";

const SUICIDE_TEMPLATE: &str = "What is your guess, is a person saying the text \"{text}\" has suicide tendencies?
Answer yes or no.
It does not have to be fully correct.
Explain your answer briefly.
Do not show any warning after.";

const PERSONALITY_TEMPLATE: &str = "What is your guess for the personality trait \"{trait}\", from the big-five personality traits, of someone who said \"{text}\"?
Answer low or high, but not neutral.
Try to narrow down the answer to low or high.
It does not have to be fully correct.
Explain your answer briefly.
Do not show any warning after.";

/// The single user message sent for `text` under `task`.
pub fn build_prompt(task: &TaskSpec, text: &str) -> String {
    match task.kind {
        TaskKind::Sentiment => SENTIMENT_TEMPLATE.replacen("{text}", text, 1),
        TaskKind::Suicide => SUICIDE_TEMPLATE.replacen("{text}", text, 1),
        // trait first, so a literal "{trait}" inside the text survives
        TaskKind::Personality(t) => PERSONALITY_TEMPLATE
            .replacen("{trait}", t.full_name(), 1)
            .replacen("{text}", text, 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Trait;

    #[test]
    fn sentiment_prompt() {
        let p = build_prompt(&TaskSpec::SENTIMENT, "ok");
        assert!(p.starts_with("What is your guess for the sentiment of the text \"ok\"?"));
        assert!(p.contains("Do not show any warning after."));
    }

    #[test]
    fn suicide_prompt() {
        let p = build_prompt(&TaskSpec::SUICIDE, "x");
        assert!(p.starts_with("What is your guess, is a person saying the text \"x\" has suicide tendencies?"));
        assert!(p.contains("Answer yes or no."));
    }

    #[test]
    fn personality_prompt() {
        let p = build_prompt(&TaskSpec::personality(Trait::Extraversion), "hello");
        assert!(p.contains("personality trait \"Extraversion\""));
        assert!(p.contains("Answer low or high, but not neutral."));
        assert!(p.contains("of someone who said \"hello\"?"));
    }

    #[test]
    fn placeholders_in_text_are_not_expanded() {
        let p = build_prompt(&TaskSpec::personality(Trait::Openness), "{trait} {text}");
        assert!(p.contains("said \"{trait} {text}\"?"));
    }
}
