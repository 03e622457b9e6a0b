use affectfuse_core::llm::build_prompt;
use affectfuse_core::{TaskSpec, Trait};

fn golden(name: &str) -> String {
    let path = format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

#[test]
fn empty_text_prompts_match_golden_files() {
    assert_eq!(build_prompt(&TaskSpec::SENTIMENT, ""), golden("prompt_sentiment.txt"));
    assert_eq!(build_prompt(&TaskSpec::SUICIDE, ""), golden("prompt_suicide.txt"));
    assert_eq!(build_prompt(&TaskSpec::personality(Trait::Extraversion), ""), golden("prompt_personality_E.txt"));
}

#[test]
fn text_is_inserted_once_and_verbatim() {
    let text = "I said {text} and {trait} \"quoted\"\nnewline";
    for task in [TaskSpec::SENTIMENT, TaskSpec::SUICIDE, TaskSpec::personality(Trait::Openness)] {
        let p = build_prompt(&task, text);
        assert_eq!(p.matches(text).count(), 1, "{task}");
        assert_eq!(p.len(), build_prompt(&task, "").len() + text.len());
    }
}

#[test]
fn every_trait_prompt_names_its_trait() {
    for t in Trait::ALL {
        let p = build_prompt(&TaskSpec::personality(t), "hello");
        assert!(p.contains(&format!("\"{}\"", t.full_name())), "{p}");
        for other in Trait::ALL.into_iter().filter(|&o| o != t) {
            assert!(!p.contains(other.full_name()));
        }
    }
}
