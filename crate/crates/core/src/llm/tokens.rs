use crate::corpus::{TaskKind, TaskSpec};

/// Average characters per token, times ten (4.3 chars/token).
pub const CHARS_PER_TOKEN_X10: u64 = 43;
/// Tokens added to every API call.
pub const CALL_OVERHEAD_TOKENS: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenEstimate {
    pub prompt_base_tokens: u64,
    pub text_tokens: u64,
    pub overhead_tokens: u64,
    pub total: u64,
}

/// Token count of the prompt template with an empty `{text}`, excluding the
/// per-call overhead.
fn prompt_base_tokens(task: &TaskSpec) -> u64 {
    match task.kind {
        TaskKind::Sentiment => 63,
        TaskKind::Suicide => 50,
        TaskKind::Personality(_) => 75,
    }
}

/// `ceil(chars / 4.3)`, in integer arithmetic.
pub(crate) fn tokens_for(s: &str) -> u64 {
    let chars = s.chars().count() as u64;
    (chars * 10).div_ceil(CHARS_PER_TOKEN_X10)
}

pub fn estimate_tokens(task: &TaskSpec, text: &str, response: Option<&str>) -> TokenEstimate {
    let prompt_base_tokens = prompt_base_tokens(task);
    let text_tokens = tokens_for(text) + response.map_or(0, tokens_for);
    TokenEstimate {
        prompt_base_tokens,
        text_tokens,
        overhead_tokens: CALL_OVERHEAD_TOKENS,
        total: prompt_base_tokens + text_tokens + CALL_OVERHEAD_TOKENS,
    }
}

/// Mean request latency `0.038 * T + 1.32` seconds for `T` total tokens.
///
/// Evaluated as `(38 T + 1320) / 1000` so integral millisecond results are
/// correctly rounded.
pub fn estimate_latency_seconds(total_tokens: u64) -> f64 {
    (38.0 * total_tokens as f64 + 1320.0) / 1000.0
}
