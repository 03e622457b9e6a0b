//! Verbose chat-model responses as a second text source.
//!
//! Prompts ask the model for a binary guess plus a short explanation. The
//! whole response is kept as text and featurized downstream; it is not
//! parsed for a label (except by the keyword baseline in `evaluation`).

mod cache;
mod client;
mod prompt;
mod tokens;

pub use cache::{cache_key, CacheStore, ChatRecord};
pub use client::{
    ChatParams, Collector, HttpReply, HttpTransport, MockTransport, RateLimiter, RetryPolicy,
    Transport, TransportFailure,
};
pub use prompt::build_prompt;
pub use tokens::{estimate_latency_seconds, estimate_tokens, TokenEstimate, CHARS_PER_TOKEN_X10, CALL_OVERHEAD_TOKENS};

/// Env var holding the bearer token for the chat endpoint.
pub const API_KEY_ENV: &str = "AFFECTFUSE_API_KEY";

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("transport failed after {attempts} attempts: {last}")]
    Transport { attempts: u32, last: String },
    #[error("API returned status {status}: {body}")]
    Api { status: u16, body: String },
    #[error("empty response for example {example_id:?}")]
    EmptyResponse { example_id: String },
    #[error("malformed completion payload: {0}")]
    Payload(String),
    #[error("invalid chat parameters: {0}")]
    InvalidParams(String),
    #[error("cache {path}: line {line}: {message}")]
    CacheCorrupt { path: String, line: usize, message: String },
    #[error("cache {path}: {source}")]
    CacheIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
