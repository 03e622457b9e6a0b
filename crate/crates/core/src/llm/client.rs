use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::cache::{params_digest, CacheStore, ChatRecord};
use super::tokens::tokens_for;
use super::{build_prompt, estimate_tokens, LlmError, API_KEY_ENV};
use crate::corpus::{Example, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatParams {
    pub model: String,
    pub temperature: f64,
    pub n_choices: u32,
    pub endpoint_url: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
}

impl Default for ChatParams {
    fn default() -> Self {
        ChatParams {
            model: "gpt-3.5-turbo-0301".into(),
            temperature: 1.0,
            n_choices: 1,
            endpoint_url: "https://api.openai.com/v1".into(),
            timeout_secs: 60,
            max_retries: 5,
        }
    }
}

impl ChatParams {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidParams(format!("temperature {} must be >= 0", self.temperature)));
        }
        if self.n_choices < 1 {
            return Err(LlmError::InvalidParams("n_choices must be >= 1".into()));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        params_digest(&self.model, self.temperature, self.n_choices)
    }

    /// JSON body for `POST {endpoint}/chat/completions`. No system message.
    pub fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.model,
            "temperature": self.temperature,
            "n": self.n_choices,
            "messages": [{"role": "user", "content": prompt}],
        })
    }
}

/// Raw HTTP outcome of one request.
#[derive(Debug, Clone, PartialEq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportFailure {
    /// Connection-level failure; always retried.
    Network(String),
}

/// Sends one chat-completion request body and returns the raw reply.
pub trait Transport: Send + Sync {
    fn send(&self, params: &ChatParams, body: &Value) -> Result<HttpReply, TransportFailure>;
}

/// Blocking HTTP transport against an OpenAI-compatible endpoint.
pub struct HttpTransport {
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpTransport {
    /// Reads the bearer token from `AFFECTFUSE_API_KEY` if set.
    pub fn from_env(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .new_agent();
        HttpTransport { agent, api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()) }
    }
}

impl Transport for HttpTransport {
    fn send(&self, params: &ChatParams, body: &Value) -> Result<HttpReply, TransportFailure> {
        let url = format!("{}/chat/completions", params.endpoint_url.trim_end_matches('/'));
        let mut req = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| TransportFailure::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportFailure::Network(e.to_string()))?;
        Ok(HttpReply { status, body })
    }
}

type Responder = Box<dyn Fn(&str) -> String + Send + Sync>;

/// In-process transport returning canned completions and counting calls.
///
/// Scripted replies queued with [`MockTransport::push_reply`] are served
/// first; afterwards the responder builds a 200 reply from the prompt.
pub struct MockTransport {
    responder: Responder,
    script: Mutex<VecDeque<Result<HttpReply, TransportFailure>>>,
    calls: AtomicUsize,
    report_usage: bool,
}

impl MockTransport {
    pub fn new(responder: impl Fn(&str) -> String + Send + Sync + 'static) -> Self {
        MockTransport {
            responder: Box::new(responder),
            script: Mutex::new(VecDeque::new()),
            calls: AtomicUsize::new(0),
            report_usage: true,
        }
    }

    /// Omits the `usage` block so token counts fall back to estimates.
    pub fn without_usage(mut self) -> Self {
        self.report_usage = false;
        self
    }

    pub fn push_reply(&self, reply: Result<HttpReply, TransportFailure>) {
        self.script.lock().unwrap().push_back(reply);
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// A 200 reply in the chat-completions shape carrying `content`.
    pub fn completion_body(content: &str, usage: Option<(u64, u64)>) -> String {
        let mut body = json!({
            "object": "chat.completion",
            "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
        });
        if let Some((p, c)) = usage {
            body["usage"] = json!({"prompt_tokens": p, "completion_tokens": c, "total_tokens": p + c});
        }
        body.to_string()
    }
}

impl Transport for MockTransport {
    fn send(&self, _params: &ChatParams, body: &Value) -> Result<HttpReply, TransportFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(reply) = self.script.lock().unwrap().pop_front() {
            return reply;
        }
        let prompt = body["messages"][0]["content"].as_str().unwrap_or_default();
        let content = (self.responder)(prompt);
        let usage = self
            .report_usage
            .then(|| (tokens_for(prompt), tokens_for(&content)));
        Ok(HttpReply { status: 200, body: Self::completion_body(&content, usage) })
    }
}

/// Exponential backoff with full jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub base: Duration,
    pub cap: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { base: Duration::from_secs(1), cap: Duration::from_secs(60) }
    }
}

impl RetryPolicy {
    /// Upper bound of the sleep before retry number `attempt` (0-based).
    pub fn ceiling(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.min(31)).unwrap_or(u32::MAX);
        self.base.saturating_mul(factor).min(self.cap)
    }

    pub fn delay<R: Rng>(&self, attempt: u32, rng: &mut R) -> Duration {
        self.ceiling(attempt).mul_f64(rng.gen::<f64>())
    }
}

/// Token bucket shared by all request workers.
pub struct RateLimiter {
    capacity: f64,
    per_second: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(capacity: u32, per_second: f64) -> Self {
        let capacity = f64::from(capacity.max(1));
        RateLimiter { capacity, per_second, state: Mutex::new((capacity, Instant::now())) }
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().unwrap();
                let now = Instant::now();
                let refill = now.duration_since(state.1).as_secs_f64() * self.per_second;
                state.0 = (state.0 + refill).min(self.capacity);
                state.1 = now;
                if state.0 >= 1.0 {
                    state.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - state.0) / self.per_second)
            };
            std::thread::sleep(wait);
        }
    }
}

/// Collects responses for a list of examples through a cache.
pub struct Collector<'t> {
    transport: &'t dyn Transport,
    pub retry: RetryPolicy,
    pub concurrency: usize,
    pub rate_limiter: Option<RateLimiter>,
}

#[derive(Deserialize)]
struct CompletionPayload {
    choices: Vec<Choice>,
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

impl<'t> Collector<'t> {
    pub fn new(transport: &'t dyn Transport) -> Self {
        Collector { transport, retry: RetryPolicy::default(), concurrency: 4, rate_limiter: None }
    }

    /// Returns one record per example, in input order. Only prompts missing
    /// from the cache are requested, once each.
    pub fn collect(
        &self,
        examples: &[Example],
        task: &TaskSpec,
        params: &ChatParams,
        cache: &CacheStore,
    ) -> Result<Vec<ChatRecord>, LlmError> {
        params.validate()?;
        let digest = params.digest();
        let prompts: Vec<String> = examples.iter().map(|ex| build_prompt(task, &ex.text)).collect();
        let keys: Vec<String> = prompts
            .iter()
            .map(|p| super::cache_key(&params.model, params.temperature, params.n_choices, p))
            .collect();

        let mut misses: Vec<usize> = Vec::new();
        let mut seen: HashMap<&str, ()> = HashMap::new();
        for (i, key) in keys.iter().enumerate() {
            if cache.get(key).is_none() && seen.insert(key.as_str(), ()).is_none() {
                misses.push(i);
            }
        }
        if !misses.is_empty() {
            log::info!("{task}: requesting {} of {} responses", misses.len(), examples.len());
            self.fetch_all(&misses, examples, &prompts, task, params, &digest, cache)?;
        }

        keys.iter()
            .zip(examples)
            .map(|(key, ex)| {
                let mut rec = cache.get(key).expect("every key cached after fetch");
                rec.example_id.clone_from(&ex.id);
                Ok(rec)
            })
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn fetch_all(
        &self,
        misses: &[usize],
        examples: &[Example],
        prompts: &[String],
        task: &TaskSpec,
        params: &ChatParams,
        digest: &str,
        cache: &CacheStore,
    ) -> Result<(), LlmError> {
        let next = AtomicUsize::new(0);
        let failed = AtomicBool::new(false);
        let first_error: Mutex<Option<(usize, LlmError)>> = Mutex::new(None);
        let workers = self.concurrency.clamp(1, misses.len());

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    if failed.load(Ordering::SeqCst) {
                        break;
                    }
                    let slot = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&i) = misses.get(slot) else { break };
                    let outcome = self
                        .fetch_one(&examples[i], &prompts[i], task, params, digest)
                        .and_then(|rec| cache.insert(rec).map(|_| ()));
                    if let Err(e) = outcome {
                        failed.store(true, Ordering::SeqCst);
                        let mut guard = first_error.lock().unwrap();
                        if guard.as_ref().is_none_or(|(at, _)| slot < *at) {
                            *guard = Some((slot, e));
                        }
                    }
                });
            }
        });
        match first_error.into_inner().unwrap() {
            Some((_, e)) => Err(e),
            None => Ok(()),
        }
    }

    fn fetch_one(
        &self,
        example: &Example,
        prompt: &str,
        task: &TaskSpec,
        params: &ChatParams,
        digest: &str,
    ) -> Result<ChatRecord, LlmError> {
        let body = params.request_body(prompt);
        let attempts = params.max_retries + 1;
        let mut rng = rand::thread_rng();
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.retry.delay(attempt - 1, &mut rng));
            }
            if let Some(limiter) = &self.rate_limiter {
                limiter.acquire();
            }
            match self.transport.send(params, &body) {
                Err(TransportFailure::Network(msg)) => last = msg,
                Ok(reply) if reply.status == 429 || reply.status >= 500 => {
                    last = format!("status {}: {}", reply.status, reply.body);
                }
                Ok(reply) if !(200..300).contains(&reply.status) => {
                    return Err(LlmError::Api { status: reply.status, body: reply.body });
                }
                Ok(reply) => return parse_completion(&reply.body, example, prompt, task, digest),
            }
        }
        Err(LlmError::Transport { attempts, last })
    }
}

fn parse_completion(
    body: &str,
    example: &Example,
    prompt: &str,
    task: &TaskSpec,
    digest: &str,
) -> Result<ChatRecord, LlmError> {
    let payload: CompletionPayload =
        serde_json::from_str(body).map_err(|e| LlmError::Payload(e.to_string()))?;
    // only the first choice is kept
    let response = payload
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .filter(|c| !c.trim().is_empty())
        .ok_or_else(|| LlmError::EmptyResponse { example_id: example.id.clone() })?;
    let estimate = estimate_tokens(task, &example.text, None);
    let usage = payload.usage;
    let prompt_tokens = usage
        .as_ref()
        .and_then(|u| u.prompt_tokens)
        .unwrap_or(estimate.prompt_base_tokens + estimate.text_tokens);
    let completion_tokens = usage
        .as_ref()
        .and_then(|u| u.completion_tokens)
        .unwrap_or_else(|| tokens_for(&response));
    Ok(ChatRecord {
        example_id: example.id.clone(),
        task: *task,
        prompt: prompt.to_string(),
        response,
        prompt_tokens,
        completion_tokens,
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        params_digest: digest.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{BinaryLabel, Label};

    fn examples(n: usize) -> Vec<Example> {
        (0..n)
            .map(|i| Example {
                id: format!("{i:06}"),
                text: format!("text number {i}"),
                label: Label::Binary(BinaryLabel::Positive),
            })
            .collect()
    }

    fn fast(transport: &dyn Transport) -> Collector<'_> {
        let mut c = Collector::new(transport);
        c.retry = RetryPolicy { base: Duration::ZERO, cap: Duration::ZERO };
        c
    }

    #[test]
    fn request_body_shape() {
        let body = ChatParams::default().request_body("hi");
        assert_eq!(body["model"], "gpt-3.5-turbo-0301");
        assert_eq!(body["temperature"], 1.0);
        assert_eq!(body["n"], 1);
        assert_eq!(body["messages"].as_array().unwrap().len(), 1);
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "hi");
    }

    #[test]
    fn cache_hits_skip_the_network() {
        let mock = MockTransport::new(|_| "positive, clearly".into());
        let cache = CacheStore::in_memory();
        let exs = examples(3);
        let first = fast(&mock).collect(&exs, &TaskSpec::SENTIMENT, &ChatParams::default(), &cache).unwrap();
        assert_eq!(mock.calls(), 3);
        assert_eq!(cache.len(), 3);
        let second = fast(&mock).collect(&exs, &TaskSpec::SENTIMENT, &ChatParams::default(), &cache).unwrap();
        assert_eq!(mock.calls(), 3);
        assert_eq!(first, second);
    }

    #[test]
    fn duplicate_prompts_are_requested_once() {
        let mock = MockTransport::new(|_| "no".into());
        let mut exs = examples(2);
        exs[1].text = exs[0].text.clone();
        let recs = fast(&mock)
            .collect(&exs, &TaskSpec::SUICIDE, &ChatParams::default(), &CacheStore::in_memory())
            .unwrap();
        assert_eq!(mock.calls(), 1);
        assert_eq!(recs[1].example_id, "000001");
    }

    #[test]
    fn server_errors_exhaust_retries() {
        let mock = MockTransport::new(|_| "unused".into());
        for _ in 0..3 {
            mock.push_reply(Ok(HttpReply { status: 500, body: "boom".into() }));
        }
        let params = ChatParams { max_retries: 2, ..ChatParams::default() };
        let err = fast(&mock)
            .collect(&examples(1), &TaskSpec::SENTIMENT, &params, &CacheStore::in_memory())
            .unwrap_err();
        assert!(matches!(err, LlmError::Transport { attempts: 3, .. }), "{err}");
        assert_eq!(mock.calls(), 3);
    }

    #[test]
    fn retry_then_success() {
        let mock = MockTransport::new(|_| "yes".into());
        mock.push_reply(Err(TransportFailure::Network("reset".into())));
        mock.push_reply(Ok(HttpReply { status: 429, body: "slow down".into() }));
        let recs = fast(&mock)
            .collect(&examples(1), &TaskSpec::SUICIDE, &ChatParams::default(), &CacheStore::in_memory())
            .unwrap();
        assert_eq!(mock.calls(), 3);
        assert_eq!(recs[0].response, "yes");
    }

    #[test]
    fn client_errors_preserve_body() {
        let mock = MockTransport::new(|_| "unused".into());
        mock.push_reply(Ok(HttpReply { status: 401, body: "{\"error\":\"bad key\"}".into() }));
        let err = fast(&mock)
            .collect(&examples(1), &TaskSpec::SENTIMENT, &ChatParams::default(), &CacheStore::in_memory())
            .unwrap_err();
        match err {
            LlmError::Api { status, body } => {
                assert_eq!(status, 401);
                assert!(body.contains("bad key"));
            }
            other => panic!("unexpected {other}"),
        }
        assert_eq!(mock.calls(), 1);
    }

    #[test]
    fn empty_content_is_an_error() {
        let mock = MockTransport::new(|_| "   ".into());
        let err = fast(&mock)
            .collect(&examples(1), &TaskSpec::SENTIMENT, &ChatParams::default(), &CacheStore::in_memory())
            .unwrap_err();
        assert!(matches!(err, LlmError::EmptyResponse { .. }));
    }

    #[test]
    fn first_choice_only_and_estimated_usage() {
        let mock = MockTransport::new(|_| "unused".into()).without_usage();
        let body = json!({"choices": [
            {"message": {"content": "first answer"}},
            {"message": {"content": "second answer"}}
        ]});
        mock.push_reply(Ok(HttpReply { status: 200, body: body.to_string() }));
        let exs = examples(1);
        let recs = fast(&mock)
            .collect(&exs, &TaskSpec::SENTIMENT, &ChatParams::default(), &CacheStore::in_memory())
            .unwrap();
        assert_eq!(recs[0].response, "first answer");
        let est = estimate_tokens(&TaskSpec::SENTIMENT, &exs[0].text, None);
        assert_eq!(recs[0].prompt_tokens, est.prompt_base_tokens + est.text_tokens);
        assert_eq!(recs[0].completion_tokens, tokens_for("first answer"));
    }

    #[test]
    fn backoff_ceiling_doubles_and_caps() {
        let policy = RetryPolicy::default();
        assert_eq!(policy.ceiling(0), Duration::from_secs(1));
        assert_eq!(policy.ceiling(3), Duration::from_secs(8));
        assert_eq!(policy.ceiling(10), Duration::from_secs(60));
        assert_eq!(policy.ceiling(40), Duration::from_secs(60));
        let mut rng = rand::thread_rng();
        for attempt in 0..8 {
            assert!(policy.delay(attempt, &mut rng) <= policy.ceiling(attempt));
        }
    }

    #[test]
    fn params_validation() {
        assert!(ChatParams { temperature: -0.1, ..ChatParams::default() }.validate().is_err());
        assert!(ChatParams { n_choices: 0, ..ChatParams::default() }.validate().is_err());
        ChatParams::default().validate().unwrap();
    }

    #[test]
    fn concurrent_collection_matches_sequential() {
        let mock = MockTransport::new(|p| format!("echo {}", p.len()));
        let exs = examples(17);
        let mut par = fast(&mock);
        par.concurrency = 5;
        par.rate_limiter = Some(RateLimiter::new(100, 10_000.0));
        let a = par.collect(&exs, &TaskSpec::SENTIMENT, &ChatParams::default(), &CacheStore::in_memory()).unwrap();
        let mut seq = fast(&mock);
        seq.concurrency = 1;
        let b = seq.collect(&exs, &TaskSpec::SENTIMENT, &ChatParams::default(), &CacheStore::in_memory()).unwrap();
        let strip = |v: &[ChatRecord]| v.iter().map(|r| (r.example_id.clone(), r.response.clone())).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(mock.calls(), 34);
    }
}
