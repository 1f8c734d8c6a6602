//! Text providers for the two language-model queries: per-view vocabulary
//! proposals and vocabulary grouping.
//!
//! Fixture mode returns file contents and never touches the transport. Live
//! mode speaks a minimal chat-completion shape (`model`, `messages` with text
//! and an optional image URL; the reply is `choices[0].message.content`), so
//! any compatible endpoint can be swapped in.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use crate::vocabulary::SceneVocabulary;

/// Environment variable holding the bearer token for live mode.
pub const API_KEY_ENV: &str = "GROUP3D_API_KEY";

pub const VOCABULARY_PROMPT: &str = "\
You are identifying the dominant object categories present
in the scene.

# Task
- Identify the main object categories visible in the image.

# Constraints
- Focus on the most prominent objects in the scene.
- Use simple singular nouns.
- Mention each category only once.
- Avoid descriptive modifiers.

# Output format
- Return a single comma-separated line containing at most
  five object categories.
";

pub const GROUPING_PROMPT: &str = "\
You are generating a semantic merge prior for 3D voxel-based
fragment merging.

# Context
- Categories originate from per-frame 2D class-aware segmentation.
- The same physical object may receive different category names
  across frames due to taxonomy variations.

# Task
- Group categories that could plausibly refer to the same physical
  object observed across views.

# Constraints
- Do not group categories merely because they frequently co-occur
  in the same scene or belong to the same structure.
- Do not group structural elements with their openings.
- Do not group part–whole relations.

# Output constraints
- Use only categories from the provided list.
- Each category may appear in at most one group.
- Output only groups containing two or more categories.
- Categories not mentioned are treated as singleton groups.
- Do not include explanations.

# Output format
- group_name: [category1, category2, ...]
";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Vocabulary,
    Grouping,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Vocabulary => "vocabulary",
            Stage::Grouping => "grouping",
        })
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("{stage} fixture {path}: {source}")]
    Fixture { stage: Stage, path: PathBuf, source: std::io::Error },
    #[error("{stage} request timed out after {attempts} attempt(s)")]
    Timeout { stage: Stage, attempts: u32 },
    #[error("{stage} request failed after {attempts} attempt(s): {message}")]
    Transport { stage: Stage, attempts: u32, message: String },
    #[error("{stage} request rejected with HTTP {status}: {body}")]
    Rejected { stage: Stage, status: u16, body: String },
    #[error("{stage} response malformed: {message}")]
    Malformed { stage: Stage, message: String },
}

impl ProviderError {
    pub fn stage(&self) -> Stage {
        match self {
            Self::Fixture { stage, .. }
            | Self::Timeout { stage, .. }
            | Self::Transport { stage, .. }
            | Self::Rejected { stage, .. }
            | Self::Malformed { stage, .. } => *stage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("timed out")]
    Timeout,
    #[error("{0}")]
    Other(String),
}

/// One blocking JSON POST. Implementations must honour `timeout`.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &str,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError>;
}

/// `reqwest` blocking client with rustls.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new() -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| TransportError::Other(e.to_string()))?;
        Ok(Self { client })
    }
}

impl Transport for HttpTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &str,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError> {
        let mut req = self
            .client
            .post(url)
            .timeout(timeout)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_owned());
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Other(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Other(e.to_string())
            }
        })?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Additional attempts after the first.
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    /// Per-attempt timeout.
    pub attempt_timeout: Duration,
    /// Wall-clock budget across all attempts of one request.
    pub deadline: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(8),
            attempt_timeout: Duration::from_secs(60),
            deadline: Duration::from_secs(180),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiveConfig {
    /// Full chat-completion URL.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub policy: RetryPolicy,
    /// Maximum concurrent requests for batched vocabulary queries.
    pub max_in_flight: usize,
}

impl LiveConfig {
    /// Reads the bearer token from [`API_KEY_ENV`].
    pub fn from_env(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            policy: RetryPolicy::default(),
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProviderMode {
    /// Every request returns this file's contents verbatim.
    Fixture(PathBuf),
    Live(LiveConfig),
}

pub struct Provider<T: Transport> {
    mode: ProviderMode,
    transport: T,
    retries: AtomicUsize,
}

impl Provider<HttpTransport> {
    pub fn http(mode: ProviderMode) -> Result<Self, ProviderError> {
        let transport = HttpTransport::new().map_err(|e| ProviderError::Transport {
            stage: Stage::Vocabulary,
            attempts: 0,
            message: e.to_string(),
        })?;
        Ok(Self::new(mode, transport))
    }
}

impl<T: Transport> Provider<T> {
    pub fn new(mode: ProviderMode, transport: T) -> Self {
        Self { mode, transport, retries: AtomicUsize::new(0) }
    }

    pub fn mode(&self) -> &ProviderMode {
        &self.mode
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    /// Retries issued so far across all requests.
    pub fn retry_count(&self) -> usize {
        self.retries.load(Ordering::Relaxed)
    }

    /// Raw category line for one view. `image` is a path or URL passed
    /// through to the endpoint unchanged.
    pub fn request_vocabulary(&self, image: &str, template: &str) -> Result<String, ProviderError> {
        self.request(Stage::Vocabulary, template, Some(image))
    }

    /// Raw grouping text for a scene vocabulary.
    pub fn request_grouping(&self, vocab: &SceneVocabulary, template: &str) -> Result<String, ProviderError> {
        let names: Vec<&str> = vocab.categories().iter().map(|c| c.as_str()).collect();
        let prompt = format!("{template}\n# Categories\n{}\n", names.join(", "));
        self.request(Stage::Grouping, &prompt, None)
    }

    /// Vocabulary queries for many views, at most `max_in_flight` at a time
    /// in live mode. Results are in input order.
    pub fn request_vocabulary_batch(
        &self,
        images: &[String],
        template: &str,
    ) -> Result<Vec<String>, ProviderError> {
        let cap = match &self.mode {
            ProviderMode::Live(cfg) => cfg.max_in_flight.max(1),
            ProviderMode::Fixture(_) => 1,
        };
        let pool = rayon::ThreadPoolBuilder::new().num_threads(cap).build().map_err(|e| {
            ProviderError::Transport { stage: Stage::Vocabulary, attempts: 0, message: e.to_string() }
        })?;
        pool.install(|| images.par_iter().map(|img| self.request_vocabulary(img, template)).collect())
    }

    fn request(&self, stage: Stage, prompt: &str, image: Option<&str>) -> Result<String, ProviderError> {
        match &self.mode {
            ProviderMode::Fixture(path) => std::fs::read_to_string(path).map_err(|source| ProviderError::Fixture {
                stage,
                path: path.clone(),
                source,
            }),
            ProviderMode::Live(cfg) => {
                let body = chat_request_body(&cfg.model, prompt, image).to_string();
                let reply = self.post_with_retries(stage, cfg, &body)?;
                parse_chat_response(&reply).map_err(|message| ProviderError::Malformed { stage, message })
            }
        }
    }

    fn post_with_retries(&self, stage: Stage, cfg: &LiveConfig, body: &str) -> Result<String, ProviderError> {
        let policy = &cfg.policy;
        let start = Instant::now();
        let mut backoff = policy.initial_backoff;
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            let remaining = policy.deadline.saturating_sub(start.elapsed());
            if remaining.is_zero() {
                return Err(ProviderError::Timeout { stage, attempts: attempts - 1 });
            }
            let timeout = policy.attempt_timeout.min(remaining);
            let outcome = self.transport.post_json(&cfg.endpoint, cfg.api_key.as_deref(), body, timeout);
            let retryable = match &outcome {
                Ok(r) if (200..300).contains(&r.status) => return Ok(r.body.clone()),
                Ok(r) => r.status == 429 || r.status >= 500,
                Err(_) => true,
            };
            if !retryable || attempts > policy.max_retries {
                return Err(match outcome {
                    Ok(r) => ProviderError::Rejected { stage, status: r.status, body: truncate(&r.body, 200) },
                    Err(TransportError::Timeout) => ProviderError::Timeout { stage, attempts },
                    Err(TransportError::Other(message)) => ProviderError::Transport { stage, attempts, message },
                });
            }
            log::warn!("{stage} request attempt {attempts} failed; retrying in {backoff:?}");
            self.retries.fetch_add(1, Ordering::Relaxed);
            std::thread::sleep(backoff.min(policy.deadline.saturating_sub(start.elapsed())));
            backoff = (backoff * 2).min(policy.max_backoff);
        }
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

pub fn chat_request_body(model: &str, prompt: &str, image: Option<&str>) -> Value {
    let mut content = vec![json!({ "type": "text", "text": prompt })];
    if let Some(url) = image {
        content.push(json!({ "type": "image_url", "image_url": { "url": url } }));
    }
    json!({
        "model": model,
        "messages": [{ "role": "user", "content": content }],
    })
}

/// Text of the first choice. Content may be a string or a list of parts.
pub fn parse_chat_response(body: &str) -> Result<String, String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("invalid JSON: {e}"))?;
    let content = v
        .pointer("/choices/0/message/content")
        .ok_or_else(|| "missing choices[0].message.content".to_string())?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        other => Err(format!("unexpected content type: {other}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    /// Replays canned outcomes and records every call.
    struct Scripted {
        outcomes: Mutex<Vec<Result<HttpResponse, TransportError>>>,
        calls: Mutex<Vec<(String, Option<String>, String)>>,
    }

    impl Scripted {
        fn new(mut outcomes: Vec<Result<HttpResponse, TransportError>>) -> Self {
            outcomes.reverse();
            Self { outcomes: Mutex::new(outcomes), calls: Mutex::new(Vec::new()) }
        }
    }

    impl Transport for Scripted {
        fn post_json(
            &self,
            url: &str,
            bearer: Option<&str>,
            body: &str,
            _timeout: Duration,
        ) -> Result<HttpResponse, TransportError> {
            self.calls.lock().unwrap().push((url.into(), bearer.map(String::from), body.into()));
            self.outcomes.lock().unwrap().pop().expect("unexpected extra request")
        }
    }

    fn ok(text: &str) -> Result<HttpResponse, TransportError> {
        Ok(HttpResponse { status: 200, body: json!({"choices": [{"message": {"content": text}}]}).to_string() })
    }

    fn status(code: u16) -> Result<HttpResponse, TransportError> {
        Ok(HttpResponse { status: code, body: "busy".into() })
    }

    fn live() -> ProviderMode {
        ProviderMode::Live(LiveConfig {
            endpoint: "http://stub/v1/chat/completions".into(),
            model: "m".into(),
            api_key: Some("secret".into()),
            policy: RetryPolicy {
                max_retries: 2,
                initial_backoff: Duration::ZERO,
                max_backoff: Duration::ZERO,
                attempt_timeout: Duration::from_secs(1),
                deadline: Duration::from_secs(5),
            },
            max_in_flight: 2,
        })
    }

    #[test]
    fn fixture_passthrough_is_hermetic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.txt");
        std::fs::write(&path, "chair, table").unwrap();
        let stub = Scripted::new(vec![]);
        let p = Provider::new(ProviderMode::Fixture(path), stub);
        assert_eq!(p.request_vocabulary("img0.png", VOCABULARY_PROMPT).unwrap(), "chair, table");
        let vocab: SceneVocabulary = ["chair"].iter().map(|n| crate::vocabulary::Category::parse(n).unwrap()).collect();
        assert_eq!(p.request_grouping(&vocab, GROUPING_PROMPT).unwrap(), "chair, table");
        assert!(p.transport.calls.lock().unwrap().is_empty());
    }

    #[test]
    fn missing_fixture_names_the_path() {
        let p = Provider::new(ProviderMode::Fixture("/nonexistent/fx.txt".into()), Scripted::new(vec![]));
        let err = p.request_vocabulary("x", VOCABULARY_PROMPT).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/fx.txt"));
    }

    #[test]
    fn server_error_then_success_records_one_retry() {
        let p = Provider::new(live(), Scripted::new(vec![status(503), ok("sofa, lamp")]));
        assert_eq!(p.request_vocabulary("file:///a.png", VOCABULARY_PROMPT).unwrap(), "sofa, lamp");
        assert_eq!(p.retry_count(), 1);
        let calls = p.transport.calls.lock().unwrap();
        assert_eq!(calls.len(), 2);
        assert_eq!(calls[0].1.as_deref(), Some("secret"));
        let body: Value = serde_json::from_str(&calls[0].2).unwrap();
        assert_eq!(body["model"], "m");
        assert_eq!(body["messages"][0]["content"][0]["text"], VOCABULARY_PROMPT);
        assert_eq!(body["messages"][0]["content"][1]["image_url"]["url"], "file:///a.png");
    }

    #[test]
    fn persistent_timeout_names_the_stage() {
        let outcomes = vec![Err(TransportError::Timeout); 3];
        let p = Provider::new(live(), Scripted::new(outcomes));
        let vocab = SceneVocabulary::default();
        let err = p.request_grouping(&vocab, GROUPING_PROMPT).unwrap_err();
        assert!(matches!(err, ProviderError::Timeout { stage: Stage::Grouping, attempts: 3 }), "{err}");
        assert!(err.to_string().starts_with("grouping"));
    }

    #[test]
    fn client_errors_are_not_retried() {
        let p = Provider::new(live(), Scripted::new(vec![status(401)]));
        let err = p.request_vocabulary("x", VOCABULARY_PROMPT).unwrap_err();
        assert!(matches!(err, ProviderError::Rejected { status: 401, .. }));
        assert_eq!(p.retry_count(), 0);
    }

    #[test]
    fn grouping_prompt_lists_the_vocabulary() {
        let p = Provider::new(live(), Scripted::new(vec![ok("seating: [chair, sofa]")]));
        let vocab: SceneVocabulary =
            ["chair", "sofa"].iter().map(|n| crate::vocabulary::Category::parse(n).unwrap()).collect();
        p.request_grouping(&vocab, GROUPING_PROMPT).unwrap();
        let calls = p.transport.calls.lock().unwrap();
        let body: Value = serde_json::from_str(&calls[0].2).unwrap();
        let text = body["messages"][0]["content"][0]["text"].as_str().unwrap();
        assert!(text.starts_with(GROUPING_PROMPT));
        assert!(text.ends_with("chair, sofa\n"));
        assert_eq!(body["messages"][0]["content"].as_array().unwrap().len(), 1);
    }

    #[test]
    fn batch_preserves_order() {
        let outcomes = (0..4).map(|_| ok("same")).collect();
        let p = Provider::new(live(), Scripted::new(outcomes));
        let imgs: Vec<String> = (0..4).map(|i| format!("img{i}")).collect();
        assert_eq!(p.request_vocabulary_batch(&imgs, VOCABULARY_PROMPT).unwrap(), vec!["same"; 4]);
    }

    #[test]
    fn response_shapes() {
        assert_eq!(parse_chat_response(r#"{"choices":[{"message":{"content":"a, b"}}]}"#).unwrap(), "a, b");
        assert_eq!(
            parse_chat_response(r#"{"choices":[{"message":{"content":[{"type":"text","text":"a"},{"text":", b"}]}}]}"#)
                .unwrap(),
            "a, b"
        );
        assert!(parse_chat_response(r#"{"choices":[]}"#).is_err());
        assert!(parse_chat_response("not json").is_err());
    }
}
