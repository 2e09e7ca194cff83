//! Gesture recommendation from a single captured image.
//!
//! The recorded action names are placed into a fixed prompt, the prompt and
//! one image are sent to a vision chat backend in a brand-new conversation,
//! and the free-text reply is validated against the library names.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::memory::INIT_ACTION;

/// The prompt sent with every image. Both placeholders receive the same
/// comma-separated action list.
pub const PROMPT_TEMPLATE: &str = "The image depicts a scene where the user is facing the person they wish to interact with. Refer to the following action list: {recorded_actions}, as well as the scene information and the actions of the person in the image. Determine which actions the user is most likely to respond to and order them by likelihood. Return only the action names that exactly match those in the original action list {recorded_actions}, separated by commas, excluding 'init'. Suggest 2~3 suitable actions.";

const PLACEHOLDER: &str = "{recorded_actions}";

pub const MIN_SUGGESTIONS: usize = 2;
pub const MAX_SUGGESTIONS: usize = 3;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(15);
pub const API_KEY_ENV: &str = "ABC_LLM_API_KEY";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_MODEL: &str = "gpt-4o-2024-05-13";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend timed out")]
    Timeout,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecommendError {
    #[error("action list is empty")]
    EmptyActionList,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("fewer than {MIN_SUGGESTIONS} valid actions in response")]
    NoValidActions,
    #[error("could not parse backend response after retry: {last_response:?}")]
    ParseFailed { last_response: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

pub fn build_prompt(action_names: &[String]) -> Result<String, RecommendError> {
    if action_names.is_empty() {
        return Err(RecommendError::EmptyActionList);
    }
    Ok(PROMPT_TEMPLATE.replace(PLACEHOLDER, &action_names.join(", ")))
}

/// Splits on commas and keeps, in order, the first occurrence of each token
/// that exactly matches a library name other than `init`, up to three.
pub fn parse_response(text: &str, library_names: &[String]) -> Result<Vec<String>, RecommendError> {
    let mut out: Vec<String> = Vec::with_capacity(MAX_SUGGESTIONS);
    for token in text.split(',').map(str::trim) {
        if out.len() == MAX_SUGGESTIONS {
            break;
        }
        if token == INIT_ACTION || out.iter().any(|s| s == token) {
            continue;
        }
        if library_names.iter().any(|n| n == token) {
            out.push(token.to_string());
        }
    }
    if out.len() < MIN_SUGGESTIONS {
        return Err(RecommendError::NoValidActions);
    }
    Ok(out)
}

pub fn image_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn image_media_type(bytes: &[u8]) -> Option<&'static str> {
    if bytes.starts_with(&[0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a]) {
        Some("image/png")
    } else if bytes.starts_with(&[0xff, 0xd8, 0xff]) {
        Some("image/jpeg")
    } else {
        None
    }
}

#[derive(Debug, Clone)]
pub struct RecommendationRequest {
    image: Vec<u8>,
    action_names: Vec<String>,
}

impl RecommendationRequest {
    /// `action_names` is the full library list, `init` included.
    pub fn new(image: Vec<u8>, action_names: Vec<String>) -> Result<Self, RecommendError> {
        if image.is_empty() {
            return Err(RecommendError::InvalidRequest("image is empty".into()));
        }
        if image_media_type(&image).is_none() {
            return Err(RecommendError::InvalidRequest("image must be PNG or JPEG".into()));
        }
        let gestures = action_names.iter().filter(|n| n.as_str() != INIT_ACTION).count();
        if gestures < MIN_SUGGESTIONS {
            return Err(RecommendError::InvalidRequest(format!(
                "need at least {MIN_SUGGESTIONS} actions besides '{INIT_ACTION}', have {gestures}"
            )));
        }
        Ok(Self { image, action_names })
    }

    pub fn action_names(&self) -> &[String] {
        &self.action_names
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationResult {
    pub suggestions: Vec<String>,
    /// Seconds from request to parsed result.
    pub latency: f64,
    pub backend_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone)]
pub struct Message<'a> {
    pub role: Role,
    pub text: &'a str,
    pub image: Option<&'a [u8]>,
}

/// The messages sent in one backend call. Recommendations always use a
/// single-turn conversation so no earlier exchange can influence a reply.
#[derive(Debug, Clone)]
pub struct Conversation<'a> {
    pub messages: Vec<Message<'a>>,
}

impl<'a> Conversation<'a> {
    pub fn single_turn(prompt: &'a str, image: &'a [u8]) -> Self {
        Self { messages: vec![Message { role: Role::User, text: prompt, image: Some(image) }] }
    }
}

pub trait LlmBackend: Send + Sync {
    fn id(&self) -> String;

    fn complete(&self, conversation: &Conversation<'_>) -> Result<String, BackendError>;
}

/// Builds the prompt, asks the backend in a fresh conversation, and parses
/// the answer. A reply that fails validation is retried once with the same
/// prompt. The request (and its image) is consumed.
pub fn request_recommendation(
    backend: &dyn LlmBackend,
    request: RecommendationRequest,
) -> Result<RecommendationResult, RecommendError> {
    let start = Instant::now();
    let RecommendationRequest { image, action_names } = request;
    let prompt = build_prompt(&action_names)?;
    let mut last_response = String::new();
    for _attempt in 0..2 {
        let conversation = Conversation::single_turn(&prompt, &image);
        let reply = backend.complete(&conversation)?;
        match parse_response(&reply, &action_names) {
            Ok(suggestions) => {
                return Ok(RecommendationResult {
                    suggestions,
                    latency: start.elapsed().as_secs_f64(),
                    backend_id: backend.id(),
                });
            }
            Err(_) => last_response = reply,
        }
    }
    Err(RecommendError::ParseFailed { last_response })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockCall {
    pub digest: String,
    pub prompt: String,
    pub messages: usize,
}

/// Deterministic backend answering from a digest → reply table.
#[derive(Debug, Default)]
pub struct MockBackend {
    responses: HashMap<String, String>,
    calls: Mutex<Vec<MockCall>>,
}

impl MockBackend {
    pub fn new(responses: HashMap<String, String>) -> Self {
        Self { responses, calls: Mutex::new(Vec::new()) }
    }

    /// Reads a JSON object mapping hex SHA-256 digests to reply text.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let text = fs::read_to_string(path).map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let responses: HashMap<String, String> =
            serde_json::from_str(&text).map_err(|e| BackendError::Unavailable(format!("mock file: {e}")))?;
        Ok(Self::new(responses.into_iter().map(|(k, v)| (k.to_lowercase(), v)).collect()))
    }

    pub fn insert(&mut self, image: &[u8], reply: impl Into<String>) {
        self.responses.insert(image_digest(image), reply.into());
    }

    pub fn calls(&self) -> Vec<MockCall> {
        self.calls.lock().unwrap().clone()
    }
}

impl LlmBackend for MockBackend {
    fn id(&self) -> String {
        "mock".to_string()
    }

    fn complete(&self, conversation: &Conversation<'_>) -> Result<String, BackendError> {
        let [message] = conversation.messages.as_slice() else {
            return Err(BackendError::Unavailable(format!(
                "mock expects a single-turn conversation, got {} messages",
                conversation.messages.len()
            )));
        };
        let image = message
            .image
            .ok_or_else(|| BackendError::Unavailable("mock request carries no image".into()))?;
        let digest = image_digest(image);
        self.calls.lock().unwrap().push(MockCall {
            digest: digest.clone(),
            prompt: message.text.to_string(),
            messages: conversation.messages.len(),
        });
        self.responses
            .get(&digest)
            .cloned()
            .ok_or_else(|| BackendError::Unavailable(format!("no mock reply for image {digest}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    #[serde(default)]
    pub temperature: f64,
}

fn default_timeout_s() -> f64 {
    DEFAULT_TIMEOUT.as_secs_f64()
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            endpoint: DEFAULT_ENDPOINT.to_string(),
            model: DEFAULT_MODEL.to_string(),
            timeout_s: default_timeout_s(),
            temperature: 0.0,
        }
    }
}

/// OpenAI-compatible vision chat-completions client. The API key is read
/// from `ABC_LLM_API_KEY` at construction.
pub struct LiveBackend {
    config: LiveConfig,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl LiveBackend {
    pub fn from_env(config: LiveConfig) -> Result<Self, BackendError> {
        let api_key = std::env::var(API_KEY_ENV)
            .map_err(|_| BackendError::Unavailable(format!("{API_KEY_ENV} is not set")))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_s))
            .build()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        Ok(Self { config, api_key, client })
    }

    pub fn request_body(&self, conversation: &Conversation<'_>) -> serde_json::Value {
        chat_request_body(&self.config, conversation)
    }
}

pub fn chat_request_body(config: &LiveConfig, conversation: &Conversation<'_>) -> serde_json::Value {
    let messages: Vec<serde_json::Value> = conversation
        .messages
        .iter()
        .map(|m| {
            let mut content = vec![serde_json::json!({ "type": "text", "text": m.text })];
            if let Some(image) = m.image {
                let media = image_media_type(image).unwrap_or("image/png");
                let data = base64::engine::general_purpose::STANDARD.encode(image);
                content.push(serde_json::json!({
                    "type": "image_url",
                    "image_url": { "url": format!("data:{media};base64,{data}") }
                }));
            }
            serde_json::json!({ "role": m.role, "content": content })
        })
        .collect();
    serde_json::json!({
        "model": config.model,
        "temperature": config.temperature,
        "messages": messages,
    })
}

impl LlmBackend for LiveBackend {
    fn id(&self) -> String {
        format!("live:{}", self.config.model)
    }

    fn complete(&self, conversation: &Conversation<'_>) -> Result<String, BackendError> {
        let response = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(&self.api_key)
            .json(&self.request_body(conversation))
            .send()
            .map_err(|e| if e.is_timeout() { BackendError::Timeout } else { BackendError::Unavailable(e.to_string()) })?;
        let status = response.status();
        let body: serde_json::Value = response
            .json()
            .map_err(|e| if e.is_timeout() { BackendError::Timeout } else { BackendError::Unavailable(e.to_string()) })?;
        if !status.is_success() {
            return Err(BackendError::Unavailable(format!("HTTP {status}: {body}")));
        }
        body.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| BackendError::Unavailable("response has no message content".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PNG: &[u8] = &[0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a, 1, 2, 3];

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn prompt_substitutes_both_placeholders() {
        let p = build_prompt(&names(&["wave hand", "shake hand", "init"])).unwrap();
        assert!(p.contains("Refer to the following action list: wave hand, shake hand, init"));
        assert!(p.contains("original action list wave hand, shake hand, init, separated"));
        assert!(p.ends_with("Suggest 2~3 suitable actions."));
        assert!(p.contains("excluding 'init'"));
        assert!(!p.contains(PLACEHOLDER));
    }

    #[test]
    fn empty_list_has_no_prompt() {
        assert_eq!(build_prompt(&[]), Err(RecommendError::EmptyActionList));
    }

    #[test]
    fn parser_examples() {
        let lib = names(&["shake hand", "high five", "wave hand", "init"]);
        assert_eq!(parse_response("shake hand, high five", &lib).unwrap(), names(&["shake hand", "high five"]));
        let lib = names(&["init", "wave hand", "hug"]);
        assert_eq!(parse_response("init, wave hand, hug", &lib).unwrap(), names(&["wave hand", "hug"]));
        let lib = names(&["shake hand", "wave hand"]);
        assert_eq!(parse_response("Shake Hand; waving", &lib), Err(RecommendError::NoValidActions));
        let lib = names(&["a", "b", "c", "d"]);
        assert_eq!(parse_response("a, b, c, d", &lib).unwrap(), names(&["a", "b", "c"]));
    }

    #[test]
    fn parser_drops_duplicates() {
        let lib = names(&["a", "b"]);
        assert_eq!(parse_response("a, a, b", &lib).unwrap(), names(&["a", "b"]));
        assert_eq!(parse_response("a, a", &lib), Err(RecommendError::NoValidActions));
    }

    #[test]
    fn request_validation() {
        assert!(RecommendationRequest::new(vec![], names(&["a", "b"])).is_err());
        assert!(RecommendationRequest::new(b"GIF89a".to_vec(), names(&["a", "b"])).is_err());
        assert!(RecommendationRequest::new(PNG.to_vec(), names(&["a", "init"])).is_err());
        assert!(RecommendationRequest::new(PNG.to_vec(), names(&["a", "b", "init"])).is_ok());
    }

    #[test]
    fn mock_passthrough() {
        let mut mock = MockBackend::default();
        mock.insert(PNG, "shake hand, wave hand");
        let req = RecommendationRequest::new(PNG.to_vec(), names(&["wave hand", "shake hand", "init"])).unwrap();
        let res = request_recommendation(&mock, req).unwrap();
        assert_eq!(res.suggestions, names(&["shake hand", "wave hand"]));
        assert_eq!(res.backend_id, "mock");
        assert!(res.latency >= 0.0);
    }

    #[test]
    fn garbage_twice_is_parse_failure() {
        let mut mock = MockBackend::default();
        mock.insert(PNG, "I think they want a hug!");
        let req = RecommendationRequest::new(PNG.to_vec(), names(&["wave hand", "hug"])).unwrap();
        let err = request_recommendation(&mock, req).unwrap_err();
        assert!(matches!(err, RecommendError::ParseFailed { .. }));
        assert_eq!(mock.calls().len(), 2);
    }

    #[test]
    fn unknown_image_is_backend_error() {
        let mock = MockBackend::default();
        let req = RecommendationRequest::new(PNG.to_vec(), names(&["wave hand", "hug"])).unwrap();
        assert!(matches!(request_recommendation(&mock, req), Err(RecommendError::Backend(BackendError::Unavailable(_)))));
    }

    #[test]
    fn identical_requests_are_independent_calls() {
        let mut mock = MockBackend::default();
        mock.insert(PNG, "hug, wave hand");
        let list = names(&["wave hand", "hug"]);
        for _ in 0..2 {
            let req = RecommendationRequest::new(PNG.to_vec(), list.clone()).unwrap();
            request_recommendation(&mock, req).unwrap();
        }
        let calls = mock.calls();
        assert_eq!(calls.len(), 2);
        assert!(calls.iter().all(|c| c.messages == 1));
        assert_eq!(calls[0], calls[1]);
    }

    #[test]
    fn mock_rejects_multi_turn_conversations() {
        let mock = MockBackend::default();
        let mut conv = Conversation::single_turn("p", PNG);
        conv.messages.push(Message { role: Role::Assistant, text: "hug", image: None });
        assert!(mock.complete(&conv).is_err());
    }

    #[test]
    fn live_request_body_carries_one_image() {
        let conv = Conversation::single_turn("hello", PNG);
        let body = chat_request_body(&LiveConfig::default(), &conv);
        assert_eq!(body["model"], DEFAULT_MODEL);
        assert_eq!(body["messages"].as_array().unwrap().len(), 1);
        let url = body["messages"][0]["content"][1]["image_url"]["url"].as_str().unwrap();
        assert!(url.starts_with("data:image/png;base64,"));
    }
}
