//! Blocking client for OpenAI-compatible `/chat/completions` endpoints.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::prompting::Prompt;

/// One completion as returned by the endpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub content: String,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CallError {
    /// No connection could be made.
    Connect(String),
    Timeout,
    Status(u16),
    BadResponse(String),
}

impl CallError {
    pub fn is_retryable(&self) -> bool {
        match self {
            CallError::Connect(_) | CallError::Timeout => true,
            CallError::Status(code) => *code == 429 || *code >= 500,
            CallError::BadResponse(_) => false,
        }
    }
}

/// Anything that can turn a prompt into a completion.
pub trait Completer: Sync {
    fn complete(&self, prompt: &Prompt) -> Result<Completion, CallError>;
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

pub struct ChatClient {
    http: reqwest::blocking::Client,
    url: String,
    model: String,
    temperature: f64,
    max_tokens: u32,
    api_key: Option<String>,
}

impl ChatClient {
    pub fn new(
        endpoint_url: &str,
        model: &str,
        temperature: f64,
        max_tokens: u32,
        timeout: Duration,
    ) -> Result<Self, CallError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .connect_timeout(timeout)
            .build()
            .map_err(|e| CallError::Connect(e.to_string()))?;
        Ok(ChatClient {
            http,
            url: format!("{}/chat/completions", endpoint_url.trim_end_matches('/')),
            model: model.to_owned(),
            temperature,
            max_tokens,
            api_key: std::env::var("OPENAI_API_KEY").ok().filter(|k| !k.is_empty()),
        })
    }
}

impl Completer for ChatClient {
    fn complete(&self, prompt: &Prompt) -> Result<Completion, CallError> {
        let body = ChatRequest {
            model: &self.model,
            messages: [
                ChatMessage {
                    role: "system",
                    content: &prompt.instruction,
                },
                ChatMessage {
                    role: "user",
                    content: &prompt.input,
                },
            ],
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        };
        let mut request = self.http.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(classify)?;
        let status = response.status();
        if !status.is_success() {
            return Err(CallError::Status(status.as_u16()));
        }
        let parsed: ChatResponse = response.json().map_err(|e| {
            if e.is_timeout() {
                CallError::Timeout
            } else {
                CallError::BadResponse(e.to_string())
            }
        })?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| CallError::BadResponse("no choices".into()))?;
        Ok(Completion {
            content: choice.message.content.unwrap_or_default(),
            truncated: choice.finish_reason.as_deref() == Some("length"),
        })
    }
}

fn classify(e: reqwest::Error) -> CallError {
    if e.is_timeout() {
        CallError::Timeout
    } else if e.is_connect() || e.is_request() {
        CallError::Connect(e.to_string())
    } else {
        CallError::BadResponse(e.to_string())
    }
}
