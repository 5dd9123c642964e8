//! OpenAI-compatible chat-completions client.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, Completion, CompletionRequest, SamplingParams};
use crate::seed;

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
    seed: u64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

pub struct ChatCompletionsClient {
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    max_retries: u32,
    backoff: Duration,
}

impl ChatCompletionsClient {
    pub fn new(
        endpoint: &str,
        api_key: Option<String>,
        timeout: Duration,
        max_retries: u32,
    ) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Config(format!("http client: {e}")))?;
        Ok(ChatCompletionsClient {
            url: completions_url(endpoint),
            api_key,
            client,
            max_retries,
            backoff: Duration::from_millis(250),
        })
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn attempt(&self, body: &ChatRequest<'_>) -> Result<String, Attempt> {
        let mut req = self.client.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Attempt::Fatal(BackendError::Http {
                status: status.as_u16(),
                body: text,
            }));
        }
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| Attempt::Fatal(BackendError::Protocol(format!("bad response body: {e}"))))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Attempt::Fatal(BackendError::Protocol("response has no message content".into())))
    }
}

enum Attempt {
    Retry(String),
    Fatal(BackendError),
}

pub(crate) fn completions_url(endpoint: &str) -> String {
    let trimmed = endpoint.trim_end_matches('/');
    if trimmed.ends_with("/chat/completions") {
        trimmed.to_string()
    } else {
        format!("{trimmed}/chat/completions")
    }
}

impl Completion for ChatCompletionsClient {
    fn complete(&self, params: &SamplingParams, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        let body = ChatRequest {
            model: &params.model_name,
            messages: [ChatMessage {
                role: "user",
                content: request.prompt,
            }],
            temperature: params.temperature,
            top_p: params.top_p,
            max_tokens: params.max_tokens,
            seed: seed::derive(request.seed, &["sample", &request.sample_index.to_string()]),
        };
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1).min(32));
            }
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    tracing::warn!(url = %self.url, attempt, "request failed: {msg}");
                    last = msg;
                }
            }
        }
        Err(BackendError::Unreachable {
            attempts: self.max_retries + 1,
            message: last,
        })
    }
}
