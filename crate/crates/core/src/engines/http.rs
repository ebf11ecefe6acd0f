use std::time::Duration;

use serde_json::Value;

use super::{Capabilities, ChatRequest, Completion, EngineConfig, EngineError, Transport};

/// OpenAI-compatible chat-completions client.
///
/// The request body is the serialized [`ChatRequest`]; the completion is
/// read from `choices[0].message.content`, with `reasoning_content` or
/// `reasoning` picked up when a vendor returns the thinking channel apart.
pub struct HttpTransport {
    url: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(config: &EngineConfig) -> Result<Self, EngineError> {
        let base = config.endpoint.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_owned()
        } else {
            format!("{base}/chat/completions")
        };
        let token = match &config.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                EngineError::Config(format!(
                    "{}: environment variable {var} is not set",
                    config.name
                ))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(600))
            .build()
            .map_err(|e| EngineError::Config(format!("{}: {e}", config.name)))?;
        Ok(HttpTransport { url, token, client })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl Transport for HttpTransport {
    fn endpoint(&self) -> &str {
        &self.url
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            reasoning: true,
            prefill: true,
        }
    }

    fn send(&self, request: &ChatRequest) -> Result<Completion, EngineError> {
        let mut builder = self.client.post(&self.url).json(request);
        if let Some(token) = &self.token {
            builder = builder.bearer_auth(token);
        }
        let unavailable = |message: String| EngineError::Unavailable {
            endpoint: self.url.clone(),
            message,
        };
        let response = builder.send().map_err(|e| unavailable(e.to_string()))?;
        let status = response.status();
        let body = response.text().map_err(|e| unavailable(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(unavailable(format!("http {status}")));
        }
        if !status.is_success() {
            return Err(EngineError::Protocol {
                endpoint: self.url.clone(),
                message: format!("http {status}: {}", snippet(&body)),
            });
        }
        parse_completion(&body).map_err(|message| EngineError::Protocol {
            endpoint: self.url.clone(),
            message,
        })
    }
}

fn snippet(body: &str) -> &str {
    match body.char_indices().nth(200) {
        Some((i, _)) => &body[..i],
        None => body,
    }
}

pub(crate) fn parse_completion(body: &str) -> Result<Completion, String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("response is not json: {e}"))?;
    let message = v
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .ok_or("response has no choices[0].message")?;
    let content = message
        .get("content")
        .and_then(Value::as_str)
        .ok_or("response is missing completion text")?;
    let reasoning = ["reasoning_content", "reasoning"]
        .iter()
        .find_map(|k| message.get(*k).and_then(Value::as_str))
        .map(str::to_owned);
    Ok(Completion {
        content: content.to_owned(),
        reasoning,
    })
}
