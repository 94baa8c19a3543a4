//! OpenAI-compatible chat-completions transport.

use std::time::Duration;

use serde_json::{json, Value};

use super::client::LlmTransport;
use super::prompt::{ContentPart, RenderedPrompt, Role};
use crate::error::{Error, Result};

pub const ENV_ENDPOINT: &str = "MMDR_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "MMDR_LLM_API_KEY";
pub const ENV_MODEL: &str = "MMDR_LLM_MODEL";
pub const ENV_TIMEOUT: &str = "MMDR_LLM_TIMEOUT_SECS";

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
}

impl HttpConfig {
    /// Reads the transport settings from the environment. `endpoint` overrides
    /// the endpoint variable when given.
    pub fn from_env(endpoint: Option<&str>) -> Result<Self> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let endpoint = endpoint
            .map(str::to_owned)
            .or_else(|| var(ENV_ENDPOINT))
            .ok_or_else(|| Error::InvalidArgument(format!("{ENV_ENDPOINT} is not set")))?;
        let timeout = match var(ENV_TIMEOUT) {
            Some(s) => s
                .parse::<f64>()
                .ok()
                .filter(|t| *t > 0.0)
                .map(Duration::from_secs_f64)
                .ok_or_else(|| Error::InvalidArgument(format!("bad {ENV_TIMEOUT}: {s}")))?,
            None => Duration::from_secs(60),
        };
        Ok(Self {
            endpoint,
            api_key: var(ENV_API_KEY),
            model: var(ENV_MODEL).unwrap_or_else(|| "default".into()),
            timeout,
        })
    }
}

pub struct HttpTransport {
    config: HttpConfig,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        Self { config, agent }
    }

    pub fn request_body(&self, prompt: &RenderedPrompt) -> Value {
        let messages: Vec<Value> = prompt
            .messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::System => "system",
                    Role::User => "user",
                };
                let only_text = m.content.iter().all(|p| matches!(p, ContentPart::Text { .. }));
                let content = if only_text {
                    Value::String(m.text_content())
                } else {
                    m.content
                        .iter()
                        .map(|p| match p {
                            ContentPart::Text { text } => json!({"type": "text", "text": text}),
                            ContentPart::Image { path } => {
                                json!({"type": "image_url", "image_url": {"url": path}})
                            }
                        })
                        .collect()
                };
                json!({"role": role, "content": content})
            })
            .collect();
        json!({"model": self.config.model, "messages": messages})
    }
}

impl LlmTransport for HttpTransport {
    fn complete(&self, prompt: &RenderedPrompt) -> Result<String> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp = req
            .send_json(self.request_body(prompt))
            .map_err(|e| Error::Transport(e.to_string()))?;
        let body: Value = resp
            .into_json()
            .map_err(|e| Error::Transport(format!("unreadable response: {e}")))?;
        body.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| Error::Transport(format!("response without message content: {body}")))
    }
}
