use serde::Deserialize;

use super::{approximate_tokens, ModelConfig, ProviderFailure, RawCompletion};

/// Chat-completions wire client shared by hosted and local providers.
pub(super) struct ChatClient {
    client: std::sync::OnceLock<reqwest::blocking::Client>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

impl ChatClient {
    pub(super) fn new() -> Self {
        Self {
            client: std::sync::OnceLock::new(),
        }
    }

    fn client(&self) -> &reqwest::blocking::Client {
        self.client.get_or_init(|| {
            reqwest::blocking::Client::builder()
                .timeout(std::time::Duration::from_secs(300))
                .build()
                .expect("TLS backend available")
        })
    }

    pub(super) fn chat(
        &self,
        config: &ModelConfig,
        prompt: &str,
        api_key: Option<&str>,
    ) -> Result<RawCompletion, ProviderFailure> {
        let body = serde_json::json!({
            "model": config.model_id,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": config.temperature,
            "max_tokens": config.max_output_tokens,
        });
        let mut request = self.client().post(config.endpoint_url()).json(&body);
        if let Some(key) = api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| ProviderFailure::Transient(e.to_string()))?;
        let status = response.status();
        let text = response.text().map_err(|e| ProviderFailure::Transient(e.to_string()))?;
        if status.as_u16() == 429 {
            return Err(ProviderFailure::RateLimited(truncate(&text)));
        }
        if status.is_server_error() {
            return Err(ProviderFailure::Transient(format!("HTTP {status}: {}", truncate(&text))));
        }
        if !status.is_success() {
            return Err(ProviderFailure::Fatal(format!("HTTP {status}: {}", truncate(&text))));
        }
        let raw: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| ProviderFailure::Fatal(format!("bad JSON: {e}")))?;
        let parsed: ChatResponse =
            serde_json::from_value(raw.clone()).map_err(|e| ProviderFailure::Fatal(format!("bad response: {e}")))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderFailure::Fatal("response has no choices".into()))?;
        let (input_tokens, output_tokens) = match parsed.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens),
            None => (approximate_tokens(prompt), approximate_tokens(&content)),
        };
        Ok(RawCompletion {
            text: content,
            input_tokens,
            output_tokens,
            raw,
        })
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(300).collect()
}
