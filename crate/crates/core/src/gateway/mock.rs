use serde::{Deserialize, Serialize};

use super::{approximate_tokens, ProviderFailure, RawCompletion};

/// Prompt condition: one substring (`"*"` matches anything) or a list of
/// substrings that must all occur.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Matcher {
    One(String),
    All(Vec<String>),
}

impl Matcher {
    fn matches(&self, prompt: &str) -> bool {
        match self {
            Matcher::One(s) => s == "*" || prompt.contains(s.as_str()),
            Matcher::All(all) => all.iter().all(|s| prompt.contains(s.as_str())),
        }
    }
}

impl From<&str> for Matcher {
    fn from(s: &str) -> Self {
        Matcher::One(s.to_string())
    }
}

impl<const N: usize> From<[&str; N]> for Matcher {
    fn from(all: [&str; N]) -> Self {
        Matcher::All(all.iter().map(|s| s.to_string()).collect())
    }
}

/// One scripted behavior, chosen when `when` matches the prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    pub when: Matcher,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    /// Fail with a fatal provider error carrying this message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub rate_limited: bool,
}

impl MockRule {
    fn matches(&self, prompt: &str) -> bool {
        self.when.matches(prompt)
    }
}

/// Ordered rules mapping prompt substrings to canned outputs; the first match wins.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
}

impl MockScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rule(mut self, when: impl Into<Matcher>, reply: &str) -> Self {
        self.rules.push(MockRule {
            when: when.into(),
            reply: Some(reply.into()),
            fail: None,
            rate_limited: false,
        });
        self
    }

    pub fn fail(mut self, when: impl Into<Matcher>, message: &str) -> Self {
        self.rules.push(MockRule {
            when: when.into(),
            reply: None,
            fail: Some(message.into()),
            rate_limited: false,
        });
        self
    }

    pub fn rate_limit(mut self, when: impl Into<Matcher>) -> Self {
        self.rules.push(MockRule {
            when: when.into(),
            reply: None,
            fail: None,
            rate_limited: true,
        });
        self
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub(super) fn respond(&self, prompt: &str) -> Result<RawCompletion, ProviderFailure> {
        let (index, rule) = self
            .rules
            .iter()
            .enumerate()
            .find(|(_, r)| r.matches(prompt))
            .ok_or_else(|| ProviderFailure::Fatal("no scripted rule matches the prompt".into()))?;
        if rule.rate_limited {
            return Err(ProviderFailure::RateLimited(format!("scripted rate limit (rule {index})")));
        }
        if let Some(message) = &rule.fail {
            return Err(ProviderFailure::Fatal(message.clone()));
        }
        let text = rule.reply.clone().unwrap_or_default();
        Ok(RawCompletion {
            input_tokens: approximate_tokens(prompt),
            output_tokens: approximate_tokens(&text),
            raw: serde_json::json!({ "provider": "scripted_mock", "rule": index, "reply": text }),
            text,
        })
    }
}
