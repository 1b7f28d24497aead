use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("binding for unknown token {{{0}}}")]
    UnknownToken(String),
    #[error("free token {{{0}}} does not occur in the template body")]
    UnusedToken(String),
    #[error("placeholder {{{0}}} is not a declared free token")]
    UndeclaredPlaceholder(String),
    #[error("malformed template file: {0}")]
    Malformed(String),
    #[error("template {name} must declare {{{token}}}")]
    MissingToken { name: String, token: String },
}

/// Position of a `{token}` placeholder in a body.
struct Placeholder<'a> {
    start: usize,
    end: usize,
    name: &'a str,
}

fn is_token_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_token_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Every `{identifier}` occurrence. Braces around anything else are literal text.
fn placeholders(body: &str) -> Vec<Placeholder<'_>> {
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(rel) = body[from..].find('{') {
        let start = from + rel;
        let rest = &body[start + 1..];
        let len = rest.find(|c: char| !is_token_char(c)).unwrap_or(rest.len());
        let name = &rest[..len];
        if len > 0 && name.starts_with(is_token_start) && rest[len..].starts_with('}') {
            out.push(Placeholder {
                start,
                end: start + len + 2,
                name,
            });
            from = start + len + 2;
        } else {
            from = start + 1;
        }
    }
    out
}

/// A prompt: body text plus the set of free tokens it may be instantiated with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub version: String,
    pub body: String,
    pub free_tokens: BTreeSet<String>,
}

/// Token bindings applied by [`PromptTemplate::instantiate`].
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Substitution {
    pub bindings: BTreeMap<String, String>,
}

impl Substitution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(mut self, token: &str, value: impl Into<String>) -> Self {
        self.bindings.insert(token.to_string(), value.into());
        self
    }

    pub fn get(&self, token: &str) -> Option<&str> {
        self.bindings.get(token).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    /// True when every binding of `self` is present, unchanged, in `other`.
    pub fn is_subset_of(&self, other: &Substitution) -> bool {
        self.bindings.iter().all(|(k, v)| other.bindings.get(k) == Some(v))
    }
}

impl PromptTemplate {
    pub fn new(
        name: impl Into<String>,
        version: impl Into<String>,
        body: impl Into<String>,
        free_tokens: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<Self, TemplateError> {
        let template = Self {
            name: name.into(),
            version: version.into(),
            body: body.into(),
            free_tokens: free_tokens.into_iter().map(Into::into).collect(),
        };
        template.validate()?;
        Ok(template)
    }

    /// Builds a template whose free tokens are exactly the placeholders in `body`.
    pub fn inferred(name: &str, version: &str, body: &str) -> Self {
        let free_tokens = placeholders(body).iter().map(|p| p.name.to_string()).collect();
        Self {
            name: name.into(),
            version: version.into(),
            body: body.into(),
            free_tokens,
        }
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        let used: BTreeSet<&str> = placeholders(&self.body).iter().map(|p| p.name).collect();
        if let Some(t) = self.free_tokens.iter().find(|t| !used.contains(t.as_str())) {
            return Err(TemplateError::UnusedToken(t.clone()));
        }
        if let Some(p) = used.iter().find(|p| !self.free_tokens.contains(**p)) {
            return Err(TemplateError::UndeclaredPlaceholder(p.to_string()));
        }
        Ok(())
    }

    /// Replaces each bound placeholder with its binding in one pass; inserted
    /// text is never re-scanned. Unbound placeholders stay as they are.
    pub fn instantiate(&self, theta: &Substitution) -> Result<String, TemplateError> {
        if let Some(k) = theta.bindings.keys().find(|k| !self.free_tokens.contains(*k)) {
            return Err(TemplateError::UnknownToken(k.clone()));
        }
        let mut out = String::with_capacity(self.body.len());
        let mut cursor = 0;
        for p in placeholders(&self.body) {
            if let Some(value) = theta.get(p.name) {
                out.push_str(&self.body[cursor..p.start]);
                out.push_str(value);
                cursor = p.end;
            }
        }
        out.push_str(&self.body[cursor..]);
        Ok(out)
    }

    /// Parses the template file format: `key: value` header lines
    /// (`name`, `version`, `tokens`), a `---` line, then the body.
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let (header, body) = text
            .split_once("\n---\n")
            .ok_or_else(|| TemplateError::Malformed("missing '---' separator".into()))?;
        let mut name = None;
        let mut version = None;
        let mut tokens = None;
        for line in header.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| TemplateError::Malformed(format!("bad header line {line:?}")))?;
            let value = value.trim().to_string();
            match key.trim() {
                "name" => name = Some(value),
                "version" => version = Some(value),
                "tokens" => {
                    tokens = Some(
                        value
                            .split(',')
                            .map(|t| t.trim().trim_matches(['{', '}']).to_string())
                            .filter(|t| !t.is_empty())
                            .collect::<Vec<_>>(),
                    )
                }
                other => return Err(TemplateError::Malformed(format!("unknown header key {other:?}"))),
            }
        }
        let body = body.strip_suffix('\n').unwrap_or(body);
        Self::new(
            name.ok_or_else(|| TemplateError::Malformed("missing name".into()))?,
            version.ok_or_else(|| TemplateError::Malformed("missing version".into()))?,
            body,
            tokens.ok_or_else(|| TemplateError::Malformed("missing tokens".into()))?,
        )
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path).map_err(|e| TemplateError::Malformed(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn render_file(&self) -> String {
        let mut s = String::new();
        let tokens: Vec<&str> = self.free_tokens.iter().map(String::as_str).collect();
        let _ = writeln!(s, "name: {}", self.name);
        let _ = writeln!(s, "version: {}", self.version);
        let _ = writeln!(s, "tokens: {}", tokens.join(", "));
        let _ = writeln!(s, "---");
        s.push_str(&self.body);
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(body: &str) -> PromptTemplate {
        PromptTemplate::inferred("t", "v1", body)
    }

    #[test]
    fn direct_replacement() {
        let theta = Substitution::new().bind("entity", "Iosif Nemes").bind("label", "rugby player");
        assert_eq!(t("Is {entity} a {label}?").instantiate(&theta).unwrap(), "Is Iosif Nemes a rugby player?");
    }

    #[test]
    fn empty_substitution_is_identity() {
        let tpl = t("Is {entity} a {label}?");
        assert_eq!(tpl.instantiate(&Substitution::new()).unwrap(), tpl.body);
    }

    #[test]
    fn bindings_are_not_rescanned() {
        let theta = Substitution::new().bind("entity", "{label}").bind("label", "X");
        assert_eq!(t("{entity} / {label}").instantiate(&theta).unwrap(), "{label} / X");
    }

    #[test]
    fn partial_binding_leaves_placeholders() {
        let theta = Substitution::new().bind("label", "X");
        assert_eq!(t("{entity} is {label} {label}").instantiate(&theta).unwrap(), "{entity} is X X");
    }

    #[test]
    fn unknown_token_rejected() {
        let theta = Substitution::new().bind("nope", "x");
        assert_eq!(t("{entity}").instantiate(&theta), Err(TemplateError::UnknownToken("nope".into())));
    }

    #[test]
    fn free_tokens_must_match_body() {
        assert!(matches!(
            PromptTemplate::new("t", "v", "{a}", ["a", "b"]),
            Err(TemplateError::UnusedToken(ref s)) if s == "b"
        ));
        assert!(matches!(
            PromptTemplate::new("t", "v", "{a} {c}", ["a"]),
            Err(TemplateError::UndeclaredPlaceholder(ref s)) if s == "c"
        ));
        // non-identifier braces are literal
        assert!(PromptTemplate::new("t", "v", "json {\"k\": 1} {a} {}", ["a"]).is_ok());
    }

    #[test]
    fn file_format_round_trips() {
        let tpl = PromptTemplate::new("n", "v2", "Hello {name},\nbye {name}", ["name"]).unwrap();
        assert_eq!(PromptTemplate::parse(&tpl.render_file()).unwrap(), tpl);
        assert!(PromptTemplate::parse("no separator").is_err());
        assert!(PromptTemplate::parse("name: x\n---\nbody").is_err());
    }

    proptest! {
        #[test]
        fn instantiate_is_pure(a in "[ -~]{0,20}", b in "[ -~]{0,20}") {
            let tpl = t("<{a}|{b}|{a}>");
            let theta = Substitution::new().bind("a", a.clone()).bind("b", b.clone());
            let once = tpl.instantiate(&theta).unwrap();
            prop_assert_eq!(&once, &tpl.instantiate(&theta).unwrap());
            prop_assert_eq!(once, format!("<{a}|{b}|{a}>"));
        }
    }
}
