//! Zero-shot chain-of-thought entity classification.
//!
//! Classification is two completions. The rationale template is instantiated
//! with θ₀ = {label, definition, entity, description} and completed to get a
//! rationale; the answer template is instantiated with θ₁ = θ₀ ∪ {rationale}
//! and completed to get a `positive`/`negative` verdict.

mod template;
mod verdict;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use template::{PromptTemplate, Substitution, TemplateError};
pub use verdict::{parse_verdict, InvalidVerdict, ParseStatus, ParsedVerdict, Verdict};

use crate::dataset::{ClassSpec, ExampleFlag, LabeledExample};
use crate::gateway::{GatewayError, LlmGateway, ModelConfig};

pub const TOKEN_LABEL: &str = "label";
pub const TOKEN_DEFINITION: &str = "definition";
pub const TOKEN_ENTITY: &str = "entity";
pub const TOKEN_DESCRIPTION: &str = "description";
pub const TOKEN_RATIONALE: &str = "rationale";

const THETA0_TOKENS: [&str; 4] = [TOKEN_LABEL, TOKEN_DEFINITION, TOKEN_ENTITY, TOKEN_DESCRIPTION];

/// Appended to the answer prompt when the first reply has no readable verdict.
pub const STRICT_RETRY_INSTRUCTION: &str =
    "\n\nYour previous reply could not be read. Reply with exactly one word, either positive or negative, and nothing else.";

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("{0} has no description")]
    MissingDescription(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TemplateVersions {
    pub rationale: String,
    pub answer: String,
}

/// The rationale-generation and answer-generation templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CotTemplates {
    pub rationale: PromptTemplate,
    pub answer: PromptTemplate,
}

impl CotTemplates {
    pub fn new(rationale: PromptTemplate, answer: PromptTemplate) -> Result<Self, TemplateError> {
        rationale.validate()?;
        answer.validate()?;
        for token in THETA0_TOKENS {
            if !rationale.free_tokens.contains(token) {
                return Err(TemplateError::MissingToken {
                    name: rationale.name.clone(),
                    token: token.into(),
                });
            }
        }
        for token in THETA0_TOKENS.iter().chain([&TOKEN_RATIONALE]) {
            if !answer.free_tokens.contains(*token) {
                return Err(TemplateError::MissingToken {
                    name: answer.name.clone(),
                    token: token.to_string(),
                });
            }
        }
        Ok(Self { rationale, answer })
    }

    /// The templates shipped with the crate.
    pub fn builtin() -> Self {
        let rationale = PromptTemplate::parse(include_str!("../../templates/rationale_generation.txt"))
            .expect("bundled rationale template is valid");
        let answer = PromptTemplate::parse(include_str!("../../templates/answer_generation.txt"))
            .expect("bundled answer template is valid");
        Self::new(rationale, answer).expect("bundled templates declare the classifier tokens")
    }

    pub fn versions(&self) -> TemplateVersions {
        TemplateVersions {
            rationale: self.rationale.version.clone(),
            answer: self.answer.version.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultFlag {
    EmptyRationale,
    /// The answer was asked a second time with the strict instruction.
    AnswerRetried,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub class_iri: String,
    pub entity_iri: String,
    pub rationale: String,
    /// Absent exactly when `parse_status` is `invalid`.
    pub verdict: Option<Verdict>,
    pub raw_rationale_completion: String,
    pub raw_answer_completion: String,
    pub model_id: String,
    pub template_versions: TemplateVersions,
    pub parse_status: ParseStatus,
    #[serde(default)]
    pub flags: Vec<ResultFlag>,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// θ₀ for one (class, entity) pair.
pub fn build_theta0(spec: &ClassSpec, example: &LabeledExample) -> Result<Substitution, ClassifyError> {
    if example.has_flag(ExampleFlag::DescriptionMissing) || example.description.trim().is_empty() {
        return Err(ClassifyError::MissingDescription(example.entity_iri.clone()));
    }
    Ok(Substitution::new()
        .bind(TOKEN_LABEL, spec.label.clone())
        .bind(TOKEN_DEFINITION, spec.definition.clone())
        .bind(TOKEN_ENTITY, example.label.clone())
        .bind(TOKEN_DESCRIPTION, example.description.clone()))
}

/// θ₁ = θ₀ ∪ {rationale}.
pub fn build_theta1(theta0: &Substitution, rationale: &str) -> Substitution {
    theta0.clone().bind(TOKEN_RATIONALE, rationale)
}

/// Anything that labels (class, entity) pairs. The evaluator is generic over it.
pub trait EntityClassifier: Sync {
    fn classify(&self, spec: &ClassSpec, example: &LabeledExample) -> Result<ClassificationResult, ClassifyError>;

    fn model_id(&self) -> &str;

    fn template_versions(&self) -> TemplateVersions;
}

pub struct RationaleOutcome {
    pub text: String,
    pub raw: String,
    pub empty: bool,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

pub struct AnswerOutcome {
    pub parsed: ParsedVerdict,
    pub raw: String,
    pub retried: bool,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// The two-step chain-of-thought classifier.
pub struct CotClassifier<'g> {
    gateway: &'g LlmGateway,
    config: ModelConfig,
    templates: CotTemplates,
}

impl<'g> CotClassifier<'g> {
    pub fn new(gateway: &'g LlmGateway, config: ModelConfig, templates: CotTemplates) -> Self {
        Self {
            gateway,
            config,
            templates,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn templates(&self) -> &CotTemplates {
        &self.templates
    }

    pub fn generate_rationale(&self, theta0: &Substitution) -> Result<RationaleOutcome, ClassifyError> {
        let prompt = self.templates.rationale.instantiate(theta0)?;
        let completion = self.gateway.complete(&self.config, &prompt)?;
        let text = completion.text.trim().to_string();
        Ok(RationaleOutcome {
            empty: text.is_empty(),
            text,
            raw: completion.text,
            input_tokens: completion.input_tokens,
            output_tokens: completion.output_tokens,
        })
    }

    /// Completes the answer prompt, re-asking once with a strict instruction if
    /// the first reply has no readable verdict.
    pub fn generate_answer(&self, theta1: &Substitution) -> Result<AnswerOutcome, ClassifyError> {
        let prompt = self.templates.answer.instantiate(theta1)?;
        let first = self.gateway.complete(&self.config, &prompt)?;
        let parsed = parse_verdict(&first.text);
        if parsed.verdict.is_some() {
            return Ok(AnswerOutcome {
                parsed,
                raw: first.text,
                retried: false,
                input_tokens: first.input_tokens,
                output_tokens: first.output_tokens,
            });
        }
        let retry_prompt = format!("{prompt}{STRICT_RETRY_INSTRUCTION}");
        let second = self.gateway.complete(&self.config, &retry_prompt)?;
        let reparsed = parse_verdict(&second.text);
        let parsed = match reparsed.verdict {
            Some(v) => ParsedVerdict {
                verdict: Some(v),
                status: ParseStatus::Repaired,
            },
            None => reparsed,
        };
        Ok(AnswerOutcome {
            parsed,
            raw: second.text,
            retried: true,
            input_tokens: first.input_tokens + second.input_tokens,
            output_tokens: first.output_tokens + second.output_tokens,
        })
    }
}

impl EntityClassifier for CotClassifier<'_> {
    fn classify(&self, spec: &ClassSpec, example: &LabeledExample) -> Result<ClassificationResult, ClassifyError> {
        let theta0 = build_theta0(spec, example)?;
        let rationale = self.generate_rationale(&theta0)?;
        let theta1 = build_theta1(&theta0, &rationale.text);
        let answer = self.generate_answer(&theta1)?;
        let mut flags = Vec::new();
        if rationale.empty {
            flags.push(ResultFlag::EmptyRationale);
        }
        if answer.retried {
            flags.push(ResultFlag::AnswerRetried);
        }
        Ok(ClassificationResult {
            class_iri: spec.class_iri.clone(),
            entity_iri: example.entity_iri.clone(),
            rationale: rationale.text,
            verdict: answer.parsed.verdict,
            raw_rationale_completion: rationale.raw,
            raw_answer_completion: answer.raw,
            model_id: self.config.model_id.clone(),
            template_versions: self.templates.versions(),
            parse_status: answer.parsed.status,
            flags,
            input_tokens: rationale.input_tokens + answer.input_tokens,
            output_tokens: rationale.output_tokens + answer.output_tokens,
        })
    }

    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn template_versions(&self) -> TemplateVersions {
        self.templates.versions()
    }
}
