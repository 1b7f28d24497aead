//! TOML run configuration.
//!
//! `${NAME}` anywhere in the file is replaced by the environment variable
//! `NAME` before parsing (`$${` yields a literal `${`). Relative paths are
//! resolved against the directory of the configuration file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{CotTemplates, PromptTemplate, TemplateError};
use crate::dataset::{PositiveScope, SamplingOptions};
use crate::gateway::{GatewayError, LlmGateway, MockScript, ModelConfig, PriceTable};
use crate::kg::{KgEndpoint, KgError, KnowledgeGraph, MemoryGraph, SparqlClient, DEFAULT_DESCRIBE_LIMIT, DEFAULT_MAX_DEPTH};
use crate::verbalizer::{
    DescriptionSource, RdfSource, StaticDescriptions, StaticSitelinks, WikidataSitelinks, WikipediaClient, WikipediaSource,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("environment variable {0} is not set")]
    MissingVar(String),
    #[error("unknown {kind} {name:?}; configured: {known}")]
    Unknown { kind: &'static str, name: String, known: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Kg(#[from] KgError),
}

/// Replaces `${NAME}` with the value of `lookup(NAME)`.
pub fn interpolate(text: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String, ConfigError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(pos) = rest.find('$') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(after) = tail.strip_prefix("$${") {
            out.push_str("${");
            rest = after;
        } else if let Some(after) = tail.strip_prefix("${") {
            let end = after
                .find('}')
                .ok_or_else(|| ConfigError::Invalid("unterminated ${ in configuration".into()))?;
            let name = &after[..end];
            out.push_str(&lookup(name).ok_or_else(|| ConfigError::MissingVar(name.into()))?);
            rest = &after[end + 1..];
        } else {
            out.push('$');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data_dir: PathBuf,
    pub cache_dir: PathBuf,
    /// Review UI assets served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            cache_dir: "cache".into(),
            static_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub n_classes: usize,
    pub k_examples: usize,
    pub seed: u64,
    pub max_depth: usize,
    pub describe_limit: usize,
    pub positive_scope: PositiveScope,
    pub candidate_limit: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_classes: 20,
            k_examples: 20,
            seed: 42,
            max_depth: DEFAULT_MAX_DEPTH,
            describe_limit: DEFAULT_DESCRIBE_LIMIT,
            positive_scope: PositiveScope::Extension,
            candidate_limit: 5000,
        }
    }
}

impl SamplingConfig {
    pub fn options(&self) -> SamplingOptions {
        SamplingOptions {
            max_depth: self.max_depth,
            positive_scope: self.positive_scope,
            candidate_limit: self.candidate_limit,
        }
    }
}

/// Template files; the built-in templates are used when unset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplatesConfig {
    pub rationale: Option<PathBuf>,
    pub answer: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    #[default]
    Sparql,
    /// An RDF file (Turtle or N-Triples) loaded into memory.
    File,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptionMode {
    /// Wikipedia page summary via the entity's sitelink.
    Wikipedia,
    /// TSV serialization of the DESCRIBE triples.
    #[default]
    Rdf,
    /// DESCRIBE triples rewritten into prose by a language model.
    RdfLlm,
    /// Hand-written descriptions from a JSON object keyed by IRI.
    Static,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescriptionConfig {
    pub mode: DescriptionMode,
    /// `static`: the descriptions file. `wikipedia`: optional JSON map of IRI
    /// to article URL used instead of querying sitelinks.
    pub file: Option<PathBuf>,
    /// `rdf_llm`: name of the model that writes the prose.
    pub model: Option<String>,
    /// `wikipedia`: REST API base, e.g. `https://en.wikipedia.org/api/rest_v1`.
    pub wikipedia_base_url: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub kind: EndpointKind,
    /// `wikidata` or `caligraph` fills in URL and vocabulary.
    pub preset: Option<String>,
    pub sparql_url: Option<String>,
    pub file: Option<PathBuf>,
    pub instance_of_property: Option<String>,
    pub subclass_of_property: Option<String>,
    pub label_property: Option<String>,
    pub default_language: Option<String>,
    pub request_timeout_secs: Option<f64>,
    pub max_retries: Option<u32>,
    pub max_concurrent_requests: Option<usize>,
    pub property_paths: Option<bool>,
    pub descriptions: DescriptionConfig,
}

impl EndpointConfig {
    pub fn resolve(&self, name: &str) -> Result<KgEndpoint, ConfigError> {
        let mut e = match self.preset.as_deref() {
            Some("wikidata") => KgEndpoint::wikidata(),
            Some("caligraph") => KgEndpoint::caligraph(),
            Some(other) => return Err(ConfigError::Invalid(format!("endpoint {name}: unknown preset {other:?}"))),
            None => KgEndpoint::rdfs(name, self.sparql_url.as_deref().unwrap_or("http://localhost/sparql")),
        };
        e.name = name.into();
        if let Some(v) = &self.sparql_url {
            e.sparql_url = v.clone();
        }
        if let Some(v) = &self.instance_of_property {
            e.instance_of_property = v.clone();
        }
        if let Some(v) = &self.subclass_of_property {
            e.subclass_of_property = v.clone();
        }
        if let Some(v) = &self.label_property {
            e.label_property = v.clone();
        }
        if let Some(v) = &self.default_language {
            e.default_language = v.clone();
        }
        if let Some(v) = self.request_timeout_secs {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::Invalid(format!("endpoint {name}: request_timeout_secs must be > 0")));
            }
            e.request_timeout = std::time::Duration::from_secs_f64(v);
        }
        if let Some(v) = self.max_retries {
            e.max_retries = v;
        }
        if let Some(v) = self.max_concurrent_requests {
            e.max_concurrent_requests = v;
        }
        if let Some(v) = self.property_paths {
            e.property_paths = v;
        }
        e.validate()?;
        if self.kind == EndpointKind::File && self.file.is_none() {
            return Err(ConfigError::Invalid(format!("endpoint {name}: kind = \"file\" needs file")));
        }
        Ok(e)
    }
}

/// A model entry: the gateway settings plus an optional script file for mocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    #[serde(flatten)]
    pub config: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub sampling: SamplingConfig,
    pub templates: TemplatesConfig,
    pub endpoints: BTreeMap<String, EndpointConfig>,
    pub models: BTreeMap<String, ModelEntry>,
    pub prices: PriceTable,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let preset = |p: &str, mode| EndpointConfig {
            preset: Some(p.into()),
            descriptions: DescriptionConfig {
                mode,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut models = BTreeMap::new();
        models.insert(
            "gpt-4".to_string(),
            ModelEntry {
                config: ModelConfig::openai("gpt-4-0125-preview"),
                script_file: None,
            },
        );
        Self {
            paths: PathsConfig::default(),
            sampling: SamplingConfig::default(),
            templates: TemplatesConfig::default(),
            endpoints: [
                ("wikidata".to_string(), preset("wikidata", DescriptionMode::Wikipedia)),
                ("caligraph".to_string(), preset("caligraph", DescriptionMode::Rdf)),
            ]
            .into(),
            models,
            prices: PriceTable::new(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let text = interpolate(text, |k| std::env::var(k).ok())?;
        let mut config: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: PathBuf::new(),
            message: e.to_string(),
        })?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.resolve_path(&self.paths.data_dir)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.resolve_path(&self.paths.cache_dir)
    }

    pub fn static_dir(&self) -> Option<PathBuf> {
        self.paths.static_dir.as_deref().map(|p| self.resolve_path(p))
    }

    pub fn datasets_dir(&self, kg: &str) -> PathBuf {
        self.data_dir().join("datasets").join(kg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.sampling.k_examples == 0 {
            return Err(ConfigError::Invalid("sampling.k_examples must be at least 1".into()));
        }
        for (name, e) in &self.endpoints {
            e.resolve(name)?;
            if e.descriptions.mode == DescriptionMode::RdfLlm {
                let model = e.descriptions.model.as_deref().ok_or_else(|| {
                    ConfigError::Invalid(format!("endpoint {name}: descriptions.mode = \"rdf_llm\" needs model"))
                })?;
                self.model(model)?;
            }
            if e.descriptions.mode == DescriptionMode::Static && e.descriptions.file.is_none() {
                return Err(ConfigError::Invalid(format!(
                    "endpoint {name}: descriptions.mode = \"static\" needs file"
                )));
            }
        }
        for name in self.models.keys() {
            self.model(name)?.validate()?;
        }
        self.templates()?;
        Ok(())
    }

    fn unknown(&self, kind: &'static str, name: &str, known: impl Iterator<Item = String>) -> ConfigError {
        ConfigError::Unknown {
            kind,
            name: name.into(),
            known: known.collect::<Vec<_>>().join(", "),
        }
    }

    pub fn endpoint(&self, name: &str) -> Result<(KgEndpoint, &EndpointConfig), ConfigError> {
        let cfg = self
            .endpoints
            .get(name)
            .ok_or_else(|| self.unknown("endpoint", name, self.endpoints.keys().cloned()))?;
        Ok((cfg.resolve(name)?, cfg))
    }

    /// The model's gateway settings, with any script file loaded.
    pub fn model(&self, name: &str) -> Result<ModelConfig, ConfigError> {
        let entry = self
            .models
            .get(name)
            .ok_or_else(|| self.unknown("model", name, self.models.keys().cloned()))?;
        let mut config = entry.config.clone();
        if let Some(file) = &entry.script_file {
            let path = self.resolve_path(file);
            let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Io {
                path: path.clone(),
                source,
            })?;
            config.script = Some(MockScript::from_json(&text).map_err(|e| ConfigError::Parse {
                path,
                message: e.to_string(),
            })?);
        }
        Ok(config)
    }

    pub fn templates(&self) -> Result<CotTemplates, ConfigError> {
        let builtin = CotTemplates::builtin();
        let load = |p: &Option<PathBuf>, fallback: PromptTemplate| match p {
            Some(p) => PromptTemplate::load(&self.resolve_path(p)),
            None => Ok(fallback),
        };
        Ok(CotTemplates::new(
            load(&self.templates.rationale, builtin.rationale.clone())?,
            load(&self.templates.answer, builtin.answer.clone())?,
        )?)
    }

    pub fn open_kg(&self, name: &str) -> Result<Box<dyn KnowledgeGraph>, ConfigError> {
        let (endpoint, cfg) = self.endpoint(name)?;
        Ok(match (cfg.kind, &cfg.file) {
            (EndpointKind::File, Some(file)) => Box::new(MemoryGraph::from_file(endpoint, &self.resolve_path(file))?),
            _ => Box::new(SparqlClient::new(endpoint)?),
        })
    }

    fn read_json_map(&self, file: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
        let path = self.resolve_path(file);
        let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Io {
            path: path.clone(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path,
            message: e.to_string(),
        })
    }

    /// The description source configured for an endpoint.
    pub fn describer<'a>(
        &self,
        name: &str,
        kg: &'a dyn KnowledgeGraph,
        gateway: &'a LlmGateway,
    ) -> Result<Box<dyn DescriptionSource + 'a>, ConfigError> {
        let (_, cfg) = self.endpoint(name)?;
        let d = &cfg.descriptions;
        let cache = Some(self.cache_dir());
        Ok(match d.mode {
            DescriptionMode::Static => {
                let file = d.file.as_deref().expect("validated");
                Box::new(StaticDescriptions(self.read_json_map(file)?))
            }
            DescriptionMode::Rdf => Box::new(RdfSource {
                limit: self.sampling.describe_limit,
                ..RdfSource::tsv_only(kg)
            }),
            DescriptionMode::RdfLlm => {
                let model = self.model(d.model.as_deref().expect("validated"))?;
                Box::new(RdfSource {
                    limit: self.sampling.describe_limit,
                    ..RdfSource::with_llm(kg, gateway, model)
                })
            }
            DescriptionMode::Wikipedia => {
                let client = match &d.wikipedia_base_url {
                    Some(url) => WikipediaClient::with_base_url(url, cache),
                    None => WikipediaClient::new(cache),
                };
                match &d.file {
                    Some(file) => Box::new(WikipediaSource {
                        resolver: StaticSitelinks(self.read_json_map(file)?),
                        client,
                    }),
                    None => Box::new(WikipediaSource {
                        resolver: WikidataSitelinks::new(kg),
                        client,
                    }),
                }
            }
        })
    }
}
