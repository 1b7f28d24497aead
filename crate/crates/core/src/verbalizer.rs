//! Natural-language descriptions of classes and entities.
//!
//! Two routes: the lead summary of the entity's Wikipedia page, or the
//! entity's DESCRIBE triples serialized as TSV and optionally rewritten into
//! prose by a language model.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{PromptTemplate, Substitution};
use crate::fsutil::{sha256_hex, write_json_atomic};
use crate::gateway::{GatewayError, LlmGateway, ModelConfig};
use crate::kg::{KgError, KnowledgeGraph, RdfTerm, TermKind, Triple, DEFAULT_DESCRIBE_LIMIT};
use crate::sync::Semaphore;

pub const VERBALIZE_PROMPT_VERSION: &str = "verbalize-v1";
const VERBALIZE_PROMPT: &str = "Describe the entity {label} in fluent prose using only the following facts, given as tab-separated subject, property, object lines:\n\n{facts}\n\nWrite a single paragraph.";
const WIKIPEDIA_REST: &str = "https://en.wikipedia.org/api/rest_v1";

#[derive(Debug, Error)]
pub enum VerbalizerError {
    #[error("{0} has no Wikipedia sitelink")]
    NoSitelink(String),
    #[error("fetching Wikipedia page {title:?} failed: {reason}")]
    PageFetchFailed { title: String, reason: String },
    #[error("nothing to verbalize for {0}")]
    EmptyInput(String),
    #[error("no description available for {0}")]
    NotFound(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Kg(#[from] KgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerbalizationSource {
    WikipediaSummary,
    TsvTriples,
    LlmRewriteOfTriples,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerbalizationFlag {
    /// The text is only the subject's label.
    LowInformation,
    /// The source produced no text.
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verbalization {
    pub subject_iri: String,
    pub text: String,
    pub source: VerbalizationSource,
    /// Page URL, or `sha256:<digest>` of the verbalized input plus prompt version.
    pub provenance: String,
    #[serde(default)]
    pub flags: Vec<VerbalizationFlag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieved_at: Option<DateTime<Utc>>,
}

impl Verbalization {
    pub fn has_flag(&self, flag: VerbalizationFlag) -> bool {
        self.flags.contains(&flag)
    }

    fn finish(mut self, label: &str) -> Self {
        if self.text.trim().is_empty() {
            self.flags.push(VerbalizationFlag::Empty);
        } else if is_low_information(&self.text, label) {
            self.flags.push(VerbalizationFlag::LowInformation);
        }
        self
    }
}

/// Collapses runs of whitespace and trims.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// True when the text, ignoring case, whitespace and trailing punctuation, is the label.
pub fn is_low_information(text: &str, label: &str) -> bool {
    let norm = |s: &str| {
        normalize_whitespace(s)
            .trim_end_matches(|c: char| c.is_ascii_punctuation())
            .to_lowercase()
    };
    let t = norm(text);
    !t.is_empty() && t == norm(label)
}

fn escape_cell(cell: &str) -> String {
    let mut out = String::with_capacity(cell.len());
    for c in cell.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            other => out.push(other),
        }
    }
    out
}

/// Renders triples as `subject\tproperty\tobject` lines in input order. Each
/// cell is the term's label when `labels` knows it, else the IRI, blank node
/// id or literal lexical form. Tabs, newlines and backslashes are escaped.
pub fn serialize_tsv(triples: &[Triple], labels: &dyn Fn(&RdfTerm) -> Option<String>) -> String {
    let cell = |t: &RdfTerm| {
        let text = match t.kind {
            TermKind::Literal => t.value.clone(),
            TermKind::Blank => format!("_:{}", t.value),
            TermKind::Iri => labels(t).unwrap_or_else(|| t.value.clone()),
        };
        escape_cell(&text)
    };
    triples
        .iter()
        .map(|t| format!("{}\t{}\t{}", cell(&t.subject), cell(&t.property), cell(&t.object)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Label lookup for every IRI mentioned in `triples`.
pub fn triple_labels(kg: &dyn KnowledgeGraph, triples: &[Triple]) -> Result<HashMap<String, String>, KgError> {
    let iris: BTreeSet<&str> = triples
        .iter()
        .flat_map(|t| [&t.subject, &t.property, &t.object])
        .filter(|t| t.is_iri())
        .map(|t| t.value.as_str())
        .collect();
    let iris: Vec<&str> = iris.into_iter().collect();
    Ok(kg.labels(&iris)?.into_iter().map(|(k, v)| (k, v.text)).collect())
}

pub fn verbalization_template() -> PromptTemplate {
    PromptTemplate::new("rdf_verbalization", VERBALIZE_PROMPT_VERSION, VERBALIZE_PROMPT, ["label", "facts"])
        .expect("bundled verbalization prompt is valid")
}

/// Rewrites TSV triples about `subject_label` into prose with a language model.
pub fn verbalize_rdf(
    gateway: &LlmGateway,
    config: &ModelConfig,
    tsv_text: &str,
    subject_iri: &str,
    subject_label: &str,
) -> Result<Verbalization, VerbalizerError> {
    if tsv_text.trim().is_empty() {
        return Err(VerbalizerError::EmptyInput(subject_iri.to_string()));
    }
    let prompt = verbalization_template()
        .instantiate(&Substitution::new().bind("label", subject_label).bind("facts", tsv_text))
        .expect("bindings match the template tokens");
    let completion = gateway.complete(config, &prompt)?;
    Ok(Verbalization {
        subject_iri: subject_iri.to_string(),
        text: normalize_whitespace(&completion.text),
        source: VerbalizationSource::LlmRewriteOfTriples,
        provenance: format!("sha256:{};prompt={VERBALIZE_PROMPT_VERSION}", sha256_hex(tsv_text)),
        flags: vec![],
        retrieved_at: None,
    }
    .finish(subject_label))
}

/// Maps knowledge graph entities to English Wikipedia page titles.
pub trait SitelinkResolver: Send + Sync {
    fn wikipedia_title(&self, entity: &str) -> Result<Option<String>, VerbalizerError>;
}

/// Fixed entity → title table.
#[derive(Debug, Clone, Default)]
pub struct StaticSitelinks(pub BTreeMap<String, String>);

impl SitelinkResolver for StaticSitelinks {
    fn wikipedia_title(&self, entity: &str) -> Result<Option<String>, VerbalizerError> {
        Ok(self.0.get(entity).cloned())
    }
}

/// Resolves sitelinks with `schema:about` queries against a Wikidata-style endpoint.
pub struct WikidataSitelinks<'a> {
    kg: &'a dyn KnowledgeGraph,
    site: String,
}

impl<'a> WikidataSitelinks<'a> {
    pub fn new(kg: &'a dyn KnowledgeGraph) -> Self {
        Self {
            kg,
            site: "https://en.wikipedia.org/".into(),
        }
    }
}

impl SitelinkResolver for WikidataSitelinks<'_> {
    fn wikipedia_title(&self, entity: &str) -> Result<Option<String>, VerbalizerError> {
        let q = format!(
            "SELECT ?article WHERE {{ ?article <http://schema.org/about> <{entity}> ; <http://schema.org/isPartOf> <{}> . }} LIMIT 1",
            self.site
        );
        let rows = self.kg.select(&q)?;
        Ok(rows
            .into_iter()
            .filter_map(|mut r| r.remove("article"))
            .find_map(|a| title_from_article_url(&a.value)))
    }
}

/// `https://en.wikipedia.org/wiki/Douglas_Adams` → `Douglas_Adams`.
pub fn title_from_article_url(article: &str) -> Option<String> {
    let url = url::Url::parse(article).ok()?;
    let segment = url.path_segments()?.next_back()?.to_string();
    let decoded = percent_decode(&segment);
    (!decoded.is_empty()).then_some(decoded)
}

fn percent_decode(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' && i + 2 < bytes.len() {
            if let Some(b) = s.get(i + 1..i + 3).and_then(|h| u8::from_str_radix(h, 16).ok()) {
                out.push(b);
                i += 3;
                continue;
            }
        }
        out.push(bytes[i]);
        i += 1;
    }
    String::from_utf8_lossy(&out).into_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageSummary {
    pub title: String,
    pub extract: String,
    pub url: String,
    pub fetched_at: DateTime<Utc>,
}

/// Fetches lead summaries from the Wikipedia REST API with an optional disk cache.
pub struct WikipediaClient {
    base_url: String,
    cache_dir: Option<PathBuf>,
    client: reqwest::blocking::Client,
    gate: Semaphore,
}

impl WikipediaClient {
    pub fn new(cache_dir: Option<PathBuf>) -> Self {
        Self::with_base_url(WIKIPEDIA_REST, cache_dir)
    }

    pub fn with_base_url(base_url: &str, cache_dir: Option<PathBuf>) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            cache_dir,
            client: reqwest::blocking::Client::builder()
                .user_agent(concat!("kgaudit/", env!("CARGO_PKG_VERSION")))
                .timeout(std::time::Duration::from_secs(30))
                .build()
                .expect("TLS backend available"),
            gate: Semaphore::new(4),
        }
    }

    fn cache_path(&self, title: &str) -> Option<PathBuf> {
        self.cache_dir
            .as_ref()
            .map(|d| d.join("wikipedia").join(format!("{}.json", sha256_hex(title))))
    }

    pub fn summary(&self, title: &str) -> Result<PageSummary, VerbalizerError> {
        if let Some(path) = self.cache_path(title) {
            if let Ok(bytes) = std::fs::read(&path) {
                if let Ok(hit) = serde_json::from_slice::<PageSummary>(&bytes) {
                    return Ok(hit);
                }
            }
        }
        let fail = |reason: String| VerbalizerError::PageFetchFailed {
            title: title.to_string(),
            reason,
        };
        let mut url = url::Url::parse(&self.base_url).map_err(|e| fail(e.to_string()))?;
        url.path_segments_mut()
            .map_err(|_| fail("base URL cannot take a path".into()))?
            .extend(["page", "summary", &title.replace(' ', "_")]);
        let response = {
            let _permit = self.gate.acquire();
            self.client.get(url.clone()).send().map_err(|e| fail(e.to_string()))?
        };
        if !response.status().is_success() {
            return Err(fail(format!("HTTP {}", response.status())));
        }
        let body: serde_json::Value = response.json().map_err(|e| fail(e.to_string()))?;
        let extract = body
            .get("extract")
            .and_then(|v| v.as_str())
            .ok_or_else(|| fail("response has no extract".into()))?;
        let page_url = body
            .pointer("/content_urls/desktop/page")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .unwrap_or_else(|| url.to_string());
        let summary = PageSummary {
            title: title.to_string(),
            extract: normalize_whitespace(extract),
            url: page_url,
            fetched_at: Utc::now(),
        };
        if let Some(path) = self.cache_path(title) {
            if let Err(e) = write_json_atomic(&path, &summary) {
                log::warn!("could not cache {title}: {e}");
            }
        }
        Ok(summary)
    }
}

/// Lead summary of the entity's Wikipedia page.
pub fn wikipedia_summary(
    entity: &str,
    label: &str,
    resolver: &dyn SitelinkResolver,
    client: &WikipediaClient,
) -> Result<Verbalization, VerbalizerError> {
    let title = resolver
        .wikipedia_title(entity)?
        .ok_or_else(|| VerbalizerError::NoSitelink(entity.to_string()))?;
    let page = client.summary(&title)?;
    Ok(Verbalization {
        subject_iri: entity.to_string(),
        text: page.extract,
        source: VerbalizationSource::WikipediaSummary,
        provenance: page.url,
        flags: vec![],
        retrieved_at: Some(page.fetched_at),
    }
    .finish(label))
}

/// Where class definitions and entity descriptions come from.
pub trait DescriptionSource: Send + Sync {
    fn describe(&self, iri: &str, label: &str) -> Result<Verbalization, VerbalizerError>;
}

pub struct WikipediaSource<R> {
    pub resolver: R,
    pub client: WikipediaClient,
}

impl<R: SitelinkResolver> DescriptionSource for WikipediaSource<R> {
    fn describe(&self, iri: &str, label: &str) -> Result<Verbalization, VerbalizerError> {
        wikipedia_summary(iri, label, &self.resolver, &self.client)
    }
}

/// Describes a subject from its DESCRIBE triples: as raw TSV, or rewritten by
/// a language model when one is configured.
pub struct RdfSource<'a> {
    pub kg: &'a dyn KnowledgeGraph,
    pub rewrite: Option<(&'a LlmGateway, ModelConfig)>,
    pub limit: usize,
}

impl<'a> RdfSource<'a> {
    pub fn tsv_only(kg: &'a dyn KnowledgeGraph) -> Self {
        Self {
            kg,
            rewrite: None,
            limit: DEFAULT_DESCRIBE_LIMIT,
        }
    }

    pub fn with_llm(kg: &'a dyn KnowledgeGraph, gateway: &'a LlmGateway, config: ModelConfig) -> Self {
        Self {
            kg,
            rewrite: Some((gateway, config)),
            limit: DEFAULT_DESCRIBE_LIMIT,
        }
    }
}

impl DescriptionSource for RdfSource<'_> {
    fn describe(&self, iri: &str, label: &str) -> Result<Verbalization, VerbalizerError> {
        let described = self.kg.describe(iri, self.limit)?;
        if described.triples.is_empty() {
            return Err(VerbalizerError::EmptyInput(iri.to_string()));
        }
        let labels = triple_labels(self.kg, &described.triples)?;
        let tsv = serialize_tsv(&described.triples, &|t| labels.get(&t.value).cloned());
        match &self.rewrite {
            Some((gateway, config)) => verbalize_rdf(gateway, config, &tsv, iri, label),
            None => Ok(Verbalization {
                subject_iri: iri.to_string(),
                provenance: format!("sha256:{};response={}", sha256_hex(&tsv), described.response_sha256),
                text: tsv,
                source: VerbalizationSource::TsvTriples,
                flags: vec![],
                retrieved_at: None,
            }
            .finish(label)),
        }
    }
}

/// Hand-written descriptions keyed by IRI.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StaticDescriptions(pub BTreeMap<String, String>);

impl DescriptionSource for StaticDescriptions {
    fn describe(&self, iri: &str, label: &str) -> Result<Verbalization, VerbalizerError> {
        let text = self.0.get(iri).ok_or_else(|| VerbalizerError::NotFound(iri.to_string()))?;
        Ok(Verbalization {
            subject_iri: iri.to_string(),
            text: normalize_whitespace(text),
            source: VerbalizationSource::Manual,
            provenance: format!("manual:sha256:{}", sha256_hex(text)),
            flags: vec![],
            retrieved_at: None,
        }
        .finish(label))
    }
}
