//! Knowledge graph access.
//!
//! [`KnowledgeGraph`] is the read-only surface the rest of the pipeline uses:
//! labels, DESCRIBE results, neighborhoods, class extensions and raw SELECT
//! queries. [`SparqlClient`] talks to a SPARQL 1.1 endpoint over HTTP and
//! [`MemoryGraph`] answers the same questions over an in-memory triple list
//! (fixtures, offline runs).

mod memory;
mod results;
mod sparql;
mod term;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use memory::MemoryGraph;
pub use results::{parse_select_json, parse_triples};
pub use sparql::{ExtensionStrategy, HttpReply, HttpTransport, SparqlClient, SparqlRequest, Transport, TransportError};
pub use term::{local_name, validate_iri, RdfTerm, TermKind, Triple, TripleSet};

pub const DEFAULT_MAX_DEPTH: usize = 10;
pub const DEFAULT_DESCRIBE_LIMIT: usize = 20;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("endpoint {endpoint} unreachable after {attempts} attempt(s): {reason}")]
    EndpointUnreachable {
        endpoint: String,
        attempts: u32,
        reason: String,
    },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("query rejected with HTTP {status}: {message}")]
    QueryRejected { status: u16, message: String },
    #[error("invalid IRI {0}")]
    InvalidIri(String),
    #[error("invalid term: {0}")]
    InvalidTerm(String),
    #[error("invalid endpoint configuration: {0}")]
    InvalidEndpoint(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{0} is not supported by this graph")]
    Unsupported(&'static str),
    #[error("failed to read graph: {0}")]
    Io(#[from] std::io::Error),
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

fn default_timeout() -> Duration {
    Duration::from_secs(60)
}
fn default_retries() -> u32 {
    3
}
fn default_concurrency() -> usize {
    4
}
fn default_language() -> String {
    "en".into()
}
fn yes() -> bool {
    true
}

/// Connection settings plus the vocabulary used for membership relations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgEndpoint {
    pub name: String,
    pub sparql_url: String,
    pub instance_of_property: String,
    pub subclass_of_property: String,
    pub label_property: String,
    #[serde(default = "default_language")]
    pub default_language: String,
    #[serde(default = "default_timeout", with = "duration_secs", rename = "request_timeout_secs")]
    pub request_timeout: Duration,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_concurrency")]
    pub max_concurrent_requests: usize,
    /// Whether the endpoint evaluates `subClassOf*` property paths.
    #[serde(default = "yes")]
    pub property_paths: bool,
}

impl KgEndpoint {
    pub fn wikidata() -> Self {
        Self {
            name: "wikidata".into(),
            sparql_url: "https://query.wikidata.org/sparql".into(),
            instance_of_property: "http://www.wikidata.org/prop/direct/P31".into(),
            subclass_of_property: "http://www.wikidata.org/prop/direct/P279".into(),
            label_property: "http://www.w3.org/2000/01/rdf-schema#label".into(),
            default_language: default_language(),
            request_timeout: default_timeout(),
            max_retries: default_retries(),
            max_concurrent_requests: default_concurrency(),
            property_paths: true,
        }
    }

    pub fn caligraph() -> Self {
        Self {
            name: "caligraph".into(),
            sparql_url: "http://caligraph.org/sparql".into(),
            ..Self::rdfs("caligraph", "http://caligraph.org/sparql")
        }
    }

    /// Endpoint using `rdf:type`, `rdfs:subClassOf` and `rdfs:label`.
    pub fn rdfs(name: &str, sparql_url: &str) -> Self {
        Self {
            name: name.into(),
            sparql_url: sparql_url.into(),
            instance_of_property: RDF_TYPE.into(),
            subclass_of_property: RDFS_SUBCLASS_OF.into(),
            label_property: RDFS_LABEL.into(),
            default_language: default_language(),
            request_timeout: default_timeout(),
            max_retries: default_retries(),
            max_concurrent_requests: default_concurrency(),
            property_paths: true,
        }
    }

    pub fn validate(&self) -> Result<(), KgError> {
        let props = [
            &self.instance_of_property,
            &self.subclass_of_property,
            &self.label_property,
        ];
        for p in props {
            if p.is_empty() {
                return Err(KgError::InvalidEndpoint(format!("{}: empty property IRI", self.name)));
            }
            validate_iri(p)?;
        }
        if props[0] == props[1] || props[0] == props[2] || props[1] == props[2] {
            return Err(KgError::InvalidEndpoint(format!(
                "{}: instance-of, subclass-of and label properties must be distinct",
                self.name
            )));
        }
        url::Url::parse(&self.sparql_url)
            .map_err(|e| KgError::InvalidEndpoint(format!("{}: bad sparql_url: {e}", self.name)))?;
        Ok(())
    }
}

pub const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";
pub const RDFS_SUBCLASS_OF: &str = "http://www.w3.org/2000/01/rdf-schema#subClassOf";
pub const RDFS_LABEL: &str = "http://www.w3.org/2000/01/rdf-schema#label";

/// A resolved entity label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub text: String,
    pub language: Option<String>,
    /// Set when no label triple exists and the IRI's local name was used.
    pub fallback: bool,
}

/// Picks one label among candidate literals: default language first, then
/// untagged literals, then anything else; lexicographic within a group.
pub fn choose_label(entity: &str, candidates: &[RdfTerm], default_language: &str) -> Label {
    let lang = default_language.to_ascii_lowercase();
    let rank = |t: &RdfTerm| match t.language.as_deref() {
        Some(l) if l == lang => 0,
        Some(l) if l.split('-').next() == Some(lang.as_str()) => 1,
        None => 2,
        Some(_) => 3,
    };
    candidates
        .iter()
        .filter(|t| t.is_literal())
        .min_by(|a, b| rank(a).cmp(&rank(b)).then_with(|| a.value.cmp(&b.value)))
        .map(|t| Label {
            text: t.value.clone(),
            language: t.language.clone(),
            fallback: false,
        })
        .unwrap_or_else(|| Label {
            text: local_name(entity).to_string(),
            language: None,
            fallback: true,
        })
}

/// DESCRIBE output plus what is needed to audit it later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Described {
    pub triples: TripleSet,
    pub query: String,
    /// SHA-256 of the raw response body (or of the rendered triples for in-memory graphs).
    pub response_sha256: String,
}

/// ext(c) as computed to a bounded subclass depth.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Extension {
    pub members: BTreeSet<String>,
    /// The subclass traversal still had unvisited classes at `max_depth`.
    pub depth_exceeded: bool,
}

pub type Row = BTreeMap<String, RdfTerm>;

/// Read-only access to a knowledge graph.
pub trait KnowledgeGraph: Send + Sync {
    fn name(&self) -> &str;

    fn endpoint(&self) -> &KgEndpoint;

    fn label(&self, entity: &str) -> Result<Label, KgError>;

    /// Labels for several entities. Entities without a label triple are omitted.
    fn labels(&self, entities: &[&str]) -> Result<BTreeMap<String, Label>, KgError> {
        let mut out = BTreeMap::new();
        for e in entities {
            let label = self.label(e)?;
            if !label.fallback {
                out.insert(e.to_string(), label);
            }
        }
        Ok(out)
    }

    fn describe(&self, entity: &str, limit: usize) -> Result<Described, KgError>;

    /// Triples in which `entity` is subject or object, without duplicates.
    fn neighborhood(&self, entity: &str, limit: usize) -> Result<TripleSet, KgError>;

    fn extension(&self, class: &str, max_depth: usize) -> Result<Extension, KgError>;

    /// Direct instances only (ext_0).
    fn direct_instances(&self, class: &str) -> Result<BTreeSet<String>, KgError> {
        self.extension(class, 0).map(|e| e.members)
    }

    fn select(&self, query: &str) -> Result<Vec<Row>, KgError>;

    /// Named `(class, superclass)` pairs, sorted, at most `limit`.
    fn subclass_pairs(&self, limit: usize) -> Result<Vec<(String, String)>, KgError>;
}

pub(crate) fn check_limit(limit: usize) -> Result<(), KgError> {
    if limit == 0 {
        Err(KgError::InvalidArgument("limit must be at least 1".into()))
    } else {
        Ok(())
    }
}
