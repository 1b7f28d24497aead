use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    check_limit, choose_label, parse_select_json, parse_triples, validate_iri, Described, Extension, KgEndpoint,
    KgError, KnowledgeGraph, Label, RdfTerm, Row, Triple, TripleSet,
};
use crate::sync::{Backoff, Semaphore};

const SELECT_ACCEPT: &str = "application/sparql-results+json";
const GRAPH_ACCEPT: &str = "application/n-triples, text/turtle;q=0.9";
const VALUES_CHUNK: usize = 200;

/// One SPARQL protocol request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparqlRequest {
    pub url: String,
    pub query: String,
    pub accept: &'static str,
}

#[derive(Debug, Clone)]
pub struct HttpReply {
    pub status: u16,
    pub content_type: Option<String>,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum TransportError {
    #[error("timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
}

/// Moves a SPARQL request over the wire. Swappable so the client can be
/// driven by an in-process engine in tests.
pub trait Transport: Send + Sync {
    fn execute(&self, request: &SparqlRequest) -> Result<HttpReply, TransportError>;
}

/// SPARQL 1.1 protocol over HTTP(S): form-encoded POST.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(endpoint: &KgEndpoint) -> Result<Self, KgError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(endpoint.request_timeout)
            .user_agent(concat!("kgaudit/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| KgError::InvalidEndpoint(e.to_string()))?;
        Ok(Self { client })
    }
}

impl Transport for HttpTransport {
    fn execute(&self, request: &SparqlRequest) -> Result<HttpReply, TransportError> {
        let response = self
            .client
            .post(&request.url)
            .header(reqwest::header::ACCEPT, request.accept)
            .form(&[("query", request.query.as_str())])
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    TransportError::Timeout
                } else {
                    TransportError::Connect(e.to_string())
                }
            })?;
        let status = response.status().as_u16();
        let content_type = response
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let body = response
            .bytes()
            .map_err(|e| if e.is_timeout() { TransportError::Timeout } else { TransportError::Connect(e.to_string()) })?
            .to_vec();
        Ok(HttpReply {
            status,
            content_type,
            body,
        })
    }
}

/// How [`SparqlClient::extension`] computes ext(c).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtensionStrategy {
    /// Property paths when the endpoint supports them, otherwise level by level.
    #[default]
    Auto,
    /// One `instanceOf/subClassOf*` query. Computes the unbounded closure.
    PropertyPath,
    /// One query per subclass level, honoring `max_depth`.
    Iterative,
}

/// Client for a remote SPARQL endpoint.
pub struct SparqlClient {
    endpoint: KgEndpoint,
    transport: Arc<dyn Transport>,
    gate: Semaphore,
    backoff: Backoff,
    strategy: ExtensionStrategy,
}

impl SparqlClient {
    pub fn new(endpoint: KgEndpoint) -> Result<Self, KgError> {
        let transport = Arc::new(HttpTransport::new(&endpoint)?);
        Self::with_transport(endpoint, transport)
    }

    pub fn with_transport(endpoint: KgEndpoint, transport: Arc<dyn Transport>) -> Result<Self, KgError> {
        endpoint.validate()?;
        Ok(Self {
            gate: Semaphore::new(endpoint.max_concurrent_requests),
            endpoint,
            transport,
            backoff: Backoff::default(),
            strategy: ExtensionStrategy::Auto,
        })
    }

    pub fn with_backoff(mut self, backoff: Backoff) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn with_strategy(mut self, strategy: ExtensionStrategy) -> Self {
        self.strategy = strategy;
        self
    }

    /// Sends a request, retrying transport failures, 429 and 5xx with backoff.
    fn send(&self, query: String, accept: &'static str) -> Result<HttpReply, KgError> {
        let request = SparqlRequest {
            url: self.endpoint.sparql_url.clone(),
            query,
            accept,
        };
        debug!("{}: {}", self.endpoint.name, request.query);
        let mut attempt = 0;
        loop {
            let outcome = {
                let _permit = self.gate.acquire();
                self.transport.execute(&request)
            };
            let reason = match outcome {
                Ok(reply) if (200..300).contains(&reply.status) => return Ok(reply),
                Ok(reply) if reply.status == 429 || reply.status >= 500 => format!("HTTP {}", reply.status),
                Ok(reply) => {
                    return Err(KgError::QueryRejected {
                        status: reply.status,
                        message: String::from_utf8_lossy(&reply.body).chars().take(500).collect(),
                    })
                }
                Err(e) => e.to_string(),
            };
            if attempt >= self.endpoint.max_retries {
                return Err(KgError::EndpointUnreachable {
                    endpoint: self.endpoint.name.clone(),
                    attempts: attempt + 1,
                    reason,
                });
            }
            let delay = self.backoff.delay(attempt);
            warn!("{}: {reason}, retrying in {delay:?}", self.endpoint.name);
            std::thread::sleep(delay);
            attempt += 1;
        }
    }

    pub fn run_select(&self, query: &str) -> Result<Vec<Row>, KgError> {
        let reply = self.send(query.to_string(), SELECT_ACCEPT)?;
        parse_select_json(&reply.body)
    }

    fn iri_column(rows: Vec<Row>, var: &str) -> BTreeSet<String> {
        rows.into_iter()
            .filter_map(|mut r| r.remove(var))
            .filter(RdfTerm::is_iri)
            .map(|t| t.value)
            .collect()
    }

    fn values_clause(var: &str, iris: &[&String]) -> String {
        let items: Vec<String> = iris.iter().map(|i| format!("<{i}>")).collect();
        format!("VALUES ?{var} {{ {} }}", items.join(" "))
    }

    fn extension_by_path(&self, class: &str) -> Result<Extension, KgError> {
        let q = format!(
            "SELECT DISTINCT ?e WHERE {{ ?e <{}>/<{}>* <{class}> . FILTER(isIRI(?e)) }}",
            self.endpoint.instance_of_property, self.endpoint.subclass_of_property
        );
        Ok(Extension {
            members: Self::iri_column(self.run_select(&q)?, "e"),
            depth_exceeded: false,
        })
    }

    fn extension_iterative(&self, class: &str, max_depth: usize) -> Result<Extension, KgError> {
        let mut visited: HashSet<String> = HashSet::from([class.to_string()]);
        let mut classes = vec![class.to_string()];
        let mut frontier = vec![class.to_string()];
        let mut depth = 0;
        let mut depth_exceeded = false;
        while !frontier.is_empty() {
            let mut next = BTreeSet::new();
            for chunk in frontier.iter().collect::<Vec<_>>().chunks(VALUES_CHUNK) {
                let q = format!(
                    "SELECT DISTINCT ?sub WHERE {{ {} ?sub <{}> ?sup . }}",
                    Self::values_clause("sup", chunk),
                    self.endpoint.subclass_of_property
                );
                next.extend(Self::iri_column(self.run_select(&q)?, "sub"));
            }
            next.retain(|c| !visited.contains(c));
            if next.is_empty() {
                break;
            }
            if depth == max_depth {
                depth_exceeded = true;
                break;
            }
            visited.extend(next.iter().cloned());
            classes.extend(next.iter().cloned());
            frontier = next.into_iter().collect();
            depth += 1;
        }
        let mut members = BTreeSet::new();
        for chunk in classes.iter().collect::<Vec<_>>().chunks(VALUES_CHUNK) {
            let q = format!(
                "SELECT DISTINCT ?e WHERE {{ {} ?e <{}> ?k . FILTER(isIRI(?e)) }}",
                Self::values_clause("k", chunk),
                self.endpoint.instance_of_property
            );
            members.extend(Self::iri_column(self.run_select(&q)?, "e"));
        }
        Ok(Extension {
            members,
            depth_exceeded,
        })
    }
}

impl KnowledgeGraph for SparqlClient {
    fn name(&self) -> &str {
        &self.endpoint.name
    }

    fn endpoint(&self) -> &KgEndpoint {
        &self.endpoint
    }

    fn label(&self, entity: &str) -> Result<Label, KgError> {
        validate_iri(entity)?;
        let q = format!(
            "SELECT ?label WHERE {{ <{entity}> <{}> ?label . FILTER(isLiteral(?label)) }}",
            self.endpoint.label_property
        );
        let candidates: Vec<RdfTerm> = self.run_select(&q)?.into_iter().filter_map(|mut r| r.remove("label")).collect();
        Ok(choose_label(entity, &candidates, &self.endpoint.default_language))
    }

    fn labels(&self, entities: &[&str]) -> Result<std::collections::BTreeMap<String, Label>, KgError> {
        let mut candidates: std::collections::BTreeMap<String, Vec<RdfTerm>> = Default::default();
        let owned: Vec<String> = entities.iter().map(|e| e.to_string()).collect();
        for e in &owned {
            validate_iri(e)?;
        }
        for chunk in owned.iter().collect::<Vec<_>>().chunks(VALUES_CHUNK) {
            let q = format!(
                "SELECT ?s ?label WHERE {{ {} ?s <{}> ?label . FILTER(isLiteral(?label)) }}",
                Self::values_clause("s", chunk),
                self.endpoint.label_property
            );
            for mut row in self.run_select(&q)? {
                if let (Some(s), Some(l)) = (row.remove("s"), row.remove("label")) {
                    candidates.entry(s.value).or_default().push(l);
                }
            }
        }
        Ok(candidates
            .into_iter()
            .map(|(e, c)| {
                let label = choose_label(&e, &c, &self.endpoint.default_language);
                (e, label)
            })
            .collect())
    }

    fn describe(&self, entity: &str, limit: usize) -> Result<Described, KgError> {
        check_limit(limit)?;
        validate_iri(entity)?;
        let query = format!("DESCRIBE <{entity}>");
        let reply = self.send(query.clone(), GRAPH_ACCEPT)?;
        let response_sha256 = hex::encode(Sha256::digest(&reply.body));
        let mut triples = parse_triples(&reply.body, reply.content_type.as_deref())?;
        triples.truncate(limit);
        Ok(Described {
            triples,
            query,
            response_sha256,
        })
    }

    fn neighborhood(&self, entity: &str, limit: usize) -> Result<TripleSet, KgError> {
        check_limit(limit)?;
        validate_iri(entity)?;
        let q = format!(
            "SELECT DISTINCT ?s ?p ?o WHERE {{ {{ BIND(<{entity}> AS ?s) <{entity}> ?p ?o }} UNION {{ ?s ?p <{entity}> BIND(<{entity}> AS ?o) }} }} LIMIT {limit}"
        );
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for mut row in self.run_select(&q)? {
            let (Some(s), Some(p), Some(o)) = (row.remove("s"), row.remove("p"), row.remove("o")) else {
                return Err(KgError::MalformedResponse("neighborhood row missing ?s ?p ?o".into()));
            };
            let t = Triple::new(s, p, o)?;
            if seen.insert(t.clone()) {
                out.push(t);
            }
        }
        out.truncate(limit);
        Ok(out)
    }

    fn extension(&self, class: &str, max_depth: usize) -> Result<Extension, KgError> {
        validate_iri(class)?;
        match self.strategy {
            ExtensionStrategy::PropertyPath => self.extension_by_path(class),
            ExtensionStrategy::Iterative => self.extension_iterative(class, max_depth),
            ExtensionStrategy::Auto if !self.endpoint.property_paths => self.extension_iterative(class, max_depth),
            ExtensionStrategy::Auto => match self.extension_by_path(class) {
                Err(KgError::QueryRejected { status, .. }) => {
                    warn!("{}: property path query rejected ({status}), iterating", self.endpoint.name);
                    self.extension_iterative(class, max_depth)
                }
                other => other,
            },
        }
    }

    fn direct_instances(&self, class: &str) -> Result<BTreeSet<String>, KgError> {
        self.extension_iterative(class, 0).map(|e| e.members)
    }

    fn select(&self, query: &str) -> Result<Vec<Row>, KgError> {
        self.run_select(query)
    }

    fn subclass_pairs(&self, limit: usize) -> Result<Vec<(String, String)>, KgError> {
        let q = format!(
            "SELECT DISTINCT ?c ?d WHERE {{ ?c <{}> ?d . FILTER(isIRI(?c) && isIRI(?d) && ?c != ?d) }} ORDER BY ?c ?d LIMIT {limit}",
            self.endpoint.subclass_of_property
        );
        Ok(self
            .run_select(&q)?
            .into_iter()
            .filter_map(|mut r| Some((r.remove("c")?.value, r.remove("d")?.value)))
            .collect())
    }
}
