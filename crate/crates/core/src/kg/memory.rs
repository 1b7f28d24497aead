use std::collections::{BTreeSet, HashSet, VecDeque};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{
    check_limit, choose_label, parse_triples, Described, Extension, KgEndpoint, KgError, KnowledgeGraph, Label,
    RdfTerm, Row, TermKind, Triple, TripleSet,
};

/// A knowledge graph held in memory as an ordered triple list.
///
/// Answers every [`KnowledgeGraph`] query except raw SPARQL `select`.
#[derive(Debug, Clone)]
pub struct MemoryGraph {
    endpoint: KgEndpoint,
    triples: Vec<Triple>,
}

impl MemoryGraph {
    pub fn new(endpoint: KgEndpoint, triples: impl IntoIterator<Item = Triple>) -> Self {
        let mut seen = HashSet::new();
        let triples = triples.into_iter().filter(|t| seen.insert(t.clone())).collect();
        Self { endpoint, triples }
    }

    /// Loads an N-Triples (`.nt`) or Turtle file.
    pub fn from_file(endpoint: KgEndpoint, path: &Path) -> Result<Self, KgError> {
        let body = std::fs::read(path)?;
        let media = match path.extension().and_then(|e| e.to_str()) {
            Some("nt") => "application/n-triples",
            _ => "text/turtle",
        };
        Ok(Self::new(endpoint, parse_triples(&body, Some(media))?))
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    fn has_property(&self, t: &Triple, iri: &str) -> bool {
        t.property.value == iri
    }

    fn subclasses_of<'a>(&'a self, class: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        let sub = self.endpoint.subclass_of_property.as_str();
        self.triples.iter().filter_map(move |t| {
            (t.property.value == sub && t.object.is_iri() && t.object.value == class && t.subject.is_iri())
                .then_some(t.subject.value.as_str())
        })
    }
}

impl KnowledgeGraph for MemoryGraph {
    fn name(&self) -> &str {
        &self.endpoint.name
    }

    fn endpoint(&self) -> &KgEndpoint {
        &self.endpoint
    }

    fn label(&self, entity: &str) -> Result<Label, KgError> {
        let subject = RdfTerm::iri(entity)?;
        let candidates: Vec<RdfTerm> = self
            .triples
            .iter()
            .filter(|t| t.subject == subject && self.has_property(t, &self.endpoint.label_property))
            .map(|t| t.object.clone())
            .collect();
        Ok(choose_label(entity, &candidates, &self.endpoint.default_language))
    }

    fn describe(&self, entity: &str, limit: usize) -> Result<Described, KgError> {
        check_limit(limit)?;
        let subject = RdfTerm::iri(entity)?;
        let triples: TripleSet = self
            .triples
            .iter()
            .filter(|t| t.subject == subject)
            .take(limit)
            .cloned()
            .collect();
        let mut hasher = Sha256::new();
        for t in &triples {
            hasher.update(t.to_string().as_bytes());
            hasher.update(b"\n");
        }
        Ok(Described {
            triples,
            query: format!("DESCRIBE <{entity}>"),
            response_sha256: hex::encode(hasher.finalize()),
        })
    }

    fn neighborhood(&self, entity: &str, limit: usize) -> Result<TripleSet, KgError> {
        check_limit(limit)?;
        let term = RdfTerm::iri(entity)?;
        Ok(self
            .triples
            .iter()
            .filter(|t| t.mentions(&term))
            .take(limit)
            .cloned()
            .collect())
    }

    fn extension(&self, class: &str, max_depth: usize) -> Result<Extension, KgError> {
        RdfTerm::iri(class)?;
        // breadth-first over subClassOf, visited set guards against cycles
        let mut visited: BTreeSet<&str> = BTreeSet::from([class]);
        let mut queue = VecDeque::from([(class, 0usize)]);
        let mut depth_exceeded = false;
        while let Some((c, depth)) = queue.pop_front() {
            for sub in self.subclasses_of(c) {
                if visited.contains(sub) {
                    continue;
                }
                if depth == max_depth {
                    depth_exceeded = true;
                    continue;
                }
                visited.insert(sub);
                queue.push_back((sub, depth + 1));
            }
        }
        let inst = self.endpoint.instance_of_property.as_str();
        let members = self
            .triples
            .iter()
            .filter(|t| {
                t.property.value == inst
                    && t.object.is_iri()
                    && visited.contains(t.object.value.as_str())
                    && t.subject.kind == TermKind::Iri
            })
            .map(|t| t.subject.value.clone())
            .collect();
        Ok(Extension {
            members,
            depth_exceeded,
        })
    }

    fn select(&self, _query: &str) -> Result<Vec<Row>, KgError> {
        Err(KgError::Unsupported("SPARQL SELECT"))
    }

    fn subclass_pairs(&self, limit: usize) -> Result<Vec<(String, String)>, KgError> {
        let sub = self.endpoint.subclass_of_property.as_str();
        let pairs: BTreeSet<(String, String)> = self
            .triples
            .iter()
            .filter(|t| t.property.value == sub && t.subject.is_iri() && t.object.is_iri())
            .filter(|t| t.subject != t.object)
            .map(|t| (t.subject.value.clone(), t.object.value.clone()))
            .collect();
        Ok(pairs.into_iter().take(limit).collect())
    }
}
