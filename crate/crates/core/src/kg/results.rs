use serde::Deserialize;
use std::collections::BTreeMap;

use super::{KgError, RdfTerm, Row, Triple, TripleSet};

#[derive(Deserialize)]
struct JsonResults {
    head: JsonHead,
    results: Option<JsonBindings>,
    boolean: Option<bool>,
}

#[derive(Deserialize)]
struct JsonHead {
    #[serde(default)]
    vars: Vec<String>,
}

#[derive(Deserialize)]
struct JsonBindings {
    bindings: Vec<BTreeMap<String, JsonTerm>>,
}

#[derive(Deserialize)]
struct JsonTerm {
    #[serde(rename = "type")]
    kind: String,
    value: String,
    #[serde(rename = "xml:lang")]
    lang: Option<String>,
    datatype: Option<String>,
}

impl TryFrom<JsonTerm> for RdfTerm {
    type Error = KgError;

    fn try_from(t: JsonTerm) -> Result<Self, KgError> {
        match t.kind.as_str() {
            "uri" => RdfTerm::iri(t.value),
            "bnode" => Ok(RdfTerm::blank(t.value)),
            "literal" | "typed-literal" => match (t.lang, t.datatype) {
                (Some(lang), _) => Ok(RdfTerm::lang_literal(t.value, lang)),
                (None, Some(dt)) => RdfTerm::typed_literal(t.value, dt),
                (None, None) => Ok(RdfTerm::literal(t.value)),
            },
            other => Err(KgError::MalformedResponse(format!("unknown binding type {other:?}"))),
        }
    }
}

/// Parses an `application/sparql-results+json` document into rows.
///
/// Variables left unbound in a solution are absent from its row.
pub fn parse_select_json(body: &[u8]) -> Result<Vec<Row>, KgError> {
    let doc: JsonResults =
        serde_json::from_slice(body).map_err(|e| KgError::MalformedResponse(format!("SPARQL JSON: {e}")))?;
    if doc.boolean.is_some() {
        return Err(KgError::MalformedResponse("expected SELECT results, got ASK".into()));
    }
    let _ = doc.head.vars;
    let bindings = doc
        .results
        .ok_or_else(|| KgError::MalformedResponse("missing results.bindings".into()))?
        .bindings;
    bindings
        .into_iter()
        .map(|b| {
            b.into_iter()
                .map(|(var, term)| Ok((var, RdfTerm::try_from(term)?)))
                .collect::<Result<Row, KgError>>()
        })
        .collect()
}

/// Parses N-Triples or Turtle, chosen from the response media type.
/// Unknown or missing media types are tried as Turtle, which is a superset of N-Triples.
pub fn parse_triples(body: &[u8], content_type: Option<&str>) -> Result<TripleSet, KgError> {
    let media = content_type
        .and_then(|c| c.split(';').next())
        .map(|c| c.trim().to_ascii_lowercase())
        .unwrap_or_default();
    let mut out = Vec::new();
    if media == "application/n-triples" {
        for t in oxttl::NTriplesParser::new().for_slice(body) {
            let t = t.map_err(|e| KgError::MalformedResponse(format!("N-Triples: {e}")))?;
            out.push(Triple::try_from(t)?);
        }
    } else {
        for t in oxttl::TurtleParser::new().for_slice(body) {
            let t = t.map_err(|e| KgError::MalformedResponse(format!("Turtle: {e}")))?;
            out.push(Triple::try_from(t)?);
        }
    }
    Ok(out)
}
