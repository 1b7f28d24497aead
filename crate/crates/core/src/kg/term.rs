use std::fmt;

use serde::{Deserialize, Serialize};

use super::KgError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Iri,
    Blank,
    Literal,
}

/// An RDF term: IRI, blank node or literal.
///
/// Constructed through [`RdfTerm::iri`], [`RdfTerm::blank`] and the literal
/// constructors so that the kind/datatype/language invariants always hold.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RdfTerm {
    pub kind: TermKind,
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub datatype: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
}

impl RdfTerm {
    pub fn iri(value: impl Into<String>) -> Result<Self, KgError> {
        let value = value.into();
        validate_iri(&value)?;
        Ok(Self {
            kind: TermKind::Iri,
            value,
            datatype: None,
            language: None,
        })
    }

    pub fn blank(id: impl Into<String>) -> Self {
        Self {
            kind: TermKind::Blank,
            value: id.into(),
            datatype: None,
            language: None,
        }
    }

    pub fn literal(value: impl Into<String>) -> Self {
        Self {
            kind: TermKind::Literal,
            value: value.into(),
            datatype: None,
            language: None,
        }
    }

    pub fn lang_literal(value: impl Into<String>, language: impl Into<String>) -> Self {
        Self {
            kind: TermKind::Literal,
            value: value.into(),
            datatype: None,
            language: Some(language.into().to_ascii_lowercase()),
        }
    }

    pub fn typed_literal(value: impl Into<String>, datatype: impl Into<String>) -> Result<Self, KgError> {
        let datatype = datatype.into();
        validate_iri(&datatype)?;
        // xsd:string is the implicit datatype of simple literals
        let datatype = (datatype != XSD_STRING).then_some(datatype);
        Ok(Self {
            kind: TermKind::Literal,
            value: value.into(),
            datatype,
            language: None,
        })
    }

    pub fn is_iri(&self) -> bool {
        self.kind == TermKind::Iri
    }

    pub fn is_literal(&self) -> bool {
        self.kind == TermKind::Literal
    }

    /// Checks the invariants of a deserialized term.
    pub fn validate(&self) -> Result<(), KgError> {
        match self.kind {
            TermKind::Iri => validate_iri(&self.value)?,
            TermKind::Blank => {}
            TermKind::Literal => {
                if self.datatype.is_some() && self.language.is_some() {
                    return Err(KgError::InvalidTerm(format!(
                        "literal {:?} has both a datatype and a language tag",
                        self.value
                    )));
                }
            }
        }
        if self.kind != TermKind::Literal && (self.datatype.is_some() || self.language.is_some()) {
            return Err(KgError::InvalidTerm(format!(
                "non-literal {:?} carries literal annotations",
                self.value
            )));
        }
        Ok(())
    }

    /// The last path or fragment segment of an IRI, used when no label exists.
    pub fn local_name(&self) -> &str {
        local_name(&self.value)
    }
}

impl fmt::Display for RdfTerm {
    /// N-Triples-like rendering.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            TermKind::Iri => write!(f, "<{}>", self.value),
            TermKind::Blank => write!(f, "_:{}", self.value),
            TermKind::Literal => {
                write!(f, "{:?}", self.value)?;
                if let Some(lang) = &self.language {
                    write!(f, "@{lang}")
                } else if let Some(dt) = &self.datatype {
                    write!(f, "^^<{dt}>")
                } else {
                    Ok(())
                }
            }
        }
    }
}

pub const XSD_STRING: &str = "http://www.w3.org/2001/XMLSchema#string";

pub fn validate_iri(value: &str) -> Result<(), KgError> {
    oxrdf::NamedNode::new(value)
        .map(|_| ())
        .map_err(|e| KgError::InvalidIri(format!("{value}: {e}")))
}

pub fn local_name(iri: &str) -> &str {
    let trimmed = iri.trim_end_matches(['/', '#']);
    trimmed
        .rsplit(['/', '#', ':'])
        .next()
        .filter(|s| !s.is_empty())
        .unwrap_or(trimmed)
}

/// An RDF statement. Subjects are IRIs or blank nodes, properties are IRIs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub subject: RdfTerm,
    pub property: RdfTerm,
    pub object: RdfTerm,
}

impl Triple {
    pub fn new(subject: RdfTerm, property: RdfTerm, object: RdfTerm) -> Result<Self, KgError> {
        if subject.kind == TermKind::Literal {
            return Err(KgError::InvalidTerm(format!("literal subject {subject}")));
        }
        if property.kind != TermKind::Iri {
            return Err(KgError::InvalidTerm(format!("non-IRI property {property}")));
        }
        Ok(Self {
            subject,
            property,
            object,
        })
    }

    /// Shorthand for an all-IRI triple.
    pub fn iris(s: &str, p: &str, o: &str) -> Result<Self, KgError> {
        Self::new(RdfTerm::iri(s)?, RdfTerm::iri(p)?, RdfTerm::iri(o)?)
    }

    pub fn mentions(&self, term: &RdfTerm) -> bool {
        &self.subject == term || &self.object == term
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} .", self.subject, self.property, self.object)
    }
}

pub type TripleSet = Vec<Triple>;

impl TryFrom<oxrdf::Term> for RdfTerm {
    type Error = KgError;

    fn try_from(term: oxrdf::Term) -> Result<Self, KgError> {
        match term {
            oxrdf::Term::NamedNode(n) => Ok(Self {
                kind: TermKind::Iri,
                value: n.into_string(),
                datatype: None,
                language: None,
            }),
            oxrdf::Term::BlankNode(b) => Ok(Self::blank(b.into_string())),
            oxrdf::Term::Literal(l) => {
                let (value, datatype, language) = l.destruct();
                match (datatype, language) {
                    (_, Some(lang)) => Ok(Self::lang_literal(value, lang)),
                    (Some(dt), None) => Self::typed_literal(value, dt.into_string()),
                    (None, None) => Ok(Self::literal(value)),
                }
            }
            #[allow(unreachable_patterns)]
            other => Err(KgError::InvalidTerm(format!("unsupported term {other}"))),
        }
    }
}

impl TryFrom<oxrdf::Triple> for Triple {
    type Error = KgError;

    fn try_from(t: oxrdf::Triple) -> Result<Self, KgError> {
        let subject = RdfTerm::try_from(oxrdf::Term::from(t.subject))?;
        let property = RdfTerm::try_from(oxrdf::Term::from(t.predicate))?;
        let object = RdfTerm::try_from(t.object)?;
        Triple::new(subject, property, object)
    }
}
