use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Positive,
    Negative,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Positive => "positive",
            Verdict::Negative => "negative",
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Verdict::Positive => Verdict::Negative,
            Verdict::Negative => Verdict::Positive,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Verdict::Positive
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid verdict {0:?} (expected positive or negative)")]
pub struct InvalidVerdict(pub String);

impl FromStr for Verdict {
    type Err = InvalidVerdict;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" => Ok(Verdict::Positive),
            "negative" => Ok(Verdict::Negative),
            _ => Err(InvalidVerdict(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    Repaired,
    Invalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedVerdict {
    pub verdict: Option<Verdict>,
    pub status: ParseStatus,
}

impl ParsedVerdict {
    const INVALID: Self = Self {
        verdict: None,
        status: ParseStatus::Invalid,
    };
}

fn is_wrapper(c: char) -> bool {
    c.is_whitespace() || c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’' | '«' | '»')
}

/// Which of the two verdict words occur as whole words in `text`.
fn scan(text: &str) -> Option<Option<Verdict>> {
    let mut pos = false;
    let mut neg = false;
    for word in text.split(|c: char| !c.is_alphanumeric()) {
        if word.eq_ignore_ascii_case("positive") {
            pos = true;
        } else if word.eq_ignore_ascii_case("negative") {
            neg = true;
        }
    }
    match (pos, neg) {
        (true, false) => Some(Some(Verdict::Positive)),
        (false, true) => Some(Some(Verdict::Negative)),
        (true, true) => Some(None),
        (false, false) => None,
    }
}

/// Reads a verdict out of a free-text answer.
///
/// | input                                         | result            |
/// |-----------------------------------------------|-------------------|
/// | the bare word, any case, optional quotes/punctuation around it | verdict, `ok` |
/// | exactly one verdict word in the last non-empty line | verdict, `repaired` |
/// | neither word in the last line, exactly one in the whole text | verdict, `repaired` |
/// | both words (last line, or whole text on fallback), or neither | `invalid` |
pub fn parse_verdict(raw: &str) -> ParsedVerdict {
    if let Ok(v) = raw.trim_matches(is_wrapper).parse::<Verdict>() {
        return ParsedVerdict {
            verdict: Some(v),
            status: ParseStatus::Ok,
        };
    }
    let last_line = raw.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("");
    let found = match scan(last_line) {
        Some(found) => found,
        None => scan(raw).flatten(),
    };
    match found {
        Some(v) => ParsedVerdict {
            verdict: Some(v),
            status: ParseStatus::Repaired,
        },
        None => ParsedVerdict::INVALID,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spot_cases() {
        assert_eq!(parse_verdict("positive").status, ParseStatus::Ok);
        let p = parse_verdict("The answer is NEGATIVE.");
        assert_eq!((p.verdict, p.status), (Some(Verdict::Negative), ParseStatus::Repaired));
        let p = parse_verdict("Positive — the definition clearly applies.");
        assert_eq!((p.verdict, p.status), (Some(Verdict::Positive), ParseStatus::Repaired));
        assert_eq!(parse_verdict("positive or negative"), ParsedVerdict::INVALID);
        assert_eq!(parse_verdict("maybe"), ParsedVerdict::INVALID);
    }

    #[test]
    fn canonical_outputs_are_stable() {
        for v in [Verdict::Positive, Verdict::Negative] {
            let p = parse_verdict(&v.to_string());
            assert_eq!((p.verdict, p.status), (Some(v), ParseStatus::Ok));
        }
    }

    #[test]
    fn verdict_from_str() {
        assert_eq!(" Positive ".parse::<Verdict>().unwrap(), Verdict::Positive);
        assert!("pos".parse::<Verdict>().is_err());
    }
}
