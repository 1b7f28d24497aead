//! Disagreements between KG and classifier, their human annotation, and the
//! agreement and error-cause analysis built on it.

mod annotations;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use annotations::{AnnotationState, AnnotationStore, ErrorAnnotation, Recorded};

use crate::classifier::Verdict;
use crate::evaluator::{cohen_kappa, ClassResults, ConfusionMatrix, Kappa};
use crate::fsutil::sha256_hex;
use crate::store::{RunStore, StoreError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("unknown run {0}")]
    UnknownRun(String),
    #[error("unknown record {0}")]
    UnknownRecord(String),
    #[error("invalid error cause {0:?}; expected one of missing_data, missing_relation, incorrect_relation, incorrect_reasoning")]
    InvalidCause(String),
    #[error("invalid verdict {0:?}; expected positive or negative")]
    InvalidVerdict(String),
    #[error("annotator id must be non-empty")]
    InvalidAnnotator,
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(StoreError),
}

impl AnalysisError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<StoreError> for AnalysisError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownRun(r) => Self::UnknownRun(r),
            other => Self::Store(other),
        }
    }
}

/// Why the KG and the classifier disagreed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCause {
    /// The entity description lacked the information needed to decide.
    MissingData,
    /// The KG lacks a membership that holds.
    MissingRelation,
    /// The KG asserts a membership that does not hold.
    IncorrectRelation,
    /// The classifier reasoned wrongly (including hallucination and misreading).
    IncorrectReasoning,
}

impl ErrorCause {
    pub const ALL: [ErrorCause; 4] = [
        Self::MissingData,
        Self::MissingRelation,
        Self::IncorrectRelation,
        Self::IncorrectReasoning,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::MissingData => "missing_data",
            Self::MissingRelation => "missing_relation",
            Self::IncorrectRelation => "incorrect_relation",
            Self::IncorrectReasoning => "incorrect_reasoning",
        }
    }

    /// Human-readable column title.
    pub fn title(self) -> &'static str {
        match self {
            Self::MissingData => "missing data",
            Self::MissingRelation => "missing relation",
            Self::IncorrectRelation => "incorrect relation",
            Self::IncorrectReasoning => "incorrect reasoning",
        }
    }

    /// The error lies in the knowledge graph rather than the classifier.
    pub fn is_kg_attributed(self) -> bool {
        matches!(self, Self::MissingRelation | Self::IncorrectRelation)
    }
}

impl fmt::Display for ErrorCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorCause {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim())
            .ok_or_else(|| AnalysisError::InvalidCause(s.into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisagreementRecord {
    pub record_id: String,
    pub run_id: String,
    pub class_iri: String,
    pub class_label: String,
    pub entity_iri: String,
    pub entity_label: String,
    /// The KG's label.
    pub gold: Verdict,
    /// The classifier's verdict.
    pub predicted: Verdict,
    pub rationale: String,
    pub class_definition: String,
    pub entity_description: String,
}

/// Content-derived record identifier, stable across re-extraction.
pub fn record_id(run_id: &str, class_iri: &str, entity_iri: &str) -> String {
    sha256_hex(format!("{run_id}\0{class_iri}\0{entity_iri}"))[..16].to_string()
}

/// Every valid-verdict example where the classifier contradicts the KG, in
/// class order and dataset order within a class.
pub fn disagreements_from(run_id: &str, results: &[ClassResults]) -> Vec<DisagreementRecord> {
    results
        .iter()
        .flat_map(|class| {
            class.entries.iter().filter_map(move |entry| {
                let result = entry.result.as_ref()?;
                let predicted = result.verdict?;
                (predicted != entry.example.gold).then(|| DisagreementRecord {
                    record_id: record_id(run_id, &class.spec.class_iri, &entry.example.entity_iri),
                    run_id: run_id.into(),
                    class_iri: class.spec.class_iri.clone(),
                    class_label: class.spec.label.clone(),
                    entity_iri: entry.example.entity_iri.clone(),
                    entity_label: entry.example.label.clone(),
                    gold: entry.example.gold,
                    predicted,
                    rationale: result.rationale.clone(),
                    class_definition: class.spec.definition.clone(),
                    entity_description: entry.example.description.clone(),
                })
            })
        })
        .collect()
}

pub fn extract_disagreements(store: &RunStore, run_id: &str) -> Result<Vec<DisagreementRecord>, AnalysisError> {
    Ok(disagreements_from(run_id, &store.load_results(run_id)?))
}

/// Body of an annotation submission before validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationInput {
    pub annotator_id: String,
    pub human_verdict: String,
    pub cause: String,
    #[serde(default)]
    pub note: Option<String>,
}

/// Validates and stores an annotation for a known record.
pub fn record_annotation(
    store: &AnnotationStore,
    records: &[DisagreementRecord],
    record_id: &str,
    input: &AnnotationInput,
) -> Result<Recorded, AnalysisError> {
    if !records.iter().any(|r| r.record_id == record_id) {
        return Err(AnalysisError::UnknownRecord(record_id.into()));
    }
    let annotator_id = input.annotator_id.trim();
    if annotator_id.is_empty() {
        return Err(AnalysisError::InvalidAnnotator);
    }
    let human_verdict: Verdict = input
        .human_verdict
        .parse()
        .map_err(|_| AnalysisError::InvalidVerdict(input.human_verdict.clone()))?;
    let cause: ErrorCause = input.cause.parse()?;
    store.record(ErrorAnnotation {
        record_id: record_id.into(),
        annotator_id: annotator_id.into(),
        human_verdict,
        cause,
        note: input.note.clone().filter(|n| !n.trim().is_empty()),
        annotated_at: chrono::Utc::now(),
    })
}

/// What the human verdict is compared with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Against {
    Kg,
    Llm,
}

/// κ with the reason when it cannot be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaValue {
    pub value: Option<f64>,
    pub n: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl KappaValue {
    /// κ over `(a, b)` label pairs, using the evaluator's formula.
    pub fn of_pairs(pairs: &[(Verdict, Verdict)]) -> Self {
        let matrix = ConfusionMatrix::from_pairs(pairs.iter().map(|&(a, b)| (a, Some(b))));
        match cohen_kappa(&matrix) {
            Ok(Kappa { value, degenerate }) => Self {
                value: Some(value),
                n: pairs.len(),
                degenerate,
                reason: degenerate.then(|| "chance agreement is 1; reported as 0".to_string()),
            },
            Err(_) => Self {
                value: None,
                n: 0,
                degenerate: false,
                reason: Some("no annotations".into()),
            },
        }
    }
}

/// κ between human verdicts and the KG or classifier over annotated records.
pub fn pairwise_kappa(records: &[DisagreementRecord], annotations: &[&ErrorAnnotation], against: Against) -> KappaValue {
    let by_id: BTreeMap<&str, &DisagreementRecord> = records.iter().map(|r| (r.record_id.as_str(), r)).collect();
    let pairs: Vec<(Verdict, Verdict)> = annotations
        .iter()
        .filter_map(|a| {
            let r = by_id.get(a.record_id.as_str())?;
            Some((
                a.human_verdict,
                match against {
                    Against::Kg => r.gold,
                    Against::Llm => r.predicted,
                },
            ))
        })
        .collect();
    KappaValue::of_pairs(&pairs)
}

pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseShare {
    pub cause: ErrorCause,
    pub count: u64,
    /// Percentage of annotations, one decimal.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseBreakdown {
    pub total: u64,
    pub causes: Vec<CauseShare>,
    /// Sum of the rounded shares of the KG-attributed causes.
    pub kg_attributed_percent: f64,
    /// The same share computed from the counts, unrounded.
    pub kg_attributed_exact: f64,
}

impl CauseBreakdown {
    /// Counts in [`ErrorCause::ALL`] order.
    pub fn from_counts(counts: [u64; 4]) -> Self {
        let total: u64 = counts.iter().sum();
        let pct = |c: u64| if total == 0 { 0.0 } else { 100.0 * c as f64 / total as f64 };
        let causes: Vec<CauseShare> = ErrorCause::ALL
            .into_iter()
            .zip(counts)
            .map(|(cause, count)| CauseShare {
                cause,
                count,
                percent: round1(pct(count)),
            })
            .collect();
        let kg = |f: &dyn Fn(&CauseShare) -> f64| {
            causes.iter().filter(|s| s.cause.is_kg_attributed()).map(f).sum::<f64>()
        };
        Self {
            total,
            kg_attributed_percent: round1(kg(&|s| s.percent)),
            kg_attributed_exact: kg(&|s| pct(s.count)),
            causes,
        }
    }

    pub fn count(&self, cause: ErrorCause) -> u64 {
        self.causes.iter().find(|s| s.cause == cause).map_or(0, |s| s.count)
    }

    pub fn percent(&self, cause: ErrorCause) -> f64 {
        self.causes.iter().find(|s| s.cause == cause).map_or(0.0, |s| s.percent)
    }

    /// Element-wise sum, e.g. for a total row over several runs.
    pub fn merge(&self, other: &Self) -> Self {
        let mut counts = [0u64; 4];
        for (i, c) in ErrorCause::ALL.into_iter().enumerate() {
            counts[i] = self.count(c) + other.count(c);
        }
        Self::from_counts(counts)
    }
}

pub fn cause_breakdown<'a>(annotations: impl IntoIterator<Item = &'a ErrorAnnotation>) -> CauseBreakdown {
    let mut counts = [0u64; 4];
    for a in annotations {
        let i = ErrorCause::ALL.iter().position(|c| *c == a.cause).expect("closed enumeration");
        counts[i] += 1;
    }
    CauseBreakdown::from_counts(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorAgreement {
    pub annotated: usize,
    pub human_kg_kappa: KappaValue,
    pub human_llm_kappa: KappaValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanAgreement {
    pub annotators: (String, String),
    pub kappa: KappaValue,
}

/// Error analysis of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorAnalysis {
    /// Number of disagreements.
    pub n: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Disagreements with at least one annotation.
    pub annotated_records: usize,
    /// Current annotations across all annotators.
    pub annotations: usize,
    pub human_kg_kappa: KappaValue,
    pub human_llm_kappa: KappaValue,
    pub causes: CauseBreakdown,
    pub per_annotator: BTreeMap<String, AnnotatorAgreement>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub human_human: Vec<HumanAgreement>,
}

/// Analyses the current annotations; annotations of unknown records are ignored.
pub fn analyse(records: &[DisagreementRecord], state: &AnnotationState) -> ErrorAnalysis {
    let known: BTreeMap<&str, &DisagreementRecord> = records.iter().map(|r| (r.record_id.as_str(), r)).collect();
    let current: Vec<&ErrorAnnotation> = state
        .annotations()
        .filter(|a| known.contains_key(a.record_id.as_str()))
        .collect();
    let mut per_annotator: BTreeMap<String, Vec<&ErrorAnnotation>> = BTreeMap::new();
    for a in &current {
        per_annotator.entry(a.annotator_id.clone()).or_default().push(a);
    }
    let mut human_human = Vec::new();
    let ids: Vec<&String> = per_annotator.keys().collect();
    for (i, a) in ids.iter().enumerate() {
        for b in &ids[i + 1..] {
            let theirs: BTreeMap<&str, Verdict> = per_annotator[*b]
                .iter()
                .map(|x| (x.record_id.as_str(), x.human_verdict))
                .collect();
            let pairs: Vec<(Verdict, Verdict)> = per_annotator[*a]
                .iter()
                .filter_map(|x| theirs.get(x.record_id.as_str()).map(|v| (x.human_verdict, *v)))
                .collect();
            if !pairs.is_empty() {
                human_human.push(HumanAgreement {
                    annotators: ((*a).clone(), (*b).clone()),
                    kappa: KappaValue::of_pairs(&pairs),
                });
            }
        }
    }
    let fp = records.iter().filter(|r| r.gold == Verdict::Negative).count() as u64;
    let mut annotated: Vec<&str> = current.iter().map(|a| a.record_id.as_str()).collect();
    annotated.dedup();
    ErrorAnalysis {
        n: records.len() as u64,
        fp,
        fn_: records.len() as u64 - fp,
        annotated_records: annotated.len(),
        annotations: current.len(),
        human_kg_kappa: pairwise_kappa(records, &current, Against::Kg),
        human_llm_kappa: pairwise_kappa(records, &current, Against::Llm),
        causes: cause_breakdown(current.iter().copied()),
        per_annotator: per_annotator
            .iter()
            .map(|(id, list)| {
                (
                    id.clone(),
                    AnnotatorAgreement {
                        annotated: list.len(),
                        human_kg_kappa: pairwise_kappa(records, list, Against::Kg),
                        human_llm_kappa: pairwise_kappa(records, list, Against::Llm),
                    },
                )
            })
            .collect(),
        human_human,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: usize, gold: Verdict) -> DisagreementRecord {
        DisagreementRecord {
            record_id: format!("r{i:02}"),
            run_id: "run".into(),
            class_iri: "c".into(),
            class_label: "C".into(),
            entity_iri: format!("e{i}"),
            entity_label: format!("E{i}"),
            gold,
            predicted: gold.flip(),
            rationale: String::new(),
            class_definition: String::new(),
            entity_description: String::new(),
        }
    }

    fn ann(record: &str, who: &str, v: Verdict, cause: ErrorCause) -> ErrorAnnotation {
        ErrorAnnotation {
            record_id: record.into(),
            annotator_id: who.into(),
            human_verdict: v,
            cause,
            note: None,
            annotated_at: chrono::Utc::now(),
        }
    }

    #[test]
    fn causes_parse_and_reject() {
        for c in ErrorCause::ALL {
            assert_eq!(c.as_str().parse::<ErrorCause>().unwrap(), c);
        }
        assert!(matches!("typo_cause".parse::<ErrorCause>(), Err(AnalysisError::InvalidCause(_))));
    }

    #[test]
    fn table_shaped_breakdown() {
        let b = CauseBreakdown::from_counts([62, 34, 53, 64]);
        let pct: Vec<f64> = b.causes.iter().map(|c| c.percent).collect();
        assert_eq!(pct, [29.1, 16.0, 24.9, 30.0]);
        assert_eq!(b.kg_attributed_percent, 40.9);
        assert!((b.kg_attributed_exact - 8700.0 / 213.0).abs() < 1e-12);
        let merged = CauseBreakdown::from_counts([34, 15, 33, 54]).merge(&CauseBreakdown::from_counts([28, 19, 20, 10]));
        assert_eq!(merged, b);
        assert_eq!(CauseBreakdown::from_counts([1, 1, 1, 1]).percent(ErrorCause::MissingData), 25.0);
        let empty = cause_breakdown([]);
        assert_eq!(empty.total, 0);
        assert!(empty.causes.iter().all(|c| c.count == 0 && c.percent == 0.0));
    }

    #[test]
    fn kappa_against_kg_and_llm() {
        // KG labels 5 positive / 5 negative; the human sides with the KG on 7.
        // Balanced gold marginals give chance agreement 0.5 whatever the human's
        // marginals (here 6/4; 7 agreements cannot occur with both sides at 5/5).
        use Verdict::{Negative as N, Positive as P};
        let records: Vec<_> = (0..10).map(|i| rec(i, if i < 5 { P } else { N })).collect();
        let human = [N, P, P, P, P, P, N, P, N, N];
        let anns: Vec<ErrorAnnotation> = records
            .iter()
            .zip(human)
            .map(|(r, v)| ann(&r.record_id, "a", v, ErrorCause::MissingData))
            .collect();
        let refs: Vec<&ErrorAnnotation> = anns.iter().collect();
        assert_eq!(records.iter().zip(human).filter(|(r, v)| r.gold == *v).count(), 7);
        let kg = pairwise_kappa(&records, &refs, Against::Kg);
        assert!((kg.value.unwrap() - 0.4).abs() < 1e-12);
        let llm = pairwise_kappa(&records, &refs, Against::Llm);
        assert!((llm.value.unwrap() + 0.4).abs() < 1e-12);
    }

    #[test]
    fn human_always_with_classifier() {
        let records: Vec<_> = (0..4)
            .map(|i| rec(i, if i % 2 == 0 { Verdict::Positive } else { Verdict::Negative }))
            .collect();
        let anns: Vec<_> = records
            .iter()
            .map(|r| ann(&r.record_id, "a", r.predicted, ErrorCause::MissingRelation))
            .collect();
        let refs: Vec<_> = anns.iter().collect();
        assert_eq!(pairwise_kappa(&records, &refs, Against::Llm).value, Some(1.0));
        assert_eq!(pairwise_kappa(&records, &refs, Against::Kg).value, Some(-1.0));
        assert_eq!(pairwise_kappa(&records, &[], Against::Kg).value, None);
    }

    #[test]
    fn store_overwrites_and_replays() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![rec(0, Verdict::Positive), rec(1, Verdict::Negative)];
        let input = |cause: &str| AnnotationInput {
            annotator_id: "alice".into(),
            human_verdict: "positive".into(),
            cause: cause.into(),
            note: None,
        };
        {
            let store = AnnotationStore::open(dir.path()).unwrap();
            let first = record_annotation(&store, &records, "r00", &input("missing_data")).unwrap();
            assert!(!first.overwritten);
            let second = record_annotation(&store, &records, "r00", &input("missing_relation")).unwrap();
            assert!(second.overwritten);
            assert!(matches!(
                record_annotation(&store, &records, "nope", &input("missing_data")),
                Err(AnalysisError::UnknownRecord(_))
            ));
            assert!(matches!(
                record_annotation(&store, &records, "r01", &input("typo_cause")),
                Err(AnalysisError::InvalidCause(_))
            ));
        }
        std::fs::OpenOptions::new()
            .append(true)
            .open(dir.path().join(crate::store::ANNOTATION_LOG))
            .and_then(|mut f| std::io::Write::write_all(&mut f, b"{\"record_id\":"))
            .unwrap();
        let state = AnnotationStore::open(dir.path()).unwrap().snapshot();
        assert_eq!(state.current.len(), 1);
        assert_eq!(state.history.len(), 1);
        assert_eq!(state.for_record("r00").next().unwrap().cause, ErrorCause::MissingRelation);
        let analysis = analyse(&records, &state);
        assert_eq!((analysis.n, analysis.fp, analysis.fn_), (2, 1, 1));
        assert_eq!(analysis.annotated_records, 1);
    }

    #[test]
    fn human_human_agreement() {
        let records: Vec<_> = (0..4)
            .map(|i| rec(i, if i < 2 { Verdict::Positive } else { Verdict::Negative }))
            .collect();
        let mut state = AnnotationState::default();
        for r in &records {
            state.apply(ann(&r.record_id, "a", r.gold, ErrorCause::IncorrectReasoning));
            state.apply(ann(&r.record_id, "b", r.gold, ErrorCause::IncorrectReasoning));
        }
        let analysis = analyse(&records, &state);
        assert_eq!(analysis.human_human.len(), 1);
        assert_eq!(analysis.human_human[0].kappa.value, Some(1.0));
        assert_eq!(analysis.per_annotator.len(), 2);
        assert_eq!(analysis.annotated_records, 4);
        assert_eq!(analysis.annotations, 8);
    }
}
