//! Runs a classifier over class datasets and scores it against the KG labels.

mod metrics;

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{
    accuracy, auc, cohen_kappa, f1_macro, f1_negative, f1_positive, kappa, macro_aggregate, recall, specificity,
    Aggregate, ClassMetrics, ConfusionMatrix, Kappa, KappaBand, MacroMetrics, MetricError,
};

use crate::classifier::{ClassificationResult, EntityClassifier, TemplateVersions};
use crate::dataset::{ClassDataset, ClassSpec, LabeledExample};

/// Recorded in every summary so that readers know how `fp`/`fn` are lettered.
pub const LETTERING_NOTE: &str = "fp = KG negative, classifier positive; fn = KG positive, classifier negative. \
     Sources that letter these the other way round swap the fp and fn columns; accuracy, auc, f1 and kappa are unaffected.";

/// A classifier failure on one example. The example counts as invalid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleError {
    pub entity_iri: String,
    pub message: String,
}

/// One dataset example with the classifier's output, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub example: LabeledExample,
    pub result: Option<ClassificationResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ResultEntry {
    /// The example is a KG/classifier disagreement with a valid verdict.
    pub fn is_disagreement(&self) -> bool {
        matches!(&self.result, Some(r) if r.verdict.is_some_and(|v| v != self.example.gold))
    }
}

/// Everything the classifier produced for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassResults {
    pub spec: ClassSpec,
    pub entries: Vec<ResultEntry>,
}

impl ClassResults {
    pub fn matrix(&self) -> ConfusionMatrix {
        ConfusionMatrix::from_pairs(
            self.entries
                .iter()
                .map(|e| (e.example.gold, e.result.as_ref().and_then(|r| r.verdict))),
        )
    }

    pub fn errors(&self) -> Vec<ExampleError> {
        self.entries
            .iter()
            .filter_map(|e| {
                e.error.as_ref().map(|m| ExampleError {
                    entity_iri: e.example.entity_iri.clone(),
                    message: m.clone(),
                })
            })
            .collect()
    }
}

/// Classifies every example of `dataset` concurrently. Per-example failures are
/// recorded on the entry and counted as invalid.
pub fn classify_dataset(classifier: &dyn EntityClassifier, dataset: &ClassDataset) -> ClassResults {
    let examples: Vec<&LabeledExample> = dataset.examples().collect();
    let entries = examples
        .par_iter()
        .map(|example| match classifier.classify(&dataset.spec, example) {
            Ok(result) => ResultEntry {
                example: (*example).clone(),
                result: Some(result),
                error: None,
            },
            Err(e) => {
                log::warn!("{} / {}: {e}", dataset.spec.class_iri, example.entity_iri);
                ResultEntry {
                    example: (*example).clone(),
                    result: None,
                    error: Some(e.to_string()),
                }
            }
        })
        .collect();
    ClassResults {
        spec: dataset.spec.clone(),
        entries,
    }
}

/// Confusion matrix for one dataset together with per-example errors.
pub fn evaluate_class(
    classifier: &dyn EntityClassifier,
    dataset: &ClassDataset,
) -> (ConfusionMatrix, Vec<ExampleError>) {
    let results = classify_dataset(classifier, dataset);
    (results.matrix(), results.errors())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub label: String,
    pub superclass_iri: String,
    pub positives: usize,
    pub negatives: usize,
    pub matrix: ConfusionMatrix,
    /// Absent when the class has no valid verdicts.
    pub metrics: Option<ClassMetrics>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<ExampleError>,
}

/// A class that produced no usable verdicts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassFailure {
    pub class_iri: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub kg_name: String,
    pub model_id: String,
    pub template_versions: TemplateVersions,
    pub per_class: BTreeMap<String, ClassSummary>,
    /// Absent when no class produced metrics.
    pub aggregate: Option<Aggregate>,
    #[serde(default)]
    pub failures: Vec<ClassFailure>,
    pub lettering: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

impl RunSummary {
    /// Sum of all class matrices, including classes without metrics.
    pub fn pooled_matrix(&self) -> ConfusionMatrix {
        self.per_class.values().map(|c| c.matrix).sum()
    }

    pub fn is_complete(&self) -> bool {
        self.per_class.values().any(|c| c.metrics.is_some())
    }
}

/// Summary plus the raw results needed to persist the run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub results: Vec<ClassResults>,
}

fn summarize_class(results: &ClassResults) -> (ClassSummary, Option<ClassFailure>) {
    let matrix = results.matrix();
    let errors = results.errors();
    let metrics = ClassMetrics::from_matrix(matrix).ok();
    let failure = metrics.is_none().then(|| ClassFailure {
        class_iri: results.spec.class_iri.clone(),
        reason: match errors.first() {
            Some(e) => format!("{} of {} examples failed; first error: {}", errors.len(), results.entries.len(), e.message),
            None => "no example produced a readable verdict".into(),
        },
    });
    let count = |gold| results.entries.iter().filter(|e| e.example.gold == gold).count();
    let summary = ClassSummary {
        label: results.spec.label.clone(),
        superclass_iri: results.spec.superclass_iri.clone(),
        positives: count(crate::classifier::Verdict::Positive),
        negatives: count(crate::classifier::Verdict::Negative),
        matrix,
        metrics,
        errors,
    };
    (summary, failure)
}

/// Builds a summary from already classified results.
pub fn summarize_run(
    run_id: &str,
    kg_name: &str,
    model_id: &str,
    template_versions: TemplateVersions,
    results: &[ClassResults],
    started_at: DateTime<Utc>,
    finished_at: DateTime<Utc>,
) -> RunSummary {
    let mut per_class = BTreeMap::new();
    let mut failures = Vec::new();
    for r in results {
        let (summary, failure) = summarize_class(r);
        failures.extend(failure);
        per_class.insert(r.spec.class_iri.clone(), summary);
    }
    let aggregate = macro_aggregate(per_class.values().filter_map(|c: &ClassSummary| c.metrics.as_ref()));
    RunSummary {
        run_id: run_id.into(),
        kg_name: kg_name.into(),
        model_id: model_id.into(),
        template_versions,
        per_class,
        aggregate,
        failures,
        lettering: LETTERING_NOTE.into(),
        started_at,
        finished_at,
    }
}

/// Evaluates every dataset. Classes are processed in order; examples within a
/// class concurrently.
pub fn run_evaluation(run_id: &str, classifier: &dyn EntityClassifier, datasets: &[ClassDataset]) -> RunOutput {
    let started_at = Utc::now();
    let results: Vec<ClassResults> = datasets.iter().map(|d| classify_dataset(classifier, d)).collect();
    let mut kg_names: Vec<&str> = datasets.iter().map(|d| d.kg_name.as_str()).collect();
    kg_names.sort_unstable();
    kg_names.dedup();
    let summary = summarize_run(
        run_id,
        &kg_names.join("+"),
        classifier.model_id(),
        classifier.template_versions(),
        &results,
        started_at,
        Utc::now(),
    );
    RunOutput { summary, results }
}
