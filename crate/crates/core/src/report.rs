//! Run reports: classifier performance and, once annotations exist, the error
//! analysis. The CLI and the HTTP service both call [`build_report`] and
//! [`render`], so their output is identical for the same store.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::TemplateVersions;
use crate::error_analysis::{
    analyse, disagreements_from, AnalysisError, AnnotationStore, ErrorAnalysis, ErrorCause, KappaValue,
};
use crate::evaluator::{ClassFailure, ConfusionMatrix, KappaBand, RunSummary};
use crate::store::RunStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Text,
    Csv,
    Markdown,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "txt" => Ok(Self::Text),
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown report format {other:?} (text, csv, markdown, json)")),
        }
    }
}

/// Headline classifier performance of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRow {
    pub accuracy: f64,
    pub auc: Option<f64>,
    /// Mean of per-class F1-macro.
    pub f1: f64,
    /// F1-macro of the pooled matrix.
    pub f1_pooled: f64,
    pub kappa: f64,
    pub kappa_band: KappaBand,
    pub classes: usize,
    pub pooled: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class_iri: String,
    pub label: String,
    pub matrix: ConfusionMatrix,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
    pub f1: Option<f64>,
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub kg_name: String,
    pub model_id: String,
    pub template_versions: TemplateVersions,
    pub performance: Option<PerformanceRow>,
    pub per_class: Vec<ClassRow>,
    pub failures: Vec<ClassFailure>,
    pub error_analysis: ErrorAnalysis,
    pub lettering: String,
}

impl RunReport {
    pub fn from_parts(summary: &RunSummary, error_analysis: ErrorAnalysis) -> Self {
        let performance = summary.aggregate.as_ref().map(|a| PerformanceRow {
            accuracy: a.macro_.accuracy,
            auc: a.macro_.auc,
            f1: a.macro_.f1_macro,
            f1_pooled: a.pooled.f1_macro,
            kappa: a.macro_.kappa,
            kappa_band: a.macro_.kappa_band,
            classes: a.macro_.classes,
            pooled: a.pooled.matrix,
        });
        let per_class = summary
            .per_class
            .iter()
            .map(|(iri, c)| ClassRow {
                class_iri: iri.clone(),
                label: c.label.clone(),
                matrix: c.matrix,
                accuracy: c.metrics.as_ref().map(|m| m.accuracy),
                auc: c.metrics.as_ref().and_then(|m| m.auc),
                f1: c.metrics.as_ref().map(|m| m.f1_macro),
                kappa: c.metrics.as_ref().map(|m| m.kappa),
            })
            .collect();
        Self {
            run_id: summary.run_id.clone(),
            kg_name: summary.kg_name.clone(),
            model_id: summary.model_id.clone(),
            template_versions: summary.template_versions.clone(),
            performance,
            per_class,
            failures: summary.failures.clone(),
            error_analysis,
            lettering: summary.lettering.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("csv: {0}")]
    Csv(String),
}

/// Recomputes the report from the store's current state.
pub fn build_report(store: &RunStore, run_id: &str) -> Result<RunReport, ReportError> {
    let summary = store.load_summary(run_id).map_err(AnalysisError::from)?;
    let results = store.load_results(run_id).map_err(AnalysisError::from)?;
    let records = disagreements_from(run_id, &results);
    let annotations = AnnotationStore::open(&store.run_dir(run_id).map_err(AnalysisError::from)?)?.snapshot();
    Ok(RunReport::from_parts(&summary, analyse(&records, &annotations)))
}

pub fn render(report: &RunReport, format: ReportFormat) -> Result<String, ReportError> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Text => Ok(render_tables(report, Style::Text)),
        ReportFormat::Markdown => Ok(render_tables(report, Style::Markdown)),
    }
}

fn f3(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), |v| format!("{v:.3}"))
}

fn kappa_cell(k: &KappaValue) -> String {
    match k.value {
        Some(v) if k.degenerate => format!("{v:.3}*"),
        Some(v) => format!("{v:.3}"),
        None => "n/a".into(),
    }
}

fn cause_cell(a: &ErrorAnalysis, c: ErrorCause) -> String {
    format!("{} ({:.1}%)", a.causes.count(c), a.causes.percent(c))
}

#[derive(Clone, Copy, PartialEq)]
enum Style {
    Text,
    Markdown,
}

fn table(style: Style, headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<String>| -> String {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}", w = *w))
            .collect();
        match style {
            Style::Text => padded.join("  ").trim_end().to_string(),
            Style::Markdown => format!("| {} |", padded.join(" | ")),
        }
    };
    let mut out = String::new();
    out.push_str(&line(headers.iter().map(|h| h.to_string()).collect()));
    out.push('\n');
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&match style {
        Style::Text => rule.join("  "),
        Style::Markdown => format!("|-{}-|", rule.join("-|-")),
    });
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.clone()));
        out.push('\n');
    }
    out
}

fn heading(style: Style, text: &str) -> String {
    match style {
        Style::Text => format!("{text}\n{}\n\n", "=".repeat(text.chars().count())),
        Style::Markdown => format!("## {text}\n\n"),
    }
}

const PERFORMANCE_HEADERS: [&str; 8] = ["KG", "model", "classes", "ACC", "AUC", "F1", "F1 (pooled)", "kappa"];
const ERROR_HEADERS: [&str; 10] = [
    "KG",
    "N",
    "FP",
    "FN",
    "human-KG kappa",
    "human-LLM kappa",
    "missing data",
    "missing relation",
    "incorrect relation",
    "incorrect reasoning",
];

fn render_tables(r: &RunReport, style: Style) -> String {
    let mut out = String::new();
    out.push_str(&heading(style, &format!("Run {}", r.run_id)));
    let _ = writeln!(
        out,
        "templates: {} / {}\n",
        r.template_versions.rationale, r.template_versions.answer
    );

    out.push_str(&heading(style, "Classifier performance"));
    match &r.performance {
        Some(p) => {
            let row = vec![
                r.kg_name.clone(),
                r.model_id.clone(),
                p.classes.to_string(),
                f3(Some(p.accuracy)),
                f3(p.auc),
                f3(Some(p.f1)),
                f3(Some(p.f1_pooled)),
                format!("{:.3} ({})", p.kappa, p.kappa_band),
            ];
            out.push_str(&table(style, &PERFORMANCE_HEADERS, &[row]));
            let m = p.pooled;
            let _ = writeln!(
                out,
                "\npooled: tp={} fp={} fn={} tn={} invalid={}",
                m.tp, m.fp, m.fn_, m.tn, m.invalid
            );
        }
        None => out.push_str("No class produced metrics.\n"),
    }
    out.push('\n');

    out.push_str(&heading(style, "Per class"));
    let rows: Vec<Vec<String>> = r
        .per_class
        .iter()
        .map(|c| {
            vec![
                c.label.clone(),
                c.matrix.tp.to_string(),
                c.matrix.fp.to_string(),
                c.matrix.fn_.to_string(),
                c.matrix.tn.to_string(),
                c.matrix.invalid.to_string(),
                f3(c.accuracy),
                f3(c.auc),
                f3(c.f1),
                f3(c.kappa),
            ]
        })
        .collect();
    out.push_str(&table(
        style,
        &["class", "tp", "fp", "fn", "tn", "invalid", "ACC", "AUC", "F1", "kappa"],
        &rows,
    ));
    for f in &r.failures {
        let _ = writeln!(out, "\nfailed: {} ({})", f.class_iri, f.reason);
    }
    out.push('\n');

    out.push_str(&heading(style, "Error analysis"));
    let a = &r.error_analysis;
    if a.annotations == 0 {
        let _ = writeln!(
            out,
            "No annotations yet: {} disagreements (fp={}, fn={}) await review.",
            a.n, a.fp, a.fn_
        );
    } else {
        let mut row = vec![
            r.kg_name.clone(),
            a.n.to_string(),
            a.fp.to_string(),
            a.fn_.to_string(),
            kappa_cell(&a.human_kg_kappa),
            kappa_cell(&a.human_llm_kappa),
        ];
        row.extend(ErrorCause::ALL.map(|c| cause_cell(a, c)));
        out.push_str(&table(style, &ERROR_HEADERS, &[row]));
        let _ = writeln!(
            out,
            "\nannotated: {} of {} records ({} annotations)",
            a.annotated_records, a.n, a.annotations
        );
        let _ = writeln!(out, "KG-attributed errors: {:.1}%", a.causes.kg_attributed_percent);
        if a.human_kg_kappa.degenerate || a.human_llm_kappa.degenerate {
            out.push_str("* chance agreement is 1; kappa reported as 0\n");
        }
        if a.per_annotator.len() > 1 {
            out.push('\n');
            let rows: Vec<Vec<String>> = a
                .per_annotator
                .iter()
                .map(|(id, x)| {
                    vec![
                        id.clone(),
                        x.annotated.to_string(),
                        kappa_cell(&x.human_kg_kappa),
                        kappa_cell(&x.human_llm_kappa),
                    ]
                })
                .collect();
            out.push_str(&table(style, &["annotator", "annotated", "human-KG kappa", "human-LLM kappa"], &rows));
            for h in &a.human_human {
                let _ = writeln!(
                    out,
                    "{} vs {}: kappa {} over {} records",
                    h.annotators.0,
                    h.annotators.1,
                    kappa_cell(&h.kappa),
                    h.kappa.n
                );
            }
        }
    }
    let _ = write!(out, "\nNote: {}\n", r.lettering);
    out
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Long format: one `table,scope,field,value` row per number.
fn render_csv(r: &RunReport) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| ReportError::Csv(e.to_string());
    w.write_record(["table", "scope", "field", "value"]).map_err(err)?;
    let mut put = |table: &str, scope: &str, field: &str, value: String| {
        w.write_record([table, scope, field, value.as_str()]).map_err(err)
    };
    put("run", &r.run_id, "kg", r.kg_name.clone())?;
    put("run", &r.run_id, "model", r.model_id.clone())?;
    if let Some(p) = &r.performance {
        let scope = r.model_id.as_str();
        put("performance", scope, "classes", p.classes.to_string())?;
        put("performance", scope, "accuracy", num(p.accuracy))?;
        put("performance", scope, "auc", opt(p.auc))?;
        put("performance", scope, "f1", num(p.f1))?;
        put("performance", scope, "f1_pooled", num(p.f1_pooled))?;
        put("performance", scope, "kappa", num(p.kappa))?;
        put("performance", scope, "kappa_band", p.kappa_band.to_string())?;
    }
    for c in &r.per_class {
        let s = c.class_iri.as_str();
        put("class", s, "label", c.label.clone())?;
        for (field, v) in [
            ("tp", c.matrix.tp),
            ("fp", c.matrix.fp),
            ("fn", c.matrix.fn_),
            ("tn", c.matrix.tn),
            ("invalid", c.matrix.invalid),
        ] {
            put("class", s, field, v.to_string())?;
        }
        put("class", s, "accuracy", opt(c.accuracy))?;
        put("class", s, "auc", opt(c.auc))?;
        put("class", s, "f1", opt(c.f1))?;
        put("class", s, "kappa", opt(c.kappa))?;
    }
    let a = &r.error_analysis;
    let scope = r.kg_name.as_str();
    put("errors", scope, "n", a.n.to_string())?;
    put("errors", scope, "fp", a.fp.to_string())?;
    put("errors", scope, "fn", a.fn_.to_string())?;
    put("errors", scope, "annotations", a.annotations.to_string())?;
    put("errors", scope, "human_kg_kappa", opt(a.human_kg_kappa.value))?;
    put("errors", scope, "human_llm_kappa", opt(a.human_llm_kappa.value))?;
    for s in &a.causes.causes {
        put("errors", scope, &format!("{}_count", s.cause), s.count.to_string())?;
        put("errors", scope, &format!("{}_percent", s.cause), format!("{:.1}", s.percent))?;
    }
    put("errors", scope, "kg_attributed_percent", format!("{:.1}", a.causes.kg_attributed_percent))?;
    let bytes = w.into_inner().map_err(|e| ReportError::Csv(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}
