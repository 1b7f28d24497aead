//! File-backed run storage.
//!
//! ```text
//! <data_dir>/runs/<run_id>/
//!     manifest.json         run header and the list of class result files
//!     summary.json          per-class and aggregate metrics
//!     results/<id>.json     every classification result of one class
//!     usage.json            token and cost accounting (optional)
//!     annotations.log       append-only annotation log (JSON lines)
//!     annotations.json      compacted current annotation state
//! ```
//!
//! Runs are written once, through a temporary directory renamed into place,
//! and never modified afterwards; only the annotation files change.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::TemplateVersions;
use crate::evaluator::{ClassResults, RunOutput, RunSummary};
use crate::fsutil::{sha256_hex, write_json_atomic};
use crate::gateway::UsageReport;

pub const RUN_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const USAGE_FILE: &str = "usage.json";
pub const RESULTS_DIR: &str = "results";
pub const ANNOTATION_LOG: &str = "annotations.log";
pub const ANNOTATION_STATE: &str = "annotations.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown run {0}")]
    UnknownRun(String),
    #[error("run {0} already exists")]
    RunExists(String),
    #[error("invalid run id {0:?}: use letters, digits, '.', '-' and '_'")]
    InvalidRunId(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn validate_run_id(run_id: &str) -> Result<(), StoreError> {
    let ok = !run_id.is_empty()
        && run_id.len() <= 128
        && !run_id.starts_with('.')
        && run_id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidRunId(run_id.into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassFile {
    pub class_iri: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub run_id: String,
    pub kg_name: String,
    pub model_id: String,
    pub template_versions: TemplateVersions,
    pub classes: Vec<ClassFile>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

/// One entry of [`RunStore::list_runs`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub run_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kg_name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
    pub classes: usize,
    pub disagreements: u64,
    pub corrupt: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Name of the results file for a class.
pub fn results_file_name(class_iri: &str) -> String {
    format!("{}.json", &sha256_hex(class_iri)[..16])
}

#[derive(Debug, Clone)]
pub struct RunStore {
    data_dir: PathBuf,
}

impl RunStore {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
        }
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.data_dir.join("runs")
    }

    /// Directory of an existing run.
    pub fn run_dir(&self, run_id: &str) -> Result<PathBuf, StoreError> {
        validate_run_id(run_id)?;
        let dir = self.runs_dir().join(run_id);
        if dir.join(MANIFEST_FILE).is_file() {
            Ok(dir)
        } else {
            Err(StoreError::UnknownRun(run_id.into()))
        }
    }

    pub fn exists(&self, run_id: &str) -> bool {
        self.run_dir(run_id).is_ok()
    }

    /// Persists a finished run. Nothing is visible under `runs/<run_id>` until
    /// every file has been written.
    pub fn write_run(&self, output: &RunOutput, usage: Option<&UsageReport>) -> Result<PathBuf, StoreError> {
        let summary = &output.summary;
        validate_run_id(&summary.run_id)?;
        let runs = self.runs_dir();
        let target = runs.join(&summary.run_id);
        if target.exists() {
            return Err(StoreError::RunExists(summary.run_id.clone()));
        }
        std::fs::create_dir_all(&runs).map_err(io_err(&runs))?;
        let staging = runs.join(format!(".staging-{}-{}", summary.run_id, std::process::id()));
        if staging.exists() {
            std::fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
        }
        let written = self.write_files(&staging, output, usage).and_then(|()| {
            std::fs::rename(&staging, &target).map_err(io_err(&target))
        });
        if written.is_err() {
            let _ = std::fs::remove_dir_all(&staging);
        }
        written.map(|()| target)
    }

    fn write_files(&self, dir: &Path, output: &RunOutput, usage: Option<&UsageReport>) -> Result<(), StoreError> {
        let summary = &output.summary;
        let mut classes = Vec::new();
        for results in &output.results {
            let file = results_file_name(&results.spec.class_iri);
            let path = dir.join(RESULTS_DIR).join(&file);
            write_json_atomic(&path, results).map_err(io_err(&path))?;
            classes.push(ClassFile {
                class_iri: results.spec.class_iri.clone(),
                file,
            });
        }
        let manifest = RunManifest {
            schema_version: RUN_SCHEMA_VERSION,
            run_id: summary.run_id.clone(),
            kg_name: summary.kg_name.clone(),
            model_id: summary.model_id.clone(),
            template_versions: summary.template_versions.clone(),
            classes,
            started_at: summary.started_at,
            finished_at: summary.finished_at,
        };
        let put = |name: &str, value: &dyn erased::Json| {
            let path = dir.join(name);
            value.write(&path).map_err(io_err(&path))
        };
        put(SUMMARY_FILE, summary)?;
        if let Some(u) = usage {
            put(USAGE_FILE, u)?;
        }
        // The manifest is written last: its presence marks a complete run.
        put(MANIFEST_FILE, &manifest)
    }

    fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load_manifest(&self, run_id: &str) -> Result<RunManifest, StoreError> {
        let path = self.run_dir(run_id)?.join(MANIFEST_FILE);
        let manifest: RunManifest = Self::read_json(&path)?;
        if manifest.schema_version != RUN_SCHEMA_VERSION {
            return Err(StoreError::Corrupt {
                path,
                message: format!("unsupported schema version {}", manifest.schema_version),
            });
        }
        Ok(manifest)
    }

    pub fn load_summary(&self, run_id: &str) -> Result<RunSummary, StoreError> {
        Self::read_json(&self.run_dir(run_id)?.join(SUMMARY_FILE))
    }

    pub fn load_usage(&self, run_id: &str) -> Result<Option<UsageReport>, StoreError> {
        let path = self.run_dir(run_id)?.join(USAGE_FILE);
        if path.exists() {
            Self::read_json(&path).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Class results in manifest order.
    pub fn load_results(&self, run_id: &str) -> Result<Vec<ClassResults>, StoreError> {
        let dir = self.run_dir(run_id)?;
        self.load_manifest(run_id)?
            .classes
            .iter()
            .map(|c| Self::read_json(&dir.join(RESULTS_DIR).join(&c.file)))
            .collect()
    }

    fn header(&self, run_id: &str) -> Result<RunHeader, StoreError> {
        let manifest = self.load_manifest(run_id)?;
        let summary = self.load_summary(run_id)?;
        Ok(RunHeader {
            run_id: run_id.into(),
            kg_name: Some(manifest.kg_name),
            model_id: Some(manifest.model_id),
            finished_at: Some(manifest.finished_at),
            classes: summary.per_class.len(),
            disagreements: summary.pooled_matrix().disagreements(),
            corrupt: false,
            error: None,
        })
    }

    /// Every run, newest first. Unreadable runs are listed with `corrupt` set.
    pub fn list_runs(&self) -> Result<Vec<RunHeader>, StoreError> {
        let runs = self.runs_dir();
        let entries = match std::fs::read_dir(&runs) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&runs)(e)),
        };
        let mut headers = Vec::new();
        for entry in entries {
            let entry = entry.map_err(io_err(&runs))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if !entry.path().is_dir() || validate_run_id(&name).is_err() {
                continue;
            }
            headers.push(self.header(&name).unwrap_or_else(|e| RunHeader {
                run_id: name.clone(),
                kg_name: None,
                model_id: None,
                finished_at: None,
                classes: 0,
                disagreements: 0,
                corrupt: true,
                error: Some(e.to_string()),
            }));
        }
        headers.sort_by(|a, b| b.finished_at.cmp(&a.finished_at).then_with(|| a.run_id.cmp(&b.run_id)));
        Ok(headers)
    }
}

mod erased {
    use std::path::Path;

    /// Object-safe JSON writing so that differently typed files share one helper.
    pub trait Json {
        fn write(&self, path: &Path) -> std::io::Result<()>;
    }

    impl<T: serde::Serialize> Json for T {
        fn write(&self, path: &Path) -> std::io::Result<()> {
            crate::fsutil::write_json_atomic(path, self)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::summarize_run;

    fn output(run_id: &str, finished: &str) -> RunOutput {
        let t: DateTime<Utc> = finished.parse().unwrap();
        let versions = TemplateVersions {
            rationale: "r".into(),
            answer: "a".into(),
        };
        RunOutput {
            summary: summarize_run(run_id, "toy", "m", versions, &[], t, t),
            results: vec![],
        }
    }

    #[test]
    fn empty_store_lists_nothing() {
        let dir = tempfile::tempdir().unwrap();
        assert!(RunStore::new(dir.path()).list_runs().unwrap().is_empty());
    }

    #[test]
    fn runs_are_listed_newest_first_and_corruption_is_isolated() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        store.write_run(&output("old", "2024-01-01T00:00:00Z"), None).unwrap();
        store.write_run(&output("new", "2024-06-01T00:00:00Z"), None).unwrap();
        store.write_run(&output("bad", "2024-03-01T00:00:00Z"), None).unwrap();
        std::fs::write(store.runs_dir().join("bad").join(SUMMARY_FILE), "{").unwrap();
        let ids: Vec<(String, bool)> = store
            .list_runs()
            .unwrap()
            .into_iter()
            .map(|h| (h.run_id, h.corrupt))
            .collect();
        assert_eq!(
            ids,
            [("new".into(), false), ("old".into(), false), ("bad".into(), true)]
        );
    }

    #[test]
    fn runs_are_immutable_and_ids_validated() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        store.write_run(&output("a", "2024-01-01T00:00:00Z"), None).unwrap();
        assert!(matches!(
            store.write_run(&output("a", "2024-01-01T00:00:00Z"), None),
            Err(StoreError::RunExists(_))
        ));
        assert!(matches!(store.run_dir("../x"), Err(StoreError::InvalidRunId(_))));
        assert!(matches!(store.load_summary("zzz"), Err(StoreError::UnknownRun(_))));
        let leftovers: Vec<_> = std::fs::read_dir(store.runs_dir())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().starts_with('.'))
            .collect();
        assert!(leftovers.is_empty());
    }
}
