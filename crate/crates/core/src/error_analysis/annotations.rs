//! Append-only annotation storage with a compacted current-state file.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{AnalysisError, ErrorCause};
use crate::classifier::Verdict;
use crate::fsutil::write_json_atomic;
use crate::store::{ANNOTATION_LOG, ANNOTATION_STATE};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorAnnotation {
    pub record_id: String,
    pub annotator_id: String,
    pub human_verdict: Verdict,
    pub cause: ErrorCause,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub annotated_at: DateTime<Utc>,
}

/// Current annotations plus every overwritten one.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationState {
    /// Keyed by `(record_id, annotator_id)`.
    #[serde(with = "pairs")]
    pub current: BTreeMap<(String, String), ErrorAnnotation>,
    pub history: Vec<ErrorAnnotation>,
}

mod pairs {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<(String, String), ErrorAnnotation>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.values())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<(String, String), ErrorAnnotation>, D::Error> {
        let list = Vec::<ErrorAnnotation>::deserialize(d)?;
        Ok(list
            .into_iter()
            .map(|a| ((a.record_id.clone(), a.annotator_id.clone()), a))
            .collect())
    }
}

impl AnnotationState {
    /// Applies one annotation; returns whether it replaced an earlier one.
    pub fn apply(&mut self, annotation: ErrorAnnotation) -> bool {
        let key = (annotation.record_id.clone(), annotation.annotator_id.clone());
        match self.current.insert(key, annotation) {
            Some(old) => {
                self.history.push(old);
                true
            }
            None => false,
        }
    }

    pub fn annotations(&self) -> impl Iterator<Item = &ErrorAnnotation> {
        self.current.values()
    }

    pub fn for_record<'a>(&'a self, record_id: &'a str) -> impl Iterator<Item = &'a ErrorAnnotation> + 'a {
        self.current
            .range((record_id.to_string(), String::new())..)
            .take_while(move |((r, _), _)| r == record_id)
            .map(|(_, a)| a)
    }

    pub fn annotators(&self) -> BTreeSet<&str> {
        self.current.keys().map(|(_, a)| a.as_str()).collect()
    }
}

/// Annotation store of one run. The log is the source of truth; the compacted
/// file is rewritten after every append. Writes are serialized.
#[derive(Debug)]
pub struct AnnotationStore {
    log_path: PathBuf,
    state_path: PathBuf,
    state: Mutex<AnnotationState>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recorded {
    pub annotation: ErrorAnnotation,
    pub overwritten: bool,
}

impl AnnotationStore {
    /// Opens the store in `run_dir`, replaying the log. A truncated final
    /// line (an interrupted append) is ignored.
    pub fn open(run_dir: &Path) -> Result<Self, AnalysisError> {
        let log_path = run_dir.join(ANNOTATION_LOG);
        let state_path = run_dir.join(ANNOTATION_STATE);
        let mut state = AnnotationState::default();
        match std::fs::File::open(&log_path) {
            Ok(f) => {
                let lines: Vec<String> = BufReader::new(f)
                    .lines()
                    .collect::<Result<_, _>>()
                    .map_err(|e| AnalysisError::io(&log_path, e))?;
                let last = lines.len().saturating_sub(1);
                for (i, line) in lines.iter().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    match serde_json::from_str::<ErrorAnnotation>(line) {
                        Ok(a) => {
                            state.apply(a);
                        }
                        Err(e) if i == last => log::warn!("{}: ignoring truncated last line: {e}", log_path.display()),
                        Err(e) => {
                            return Err(AnalysisError::Corrupt {
                                path: log_path,
                                message: format!("line {}: {e}", i + 1),
                            })
                        }
                    }
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(AnalysisError::io(&log_path, e)),
        }
        Ok(Self {
            log_path,
            state_path,
            state: Mutex::new(state),
        })
    }

    /// A copy of the current state.
    pub fn snapshot(&self) -> AnnotationState {
        self.lock().clone()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, AnnotationState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Persists `annotation`, replacing any earlier one by the same annotator
    /// on the same record.
    pub fn record(&self, annotation: ErrorAnnotation) -> Result<Recorded, AnalysisError> {
        let mut state = self.lock();
        let mut line = serde_json::to_string(&annotation).map_err(|e| AnalysisError::Corrupt {
            path: self.log_path.clone(),
            message: e.to_string(),
        })?;
        line.push('\n');
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.log_path)
            .map_err(|e| AnalysisError::io(&self.log_path, e))?;
        log.write_all(line.as_bytes())
            .and_then(|()| log.sync_data())
            .map_err(|e| AnalysisError::io(&self.log_path, e))?;
        let overwritten = state.apply(annotation.clone());
        if let Err(e) = write_json_atomic(&self.state_path, &*state) {
            // The log already holds the annotation; the compacted file is rebuilt on the next write.
            log::warn!("{}: {e}", self.state_path.display());
        }
        Ok(Recorded { annotation, overwritten })
    }
}
