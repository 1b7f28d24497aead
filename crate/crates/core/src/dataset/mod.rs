//! Sampling of audit classes and labeled examples, and the dataset file format.

mod model;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use model::{ClassDataset, ClassSpec, DatasetFlag, ExampleFlag, LabeledExample, SCHEMA_VERSION};

use crate::classifier::Verdict;
use crate::fsutil::{sha256_hex, write_json_atomic};
use crate::kg::{local_name, KgError, KnowledgeGraph, DEFAULT_MAX_DEPTH};
use crate::verbalizer::{DescriptionSource, VerbalizationFlag};

/// Identifier of the sampling procedure recorded in every dataset: a ChaCha20
/// stream seeded with SHA-256(`"{seed}\0{stream}"`), unbiased bounded draws by
/// rejection, and a partial Fisher-Yates shuffle over the lexicographically
/// sorted population.
pub const SAMPLER_NAME: &str = "chacha20-sha256seed-fisher-yates-v1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("only {found} eligible classes found, {requested} requested")]
    InsufficientClasses { requested: usize, found: usize },
    #[error("{class} has {available} instances, {requested} positives requested")]
    InsufficientPositives {
        class: String,
        requested: usize,
        available: usize,
    },
    #[error("no entity of the superclass lies outside {0}")]
    EmptyNegativePool(String),
    #[error("invalid dataset: {0}")]
    InvalidSpec(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dataset schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: String, expected: u32 },
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

/// Deterministic sampler; see [`SAMPLER_NAME`].
pub struct SeededSampler {
    rng: ChaCha20Rng,
}

impl SeededSampler {
    pub fn new(seed: u64, stream: &str) -> Self {
        let digest = sha2::Sha256::digest_bytes(format!("{seed}\0{stream}").as_bytes());
        Self {
            rng: ChaCha20Rng::from_seed(digest),
        }
    }

    /// Uniform integer in `0..bound`.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let x = self.rng.next_u64();
            if x >= threshold {
                return x % bound;
            }
        }
    }

    /// `k` distinct items drawn without replacement, in draw order.
    pub fn sample<T: Ord + Clone>(&mut self, population: &BTreeSet<T>, k: usize) -> Vec<T> {
        let mut items: Vec<T> = population.iter().cloned().collect();
        let k = k.min(items.len());
        for i in 0..k {
            let j = i + self.below((items.len() - i) as u64) as usize;
            items.swap(i, j);
        }
        items.truncate(k);
        items
    }
}

trait DigestBytes {
    fn digest_bytes(data: &[u8]) -> [u8; 32];
}

impl DigestBytes for sha2::Sha256 {
    fn digest_bytes(data: &[u8]) -> [u8; 32] {
        use sha2::Digest;
        sha2::Sha256::digest(data).into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveScope {
    /// Direct and inherited instances.
    #[default]
    Extension,
    /// Direct instances only.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingOptions {
    pub max_depth: usize,
    pub positive_scope: PositiveScope,
    /// Upper bound on subclass pairs inspected when sampling classes.
    pub candidate_limit: usize,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            max_depth: DEFAULT_MAX_DEPTH,
            positive_scope: PositiveScope::Extension,
            candidate_limit: 5000,
        }
    }
}

/// Samples `n` distinct classes that have a labeled superclass pair, at least
/// `k` instances, a non-empty negative pool and a retrievable definition.
pub fn sample_classes(
    kg: &dyn KnowledgeGraph,
    n: usize,
    k: usize,
    seed: u64,
    options: &SamplingOptions,
    definitions: &dyn DescriptionSource,
) -> Result<Vec<ClassSpec>, DatasetError> {
    if n == 0 || k == 0 {
        return Err(DatasetError::InvalidArgument("n and k must be at least 1".into()));
    }
    let pairs: BTreeSet<(String, String)> = kg.subclass_pairs(options.candidate_limit)?.into_iter().collect();
    let order = SeededSampler::new(seed, "classes").sample(&pairs, pairs.len());
    let mut picked: Vec<ClassSpec> = Vec::new();
    let mut seen = BTreeSet::new();
    for (class, superclass) in order {
        if picked.len() == n {
            break;
        }
        if class == superclass || seen.contains(&class) {
            continue;
        }
        let label = kg.label(&class)?;
        if label.fallback {
            continue;
        }
        let ext_c = kg.extension(&class, options.max_depth)?.members;
        if ext_c.len() < k {
            continue;
        }
        let ext_d = kg.extension(&superclass, options.max_depth)?.members;
        if ext_d.difference(&ext_c).next().is_none() {
            continue;
        }
        let definition = match definitions.describe(&class, &label.text) {
            Ok(v) if !v.has_flag(VerbalizationFlag::Empty) => v.text,
            Ok(_) => continue,
            Err(e) => {
                log::info!("skipping {class}: {e}");
                continue;
            }
        };
        seen.insert(class.clone());
        picked.push(ClassSpec {
            class_iri: class,
            superclass_iri: superclass,
            label: label.text,
            definition,
        });
    }
    if picked.len() < n {
        return Err(DatasetError::InsufficientClasses {
            requested: n,
            found: picked.len(),
        });
    }
    Ok(picked)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExampleSample {
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
    /// `(requested, available)` when fewer than `k` negatives exist.
    pub negative_shortfall: Option<(usize, usize)>,
    pub depth_exceeded: bool,
}

/// Draws `k` positives from ext(c) and up to `k` negatives from ext(d) \ ext(c).
pub fn sample_examples(
    kg: &dyn KnowledgeGraph,
    spec: &ClassSpec,
    k: usize,
    seed: u64,
    options: &SamplingOptions,
) -> Result<ExampleSample, DatasetError> {
    if k == 0 {
        return Err(DatasetError::InvalidArgument("k must be at least 1".into()));
    }
    let ext_c = kg.extension(&spec.class_iri, options.max_depth)?;
    let ext_d = kg.extension(&spec.superclass_iri, options.max_depth)?;
    let positive_pool = match options.positive_scope {
        PositiveScope::Extension => ext_c.members.clone(),
        PositiveScope::Direct => kg.direct_instances(&spec.class_iri)?,
    };
    if positive_pool.len() < k {
        return Err(DatasetError::InsufficientPositives {
            class: spec.class_iri.clone(),
            requested: k,
            available: positive_pool.len(),
        });
    }
    let negative_pool: BTreeSet<String> = ext_d.members.difference(&ext_c.members).cloned().collect();
    if negative_pool.is_empty() {
        return Err(DatasetError::EmptyNegativePool(spec.class_iri.clone()));
    }
    let mut sampler = SeededSampler::new(seed, &format!("examples\0{}", spec.class_iri));
    let positives = sampler.sample(&positive_pool, k);
    let negatives = sampler.sample(&negative_pool, k);
    let negative_shortfall = (negative_pool.len() < k).then_some((k, negative_pool.len()));
    Ok(ExampleSample {
        positives,
        negatives,
        negative_shortfall,
        depth_exceeded: ext_c.depth_exceeded || ext_d.depth_exceeded,
    })
}

fn label_example(
    kg: &dyn KnowledgeGraph,
    describer: &dyn DescriptionSource,
    entity: &str,
    gold: Verdict,
) -> Result<LabeledExample, DatasetError> {
    let label = kg.label(entity)?;
    let mut flags = Vec::new();
    if label.fallback {
        flags.push(ExampleFlag::LabelFallback);
    }
    let description = match describer.describe(entity, &label.text) {
        Ok(v) if v.has_flag(VerbalizationFlag::Empty) => None,
        Ok(v) => {
            if v.has_flag(VerbalizationFlag::LowInformation) {
                flags.push(ExampleFlag::LowInformation);
            }
            Some(v.text)
        }
        Err(e) => {
            log::warn!("no description for {entity}: {e}");
            None
        }
    };
    if description.is_none() {
        flags.push(ExampleFlag::DescriptionMissing);
    }
    Ok(LabeledExample {
        entity_iri: entity.to_string(),
        label: label.text,
        description: description.unwrap_or_default(),
        gold,
        flags,
    })
}

/// Samples examples for `spec` and attaches labels and descriptions.
/// Entities whose description cannot be produced are kept and flagged.
pub fn build_dataset(
    kg: &dyn KnowledgeGraph,
    spec: &ClassSpec,
    k: usize,
    seed: u64,
    options: &SamplingOptions,
    describer: &dyn DescriptionSource,
) -> Result<ClassDataset, DatasetError> {
    spec.validate()?;
    let sample = sample_examples(kg, spec, k, seed, options)?;
    let label_all = |entities: &[String], gold| {
        entities
            .par_iter()
            .map(|e| label_example(kg, describer, e, gold))
            .collect::<Result<Vec<_>, _>>()
    };
    let positives = label_all(&sample.positives, Verdict::Positive)?;
    let negatives = label_all(&sample.negatives, Verdict::Negative)?;
    let mut flags = Vec::new();
    if let Some((requested, available)) = sample.negative_shortfall {
        flags.push(DatasetFlag::NegativeShortfall { requested, available });
    }
    if sample.depth_exceeded {
        flags.push(DatasetFlag::DepthExceeded);
    }
    let dataset = ClassDataset {
        schema_version: SCHEMA_VERSION,
        kg_name: kg.name().to_string(),
        spec: spec.clone(),
        positives,
        negatives,
        sampling_seed: seed,
        sampler: SAMPLER_NAME.into(),
        created_at: chrono::Utc::now(),
        flags,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Stable file name for a class: local name plus a short IRI digest.
pub fn dataset_file_name(spec: &ClassSpec) -> String {
    let slug: String = local_name(&spec.class_iri)
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .take(60)
        .collect();
    format!("{slug}-{}.json", &sha256_hex(&spec.class_iri)[..10])
}

pub fn save_dataset(dataset: &ClassDataset, path: &Path) -> Result<(), DatasetError> {
    write_json_atomic(path, dataset).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_dataset(path: &Path) -> Result<ClassDataset, DatasetError> {
    let bytes = std::fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let format = |message: String| DatasetError::Format {
        path: path.to_path_buf(),
        message,
    };
    let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| format(e.to_string()))?;
    match value.get("schema_version") {
        Some(v) if v.as_u64() == Some(u64::from(SCHEMA_VERSION)) => {}
        other => {
            return Err(DatasetError::SchemaVersionMismatch {
                found: other.map(|v| v.to_string()).unwrap_or_else(|| "none".into()),
                expected: SCHEMA_VERSION,
            })
        }
    }
    let dataset: ClassDataset = serde_json::from_value(value).map_err(|e| format(e.to_string()))?;
    dataset.validate()?;
    Ok(dataset)
}

/// File name of the sampling manifest written next to the datasets.
pub const SAMPLING_MANIFEST: &str = "_sampling.json";

/// Loads every `*.json` dataset in `dir`, sorted by file name. Files whose
/// name starts with `_` are skipped.
pub fn load_dataset_dir(dir: &Path) -> Result<Vec<ClassDataset>, DatasetError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|source| DatasetError::Io {
            path: dir.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .filter(|p| !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('_')))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_dataset(p)).collect()
}
