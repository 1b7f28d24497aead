use std::collections::HashSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::classifier::Verdict;
use crate::kg::validate_iri;

pub const SCHEMA_VERSION: u32 = 1;

/// A class under audit, its superclass and its natural-language definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub class_iri: String,
    pub superclass_iri: String,
    pub label: String,
    pub definition: String,
}

impl ClassSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        validate_iri(&self.class_iri)?;
        validate_iri(&self.superclass_iri)?;
        if self.class_iri == self.superclass_iri {
            return Err(DatasetError::InvalidSpec(format!("{} is its own superclass", self.class_iri)));
        }
        if self.definition.trim().is_empty() {
            return Err(DatasetError::InvalidSpec(format!("{} has an empty definition", self.class_iri)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleFlag {
    /// No description could be obtained; the example cannot be classified.
    DescriptionMissing,
    /// The description is nothing more than the entity label.
    LowInformation,
    /// No label triple; the IRI local name is used as label.
    LabelFallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub entity_iri: String,
    pub label: String,
    pub description: String,
    pub gold: Verdict,
    #[serde(default)]
    pub flags: Vec<ExampleFlag>,
}

impl LabeledExample {
    pub fn has_flag(&self, flag: ExampleFlag) -> bool {
        self.flags.contains(&flag)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        validate_iri(&self.entity_iri)?;
        if self.description.trim().is_empty() && !self.has_flag(ExampleFlag::DescriptionMissing) {
            return Err(DatasetError::InvalidSpec(format!(
                "{} has an empty description without the description_missing flag",
                self.entity_iri
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DatasetFlag {
    /// Fewer than `requested` negatives were available.
    NegativeShortfall { requested: usize, available: usize },
    /// The subclass traversal hit `max_depth` while computing an extension.
    DepthExceeded,
}

/// One audited class with its labeled examples, as persisted on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDataset {
    pub schema_version: u32,
    pub kg_name: String,
    pub spec: ClassSpec,
    pub positives: Vec<LabeledExample>,
    pub negatives: Vec<LabeledExample>,
    pub sampling_seed: u64,
    /// Name of the sampling algorithm, so draws can be replayed elsewhere.
    pub sampler: String,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub flags: Vec<DatasetFlag>,
}

impl ClassDataset {
    pub fn examples(&self) -> impl Iterator<Item = &LabeledExample> {
        self.positives.iter().chain(self.negatives.iter())
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        self.spec.validate()?;
        for (examples, gold) in [(&self.positives, Verdict::Positive), (&self.negatives, Verdict::Negative)] {
            for e in examples {
                e.validate()?;
                if e.gold != gold {
                    return Err(DatasetError::InvalidSpec(format!(
                        "{} is listed as {gold} but labeled {}",
                        e.entity_iri, e.gold
                    )));
                }
            }
        }
        let positives: HashSet<&str> = self.positives.iter().map(|e| e.entity_iri.as_str()).collect();
        if let Some(dup) = self.negatives.iter().find(|e| positives.contains(e.entity_iri.as_str())) {
            return Err(DatasetError::InvalidSpec(format!(
                "{} appears as both positive and negative",
                dup.entity_iri
            )));
        }
        Ok(())
    }
}
