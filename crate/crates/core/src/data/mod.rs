//! Dataset ingestion, label derivation, negative augmentation, splitting
//! and batching.
//!
//! Raw ids are interned while parsing; index `0` of every vocabulary is
//! the unknown bucket. Side features live once per user or item and are
//! joined at batch assembly time.

mod augment;
mod batch;
mod cache;
mod encode;
mod interactions;
mod movielens;
mod split;
mod synthetic;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, LossKind};

pub use augment::{augment_negatives, augment_negatives_with_stats, AugmentStats};
pub use batch::{batch_iterator, Batch, BatchIter};
pub use cache::{load_cache, save_cache, CACHE_MAGIC};
pub use encode::{derive_labels, encode_dataset, EncodedDataset, FeatureField, FieldValues, Side};
pub use interactions::{parse_interactions, parse_item_categories};
pub use movielens::{parse_movielens, parse_movielens_dir};
pub use split::{split_dataset, DatasetSplit};
pub use synthetic::{synthetic_dataset, SyntheticConfig, SYNTHETIC_RATING_CUTS};

/// Largest fraction of malformed lines tolerated in an input file.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;

/// Ratings at or above this count as positive.
pub const POSITIVE_RATING: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[serde(rename = "ml1m")]
    MovieLens1M,
    Electronics,
    Synthetic,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::MovieLens1M => "ml1m",
            DatasetKind::Electronics => "electronics",
            DatasetKind::Synthetic => "synthetic",
        }
    }

    pub fn tasks(self) -> Vec<TaskSpec> {
        match self {
            DatasetKind::MovieLens1M | DatasetKind::Synthetic => vec![
                TaskSpec::new("positive", TaskKind::Classification),
                TaskSpec::new("rating", TaskKind::Regression),
            ],
            DatasetKind::Electronics => vec![
                TaskSpec::new("rated", TaskKind::Classification),
                TaskSpec::new("positive", TaskKind::Classification),
            ],
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ml1m" | "ml-1m" | "movielens" => Ok(DatasetKind::MovieLens1M),
            "electronics" | "amazon" => Ok(DatasetKind::Electronics),
            "synthetic" => Ok(DatasetKind::Synthetic),
            other => Err(Error::Config(format!("unknown dataset kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

impl TaskKind {
    pub fn output_activation(self) -> Activation {
        match self {
            TaskKind::Classification => Activation::Sigmoid,
            TaskKind::Regression => Activation::Linear,
        }
    }

    pub fn loss(self) -> LossKind {
        match self {
            TaskKind::Classification => LossKind::BinaryCrossEntropy,
            TaskKind::Regression => LossKind::SquaredError,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
}

impl TaskSpec {
    pub fn new(name: impl Into<String>, kind: TaskKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

/// Raw id ↔ dense index map; index 0 is reserved for unknown values.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    ids: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self {
            ids: vec![String::new()],
            index: HashMap::new(),
        }
    }

    /// Builds a vocabulary with the given ids in order.
    pub fn from_ids<I: IntoIterator<Item = S>, S: Into<String>>(ids: I) -> Self {
        let mut v = Self::new();
        for id in ids {
            v.intern(&id.into());
        }
        v
    }

    pub fn intern(&mut self, id: &str) -> u32 {
        if self.ids.is_empty() {
            self.ids.push(String::new());
        }
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len() as u32;
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        i
    }

    /// Index of `id`, or 0 when unseen.
    pub fn lookup(&self, id: &str) -> u32 {
        self.index.get(id).copied().unwrap_or(0)
    }

    pub fn id(&self, index: u32) -> Option<&str> {
        (index != 0)
            .then(|| self.ids.get(index as usize).map(String::as_str))
            .flatten()
    }

    /// Table size including the unknown row.
    pub fn size(&self) -> usize {
        self.ids.len().max(1)
    }

    /// Number of known ids.
    pub fn known(&self) -> usize {
        self.size() - 1
    }
}

/// One observed (or synthesised) user-item interaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user: u32,
    pub item: u32,
    /// 1-5 for observed ratings, 0 for synthesised negatives.
    pub rating: u8,
    pub timestamp: Option<i64>,
}

/// Categorical side features for one entity type (users or items).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SideFeatures {
    pub fields: Vec<String>,
    /// Entity index → per-field raw values (multi-valued fields may hold
    /// several).
    pub values: HashMap<u32, Vec<Vec<String>>>,
}

impl SideFeatures {
    pub fn new(fields: &[&str]) -> Self {
        Self {
            fields: fields.iter().map(|s| s.to_string()).collect(),
            values: HashMap::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParseStats {
    pub lines: usize,
    pub malformed: usize,
}

impl ParseStats {
    fn check(&self, what: &str) -> Result<()> {
        if self.lines > 0 && self.malformed as f64 > MAX_MALFORMED_FRACTION * self.lines as f64 {
            return Err(Error::Data(format!(
                "{what}: {} of {} lines malformed (limit {:.0}%)",
                self.malformed,
                self.lines,
                MAX_MALFORMED_FRACTION * 100.0
            )));
        }
        if self.malformed > 0 {
            log::warn!("{what}: skipped {} malformed lines", self.malformed);
        }
        Ok(())
    }
}

/// Parsed interactions plus interned ids and side features.
#[derive(Clone, Debug)]
pub struct RawDataset {
    pub kind: DatasetKind,
    pub records: Vec<InteractionRecord>,
    pub users: Vocab,
    pub items: Vocab,
    pub user_side: SideFeatures,
    pub item_side: SideFeatures,
    pub stats: ParseStats,
}

/// Per-task label values of one example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub user: u32,
    pub item: u32,
    pub rating: u8,
    pub labels: Vec<f64>,
}
