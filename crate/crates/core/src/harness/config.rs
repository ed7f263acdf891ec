use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbones::BackboneKind;
use crate::data::{
    augment_negatives, encode_dataset, load_cache, parse_interactions, parse_item_categories,
    parse_movielens_dir, save_cache, split_dataset, synthetic_dataset, DatasetKind, DatasetSplit,
    EncodedDataset, SyntheticConfig,
};
use crate::dml::HeadVariant;
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_MAX_PAIRS;
use crate::model::{ModelConfig, EMBEDDING_DIM, TOWER_HIDDEN};
use crate::nn::{keyed_rng, AdamConfig};

/// Top-level experiment description, read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelGrid,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// MovieLens directory, or the interactions file for Electronics.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Optional `item,category...` file for Electronics.
    #[serde(default)]
    pub categories: Option<PathBuf>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    /// Processed-split cache, read if present and written otherwise.
    #[serde(default)]
    pub cache: Option<PathBuf>,
    /// Fraction of examples kept, drawn before splitting.
    #[serde(default = "default_subsample")]
    pub subsample: f64,
    /// Seed for augmentation, subsampling and the 8:1:1 split.
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default)]
    pub synthetic: SyntheticSection,
}

fn default_delimiter() -> char {
    ','
}

fn default_subsample() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub examples: usize,
    pub users: usize,
    pub items: usize,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let d = SyntheticConfig::default();
        Self {
            examples: d.examples,
            users: d.users,
            items: d.items,
        }
    }
}

/// Backbones and head variants to train; every combination is run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelGrid {
    pub backbones: Vec<BackboneKind>,
    pub variants: Vec<HeadVariant>,
    pub embedding_dim: usize,
    pub expert_dim: usize,
    pub tower_hidden: Vec<usize>,
}

impl Default for ModelGrid {
    fn default() -> Self {
        Self {
            backbones: vec![BackboneKind::SharedBottom],
            variants: vec![HeadVariant::None, HeadVariant::Full],
            embedding_dim: EMBEDDING_DIM,
            expert_dim: 128,
            tower_hidden: TOWER_HIDDEN.to_vec(),
        }
    }
}

impl ModelGrid {
    pub fn configs(&self) -> Vec<ModelConfig> {
        let mut out = Vec::new();
        for &b in &self.backbones {
            for &v in &self.variants {
                let mut c = ModelConfig::new(b, v);
                c.backbone = c.backbone.with_expert_dim(self.expert_dim);
                c.embedding_dim = self.embedding_dim;
                c.tower_hidden = self.tower_hidden.clone();
                out.push(c);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub seeds: Vec<u64>,
    pub epochs: usize,
    /// Validations without improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Validate every this many epochs (the last epoch is always validated).
    pub eval_every: usize,
    pub eval_batch_size: usize,
    pub max_pairs: u64,
    pub metric_seed: u64,
    pub save_checkpoints: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3, 4, 5],
            epochs: 10,
            patience: 2,
            batch_size: 512,
            learning_rate: 1e-3,
            eval_every: 1,
            eval_batch_size: 4096,
            max_pairs: DEFAULT_MAX_PAIRS,
            metric_seed: 0,
            save_checkpoints: true,
        }
    }
}

impl TrainingConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

impl ExperimentConfig {
    /// Defaults for `kind`, reading raw data from `path`.
    pub fn for_dataset(kind: DatasetKind, path: Option<PathBuf>) -> Self {
        Self {
            dataset: DatasetConfig {
                kind,
                path,
                categories: None,
                delimiter: default_delimiter(),
                cache: None,
                subsample: default_subsample(),
                split_seed: 0,
                synthetic: SyntheticSection::default(),
            },
            model: ModelGrid::default(),
            training: TrainingConfig::default(),
            output_dir: default_output_dir(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.training;
        if t.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if t.seeds.iter().collect::<BTreeSet<_>>().len() != t.seeds.len() {
            return Err(Error::Config(format!(
                "seeds must be distinct: {:?}",
                t.seeds
            )));
        }
        if t.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if t.batch_size == 0 || t.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        if t.patience == 0 || t.eval_every == 0 {
            return Err(Error::Config(
                "patience and eval_every must be at least 1".into(),
            ));
        }
        if !(t.learning_rate.is_finite() && t.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "bad learning rate {}",
                t.learning_rate
            )));
        }
        if t.max_pairs == 0 {
            return Err(Error::Config("max_pairs must be positive".into()));
        }
        let d = &self.dataset;
        if !(d.subsample > 0.0 && d.subsample <= 1.0) {
            return Err(Error::Config(format!(
                "subsample must lie in (0, 1], got {}",
                d.subsample
            )));
        }
        if d.kind != DatasetKind::Synthetic && d.path.is_none() && d.cache.is_none() {
            return Err(Error::Config(format!("dataset `{}` needs a path", d.kind)));
        }
        let m = &self.model;
        if m.backbones.is_empty() || m.variants.is_empty() {
            return Err(Error::Config("model grid is empty".into()));
        }
        if m.embedding_dim == 0 || m.expert_dim == 0 || m.tower_hidden.is_empty() {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Encoded dataset plus its split, shared read-only by all runs.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub dataset: EncodedDataset,
    pub split: DatasetSplit,
}

/// Builds the encoded dataset and split from raw files (or the synthetic
/// generator), bypassing any cache.
pub fn build_data(config: &DatasetConfig) -> Result<PreparedData> {
    let path = || {
        config
            .path
            .clone()
            .ok_or_else(|| Error::Config(format!("dataset `{}` needs a path", config.kind)))
    };
    let raw = match config.kind {
        DatasetKind::MovieLens1M => parse_movielens_dir(&path()?)?,
        DatasetKind::Electronics => {
            let mut raw = parse_interactions(&path()?, config.delimiter, config.kind)?;
            if let Some(categories) = &config.categories {
                parse_item_categories(categories, config.delimiter, &mut raw)?;
            }
            raw.records = augment_negatives(&raw.records, raw.items.known(), config.split_seed);
            raw
        }
        DatasetKind::Synthetic => synthetic_dataset(SyntheticConfig {
            examples: config.synthetic.examples,
            users: config.synthetic.users,
            items: config.synthetic.items,
            seed: config.split_seed,
        })?,
    };
    log::info!(
        "{}: {} records, {} users, {} items",
        config.kind,
        raw.records.len(),
        raw.users.known(),
        raw.items.known()
    );
    let mut dataset = encode_dataset(&raw)?;
    if config.subsample < 1.0 {
        use rand::seq::SliceRandom;
        let keep = ((dataset.examples.len() as f64) * config.subsample).round() as usize;
        let mut order: Vec<usize> = (0..dataset.examples.len()).collect();
        order.shuffle(&mut keyed_rng(config.split_seed, "subsample"));
        let mut kept = vec![false; order.len()];
        for &i in &order[..keep.max(1)] {
            kept[i] = true;
        }
        let examples = std::mem::take(&mut dataset.examples);
        dataset.examples = examples
            .into_iter()
            .zip(kept)
            .filter_map(|(ex, k)| k.then_some(ex))
            .collect();
    }
    let split = split_dataset(&dataset.examples, config.split_seed)?;
    Ok(PreparedData { dataset, split })
}

/// [`build_data`] behind the processed-split cache.
pub fn prepare_data(config: &DatasetConfig) -> Result<PreparedData> {
    if let Some(cache) = &config.cache {
        if cache.exists() {
            let (dataset, split) = load_cache(cache)?;
            if split.seed == config.split_seed && dataset.kind == config.kind {
                log::info!("loaded processed split from {}", cache.display());
                return Ok(PreparedData { dataset, split });
            }
            log::warn!(
                "{} was built for another seed or dataset; rebuilding",
                cache.display()
            );
        }
    }
    let data = build_data(config)?;
    if let Some(cache) = &config.cache {
        if let Some(parent) = cache.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        save_cache(cache, &data.dataset, &data.split)?;
    }
    Ok(data)
}
