//! Full multi-task model: field embeddings, backbone and task head.

use dml_autodiff::{Graph, NodeId, ParameterStore};
use serde::{Deserialize, Serialize};

use crate::backbones::{
    init_backbone, mmoe_forward, ple_forward, shared_bottom_forward, single_task_bottom,
    BackboneConfig, BackboneKind,
};
use crate::data::{Batch, TaskSpec};
use crate::dml::{DmlHead, HeadNodes, HeadVariant};
use crate::error::{Error, Result};
use crate::nn::{embed_and_concat, task_loss, EmbeddingTable, ParamBuilder, Telemetry};

pub const EMBEDDING_DIM: usize = 8;
pub const TOWER_HIDDEN: [usize; 2] = [128, 80];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub variant: HeadVariant,
    pub embedding_dim: usize,
    pub tower_hidden: Vec<usize>,
}

impl ModelConfig {
    /// Embedding width 8, 128-wide backbone, towers `[128, 80]`.
    pub fn new(backbone: BackboneKind, variant: HeadVariant) -> Self {
        Self {
            backbone: BackboneConfig::for_kind(backbone),
            variant,
            embedding_dim: EMBEDDING_DIM,
            tower_hidden: TOWER_HIDDEN.to_vec(),
        }
    }

    /// `<backbone>+<variant>`, e.g. `ple+full`.
    pub fn id(&self) -> String {
        format!("{}+{}", self.backbone.kind, self.variant)
    }
}

/// A categorical input field: name and vocabulary size (unknown row
/// included).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub vocab_size: usize,
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, vocab_size: usize) -> Self {
        Self {
            name: name.into(),
            vocab_size,
        }
    }
}

/// Nodes produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardNodes {
    /// Backbone outputs `l^k`.
    pub backbone: Vec<NodeId>,
    pub head: HeadNodes,
}

impl ForwardNodes {
    pub fn predictions(&self) -> &[NodeId] {
        &self.head.predictions
    }
}

#[derive(Clone, Debug)]
pub struct MultiTaskModel {
    config: ModelConfig,
    tasks: Vec<TaskSpec>,
    /// One table set, or one per task for the single-task backbone.
    tables: Vec<Vec<EmbeddingTable>>,
    head: DmlHead,
}

impl MultiTaskModel {
    pub fn new(config: ModelConfig, tasks: Vec<TaskSpec>, fields: &[FieldSpec]) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::Config(
                "model needs at least one feature field".into(),
            ));
        }
        config.backbone.validate(tasks.len())?;
        let table_sets = if config.backbone.kind == BackboneKind::SingleTask {
            (0..tasks.len())
                .map(|k| {
                    fields
                        .iter()
                        .map(|f| {
                            EmbeddingTable::new(
                                format!("embed/{k}/{}", f.name),
                                f.vocab_size,
                                config.embedding_dim,
                            )
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![fields
                .iter()
                .map(|f| {
                    EmbeddingTable::new(
                        format!("embed/{}", f.name),
                        f.vocab_size,
                        config.embedding_dim,
                    )
                })
                .collect::<Result<Vec<_>>>()?]
        };
        let head = DmlHead::new(
            config.variant,
            tasks.iter().map(|t| t.kind).collect(),
            config.backbone.expert_dim,
            config.tower_hidden.clone(),
        )?;
        Ok(Self {
            config,
            tasks,
            tables: table_sets,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn head(&self) -> &DmlHead {
        &self.head
    }

    pub fn num_fields(&self) -> usize {
        self.tables[0].len()
    }

    fn input_dim(&self) -> usize {
        self.num_fields() * self.config.embedding_dim
    }

    /// Fresh parameters; each tensor is seeded by `(seed, name)`.
    pub fn init(&self, seed: u64) -> Result<ParameterStore> {
        let mut store = ParameterStore::new();
        let mut pb = ParamBuilder::new(&mut store, seed);
        for set in &self.tables {
            for t in set {
                t.init(&mut pb)?;
            }
        }
        init_backbone(
            &mut pb,
            &self.config.backbone,
            self.tasks.len(),
            self.input_dim(),
        )?;
        self.head.init(&mut pb)?;
        Ok(store)
    }

    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        batch: &Batch,
        telemetry: Option<&Telemetry>,
    ) -> Result<ForwardNodes> {
        if batch.fields.len() != self.num_fields() {
            return Err(Error::Model(format!(
                "batch has {} fields, model expects {}",
                batch.fields.len(),
                self.num_fields()
            )));
        }
        let embed = |g: &mut Graph<'_>, set: &[EmbeddingTable]| {
            let pairs: Vec<_> = set.iter().zip(&batch.fields).collect();
            embed_and_concat(g, &pairs, telemetry)
        };
        let num_tasks = self.tasks.len();
        let backbone = match self.config.backbone.kind {
            BackboneKind::SingleTask => (0..num_tasks)
                .map(|k| {
                    let x = embed(g, &self.tables[k])?;
                    single_task_bottom(g, k, x)
                })
                .collect::<Result<Vec<_>>>()?,
            kind => {
                let x = embed(g, &self.tables[0])?;
                match kind {
                    BackboneKind::SharedBottom => shared_bottom_forward(g, num_tasks, x)?,
                    BackboneKind::Mmoe => mmoe_forward(g, &self.config.backbone, num_tasks, x)?,
                    _ => ple_forward(g, &self.config.backbone, num_tasks, x)?,
                }
                .per_task_inputs
            }
        };
        let head = self.head.forward_detailed(g, &backbone)?;
        Ok(ForwardNodes { backbone, head })
    }

    /// Per-task losses against the batch labels.
    pub fn task_losses(
        &self,
        g: &mut Graph<'_>,
        batch: &Batch,
        predictions: &[NodeId],
    ) -> Result<Vec<NodeId>> {
        self.tasks
            .iter()
            .zip(predictions)
            .zip(&batch.labels)
            .map(|((task, &pred), labels)| task_loss(g, task.kind.loss(), pred, labels))
            .collect()
    }

    /// Sum of the task losses with unit weights.
    pub fn loss(&self, g: &mut Graph<'_>, batch: &Batch, predictions: &[NodeId]) -> Result<NodeId> {
        let losses = self.task_losses(g, batch, predictions)?;
        let mut total = losses[0];
        for &l in &losses[1..] {
            total = g.add(total, l)?;
        }
        Ok(total)
    }

    /// Predictions as plain column vectors, one per task.
    pub fn predict(&self, params: &ParameterStore, batch: &Batch) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new(params);
        let nodes = self.forward(&mut g, batch, None)?;
        Ok(nodes
            .predictions()
            .iter()
            .map(|&p| g.value(p).data().to_vec())
            .collect())
    }
}

/// Closed-form trainable parameter count of a model built from `config`
/// for `num_tasks` tasks and the given field vocabularies.
pub fn analytic_param_count(
    config: &ModelConfig,
    num_tasks: usize,
    vocab_sizes: &[usize],
) -> usize {
    let e = config.embedding_dim;
    let fields = vocab_sizes.len();
    let vocab: usize = vocab_sizes.iter().sum();
    let d = fields * e;
    let d0 = config.backbone.expert_dim;
    let k = num_tasks;
    let x = config.backbone.experts_per_level;
    let linear = |i: usize, o: usize| i * o + o;

    let embeddings = match config.backbone.kind {
        BackboneKind::SingleTask => k * vocab * e,
        _ => vocab * e,
    };
    let backbone = match config.backbone.kind {
        BackboneKind::SingleTask => k * linear(d, d0),
        BackboneKind::SharedBottom => linear(d, d0),
        BackboneKind::Mmoe => x * linear(d, d0) + k * linear(d, x),
        BackboneKind::Ple => (0..config.backbone.levels)
            .map(|level| {
                let input = if level == 0 { d } else { d0 };
                let shared_gate = if level + 1 < config.backbone.levels {
                    linear(input, x)
                } else {
                    0
                };
                x * linear(input, d0) + k * linear(input, 2) + shared_gate
            })
            .sum(),
    };
    let hidden = &config.tower_hidden;
    let h_params: usize = hidden
        .iter()
        .scan(d0, |fan_in, &o| {
            let p = linear(*fan_in, o);
            *fan_in = o;
            Some(p)
        })
        .sum();
    let d1 = *hidden.last().unwrap_or(&d0);
    let variant = config.variant;
    let ctfm = if variant.uses_ctfm() {
        k * d0 + 3 * d0 * d0
    } else {
        0
    };
    let per_task_top = if variant.uses_gkd() {
        linear(k * d1, d1) + linear(2 * d1, d1) + linear(2 * d1, 1)
    } else {
        linear(d1, 1)
    };
    embeddings + backbone + ctfm + k * (h_params + per_task_top)
}
