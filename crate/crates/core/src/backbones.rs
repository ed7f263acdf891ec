//! Lower-level networks that turn the concatenated feature embedding into
//! one representation per task.
//!
//! Parameters follow `backbone/<kind>/<level>/<expert>/<layer>/{W,b}`.
//! Gates use the expert slot `gate_<owner>`, where the owner is a task
//! (`t<k>`) or `shared`.

use std::fmt;
use std::str::FromStr;

use dml_autodiff::{Graph, NodeId};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{dense, Activation, ParamBuilder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    SingleTask,
    SharedBottom,
    Mmoe,
    Ple,
}

impl BackboneKind {
    pub const ALL: [BackboneKind; 4] = [
        BackboneKind::SingleTask,
        BackboneKind::SharedBottom,
        BackboneKind::Mmoe,
        BackboneKind::Ple,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackboneKind::SingleTask => "single_task",
            BackboneKind::SharedBottom => "shared_bottom",
            BackboneKind::Mmoe => "mmoe",
            BackboneKind::Ple => "ple",
        }
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_task" | "single" => Ok(BackboneKind::SingleTask),
            "shared_bottom" | "sb" => Ok(BackboneKind::SharedBottom),
            "mmoe" => Ok(BackboneKind::Mmoe),
            "ple" => Ok(BackboneKind::Ple),
            other => Err(Error::Config(format!("unknown backbone `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub experts_per_level: usize,
    pub levels: usize,
    /// Output width of every expert (one relu layer).
    pub expert_dim: usize,
}

impl BackboneConfig {
    /// Three experts per level, one level (two for PLE), 128-wide experts.
    pub fn for_kind(kind: BackboneKind) -> Self {
        Self {
            kind,
            experts_per_level: match kind {
                BackboneKind::SharedBottom | BackboneKind::SingleTask => 1,
                BackboneKind::Mmoe | BackboneKind::Ple => 3,
            },
            levels: if kind == BackboneKind::Ple { 2 } else { 1 },
            expert_dim: 128,
        }
    }

    pub fn with_expert_dim(mut self, dim: usize) -> Self {
        self.expert_dim = dim;
        self
    }

    pub fn validate(&self, num_tasks: usize) -> Result<()> {
        if self.expert_dim == 0 {
            return Err(Error::Config("expert width must be positive".into()));
        }
        match self.kind {
            BackboneKind::SharedBottom | BackboneKind::SingleTask => {
                if self.levels != 1 {
                    return Err(Error::Config(format!(
                        "{} uses exactly one level, got {}",
                        self.kind, self.levels
                    )));
                }
            }
            BackboneKind::Mmoe => {
                if self.levels != 1 || self.experts_per_level == 0 {
                    return Err(Error::Config(
                        "mmoe needs one level with at least one expert".into(),
                    ));
                }
            }
            BackboneKind::Ple => {
                if self.levels < 1 {
                    return Err(Error::Config("ple needs at least one level".into()));
                }
                if self.experts_per_level != num_tasks + 1 {
                    return Err(Error::Config(format!(
                        "ple with {num_tasks} tasks needs {} experts per level \
                         (one shared plus one per task), got {}",
                        num_tasks + 1,
                        self.experts_per_level
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One representation per task, each `[batch x expert_dim]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneOutput {
    pub per_task_inputs: Vec<NodeId>,
}

fn expert_prefix(kind: BackboneKind, level: usize, expert: &str) -> String {
    format!("backbone/{kind}/{level}/{expert}")
}

fn expert_forward(
    g: &mut Graph<'_>,
    kind: BackboneKind,
    level: usize,
    expert: &str,
    x: NodeId,
) -> Result<NodeId> {
    dense(
        g,
        &format!("{}/0", expert_prefix(kind, level, expert)),
        x,
        Activation::Relu,
    )
}

/// Softmax gate over `experts`, driven by `gate_input`.
fn gated_mixture(
    g: &mut Graph<'_>,
    kind: BackboneKind,
    level: usize,
    owner: &str,
    gate_input: NodeId,
    experts: &[NodeId],
) -> Result<NodeId> {
    let prefix = format!("{}/0", expert_prefix(kind, level, &format!("gate_{owner}")));
    let logits = dense(g, &prefix, gate_input, Activation::Linear)?;
    let weights = g.row_softmax(logits)?;
    let mut acc = None;
    for (e, &out) in experts.iter().enumerate() {
        let w = g.slice_cols(weights, e, 1)?;
        let term = g.scale_rows(out, w)?;
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(a, term)?,
        });
    }
    acc.ok_or_else(|| Error::Model("gate over zero experts".into()))
}

fn task_name(k: usize) -> String {
    format!("t{k}")
}

/// Shared-Bottom: one relu layer shared by every task.
pub fn shared_bottom_forward(
    g: &mut Graph<'_>,
    num_tasks: usize,
    x: NodeId,
) -> Result<BackboneOutput> {
    let l = expert_forward(g, BackboneKind::SharedBottom, 0, "e0", x)?;
    Ok(BackboneOutput {
        per_task_inputs: vec![l; num_tasks],
    })
}

/// MMoE: shared experts mixed by one softmax gate per task.
pub fn mmoe_forward(
    g: &mut Graph<'_>,
    config: &BackboneConfig,
    num_tasks: usize,
    x: NodeId,
) -> Result<BackboneOutput> {
    let kind = BackboneKind::Mmoe;
    let experts = (0..config.experts_per_level)
        .map(|e| expert_forward(g, kind, 0, &format!("e{e}"), x))
        .collect::<Result<Vec<_>>>()?;
    let per_task_inputs = (0..num_tasks)
        .map(|k| gated_mixture(g, kind, 0, &task_name(k), x, &experts))
        .collect::<Result<Vec<_>>>()?;
    Ok(BackboneOutput { per_task_inputs })
}

/// PLE: per level one shared expert plus one expert per task. Task gates
/// mix the task's own expert with the shared one; the shared gate (all but
/// the last level) mixes every expert and feeds the next shared expert.
pub fn ple_forward(
    g: &mut Graph<'_>,
    config: &BackboneConfig,
    num_tasks: usize,
    x: NodeId,
) -> Result<BackboneOutput> {
    config.validate(num_tasks)?;
    let kind = BackboneKind::Ple;
    let mut task_in = vec![x; num_tasks];
    let mut shared_in = x;
    for level in 0..config.levels {
        let task_out = (0..num_tasks)
            .map(|k| expert_forward(g, kind, level, &task_name(k), task_in[k]))
            .collect::<Result<Vec<_>>>()?;
        let shared_out = expert_forward(g, kind, level, "shared", shared_in)?;
        let fused = (0..num_tasks)
            .map(|k| {
                gated_mixture(
                    g,
                    kind,
                    level,
                    &task_name(k),
                    task_in[k],
                    &[task_out[k], shared_out],
                )
            })
            .collect::<Result<Vec<_>>>()?;
        if level + 1 < config.levels {
            let mut all = task_out.clone();
            all.push(shared_out);
            shared_in = gated_mixture(g, kind, level, "shared", shared_in, &all)?;
        }
        task_in = fused;
    }
    Ok(BackboneOutput {
        per_task_inputs: task_in,
    })
}

/// Bottom layer of task `k`'s standalone model (`xs[k]` is that task's
/// own embedding).
pub fn single_task_bottom(g: &mut Graph<'_>, k: usize, x: NodeId) -> Result<NodeId> {
    expert_forward(g, BackboneKind::SingleTask, 0, &task_name(k), x)
}

/// Registers every backbone parameter for `input_dim`-wide inputs.
pub fn init_backbone(
    pb: &mut ParamBuilder<'_>,
    config: &BackboneConfig,
    num_tasks: usize,
    input_dim: usize,
) -> Result<()> {
    config.validate(num_tasks)?;
    let kind = config.kind;
    let d = config.expert_dim;
    let layer = |pb: &mut ParamBuilder<'_>, level: usize, slot: &str, fan_in: usize, fan_out| {
        let prefix = format!("{}/0", expert_prefix(kind, level, slot));
        pb.glorot(&format!("{prefix}/W"), fan_in, fan_out)?;
        pb.zeros(&format!("{prefix}/b"), 1, fan_out)
    };
    match kind {
        BackboneKind::SharedBottom => layer(pb, 0, "e0", input_dim, d)?,
        BackboneKind::SingleTask => {
            for k in 0..num_tasks {
                layer(pb, 0, &task_name(k), input_dim, d)?;
            }
        }
        BackboneKind::Mmoe => {
            let experts = config.experts_per_level;
            for e in 0..experts {
                layer(pb, 0, &format!("e{e}"), input_dim, d)?;
            }
            for k in 0..num_tasks {
                layer(pb, 0, &format!("gate_{}", task_name(k)), input_dim, experts)?;
            }
        }
        BackboneKind::Ple => {
            for level in 0..config.levels {
                let fan_in = if level == 0 { input_dim } else { d };
                for k in 0..num_tasks {
                    layer(pb, level, &task_name(k), fan_in, d)?;
                    layer(pb, level, &format!("gate_{}", task_name(k)), fan_in, 2)?;
                }
                layer(pb, level, "shared", fan_in, d)?;
                if level + 1 < config.levels {
                    layer(pb, level, "gate_shared", fan_in, num_tasks + 1)?;
                }
            }
        }
    }
    Ok(())
}
