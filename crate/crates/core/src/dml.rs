//! Task-tower head: cross-task feature mining at the tower entry, the
//! per-task hidden MLPs, and per-task global knowledge distillation.
//!
//! Parameter names:
//!
//! * `dml/ctfm/t_<k>` task embeddings, `dml/ctfm/{Wq,Wk,Wv}` projections
//! * `dml/tower/<k>/<layer>/{W,b}` hidden layers (plus a final 1-wide
//!   layer when the head has no distillation stage)
//! * `dml/gkd/<k>/{distill,gate,out}/0/{W,b}`

use std::fmt;
use std::str::FromStr;

use dml_autodiff::{Graph, NodeId};
use serde::{Deserialize, Serialize};

use crate::data::TaskKind;
use crate::error::{Error, Result};
use crate::nn::{dense, slot_attention, Activation, ParamBuilder, EMBEDDING_INIT_BOUND};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadVariant {
    /// Plain `(hidden..., 1)` towers.
    None,
    /// Blocked cross-task mining, hidden MLP, plain output layer.
    CtfmOnly,
    /// Hidden MLP on the backbone output, then distillation.
    GkdOnly,
    /// Unblocked attention plus distillation.
    V0,
    /// Blocked cross-task mining plus distillation.
    Full,
}

impl HeadVariant {
    pub const ALL: [HeadVariant; 5] = [
        HeadVariant::None,
        HeadVariant::CtfmOnly,
        HeadVariant::GkdOnly,
        HeadVariant::V0,
        HeadVariant::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HeadVariant::None => "none",
            HeadVariant::CtfmOnly => "ctfm_only",
            HeadVariant::GkdOnly => "gkd_only",
            HeadVariant::V0 => "v0",
            HeadVariant::Full => "full",
        }
    }

    pub fn uses_ctfm(self) -> bool {
        matches!(
            self,
            HeadVariant::CtfmOnly | HeadVariant::V0 | HeadVariant::Full
        )
    }

    pub fn uses_gkd(self) -> bool {
        matches!(
            self,
            HeadVariant::GkdOnly | HeadVariant::V0 | HeadVariant::Full
        )
    }

    /// Whether key/value projections read a gradient-blocked copy.
    pub fn blocks_gradients(self) -> bool {
        matches!(self, HeadVariant::CtfmOnly | HeadVariant::Full)
    }
}

impl fmt::Display for HeadVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeadVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "base" => Ok(HeadVariant::None),
            "ctfm_only" | "ctfm" => Ok(HeadVariant::CtfmOnly),
            "gkd_only" | "gkd" => Ok(HeadVariant::GkdOnly),
            "v0" => Ok(HeadVariant::V0),
            "full" | "dml" => Ok(HeadVariant::Full),
            other => Err(Error::Config(format!("unknown head variant `{other}`"))),
        }
    }
}

pub const CTFM_PREFIX: &str = "dml/ctfm";

/// Intermediate nodes of one cross-task mining pass.
#[derive(Clone, Debug)]
pub struct CtfmNodes {
    /// `l^k + t^k` per task.
    pub stacked_rows: Vec<NodeId>,
    pub queries: Vec<NodeId>,
    pub keys: Vec<NodeId>,
    pub values: Vec<NodeId>,
    /// `[batch x K]` attention weights per query task.
    pub attention: Vec<NodeId>,
    pub outputs: Vec<NodeId>,
}

pub fn init_ctfm(pb: &mut ParamBuilder<'_>, num_tasks: usize, d0: usize) -> Result<()> {
    for k in 0..num_tasks {
        pb.uniform(&format!("{CTFM_PREFIX}/t_{k}"), 1, d0, EMBEDDING_INIT_BOUND)?;
    }
    for w in ["Wq", "Wk", "Wv"] {
        pb.glorot(&format!("{CTFM_PREFIX}/{w}"), d0, d0)?;
    }
    Ok(())
}

/// Cross-task feature mining over `l` (one `[batch x d0]` node per task).
///
/// Per sample the `K` rows `l^k + t^k` form `Mat_o`; queries project
/// `Mat_o` directly while keys and values project a stop-gradient copy
/// when `block_gradients` is set. The attended rows are added back to
/// `Mat_o` and split per task.
pub fn ctfm_forward(g: &mut Graph<'_>, l: &[NodeId], block_gradients: bool) -> Result<Vec<NodeId>> {
    Ok(ctfm_forward_detailed(g, l, block_gradients)?.outputs)
}

pub fn ctfm_forward_detailed(
    g: &mut Graph<'_>,
    l: &[NodeId],
    block_gradients: bool,
) -> Result<CtfmNodes> {
    let num_tasks = l.len();
    if num_tasks < 2 {
        return Err(Error::Model(format!(
            "cross-task mining needs at least two tasks, got {num_tasks}"
        )));
    }
    let wq = g.param(&format!("{CTFM_PREFIX}/Wq"))?;
    let wk = g.param(&format!("{CTFM_PREFIX}/Wk"))?;
    let wv = g.param(&format!("{CTFM_PREFIX}/Wv"))?;
    let d0 = g.shape(wq).rows;
    let batch = g.shape(l[0]).rows;
    let mut stacked_rows = Vec::with_capacity(num_tasks);
    for (k, &lk) in l.iter().enumerate() {
        let s = g.shape(lk);
        if s.cols != d0 || s.rows != batch {
            return Err(Error::Model(format!(
                "tower input {k} has shape {s}, expected [{batch}x{d0}]"
            )));
        }
        let tk = g.param(&format!("{CTFM_PREFIX}/t_{k}"))?;
        stacked_rows.push(g.add(lk, tk)?);
    }
    let mat_o = g.row_stack(&stacked_rows)?;
    let kv_source = if block_gradients {
        g.stop_gradient(mat_o)?
    } else {
        mat_o
    };
    let q_all = g.matmul(mat_o, wq)?;
    let k_all = g.matmul(kv_source, wk)?;
    let v_all = g.matmul(kv_source, wv)?;
    let queries = g.split_rows(q_all, num_tasks)?;
    let keys = g.split_rows(k_all, num_tasks)?;
    let values = g.split_rows(v_all, num_tasks)?;
    let (attended, attention) = slot_attention(g, &queries, &keys, &values)?;
    let outputs = stacked_rows
        .iter()
        .zip(&attended)
        .map(|(&o, &r)| g.add(o, r))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(CtfmNodes {
        stacked_rows,
        queries,
        keys,
        values,
        attention,
        outputs,
    })
}

fn tower_prefix(k: usize) -> String {
    format!("dml/tower/{k}")
}

/// `H^k`: relu layers `dml/tower/<k>/0..` producing `h^k`.
pub fn tower_hidden(g: &mut Graph<'_>, k: usize, layers: usize, x: NodeId) -> Result<NodeId> {
    let prefix = tower_prefix(k);
    let mut h = x;
    for i in 0..layers {
        h = dense(g, &format!("{prefix}/{i}"), h, Activation::Relu)?;
    }
    Ok(h)
}

/// The 1-wide output layer stacked on `h^k` when distillation is off.
pub fn tower_output(
    g: &mut Graph<'_>,
    k: usize,
    hidden_layers: usize,
    h: NodeId,
    kind: TaskKind,
) -> Result<NodeId> {
    dense(
        g,
        &format!("{}/{hidden_layers}", tower_prefix(k)),
        h,
        kind.output_activation(),
    )
}

fn gkd_prefix(k: usize) -> String {
    format!("dml/gkd/{k}")
}

/// Intermediate nodes of one distillation head.
#[derive(Clone, Debug)]
pub struct GkdNodes {
    pub global_knowledge: NodeId,
    pub gate: NodeId,
    pub weighted: NodeId,
    pub output: NodeId,
}

pub fn init_gkd(pb: &mut ParamBuilder<'_>, k: usize, num_tasks: usize, d1: usize) -> Result<()> {
    let prefix = gkd_prefix(k);
    for (name, fan_in, fan_out) in [
        ("distill", num_tasks * d1, d1),
        ("gate", 2 * d1, d1),
        ("out", 2 * d1, 1),
    ] {
        pb.glorot(&format!("{prefix}/{name}/0/W"), fan_in, fan_out)?;
        pb.zeros(&format!("{prefix}/{name}/0/b"), 1, fan_out)?;
    }
    Ok(())
}

/// Global knowledge distillation for task `k`, returning `o^k`.
pub fn gkd_forward(
    g: &mut Graph<'_>,
    k: usize,
    h_all: &[NodeId],
    kind: TaskKind,
) -> Result<NodeId> {
    Ok(gkd_forward_detailed(g, k, h_all, kind)?.output)
}

pub fn gkd_forward_detailed(
    g: &mut Graph<'_>,
    k: usize,
    h_all: &[NodeId],
    kind: TaskKind,
) -> Result<GkdNodes> {
    if k >= h_all.len() {
        return Err(Error::Model(format!(
            "task index {k} out of range for {} towers",
            h_all.len()
        )));
    }
    let width = g.shape(h_all[0]).cols;
    if let Some(bad) = h_all.iter().find(|&&h| g.shape(h).cols != width) {
        return Err(Error::Model(format!(
            "hidden representations must share width {width}, found {}",
            g.shape(*bad)
        )));
    }
    let prefix = gkd_prefix(k);
    let all = g.concat_cols(h_all)?;
    let blocked = g.stop_gradient(all)?;
    let global_knowledge = dense(g, &format!("{prefix}/distill/0"), blocked, Activation::Relu)?;
    let gate_in = g.concat_cols(&[global_knowledge, h_all[k]])?;
    let gate = dense(g, &format!("{prefix}/gate/0"), gate_in, Activation::Sigmoid)?;
    let weighted = g.hadamard(global_knowledge, gate)?;
    let out_in = g.concat_cols(&[weighted, h_all[k]])?;
    let output = dense(
        g,
        &format!("{prefix}/out/0"),
        out_in,
        kind.output_activation(),
    )?;
    Ok(GkdNodes {
        global_knowledge,
        gate,
        weighted,
        output,
    })
}

/// Head configuration: variant, tasks, entry width and hidden layer sizes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DmlHead {
    pub variant: HeadVariant,
    pub tasks: Vec<TaskKind>,
    /// Width of each `l^k`.
    pub input_dim: usize,
    /// Hidden sizes of `H^k`; the last one is the distillation width.
    pub hidden: Vec<usize>,
}

/// Per-task nodes exposed for inspection.
#[derive(Clone, Debug)]
pub struct HeadNodes {
    /// Tower entries after cross-task mining (or `l^k` unchanged).
    pub tower_inputs: Vec<NodeId>,
    pub hidden: Vec<NodeId>,
    pub predictions: Vec<NodeId>,
}

impl DmlHead {
    pub fn new(
        variant: HeadVariant,
        tasks: Vec<TaskKind>,
        input_dim: usize,
        hidden: Vec<usize>,
    ) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) || input_dim == 0 {
            return Err(Error::Config(format!(
                "tower sizes must be positive, got input {input_dim} and hidden {hidden:?}"
            )));
        }
        if tasks.is_empty() {
            return Err(Error::Config("at least one task is required".into()));
        }
        if variant.uses_ctfm() && tasks.len() < 2 {
            return Err(Error::Config(format!(
                "variant {variant} needs at least two tasks"
            )));
        }
        Ok(Self {
            variant,
            tasks,
            input_dim,
            hidden,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    fn distill_dim(&self) -> usize {
        *self.hidden.last().expect("non-empty")
    }

    pub fn init(&self, pb: &mut ParamBuilder<'_>) -> Result<()> {
        let k_tasks = self.num_tasks();
        if self.variant.uses_ctfm() {
            init_ctfm(pb, k_tasks, self.input_dim)?;
        }
        for k in 0..k_tasks {
            let prefix = tower_prefix(k);
            let mut fan_in = self.input_dim;
            let mut dims = self.hidden.clone();
            if !self.variant.uses_gkd() {
                dims.push(1);
            }
            for (i, &out) in dims.iter().enumerate() {
                pb.glorot(&format!("{prefix}/{i}/W"), fan_in, out)?;
                pb.zeros(&format!("{prefix}/{i}/b"), 1, out)?;
                fan_in = out;
            }
            if self.variant.uses_gkd() {
                init_gkd(pb, k, k_tasks, self.distill_dim())?;
            }
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph<'_>, l: &[NodeId]) -> Result<Vec<NodeId>> {
        Ok(self.forward_detailed(g, l)?.predictions)
    }

    pub fn forward_detailed(&self, g: &mut Graph<'_>, l: &[NodeId]) -> Result<HeadNodes> {
        if l.len() != self.num_tasks() {
            return Err(Error::Model(format!(
                "head expects {} tower inputs, got {}",
                self.num_tasks(),
                l.len()
            )));
        }
        let tower_inputs = if self.variant.uses_ctfm() {
            ctfm_forward(g, l, self.variant.blocks_gradients())?
        } else {
            l.to_vec()
        };
        let layers = self.hidden.len();
        let hidden = tower_inputs
            .iter()
            .enumerate()
            .map(|(k, &x)| tower_hidden(g, k, layers, x))
            .collect::<Result<Vec<_>>>()?;
        let predictions = if self.variant.uses_gkd() {
            (0..self.num_tasks())
                .map(|k| gkd_forward(g, k, &hidden, self.tasks[k]))
                .collect::<Result<Vec<_>>>()?
        } else {
            hidden
                .iter()
                .enumerate()
                .map(|(k, &h)| tower_output(g, k, layers, h, self.tasks[k]))
                .collect::<Result<Vec<_>>>()?
        };
        Ok(HeadNodes {
            tower_inputs,
            hidden,
            predictions,
        })
    }
}
