use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use dml_autodiff::{Bags, Graph, NodeId};
use serde::{Deserialize, Serialize};

use super::init::{ParamBuilder, EMBEDDING_INIT_BOUND};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn apply(self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId> {
        Ok(match self {
            Activation::Relu => g.relu(x)?,
            Activation::Sigmoid => g.sigmoid(x)?,
            Activation::Linear => x,
        })
    }
}

/// Stack of affine layers; hidden layers use relu.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    layer_dims: Vec<usize>,
    final_activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_dims: Vec<usize>, final_activation: Activation) -> Result<Self> {
        if layer_dims.is_empty() || layer_dims.contains(&0) {
            return Err(Error::Model(format!(
                "MLP layer sizes must be non-empty and positive, got {layer_dims:?}"
            )));
        }
        Ok(Self {
            layer_dims,
            final_activation,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn final_activation(&self) -> Activation {
        self.final_activation
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("non-empty")
    }

    /// Registers `<prefix>/<layer>/{W,b}` for every layer.
    pub fn init(&self, pb: &mut ParamBuilder<'_>, prefix: &str, input_dim: usize) -> Result<()> {
        let mut fan_in = input_dim;
        for (i, &out) in self.layer_dims.iter().enumerate() {
            pb.glorot(&format!("{prefix}/{i}/W"), fan_in, out)?;
            pb.zeros(&format!("{prefix}/{i}/b"), 1, out)?;
            fan_in = out;
        }
        Ok(())
    }

    pub fn param_count(&self, input_dim: usize) -> usize {
        let mut fan_in = input_dim;
        let mut n = 0;
        for &out in &self.layer_dims {
            n += fan_in * out + out;
            fan_in = out;
        }
        n
    }
}

/// `act(x · W + b)` with parameters `<prefix>/W`, `<prefix>/b`.
pub fn dense(g: &mut Graph<'_>, prefix: &str, x: NodeId, act: Activation) -> Result<NodeId> {
    let w = g.param(&format!("{prefix}/W"))?;
    let b = g.param(&format!("{prefix}/b"))?;
    let xw = g.matmul(x, w)?;
    let z = g.add(xw, b)?;
    act.apply(g, z)
}

pub fn mlp_forward(g: &mut Graph<'_>, spec: &MlpSpec, prefix: &str, x: NodeId) -> Result<NodeId> {
    let last = spec.layer_dims.len() - 1;
    let mut h = x;
    for i in 0..=last {
        let act = if i == last {
            spec.final_activation
        } else {
            Activation::Relu
        };
        h = dense(g, &format!("{prefix}/{i}"), h, act)?;
    }
    Ok(h)
}

/// Counts lookups that fell outside a table and were sent to row 0.
#[derive(Debug, Default)]
pub struct Telemetry {
    oov_lookups: AtomicU64,
}

impl Telemetry {
    pub fn oov_lookups(&self) -> u64 {
        self.oov_lookups.load(Ordering::Relaxed)
    }
}

/// Embedding table stored as `<name>` with shape `[vocab x dim]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmbeddingTable {
    pub name: String,
    pub vocab_size: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn new(name: impl Into<String>, vocab_size: usize, dim: usize) -> Result<Self> {
        if vocab_size == 0 || dim == 0 {
            return Err(Error::Model(
                "embedding vocab and dim must be positive".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            vocab_size,
            dim,
        })
    }

    pub fn init(&self, pb: &mut ParamBuilder<'_>) -> Result<()> {
        pb.uniform(&self.name, self.vocab_size, self.dim, EMBEDDING_INIT_BOUND)
    }

    pub fn param_count(&self) -> usize {
        self.vocab_size * self.dim
    }
}

/// Looks up each field (mean-pooling multi-valued bags) and concatenates
/// the results column-wise in field order.
pub fn embed_and_concat(
    g: &mut Graph<'_>,
    fields: &[(&EmbeddingTable, &Arc<Bags>)],
    telemetry: Option<&Telemetry>,
) -> Result<NodeId> {
    let Some(first) = fields.first() else {
        return Err(Error::Model("no feature fields to embed".into()));
    };
    let batch = first.1.len();
    let mut parts = Vec::with_capacity(fields.len());
    for (table, bags) in fields {
        if bags.len() != batch {
            return Err(Error::Model(format!(
                "field `{}` has {} rows, expected {batch}",
                table.name,
                bags.len()
            )));
        }
        let bags = remap_oov(bags, table.vocab_size, telemetry);
        let t = g.param(&table.name)?;
        parts.push(g.lookup(t, bags)?);
    }
    if parts.len() == 1 {
        return Ok(parts[0]);
    }
    Ok(g.concat_cols(&parts)?)
}

fn remap_oov(bags: &Arc<Bags>, vocab: usize, telemetry: Option<&Telemetry>) -> Arc<Bags> {
    let in_range = bags.max_index().is_none_or(|m| m < vocab);
    if in_range {
        return Arc::clone(bags);
    }
    let mut oov = 0u64;
    let lists = (0..bags.len()).map(|r| {
        bags.bag(r)
            .iter()
            .map(|&i| {
                if i < vocab {
                    i
                } else {
                    oov += 1;
                    0
                }
            })
            .collect::<Vec<_>>()
    });
    let remapped = Bags::from_lists(lists.collect::<Vec<_>>());
    if let Some(t) = telemetry {
        t.oov_lookups.fetch_add(oov, Ordering::Relaxed);
    }
    log::debug!("mapped {oov} out-of-vocabulary lookups to the unknown row");
    Arc::new(remapped)
}
