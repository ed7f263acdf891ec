use dml_autodiff::{Graph, NodeId, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability clamp applied before the logarithms of the BCE loss.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    BinaryCrossEntropy,
    SquaredError,
}

/// Mean-reduced loss of a `[batch x 1]` prediction against `labels`.
pub fn task_loss(
    g: &mut Graph<'_>,
    kind: LossKind,
    pred: NodeId,
    labels: &[f64],
) -> Result<NodeId> {
    let shape = g.shape(pred);
    if shape.cols != 1 || shape.rows != labels.len() {
        return Err(Error::Model(format!(
            "prediction {shape} does not match {} labels",
            labels.len()
        )));
    }
    let y = g.constant(Tensor::column(labels))?;
    match kind {
        LossKind::SquaredError => {
            let diff = g.sub(pred, y)?;
            let sq = g.square(diff)?;
            Ok(g.mean(sq)?)
        }
        LossKind::BinaryCrossEntropy => {
            if let Some(bad) = labels.iter().find(|&&l| l != 0.0 && l != 1.0) {
                return Err(Error::Data(format!(
                    "binary cross-entropy label must be 0 or 1, got {bad}"
                )));
            }
            let p = g.clamp(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)?;
            let ones = g.constant(Tensor::full(labels.len(), 1, 1.0))?;
            let not_y = g.sub(ones, y)?;
            let not_p = g.sub(ones, p)?;
            let log_p = g.log(p)?;
            let log_not_p = g.log(not_p)?;
            let pos = g.hadamard(y, log_p)?;
            let neg = g.hadamard(not_y, log_not_p)?;
            let ll = g.add(pos, neg)?;
            let mean = g.mean(ll)?;
            Ok(g.scale(mean, -1.0)?)
        }
    }
}
