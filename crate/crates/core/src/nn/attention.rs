//! Single-head scaled dot-product attention.

use dml_autodiff::{Graph, NodeId};

use crate::error::{Error, Result};

/// `row_softmax(Q · Kᵀ / √d) · V` for `[n x d]` inputs.
pub fn scaled_dot_attention(g: &mut Graph<'_>, q: NodeId, k: NodeId, v: NodeId) -> Result<NodeId> {
    let (qs, ks, vs) = (g.shape(q), g.shape(k), g.shape(v));
    if qs.cols != ks.cols || ks != vs {
        return Err(Error::Model(format!(
            "attention expects Q [n x d] with K, V [m x d]; got Q {qs}, K {ks}, V {vs}"
        )));
    }
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scaled = g.scale(scores, 1.0 / (qs.cols as f64).sqrt())?;
    let weights = g.row_softmax(scaled)?;
    Ok(g.matmul(weights, v)?)
}

/// Per-sample attention across task slots.
///
/// `queries[i]`, `keys[j]` and `values[j]` are `[batch x d]`; for every
/// batch row `b` this computes the same result as
/// [`scaled_dot_attention`] on the `[n x d]` matrices formed by stacking
/// row `b` of each slot, without materialising per-sample tapes.
///
/// Returns the attended rows per query slot and the per-slot attention
/// weights (`[batch x n]`).
pub fn slot_attention(
    g: &mut Graph<'_>,
    queries: &[NodeId],
    keys: &[NodeId],
    values: &[NodeId],
) -> Result<(Vec<NodeId>, Vec<NodeId>)> {
    let n = keys.len();
    if n == 0 || values.len() != n || queries.is_empty() {
        return Err(Error::Model(format!(
            "slot attention needs matching key/value slots, got {} keys and {} values",
            n,
            values.len()
        )));
    }
    let shape = g.shape(keys[0]);
    for &id in queries.iter().chain(keys).chain(values) {
        if g.shape(id) != shape {
            return Err(Error::Model(format!(
                "slot attention inputs must share shape {shape}, found {}",
                g.shape(id)
            )));
        }
    }
    let scale = 1.0 / (shape.cols as f64).sqrt();
    let mut outputs = Vec::with_capacity(queries.len());
    let mut all_weights = Vec::with_capacity(queries.len());
    for &q in queries {
        let mut scores = Vec::with_capacity(n);
        for &k in keys {
            let prod = g.hadamard(q, k)?;
            scores.push(g.row_sum(prod)?);
        }
        let logits = g.concat_cols(&scores)?;
        let logits = g.scale(logits, scale)?;
        let weights = g.row_softmax(logits)?;
        let mut acc = None;
        for (j, &v) in values.iter().enumerate() {
            let w = g.slice_cols(weights, j, 1)?;
            let term = g.scale_rows(v, w)?;
            acc = Some(match acc {
                None => term,
                Some(a) => g.add(a, term)?,
            });
        }
        outputs.push(acc.expect("at least one slot"));
        all_weights.push(weights);
    }
    Ok((outputs, all_weights))
}
