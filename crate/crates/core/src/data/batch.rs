use std::sync::Arc;

use dml_autodiff::Bags;
use rand::seq::SliceRandom;

use super::EncodedDataset;
use crate::error::{Error, Result};
use crate::nn::keyed_rng;

/// A mini-batch: one bag list per feature field, one label column per task.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub indices: Vec<u32>,
    pub fields: Vec<Arc<Bags>>,
    pub labels: Vec<Vec<f64>>,
    pub ratings: Vec<u8>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub struct BatchIter<'a> {
    data: &'a EncodedDataset,
    order: Vec<u32>,
    batch_size: usize,
    pos: usize,
}

impl BatchIter<'_> {
    /// Example indices in iteration order.
    pub fn order(&self) -> &[u32] {
        &self.order
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.data.assemble(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }
}

/// Batches over `part`. With `shuffle = Some((seed, epoch))` the order is a
/// permutation keyed by both; otherwise `part` order is kept. The final
/// short batch is emitted.
pub fn batch_iterator<'a>(
    data: &'a EncodedDataset,
    part: &[u32],
    batch_size: usize,
    shuffle: Option<(u64, u64)>,
) -> Result<BatchIter<'a>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order = part.to_vec();
    if let Some((seed, epoch)) = shuffle {
        order.shuffle(&mut keyed_rng(seed, &format!("batches/{epoch}")));
    }
    Ok(BatchIter {
        data,
        order,
        batch_size,
        pos: 0,
    })
}
