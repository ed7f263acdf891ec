use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::keyed_rng;

/// Example indices of the three parts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub train: Vec<u32>,
    pub validation: Vec<u32>,
    pub test: Vec<u32>,
}

impl DatasetSplit {
    pub fn total(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }
}

/// Shuffles example indices and cuts them 8:1:1.
pub fn split_dataset<T>(examples: &[T], seed: u64) -> Result<DatasetSplit> {
    let n = examples.len();
    if n == 0 {
        return Err(Error::Data("cannot split an empty dataset".into()));
    }
    if n > u32::MAX as usize {
        return Err(Error::Data(format!("{n} examples exceed the index range")));
    }
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.shuffle(&mut keyed_rng(seed, "split"));
    let n_train = (0.8 * n as f64).round() as usize;
    let n_val = ((0.1 * n as f64).round() as usize).min(n - n_train);
    let test = order.split_off(n_train + n_val);
    let validation = order.split_off(n_train);
    Ok(DatasetSplit {
        seed,
        train: order,
        validation,
        test,
    })
}
