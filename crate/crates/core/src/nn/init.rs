//! Name-keyed parameter initialisation.
//!
//! Each tensor draws from its own stream seeded by `(global seed, name)`,
//! so adding or removing a component never shifts another component's
//! initial values.

use dml_autodiff::{ParameterStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Half-width of the uniform range used for feature and task embeddings.
pub const EMBEDDING_INIT_BOUND: f64 = 0.05;

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives an independent RNG for `(seed, label)`.
pub fn keyed_rng(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed) ^ fnv1a(label.as_bytes()))
}

/// Creates parameters in a store, each initialised from its own stream.
#[derive(Debug)]
pub struct ParamBuilder<'a> {
    store: &'a mut ParameterStore,
    seed: u64,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParameterStore, seed: u64) -> Self {
        Self { store, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn uniform_tensor(&self, name: &str, rows: usize, cols: usize, bound: f64) -> Tensor {
        let mut rng = keyed_rng(self.seed, name);
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Tensor::new(rows, cols, data).expect("positive dims")
    }

    /// Glorot-uniform `[fan_in x fan_out]` weight.
    pub fn glorot(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<()> {
        let t = self.uniform_tensor(name, fan_in, fan_out, glorot_bound(fan_in, fan_out));
        Ok(self.store.insert(name, t)?)
    }

    pub fn uniform(&mut self, name: &str, rows: usize, cols: usize, bound: f64) -> Result<()> {
        let t = self.uniform_tensor(name, rows, cols, bound);
        Ok(self.store.insert(name, t)?)
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<()> {
        Ok(self.store.insert(name, Tensor::zeros(rows, cols))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_variance_matches_theory() {
        let mut store = ParameterStore::new();
        let mut b = ParamBuilder::new(&mut store, 7);
        b.glorot("w", 100, 100).unwrap();
        let w = store.get("w").unwrap();
        assert_eq!(w.len(), 10_000);
        let bound = glorot_bound(100, 100);
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        let mean = w.sum() / w.len() as f64;
        let var = w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let theory = bound * bound / 3.0;
        assert!((var - theory).abs() / theory < 0.1, "{var} vs {theory}");
    }

    #[test]
    fn init_depends_only_on_seed_and_name() {
        let mut a = ParameterStore::new();
        let mut b = ParameterStore::new();
        ParamBuilder::new(&mut a, 3).glorot("x", 4, 5).unwrap();
        {
            let mut pb = ParamBuilder::new(&mut b, 3);
            pb.glorot("other", 9, 2).unwrap();
            pb.glorot("x", 4, 5).unwrap();
        }
        assert_eq!(a.get("x").unwrap(), b.get("x").unwrap());
        let mut c = ParameterStore::new();
        ParamBuilder::new(&mut c, 4).glorot("x", 4, 5).unwrap();
        assert_ne!(a.get("x").unwrap(), c.get("x").unwrap());
    }
}
