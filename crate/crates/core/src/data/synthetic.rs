use rand::Rng;

use super::{DatasetKind, InteractionRecord, ParseStats, RawDataset, SideFeatures, Vocab};
use crate::error::{Error, Result};
use crate::nn::keyed_rng;

/// Score cut points mapping the latent score to ratings 1-5.
pub const SYNTHETIC_RATING_CUTS: [f64; 4] = [-1.0, -0.35, 0.35, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticConfig {
    pub examples: usize,
    pub users: usize,
    pub items: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            examples: 1000,
            users: 20,
            items: 20,
            seed: 0,
        }
    }
}

/// Ratings driven by a known linear score `a_user + b_item` with
/// `a, b ~ U(-1, 1)`, bucketed by [`SYNTHETIC_RATING_CUTS`]. The
/// positive label (rating >= 4) is therefore linearly separable in the
/// user and item one-hot features.
pub fn synthetic_dataset(config: SyntheticConfig) -> Result<RawDataset> {
    let SyntheticConfig {
        examples,
        users,
        items,
        seed,
    } = config;
    if examples == 0 || users == 0 || items == 0 {
        return Err(Error::Config(
            "synthetic dataset sizes must be positive".into(),
        ));
    }
    let mut rng = keyed_rng(seed, "synthetic");
    let a: Vec<f64> = (0..users).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..items).map(|_| rng.random_range(-1.0..1.0)).collect();
    let user_vocab = Vocab::from_ids((0..users).map(|u| format!("u{u}")));
    let item_vocab = Vocab::from_ids((0..items).map(|i| format!("i{i}")));
    let records = (0..examples)
        .map(|_| {
            let u = rng.random_range(0..users);
            let i = rng.random_range(0..items);
            let score = a[u] + b[i];
            let rating = 1 + SYNTHETIC_RATING_CUTS.iter().filter(|&&c| score > c).count() as u8;
            InteractionRecord {
                user: u as u32 + 1,
                item: i as u32 + 1,
                rating,
                timestamp: None,
            }
        })
        .collect();
    Ok(RawDataset {
        kind: DatasetKind::Synthetic,
        records,
        users: user_vocab,
        items: item_vocab,
        user_side: SideFeatures::default(),
        item_side: SideFeatures::default(),
        stats: ParseStats::default(),
    })
}
