use std::collections::{BTreeMap, HashSet};

use rand::seq::index::sample;
use rand::Rng;

use super::InteractionRecord;
use crate::nn::keyed_rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AugmentStats {
    pub negatives: usize,
    /// Users with fewer unrated items than rated ones.
    pub exhausted_users: usize,
}

/// Adds, for every user with `n` rated items, `n` distinct items drawn
/// uniformly from `1..=num_items` minus the user's rated set (rating 0).
pub fn augment_negatives(
    records: &[InteractionRecord],
    num_items: usize,
    seed: u64,
) -> Vec<InteractionRecord> {
    augment_negatives_with_stats(records, num_items, seed).0
}

pub fn augment_negatives_with_stats(
    records: &[InteractionRecord],
    num_items: usize,
    seed: u64,
) -> (Vec<InteractionRecord>, AugmentStats) {
    let mut rated: BTreeMap<u32, HashSet<u32>> = BTreeMap::new();
    for r in records {
        rated.entry(r.user).or_default().insert(r.item);
    }
    let mut out = records.to_vec();
    let mut stats = AugmentStats::default();
    for (&user, items) in &rated {
        let n = items.len();
        let known = items
            .iter()
            .filter(|&&i| i >= 1 && i as usize <= num_items)
            .count();
        let available = num_items - known;
        let mut rng = keyed_rng(seed, &format!("augment/{user}"));
        let chosen: Vec<u32> = if n >= available {
            if n > available {
                stats.exhausted_users += 1;
                log::warn!(
                    "user index {user} rated {n} items but only {available} are unrated; \
                     sampling all of them"
                );
            }
            (1..=num_items as u32)
                .filter(|i| !items.contains(i))
                .collect()
        } else if 2 * n <= available {
            let mut picked = HashSet::with_capacity(n);
            let mut order = Vec::with_capacity(n);
            while order.len() < n {
                let i = rng.random_range(1..=num_items as u32);
                if !items.contains(&i) && picked.insert(i) {
                    order.push(i);
                }
            }
            order
        } else {
            let pool: Vec<u32> = (1..=num_items as u32)
                .filter(|i| !items.contains(i))
                .collect();
            sample(&mut rng, pool.len(), n)
                .into_iter()
                .map(|j| pool[j])
                .collect()
        };
        stats.negatives += chosen.len();
        out.extend(chosen.into_iter().map(|item| InteractionRecord {
            user,
            item,
            rating: 0,
            timestamp: None,
        }));
    }
    if stats.exhausted_users > 0 {
        log::warn!(
            "{} users had too few unrated items for a full negative sample",
            stats.exhausted_users
        );
    }
    (out, stats)
}
