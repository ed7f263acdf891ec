use std::collections::BTreeSet;
use std::sync::Arc;

use dml_autodiff::Bags;
use serde::{Deserialize, Serialize};

use super::{
    Batch, DatasetKind, InteractionRecord, LabeledExample, RawDataset, SideFeatures, TaskSpec,
    POSITIVE_RATING,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    User,
    Item,
}

/// Per-entity feature values of one categorical field.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldValues {
    /// The entity index itself (id fields).
    Identity,
    /// Entity index → value indices; missing entities map to `[0]`.
    Lookup(Vec<Vec<u32>>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureField {
    pub name: String,
    pub side: Side,
    pub vocab_size: usize,
    pub values: FieldValues,
}

impl FeatureField {
    /// Value indices of `entity` for this field.
    pub fn indices(&self, entity: u32) -> Vec<usize> {
        match &self.values {
            FieldValues::Identity => vec![entity as usize],
            FieldValues::Lookup(v) => match v.get(entity as usize) {
                Some(list) if !list.is_empty() => list.iter().map(|&i| i as usize).collect(),
                _ => vec![0],
            },
        }
    }

    pub fn is_multi_valued(&self) -> bool {
        match &self.values {
            FieldValues::Identity => false,
            FieldValues::Lookup(v) => v.iter().any(|l| l.len() > 1),
        }
    }
}

/// Fully indexed dataset: feature fields plus labelled examples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedDataset {
    pub kind: DatasetKind,
    pub tasks: Vec<TaskSpec>,
    pub fields: Vec<FeatureField>,
    pub examples: Vec<LabeledExample>,
}

impl EncodedDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn field_vocab_sizes(&self) -> Vec<usize> {
        self.fields.iter().map(|f| f.vocab_size).collect()
    }

    /// Gathers the examples at `indices` into a batch.
    pub fn assemble(&self, indices: &[u32]) -> Result<Batch> {
        let mut examples = Vec::with_capacity(indices.len());
        for &i in indices {
            examples.push(self.examples.get(i as usize).ok_or_else(|| {
                Error::Data(format!("example index {i} out of range ({})", self.len()))
            })?);
        }
        let fields = self
            .fields
            .iter()
            .map(|f| {
                let lists = examples.iter().map(|ex| {
                    f.indices(match f.side {
                        Side::User => ex.user,
                        Side::Item => ex.item,
                    })
                });
                Arc::new(Bags::from_lists(lists.collect::<Vec<_>>()))
            })
            .collect();
        let labels = (0..self.num_tasks())
            .map(|k| examples.iter().map(|ex| ex.labels[k]).collect())
            .collect();
        Ok(Batch {
            indices: indices.to_vec(),
            fields,
            labels,
            ratings: examples.iter().map(|ex| ex.rating).collect(),
        })
    }
}

/// Label tuples per dataset kind: `(positive, rating)` for MovieLens-style
/// data, `(rated, positive)` for Electronics.
pub fn derive_labels(
    records: &[InteractionRecord],
    kind: DatasetKind,
) -> Result<Vec<LabeledExample>> {
    records
        .iter()
        .map(|r| {
            if r.rating > 5 {
                return Err(Error::Data(format!("rating {} out of range", r.rating)));
            }
            let positive = if r.rating >= POSITIVE_RATING {
                1.0
            } else {
                0.0
            };
            let labels = match kind {
                DatasetKind::MovieLens1M | DatasetKind::Synthetic => {
                    if r.rating == 0 {
                        return Err(Error::Data(format!(
                            "{kind} records must carry an observed rating"
                        )));
                    }
                    vec![positive, f64::from(r.rating)]
                }
                DatasetKind::Electronics => {
                    let rated = if r.rating > 0 { 1.0 } else { 0.0 };
                    vec![rated, positive]
                }
            };
            Ok(LabeledExample {
                user: r.user,
                item: r.item,
                rating: r.rating,
                labels,
            })
        })
        .collect()
}

fn side_fields(side: &SideFeatures, which: Side, entities: usize) -> Vec<FeatureField> {
    side.fields
        .iter()
        .enumerate()
        .map(|(f, name)| {
            let distinct: BTreeSet<&str> = side
                .values
                .values()
                .flat_map(|v| v[f].iter().map(String::as_str))
                .collect();
            let vocab = super::Vocab::from_ids(distinct.iter().copied());
            let mut per_entity = vec![Vec::new(); entities];
            for (&e, v) in &side.values {
                if let Some(slot) = per_entity.get_mut(e as usize) {
                    *slot = v[f].iter().map(|s| vocab.lookup(s)).collect();
                }
            }
            FeatureField {
                name: name.clone(),
                side: which,
                vocab_size: vocab.size(),
                values: FieldValues::Lookup(per_entity),
            }
        })
        .collect()
}

/// Indexes every field and derives labels. Field order: user id, item id,
/// user side fields, item side fields. Side-feature vocabularies are sorted.
pub fn encode_dataset(raw: &RawDataset) -> Result<EncodedDataset> {
    let mut fields = vec![
        FeatureField {
            name: "user".into(),
            side: Side::User,
            vocab_size: raw.users.size(),
            values: FieldValues::Identity,
        },
        FeatureField {
            name: "item".into(),
            side: Side::Item,
            vocab_size: raw.items.size(),
            values: FieldValues::Identity,
        },
    ];
    fields.extend(side_fields(&raw.user_side, Side::User, raw.users.size()));
    fields.extend(side_fields(&raw.item_side, Side::Item, raw.items.size()));
    Ok(EncodedDataset {
        kind: raw.kind,
        tasks: raw.kind.tasks(),
        fields,
        examples: derive_labels(&raw.records, raw.kind)?,
    })
}
