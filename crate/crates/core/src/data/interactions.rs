use std::path::Path;

use super::movielens::read_latin1_lines;
use super::{DatasetKind, InteractionRecord, ParseStats, RawDataset, SideFeatures, Vocab};
use crate::error::Result;

fn parse_rating(field: &str) -> Option<u8> {
    let v: f64 = field.trim().parse().ok()?;
    (v.fract() == 0.0 && (1.0..=5.0).contains(&v)).then_some(v as u8)
}

/// Parses delimiter-separated `user,item,rating[,timestamp]` lines.
/// Ratings may be written as floats (`5.0`) but must be whole numbers in
/// 1-5. A header line simply counts as one malformed line.
pub fn parse_interactions(path: &Path, delimiter: char, kind: DatasetKind) -> Result<RawDataset> {
    let mut users = Vocab::new();
    let mut items = Vocab::new();
    let mut stats = ParseStats::default();
    let mut records = Vec::new();
    for line in read_latin1_lines(path)? {
        stats.lines += 1;
        let parts: Vec<&str> = line.split(delimiter).map(str::trim).collect();
        let parsed = match parts.as_slice() {
            [u, i, r] | [u, i, r, _] if !u.is_empty() && !i.is_empty() => {
                let timestamp = match parts.get(3) {
                    Some(ts) => match ts.parse::<f64>() {
                        Ok(t) => Some(t as i64),
                        Err(_) => None,
                    },
                    None => None,
                };
                let ts_ok = parts.len() == 3 || timestamp.is_some();
                parse_rating(r)
                    .filter(|_| ts_ok)
                    .map(|rating| InteractionRecord {
                        user: users.intern(u),
                        item: items.intern(i),
                        rating,
                        timestamp,
                    })
            }
            _ => None,
        };
        match parsed {
            Some(r) => records.push(r),
            None => stats.malformed += 1,
        }
    }
    stats.check(&path.display().to_string())?;
    let item_side = match kind {
        DatasetKind::Electronics => SideFeatures::new(&["category"]),
        _ => SideFeatures::default(),
    };
    Ok(RawDataset {
        kind,
        records,
        users,
        items,
        user_side: SideFeatures::default(),
        item_side,
        stats,
    })
}

/// Attaches `item<delim>category[<delim>category...]` lines to the items
/// of `raw`. Lines for items absent from the interactions are ignored.
pub fn parse_item_categories(path: &Path, delimiter: char, raw: &mut RawDataset) -> Result<()> {
    if raw.item_side.fields.is_empty() {
        raw.item_side = SideFeatures::new(&["category"]);
    }
    let mut stats = ParseStats::default();
    let mut attached = 0usize;
    for line in read_latin1_lines(path)? {
        stats.lines += 1;
        let mut parts = line.split(delimiter).map(str::trim);
        let Some(item) = parts.next().filter(|s| !s.is_empty()) else {
            stats.malformed += 1;
            continue;
        };
        let categories: Vec<String> = parts
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        if categories.is_empty() {
            stats.malformed += 1;
            continue;
        }
        let idx = raw.items.lookup(item);
        if idx != 0 {
            raw.item_side.values.insert(idx, vec![categories]);
            attached += 1;
        }
    }
    stats.check(&path.display().to_string())?;
    log::info!("attached categories to {attached} items");
    Ok(())
}
