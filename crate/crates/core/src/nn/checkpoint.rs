//! Versioned text checkpoints of a [`ParameterStore`].
//!
//! ```text
//! dml-checkpoint v1
//! params <count>
//! <name> <rows> <cols> [frozen]
//! <hex bits of each value, space separated>
//! ...
//! ```
//!
//! Values are written as the hexadecimal bit patterns of the `f64`s, so a
//! round trip is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use dml_autodiff::{ParameterStore, Tensor};

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "dml-checkpoint v1";

pub fn encode_checkpoint(store: &ParameterStore) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_MAGIC}");
    let _ = writeln!(out, "params {}", store.len());
    for (name, t) in store.iter() {
        let frozen = if store.is_frozen(name) { " frozen" } else { "" };
        let _ = writeln!(out, "{name} {} {}{frozen}", t.rows(), t.cols());
        let values: Vec<String> = t
            .data()
            .iter()
            .map(|v| format!("{:016x}", v.to_bits()))
            .collect();
        let _ = writeln!(out, "{}", values.join(" "));
    }
    out
}

pub fn decode_checkpoint(text: &str) -> Result<ParameterStore> {
    let bad = |msg: String| Error::Checkpoint(msg);
    let mut lines = text.lines();
    match lines.next() {
        Some(CHECKPOINT_MAGIC) => {}
        Some(other) => return Err(bad(format!("unsupported header `{other}`"))),
        None => return Err(bad("empty file".into())),
    }
    let count: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("params "))
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| bad("missing parameter count".into()))?;
    let mut store = ParameterStore::new();
    for _ in 0..count {
        let header = lines
            .next()
            .ok_or_else(|| bad("truncated parameter list".into()))?;
        let parts: Vec<&str> = header.split(' ').collect();
        let (name, rows, cols, frozen) = match parts.as_slice() {
            [n, r, c] => (*n, *r, *c, false),
            [n, r, c, "frozen"] => (*n, *r, *c, true),
            _ => return Err(bad(format!("malformed header `{header}`"))),
        };
        let rows: usize = rows
            .parse()
            .map_err(|_| bad(format!("bad rows in `{header}`")))?;
        let cols: usize = cols
            .parse()
            .map_err(|_| bad(format!("bad cols in `{header}`")))?;
        let body = lines
            .next()
            .ok_or_else(|| bad(format!("missing values for `{name}`")))?;
        let data = body
            .split(' ')
            .map(|h| u64::from_str_radix(h, 16).map(f64::from_bits))
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| bad(format!("bad value for `{name}`: {e}")))?;
        store.insert(name, Tensor::new(rows, cols, data)?)?;
        if frozen {
            store.freeze(name)?;
        }
    }
    Ok(store)
}

pub fn save_checkpoint(store: &ParameterStore, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(store)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ParameterStore> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&text)
}
