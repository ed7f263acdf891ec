//! Named trainable tensors and their binding onto a tape.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::{Deref, DerefMut};

use crate::error::{AutodiffError, Result};
use crate::tape::{GradientMap, NodeId, Tape};
use crate::tensor::Tensor;

/// Gradients keyed by parameter name.
pub type ParamGrads = BTreeMap<String, Tensor>;

/// Named tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    params: BTreeMap<String, Tensor>,
    frozen: BTreeSet<String>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(AutodiffError::DuplicateParameter(name));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    /// Marks `name` as not trainable; it binds as a constant.
    pub fn freeze(&mut self, name: &str) -> Result<()> {
        self.get(name)?;
        self.frozen.insert(name.to_string());
        Ok(())
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.params
            .keys()
            .filter(|k| !self.frozen.contains(*k))
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count of trainable tensors.
    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| !self.frozen.contains(*k))
            .map(|(_, v)| v.len())
            .sum()
    }
}

/// A tape plus lazily bound parameters.
///
/// The first [`Graph::param`] call for a name records the tensor as a
/// leaf (or as a constant when frozen); later calls reuse the node.
#[derive(Debug)]
pub struct Graph<'a> {
    tape: Tape,
    store: &'a ParameterStore,
    bound: HashMap<String, NodeId>,
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParameterStore) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: HashMap::new(),
        }
    }

    /// A graph whose stop-gradient outputs are pinned to `values`
    /// (see [`Tape::with_pinned_stop_gradients`]).
    pub fn with_pinned_stop_gradients(store: &'a ParameterStore, values: Vec<Tensor>) -> Self {
        Self {
            tape: Tape::with_pinned_stop_gradients(values),
            store,
            bound: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'a ParameterStore {
        self.store
    }

    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.bound.get(name) {
            return Ok(id);
        }
        let value = self.store.get(name)?.clone();
        let id = if self.store.is_frozen(name) {
            self.tape.constant(value)?
        } else {
            self.tape.leaf(value)?
        };
        self.bound.insert(name.to_string(), id);
        Ok(id)
    }

    /// Node of an already bound parameter.
    pub fn bound(&self, name: &str) -> Option<NodeId> {
        self.bound.get(name).copied()
    }

    /// Names bound so far, sorted.
    pub fn bound_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.bound.keys().map(String::as_str).collect();
        names.sort_unstable();
        names
    }

    /// Adjoints of every bound trainable parameter (zeros when no
    /// unblocked path reached it).
    pub fn param_grads(&self, grads: &GradientMap) -> ParamGrads {
        self.bound
            .iter()
            .filter(|(name, _)| !self.store.is_frozen(name))
            .map(|(name, &id)| (name.clone(), grads.wrt(id)))
            .collect()
    }

    pub fn into_tape(self) -> Tape {
        self.tape
    }
}

impl Deref for Graph<'_> {
    type Target = Tape;

    fn deref(&self) -> &Tape {
        &self.tape
    }
}

impl DerefMut for Graph<'_> {
    fn deref_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }
}
