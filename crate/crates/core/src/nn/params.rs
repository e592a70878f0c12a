use std::collections::HashMap;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of an entry in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntryKind {
    /// Learnable; receives gradients and optimizer updates.
    Param,
    /// Non-learnable state such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    kind: EntryKind,
    value: Tensor,
}

/// Named, insertion-ordered tensors owned by a model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, kind: EntryKind, value: Tensor) -> ParamId {
        assert!(!self.by_name.contains_key(name), "duplicate parameter name {name}");
        self.by_name.insert(name.to_string(), self.entries.len());
        self.entries.push(Entry {
            name: name.to_string(),
            kind,
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn add_param(&mut self, name: &str, value: Tensor) -> ParamId {
        self.insert(name, EntryKind::Param, value)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor) -> ParamId {
        self.insert(name, EntryKind::Buffer, value)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.kind(id) == EntryKind::Param)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn kind(&self, id: ParamId) -> EntryKind {
        self.entries[id.0].kind
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    /// Replaces an entry's value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(Error::shape(
                "param_set",
                format!("{}: {:?} vs {:?}", entry.name, entry.value.shape(), value.shape()),
            ));
        }
        entry.value = value;
        Ok(())
    }

    /// Total scalar count of learnable entries whose name starts with `prefix`.
    pub fn count_params(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == EntryKind::Param && e.name.starts_with(prefix))
            .map(|e| e.value.numel())
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass: a fresh graph plus lazily bound parameters.
///
/// Parameters are copied into the graph on first use. In [`Mode::Train`]
/// they require gradients and batch norms use (and record) batch
/// statistics; in [`Mode::Eval`] nothing is differentiated.
pub struct Session<'s> {
    pub graph: Graph,
    store: &'s mut ParamStore,
    bound: Vec<Option<Var>>,
    mode: Mode,
}

impl<'s> Session<'s> {
    pub fn new(store: &'s mut ParamStore, mode: Mode) -> Self {
        Self::with_graph(store, mode, Graph::new())
    }

    /// Uses a caller-supplied (empty) graph, e.g. one with profiling on.
    pub fn with_graph(store: &'s mut ParamStore, mode: Mode, graph: Graph) -> Self {
        let n = store.len();
        Session {
            graph,
            store,
            bound: vec![None; n],
            mode,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        self.store
    }

    /// Graph handle for a learnable parameter.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(v) = self.bound[id.0] {
            return Ok(v);
        }
        let value = self.store.get(id).clone();
        let v = self.graph.leaf(value, self.mode == Mode::Train)?;
        self.bound[id.0] = Some(v);
        Ok(v)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.graph.constant(value)
    }

    pub fn into_bound(self) -> (Graph, Vec<(ParamId, Var)>) {
        let bound = self
            .bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .collect();
        (self.graph, bound)
    }
}

/// Gradients of bound parameters after `graph.backward`, in store order.
/// Parameters that did not influence the loss are omitted.
pub fn collect_grads(graph: &Graph, bound: &[(ParamId, Var)]) -> Vec<(ParamId, Tensor)> {
    bound
        .iter()
        .filter_map(|&(id, v)| graph.grad(v).map(|g| (id, g)))
        .collect()
}
