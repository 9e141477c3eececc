//! Central named-parameter store shared by the model components, plus the
//! binding of parameters into an autodiff graph.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, VarId};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ParamStore {
    map: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.map.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn total_len(&self) -> usize {
        self.map.values().map(|t| t.len()).sum()
    }
}

/// Which parameters the optimizer may update. Everything else is frozen.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct FreezePolicy {
    pub trainable: BTreeSet<String>,
}

impl FreezePolicy {
    pub fn is_trainable(&self, name: &str) -> bool {
        self.trainable.contains(name)
    }
}

/// Parameters inserted as graph leaves for one forward/backward pass.
pub struct BoundParams {
    ids: BTreeMap<String, VarId>,
}

impl BoundParams {
    pub fn bind(graph: &mut Graph, store: &ParamStore) -> Self {
        let mut ids = BTreeMap::new();
        for (name, tensor) in store.iter() {
            ids.insert(name.to_string(), graph.leaf(tensor.clone()));
        }
        BoundParams { ids }
    }

    pub fn id(&self, name: &str) -> VarId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn ids(&self) -> impl Iterator<Item = (&str, VarId)> {
        self.ids.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
