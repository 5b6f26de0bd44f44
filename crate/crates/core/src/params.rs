//! Named parameter storage and the three parameter groups of the model.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, UavmError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Which of `theta_a`, `theta_v`, `theta_s` a parameter belongs to,
/// decided by its name prefix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    ThetaA,
    ThetaV,
    ThetaS,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [Self::ThetaA, Self::ThetaV, Self::ThetaS];

    pub fn of(name: &str) -> Self {
        if name.starts_with("audio.") {
            Self::ThetaA
        } else if name.starts_with("video.") {
            Self::ThetaV
        } else {
            Self::ThetaS
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ThetaA => "theta_a",
            Self::ThetaV => "theta_v",
            Self::ThetaS => "theta_s",
        }
    }
}

/// Ordered map from parameter name to tensor. Iteration order is the
/// lexicographic name order, which keeps checksums and files stable.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| UavmError::config(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self, group: Option<ParamGroup>) -> usize {
        self.tensors
            .iter()
            .filter(|(name, _)| group.is_none_or(|g| ParamGroup::of(name) == g))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// SHA-256 over names, shapes and exact bit patterns of the selected
    /// group (or of everything).
    pub fn checksum(&self, group: Option<ParamGroup>) -> String {
        let mut hasher = Sha256::new();
        for (name, t) in &self.tensors {
            if group.is_some_and(|g| ParamGroup::of(name) != g) {
                continue;
            }
            hasher.update(name.as_bytes());
            for d in t.shape() {
                hasher.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hex_string(&hasher.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Lazily places parameters on a tape the first time a forward pass asks
/// for them, so a pass only ever binds the parameters it touches.
pub struct ParamBinder<'a> {
    store: &'a ParamStore,
    trainable: bool,
    vars: HashMap<String, Var>,
}

impl<'a> ParamBinder<'a> {
    pub fn new(store: &'a ParamStore, trainable: bool) -> Self {
        Self {
            store,
            trainable,
            vars: HashMap::new(),
        }
    }

    pub fn var(&mut self, tape: &mut Tape, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let t = self.store.require(name)?.clone();
        let v = if self.trainable {
            tape.param(t)
        } else {
            tape.constant(t)
        };
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    /// Bound parameter names with their tape handles, sorted by name.
    pub fn bound(&self) -> Vec<(String, Var)> {
        let mut out: Vec<_> = self.vars.iter().map(|(k, v)| (k.clone(), *v)).collect();
        out.sort();
        out
    }
}
