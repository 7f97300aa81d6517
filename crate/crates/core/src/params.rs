//! Named parameter storage with per-group freeze flags.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    /// Optimization group, e.g. `backbone`, `adapter`, `unet.enc`.
    pub group: String,
    pub value: Tensor<T>,
    pub trainable: bool,
}

/// Parameters of one model. The `tag` distinguishes stores that share a
/// computation graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    tag: u32,
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(tag: u32) -> Self {
        ParamStore {
            tag,
            entries: Vec::new(),
        }
    }

    pub fn tag(&self) -> u32 {
        self.tag
    }

    pub fn add(&mut self, name: impl Into<String>, group: &str, value: Tensor<T>) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            group: group.to_string(),
            value,
            trainable: true,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Sets the trainable flag on every parameter whose group starts with
    /// `prefix`. Fails if no parameter matches.
    pub fn set_group_trainable(&mut self, prefix: &str, trainable: bool) -> Result<usize> {
        let mut n = 0;
        for e in &mut self.entries {
            if e.group.starts_with(prefix) {
                e.trainable = trainable;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Config(format!("no parameter group named `{prefix}`")));
        }
        Ok(n)
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for e in &mut self.entries {
            e.trainable = trainable;
        }
    }

    /// Replaces values from another store with identical names and shapes.
    pub fn load_values(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.entries.len() != self.entries.len() {
            return Err(Error::Format(format!(
                "parameter count {} vs {}",
                other.entries.len(),
                self.entries.len()
            )));
        }
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(Error::Format(format!(
                    "parameter `{}` {:?} does not match `{}` {:?}",
                    dst.name,
                    dst.value.shape(),
                    src.name,
                    src.value.shape()
                )));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }

    /// Snapshot of every value in the given group prefix, for freeze checks.
    pub fn group_values(&self, prefix: &str) -> Vec<Tensor<T>> {
        self.entries
            .iter()
            .filter(|e| e.group.starts_with(prefix))
            .map(|e| e.value.clone())
            .collect()
    }
}
