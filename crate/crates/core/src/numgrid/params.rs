use std::collections::{BTreeMap, BTreeSet};

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Named learnable tensors, iterated in lexicographic order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTree<T> {
    entries: BTreeMap<String, Tensor<T>>,
    frozen: BTreeSet<String>,
}

impl<T> Default for ParamTree<T> {
    fn default() -> Self {
        Self {
            entries: BTreeMap::new(),
            frozen: BTreeSet::new(),
        }
    }
}

impl<T: Real> ParamTree<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::pre(format!("duplicate parameter {name}")));
        }
        self.entries.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn freeze(&mut self, name: &str) -> Result<()> {
        if !self.entries.contains_key(name) {
            return Err(Error::pre(format!("cannot freeze unknown parameter {name}")));
        }
        self.frozen.insert(name.to_string());
        Ok(())
    }

    /// Freeze every parameter whose name starts with `prefix`; returns how many.
    pub fn freeze_prefix(&mut self, prefix: &str) -> usize {
        let names: Vec<String> = self.entries.keys().filter(|n| n.starts_with(prefix)).cloned().collect();
        let count = names.len();
        self.frozen.extend(names);
        count
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    pub fn frozen(&self) -> impl Iterator<Item = &String> {
        self.frozen.iter()
    }

    /// Move every entry of `other` into `self`; names must not collide.
    pub fn merge(&mut self, other: ParamTree<T>) -> Result<()> {
        for (name, t) in other.entries {
            self.insert(name, t)?;
        }
        self.frozen.extend(other.frozen);
        Ok(())
    }

    /// Copy of the entries under `prefix`.
    pub fn subtree(&self, prefix: &str) -> ParamTree<T> {
        let mut out = ParamTree::new();
        for (n, t) in self.entries.iter().filter(|(n, _)| n.starts_with(prefix)) {
            out.entries.insert(n.clone(), t.clone());
            if self.frozen.contains(n) {
                out.frozen.insert(n.clone());
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> ParamTree<U> {
        ParamTree {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
            frozen: self.frozen.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates_and_orders_names() {
        let mut p = ParamTree::<f64>::new();
        p.insert("b.w", Tensor::zeros(&[1])).unwrap();
        p.insert("a.w", Tensor::zeros(&[1])).unwrap();
        assert!(p.insert("a.w", Tensor::zeros(&[1])).is_err());
        let names: Vec<_> = p.names().cloned().collect();
        assert_eq!(names, vec!["a.w", "b.w"]);
    }

    #[test]
    fn freeze_requires_known_name() {
        let mut p = ParamTree::<f64>::new();
        p.insert("restore.enc.weight", Tensor::zeros(&[1])).unwrap();
        p.insert("enhance.dec.weight", Tensor::zeros(&[1])).unwrap();
        assert!(p.freeze("nope").is_err());
        assert_eq!(p.freeze_prefix("restore."), 1);
        assert!(p.is_frozen("restore.enc.weight"));
        assert!(!p.is_frozen("enhance.dec.weight"));
    }
}
