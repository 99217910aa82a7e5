use alloc::string::String;
use alloc::vec::Vec;

use super::{Graph, Real, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Ordered, named parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    /// Appends a parameter and returns its slot.
    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        self.params.push(Param {
            name: name.into(),
            value,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, slot: usize) -> &Tensor<T> {
        &self.params[slot].value
    }

    pub fn find(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Places every tensor on `graph` as a leaf, in slot order.
    pub fn bind(&self, graph: &mut Graph<T>, requires_grad: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| graph.leaf(p.value.clone(), requires_grad))
            .collect()
    }

    /// FNV-1a hash over names, shapes, and value bits; any weight change
    /// changes it.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for p in &self.params {
            eat(p.name.as_bytes());
            for &d in p.value.shape() {
                eat(&(d as u64).to_le_bytes());
            }
            for &v in p.value.data() {
                eat(&v.as_f64().to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
        }
    }

    /// Replaces every tensor's values by those of `other`, which must have the
    /// same names and shapes in the same order.
    pub fn load_from(&mut self, other: ParamStore<T>) -> Result<()> {
        if other.params.len() != self.params.len() {
            return Err(Error::shape(
                "params",
                alloc::format!("{} tensors, expected {}", other.params.len(), self.params.len()),
            ));
        }
        for (mine, theirs) in self.params.iter().zip(&other.params) {
            if mine.name != theirs.name || mine.value.shape() != theirs.value.shape() {
                return Err(Error::shape(
                    "params",
                    alloc::format!(
                        "{} {:?} vs {} {:?}",
                        mine.name,
                        mine.value.shape(),
                        theirs.name,
                        theirs.value.shape()
                    ),
                ));
            }
        }
        self.params = other.params;
        Ok(())
    }
}
