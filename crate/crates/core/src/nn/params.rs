use indexmap::IndexMap;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense array with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                expected: n,
                actual: data.len(),
                context: "tensor payload",
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.f64())).collect(),
        }
    }
}

/// Ordered collection of named parameter arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    entries: IndexMap<String, Tensor<T>>,
    pub version: u64,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: IndexMap::new(),
            version: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name)
    }

    #[inline]
    pub fn at(&self, index: usize) -> &Tensor<T> {
        &self.entries[index]
    }

    #[inline]
    pub fn at_mut(&mut self, index: usize) -> &mut Tensor<T> {
        &mut self.entries[index]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn zeros_like(&self) -> Self {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(&v.shape)))
                .collect(),
            version: 0,
        }
    }

    pub fn fill_zero(&mut self) {
        for t in self.entries.values_mut() {
            t.data.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
            version: self.version,
        }
    }

    /// Same names and shapes, in the same order.
    pub fn is_congruent(&self, other: &ParamStore<T>) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(other.entries.iter())
                .all(|((ka, a), (kb, b))| ka == kb && a.shape == b.shape)
    }

    pub fn ensure_congruent(&self, other: &ParamStore<T>) -> Result<()> {
        if self.is_congruent(other) {
            Ok(())
        } else {
            Err(Error::Shape {
                expected: self.numel(),
                actual: other.numel(),
                context: "parameter stores are not congruent",
            })
        }
    }

    /// Flat view over every element in store order.
    pub fn flat(&self) -> impl Iterator<Item = T> + '_ {
        self.entries.values().flat_map(|t| t.data.iter().copied())
    }

    pub fn flat_mut(&mut self) -> impl Iterator<Item = &mut T> + '_ {
        self.entries.values_mut().flat_map(|t| t.data.iter_mut())
    }

    /// Element `index` in flat order.
    pub fn flat_get(&self, index: usize) -> T {
        self.locate(index).map(|(e, i)| self.entries[e].data[i]).expect("index in range")
    }

    pub fn flat_set(&mut self, index: usize, value: T) {
        let (e, i) = self.locate(index).expect("index in range");
        self.entries[e].data[i] = value;
    }

    fn locate(&self, mut index: usize) -> Option<(usize, usize)> {
        for (e, t) in self.entries.values().enumerate() {
            if index < t.numel() {
                return Some((e, index));
            }
            index -= t.numel();
        }
        None
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &ParamStore<T>, scale: T) {
        for (a, b) in self.entries.values_mut().zip(other.entries.values()) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        self.flat_mut().for_each(|v| *v *= s);
    }

    pub fn max_abs_diff(&self, other: &ParamStore<T>) -> T {
        self.flat()
            .zip(other.flat())
            .map(|(a, b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn all_finite(&self) -> bool {
        self.flat().all(|v| v.is_finite())
    }

    /// Digest of names, shapes and exact bit patterns.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.entries {
            h.update(name.as_bytes());
            for d in &t.shape {
                h.update((*d as u64).to_le_bytes());
            }
            for v in &t.data {
                h.update(v.f64().to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Convex combination `target <- tau * online + (1 - tau) * target`.
pub fn polyak_update<T: Scalar>(
    target: &mut ParamStore<T>,
    online: &ParamStore<T>,
    tau: T,
) -> Result<()> {
    if !(tau >= T::zero() && tau <= T::one()) {
        return Err(Error::Config(format!("polyak tau must lie in [0, 1], got {tau}")));
    }
    target.ensure_congruent(online)?;
    let keep = T::one() - tau;
    for (t, o) in target.flat_mut().zip(online.flat()) {
        *t = tau * o + keep * *t;
    }
    target.version += 1;
    Ok(())
}
