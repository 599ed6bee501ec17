//! Dense tensors and the named parameter store.
//!
//! All model math runs on flat row-major buffers. The element type is
//! generic so the same code trains in f32 and is verified in f64.

use crate::error::{Error, Result};
use num_traits::{Float, FromPrimitive};
use std::fmt::{Debug, Display};

/// Scalar type for all numeric work. f64 is the verification default,
/// f32 is available for training speed.
pub trait Real:
    Float + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    const DTYPE: &'static str;

    fn from_f64c(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite literal")
    }
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    const BYTES: usize;
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Dense array with shape metadata and an optional gradient slot.
#[derive(Debug, Clone)]
pub struct Tensor<F: Real> {
    pub shape: Vec<usize>,
    pub values: Vec<F>,
    pub requires_grad: bool,
    pub grad: Option<Vec<F>>,
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: Vec<usize>, values: Vec<F>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::BadShape {
                op: "tensor",
                expected: "product(shape) == len(values)",
                got: shape,
            });
        }
        Ok(Tensor {
            shape,
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            values: vec![F::zero(); numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable tensors. Names are stable across
/// runs and are the unit of checkpointing and encoder transfer.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<F: Real> {
    entries: Vec<(String, Tensor<F>)>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, mut tensor: Tensor<F>) -> ParamId {
        let name = name.into();
        assert!(
            self.by_name(&name).is_none(),
            "duplicate parameter name {name}"
        );
        tensor.requires_grad = true;
        self.entries.push((name, tensor));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|(n, _)| n == name)
            .map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Total number of scalar parameters.
    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in &mut self.entries {
            t.grad = None;
        }
    }

    /// Copy of all parameter values, for best-epoch snapshots.
    pub fn snapshot(&self) -> Vec<Vec<F>> {
        self.entries.iter().map(|(_, t)| t.values.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<F>]) {
        assert_eq!(snapshot.len(), self.entries.len());
        for ((_, t), vals) in self.entries.iter_mut().zip(snapshot) {
            assert_eq!(t.values.len(), vals.len());
            t.values.copy_from_slice(vals);
        }
    }

    /// Mark every parameter whose name starts with one of `prefixes` as
    /// frozen (excluded from gradient computation and updates).
    pub fn freeze_prefixes(&mut self, prefixes: &[&str]) {
        for (name, t) in &mut self.entries {
            if prefixes.iter().any(|p| name.starts_with(p)) {
                t.requires_grad = false;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shape_must_match_values() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn store_roundtrips_snapshot() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let snap = store.snapshot();
        store.get_mut(id).values[0] = 9.0;
        store.restore(&snap);
        assert_eq!(store.get(id).values, vec![1.0, 2.0]);
    }
}
