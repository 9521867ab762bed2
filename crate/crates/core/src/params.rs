//! Named trainable parameters and their initialization.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A trainable tensor with its gradient accumulator and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub step_count: u64,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self {
            grad: zeros.clone(),
            adam_m: zeros.clone(),
            adam_v: zeros,
            value,
            step_count: 0,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

/// Parameters keyed by path. Iteration is sorted by name.
#[derive(Clone, Debug)]
pub struct ParameterStore {
    params: BTreeMap<String, Parameter>,
    rng_seed: u64,
    rng: ChaCha8Rng,
}

impl PartialEq for ParameterStore {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params && self.rng_seed == other.rng_seed
    }
}

/// Half-width of the Xavier uniform interval for `shape`.
///
/// A 1-D shape `(n)` is treated as a `1 x n` matrix.
pub fn xavier_bound(shape: &[usize]) -> f64 {
    let (fan_in, fan_out) = match shape {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => panic!("xavier_bound expects 1 or 2 extents, got {shape:?}"),
    };
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl ParameterStore {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            params: BTreeMap::new(),
            rng_seed,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Register `name` with Xavier-uniform values drawn from the store's stream.
    pub fn xavier(&mut self, name: &str, shape: &[usize]) -> Result<&Parameter> {
        if !(1..=2).contains(&shape.len()) {
            return Err(Error::Shape(format!(
                "xavier init needs 1 or 2 extents, got {shape:?}"
            )));
        }
        if self.params.contains_key(name) {
            return Err(Error::DuplicateParameter(name.to_string()));
        }
        let bound = xavier_bound(shape);
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    /// Register `name` with explicit values.
    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<&Parameter> {
        if self.params.contains_key(name) {
            return Err(Error::DuplicateParameter(name.to_string()));
        }
        Ok(self
            .params
            .entry(name.to_string())
            .or_insert(Parameter::new(value)))
    }

    /// Insert or replace a fully formed parameter (used when restoring checkpoints).
    pub fn put(&mut self, name: &str, param: Parameter) {
        self.params.insert(name.to_string(), param);
    }

    pub fn get(&self, name: &str) -> Result<&Parameter> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.get(name).map(|p| &p.value)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.zero_grad();
        }
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xavier_square_bound() {
        let mut store = ParameterStore::new(3);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..625 {
            let p = store.xavier(&format!("w{i}"), &[4, 4]).unwrap();
            for &v in p.value.data() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        let bound = (6.0f64 / 8.0).sqrt();
        assert!((bound - 0.8660).abs() < 1e-4);
        assert!(lo >= -bound && hi <= bound);
        // 10^4 draws should come close to both ends
        assert!(lo < -0.85 && hi > 0.85, "lo={lo} hi={hi}");
    }

    #[test]
    fn xavier_single_value() {
        let mut store = ParameterStore::new(0);
        for i in 0..200 {
            let v = store
                .xavier(&format!("s{i}"), &[1, 1])
                .unwrap()
                .value
                .item();
            assert!(v.abs() <= 3f64.sqrt());
        }
        assert_eq!(xavier_bound(&[1]), 3f64.sqrt());
    }

    #[test]
    fn same_seed_same_values() {
        let build = || {
            let mut s = ParameterStore::new(42);
            s.xavier("a", &[3, 5]).unwrap();
            s.xavier("b", &[7]).unwrap();
            s
        };
        let (a, b) = (build(), build());
        for ((na, pa), (nb, pb)) in a.iter().zip(b.iter()) {
            assert_eq!(na, nb);
            let bits_a: Vec<u64> = pa.value.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = pb.value.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut store = ParameterStore::new(0);
        store.xavier("w", &[2, 2]).unwrap();
        assert!(matches!(
            store.xavier("w", &[2, 2]),
            Err(Error::DuplicateParameter(_))
        ));
    }

    #[test]
    fn bad_rank_rejected() {
        let mut store = ParameterStore::new(0);
        assert!(store.xavier("w", &[2, 2, 2]).is_err());
    }

    #[test]
    fn iteration_is_sorted() {
        let mut store = ParameterStore::new(0);
        store.xavier("zeta", &[1]).unwrap();
        store.xavier("alpha", &[1]).unwrap();
        store.xavier("mid", &[1]).unwrap();
        let names: Vec<_> = store.names().collect();
        assert_eq!(names, ["alpha", "mid", "zeta"]);
    }
}
