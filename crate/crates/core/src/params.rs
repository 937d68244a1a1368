//! Named trainable tensors and gradient storage keyed by parameter name.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    BnAffine,
    /// `[d, vx, vy, rho]` of one evolved convolution.
    RdaCoefficients,
}

impl ParamKind {
    pub fn takes_weight_decay(self) -> bool {
        matches!(self, ParamKind::Weight | ParamKind::Bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub dims: Vec<usize>,
    pub kind: ParamKind,
    pub value: Vec<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, kind: ParamKind, value: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), value.len());
        Self {
            name: name.into(),
            dims,
            kind,
            value,
        }
    }

    pub fn filled(name: impl Into<String>, dims: Vec<usize>, kind: ParamKind, fill: f64) -> Self {
        let len = dims.iter().product();
        Self::new(name, dims, kind, vec![fill; len])
    }

    /// He-normal initialization, `std = sqrt(2 / fan_in)`, seeded per parameter name
    /// so that values do not depend on construction order.
    pub fn he_normal(name: impl Into<String>, dims: Vec<usize>, kind: ParamKind, fan_in: usize, seed: u64) -> Self {
        let name = name.into();
        let len: usize = dims.iter().product();
        let mut rng = named_rng(seed, &name);
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let value = (0..len).map(|_| normal.sample(&mut rng)).collect();
        Self::new(name, dims, kind, value)
    }

    /// Entries uniform in `[-bound, bound]`.
    pub fn uniform(name: impl Into<String>, dims: Vec<usize>, kind: ParamKind, bound: f64, seed: u64) -> Self {
        let name = name.into();
        let len: usize = dims.iter().product();
        let mut rng = named_rng(seed, &name);
        let value = (0..len).map(|_| rng.random_range(-bound..=bound)).collect();
        Self::new(name, dims, kind, value)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// RNG whose stream is selected by a hash of `name`.
pub fn named_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Gradient accumulator keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<String, Vec<f64>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `grad` into the entry for `name`, creating it if needed.
    pub fn accumulate(&mut self, name: &str, grad: &[f64]) {
        match self.grads.get_mut(name) {
            Some(existing) => {
                debug_assert_eq!(existing.len(), grad.len(), "gradient length for {name}");
                for (a, b) in existing.iter_mut().zip(grad) {
                    *a += b;
                }
            }
            None => {
                self.grads.insert(name.to_owned(), grad.to_vec());
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.grads.get(name).map(Vec::as_slice)
    }

    pub fn require(&self, name: &str) -> Result<&[f64]> {
        self.get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no gradient for parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.grads
            .values()
            .flat_map(|g| g.iter())
            .fold(0.0f64, |m, &x| m.max(x.abs()))
    }
}
