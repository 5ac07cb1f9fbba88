//! Named trainable tensors, their gradients and AdamW state.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub value: Matrix,
    pub grad: Matrix,
    pub adamw_m: Matrix,
    pub adamw_v: Matrix,
}

impl ParamEntry {
    fn new(value: Matrix) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            grad: Matrix::zeros(r, c),
            adamw_m: Matrix::zeros(r, c),
            adamw_v: Matrix::zeros(r, c),
        }
    }
}

/// Decoupled weight decay Adam.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Trainable parameters keyed by name, plus non-trainable buffers
/// (batch-norm running statistics) that travel with a checkpoint.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
    buffers: BTreeMap<String, Matrix>,
    step_count: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        self.entries.insert(name, ParamEntry::new(value));
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn entry(&self, name: &str) -> Result<&ParamEntry> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    fn entry_mut(&mut self, name: &str) -> Result<&mut ParamEntry> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&Matrix> {
        self.entry(name).map(|e| &e.value)
    }

    /// Overwrites a value; the shape must not change.
    pub fn set_value(&mut self, name: &str, value: Matrix) -> Result<()> {
        let entry = self.entry_mut(name)?;
        if entry.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_value",
                left: entry.value.shape(),
                right: value.shape(),
            });
        }
        entry.value = value;
        Ok(())
    }

    pub fn grad(&self, name: &str) -> Result<&Matrix> {
        self.entry(name).map(|e| &e.grad)
    }

    pub fn accumulate_grad(&mut self, name: &str, g: &Matrix) -> Result<()> {
        let entry = self.entry_mut(name)?;
        if entry.grad.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "accumulate_grad",
                left: entry.grad.shape(),
                right: g.shape(),
            });
        }
        entry.grad.add_assign(g);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.fill(0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn set_step_count(&mut self, steps: u64) {
        self.step_count = steps;
    }

    /// Restores optimizer moments, e.g. from a checkpoint.
    pub fn set_moments(&mut self, name: &str, m: Matrix, v: Matrix) -> Result<()> {
        let entry = self.entry_mut(name)?;
        if entry.value.shape() != m.shape() || m.shape() != v.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_moments",
                left: entry.value.shape(),
                right: m.shape(),
            });
        }
        entry.adamw_m = m;
        entry.adamw_v = v;
        Ok(())
    }

    pub fn buffer(&self, name: &str) -> Result<&Matrix> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn set_buffer(&mut self, name: impl Into<String>, value: Matrix) {
        self.buffers.insert(name.into(), value);
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// One AdamW update over every entry, then gradients are zeroed.
    pub fn adamw_step(&mut self, opt: &AdamW) {
        self.step_count += 1;
        let t = self.step_count as f64;
        let bias1 = 1.0 - libm::pow(opt.beta1, t);
        let bias2 = 1.0 - libm::pow(opt.beta2, t);
        for e in self.entries.values_mut() {
            let value = e.value.as_mut_slice();
            let grad = e.grad.as_mut_slice();
            let m = e.adamw_m.as_mut_slice();
            let v = e.adamw_v.as_mut_slice();
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
                v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                let update = m_hat / (libm::sqrt(v_hat) + opt.epsilon) + opt.weight_decay * value[i];
                value[i] -= opt.lr * update;
                grad[i] = 0.0;
            }
        }
    }

    /// Flat scalar addressing across entries in name order, for probing.
    pub fn scalar_location(&self, mut flat: usize) -> Option<(&str, usize)> {
        for (name, e) in &self.entries {
            if flat < e.value.len() {
                return Some((name.as_str(), flat));
            }
            flat -= e.value.len();
        }
        None
    }

    pub fn nudge(&mut self, name: &str, index: usize, delta: f64) -> Result<()> {
        let entry = self.entry_mut(name)?;
        entry.value.as_mut_slice()[index] += delta;
        Ok(())
    }
}

/// `U(−bound, bound)` initialization.
pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        if bound == 0.0 {
            0.0
        } else {
            rng.random_range(-bound..bound)
        }
    })
}

/// `N(0, std²)` initialization.
pub fn normal<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

/// Glorot-style uniform bound for a `fan_in → fan_out` linear map.
pub fn xavier<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Matrix {
    let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    uniform(fan_in, fan_out, bound, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut store = ParamStore::new();
        store.insert("a", Matrix::zeros(1, 1)).unwrap();
        assert_eq!(
            store.insert("a", Matrix::zeros(1, 1)),
            Err(Error::DuplicateParam("a".into()))
        );
        assert!(matches!(store.value("b"), Err(Error::UnknownParam(_))));
    }

    #[test]
    fn adamw_zeroes_grads_and_moves_downhill() {
        let mut store = ParamStore::new();
        store.insert("w", Matrix::row_vector(&[1.0, -1.0])).unwrap();
        store
            .accumulate_grad("w", &Matrix::row_vector(&[0.5, -0.5]))
            .unwrap();
        store.adamw_step(&AdamW {
            lr: 0.1,
            weight_decay: 0.0,
            ..AdamW::default()
        });
        let w = store.value("w").unwrap();
        // First step of Adam moves each coordinate by ~lr against the gradient sign.
        assert!((w[(0, 0)] - 0.9).abs() < 1e-6);
        assert!((w[(0, 1)] + 0.9).abs() < 1e-6);
        assert_eq!(store.grad("w").unwrap().as_slice(), &[0.0, 0.0]);
        assert_eq!(store.step_count(), 1);
    }

    #[test]
    fn zero_lr_leaves_values_bit_identical() {
        let mut store = ParamStore::new();
        store.insert("w", Matrix::row_vector(&[0.3, -0.7])).unwrap();
        let before = store.value("w").unwrap().clone();
        store
            .accumulate_grad("w", &Matrix::row_vector(&[2.0, 1.0]))
            .unwrap();
        store.adamw_step(&AdamW {
            lr: 0.0,
            ..AdamW::default()
        });
        assert_eq!(store.value("w").unwrap(), &before);
    }

    #[test]
    fn scalar_location_spans_entries() {
        let mut store = ParamStore::new();
        store.insert("a", Matrix::zeros(2, 2)).unwrap();
        store.insert("b", Matrix::zeros(1, 3)).unwrap();
        assert_eq!(store.scalar_location(3), Some(("a", 3)));
        assert_eq!(store.scalar_location(4), Some(("b", 0)));
        assert_eq!(store.scalar_location(7), None);
        assert_eq!(store.scalar_count(), 7);
    }
}
