//! Named parameter storage with per-parameter Adam moments, plus the gradient
//! accumulator used by every backward pass.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
struct ParamEntry {
    value: Tensor,
    m: Tensor,
    v: Tensor,
}

/// Named parameter tensors plus their Adam first/second moments and the shared
/// step counter. Iteration order is the sorted name order, so every pass over
/// the store is deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter; moments start at zero with the same shape.
    pub fn insert(&mut self, name: &str, value: Tensor) {
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        self.entries
            .insert(name.to_string(), ParamEntry { value, m, v });
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self
            .entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
            .value
    }

    /// Direct mutable access, for initialization and perturbation only; Adam
    /// moments are left untouched.
    pub fn param_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
            .value
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.value))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// One Adam update with bias correction; increments the step counter by
    /// exactly one. The gradient names must match the parameter names exactly.
    pub fn adam_update(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::Arg(format!("adam_update: lr must be > 0, got {lr}")));
        }
        for name in grads.names() {
            if !self.entries.contains_key(name) {
                return Err(Error::Consistency(format!(
                    "adam_update: gradient for unknown parameter {name:?}"
                )));
            }
        }
        for name in self.entries.keys() {
            if !grads.contains(name) {
                return Err(Error::Consistency(format!(
                    "adam_update: missing gradient for parameter {name:?}"
                )));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);

        for (name, entry) in self.entries.iter_mut() {
            let g = grads.get(name);
            if g.shape() != entry.value.shape() {
                return Err(Error::Shape(format!(
                    "adam_update: gradient {name:?} has shape {:?}, parameter has {:?}",
                    g.shape(),
                    entry.value.shape()
                )));
            }
            let gd = g.data();
            let md = entry.m.data_mut();
            let vd = entry.v.data_mut();
            let pd = entry.value.data_mut();
            for k in 0..gd.len() {
                md[k] = ADAM_BETA1 * md[k] + (1.0 - ADAM_BETA1) * gd[k];
                vd[k] = ADAM_BETA2 * vd[k] + (1.0 - ADAM_BETA2) * gd[k] * gd[k];
                let m_hat = md[k] / bc1;
                let v_hat = vd[k] / bc2;
                pd[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// Gradient tensors keyed by parameter name. Create with [`GradStore::zeros_like`]
/// so name/shape consistency with the owning store holds by construction.
#[derive(Debug, Clone, Default)]
pub struct GradStore {
    map: BTreeMap<String, Tensor>,
}

impl GradStore {
    pub fn zeros_like(store: &ParamStore) -> Self {
        let map = store
            .iter()
            .map(|(name, t)| (name.to_string(), Tensor::zeros(t.shape())))
            .collect();
        GradStore { map }
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown gradient {name:?}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown gradient {name:?}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, t)| (k.as_str(), t))
    }

    pub fn accum_outer(&mut self, name: &str, y: &[f64], x: &[f64]) {
        self.get_mut(name).add_outer(y, x);
    }

    pub fn accum_slice(&mut self, name: &str, d: &[f64]) {
        self.get_mut(name).add_slice(d);
    }

    /// Adds `d` into row `row` of a matrix-shaped gradient (embedding rows).
    pub fn accum_row(&mut self, name: &str, row: usize, d: &[f64]) {
        let t = self.get_mut(name);
        let cols = t.cols();
        let dst = &mut t.data_mut()[row * cols..(row + 1) * cols];
        for (a, b) in dst.iter_mut().zip(d) {
            *a += b;
        }
    }

    pub fn add(&mut self, other: &GradStore) {
        for (name, t) in &other.map {
            self.map
                .get_mut(name)
                .unwrap_or_else(|| panic!("gradient stores disagree on {name:?}"))
                .add_scaled(t, 1.0);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for t in self.map.values_mut() {
            t.scale(c);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.map
            .values()
            .flat_map(|t| t.data().iter())
            .fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("theta", Tensor::vector(vec![x]));
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut s = scalar_store(1.25);
        let g = GradStore::zeros_like(&s);
        s.adam_update(&g, 0.1).unwrap();
        assert_eq!(s.get("theta").data()[0].to_bits(), 1.25f64.to_bits());
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn single_step_matches_hand_recurrence() {
        // One step, grad 1, fresh moments: m̂ = v̂ = 1, so the update is
        // lr / (1 + eps) exactly.
        let mut s = scalar_store(0.0);
        let mut g = GradStore::zeros_like(&s);
        g.accum_slice("theta", &[1.0]);
        s.adam_update(&g, 0.1).unwrap();
        let expect = -0.1 / (1.0 + ADAM_EPS);
        assert!((s.get("theta").data()[0] - expect).abs() < 1e-18);
    }

    #[test]
    fn updates_are_bit_deterministic() {
        let run = || {
            let mut s = scalar_store(0.7);
            for k in 0..25 {
                let mut g = GradStore::zeros_like(&s);
                g.accum_slice("theta", &[(k as f64 * 0.37).sin()]);
                s.adam_update(&g, 3e-3).unwrap();
            }
            s.get("theta").data()[0].to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn name_mismatch_is_consistency_error() {
        let mut s = scalar_store(0.0);
        let empty = GradStore::default();
        assert!(matches!(
            s.adam_update(&empty, 0.1),
            Err(crate::error::Error::Consistency(_))
        ));

        let mut other = ParamStore::new();
        other.insert("theta", Tensor::vector(vec![0.0]));
        other.insert("extra", Tensor::vector(vec![0.0]));
        let g = GradStore::zeros_like(&other);
        assert!(matches!(
            s.adam_update(&g, 0.1),
            Err(crate::error::Error::Consistency(_))
        ));
    }

    #[test]
    fn step_counter_increments_by_one() {
        let mut s = scalar_store(0.0);
        let g = GradStore::zeros_like(&s);
        for want in 1..=5 {
            s.adam_update(&g, 0.1).unwrap();
            assert_eq!(s.step(), want);
        }
    }
}
