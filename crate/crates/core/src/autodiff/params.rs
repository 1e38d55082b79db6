use std::collections::BTreeMap;

use crate::autodiff::Tensor;
use crate::Scalar;

/// Named parameter tensors, iterated in sorted-name order so that
/// initialization, updates and checkpoints are deterministic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<F> {
    map: BTreeMap<String, Tensor<F>>,
}

impl<F: Scalar> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet { map: BTreeMap::new() }
    }

    /// Inserts a parameter; it participates in gradient tracking.
    pub fn insert(&mut self, name: impl Into<String>, mut t: Tensor<F>) {
        t.requires_grad = true;
        self.map.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> &Tensor<F> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name:?}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<F> {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter {name:?}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<F>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<F>)> {
        self.map.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in self.map.values_mut() {
            t.zero_grad();
        }
    }

    pub fn all_finite(&self) -> bool {
        self.map.values().all(Tensor::all_finite)
    }

    /// Flat copy of all values in name order; handy for bit-exact snapshots.
    pub fn snapshot(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.numel());
        for t in self.map.values() {
            out.extend_from_slice(t.data());
        }
        out
    }
}

/// AdamW hyperparameters (decoupled weight decay).
#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// AdamW with per-parameter first/second moment state.
///
/// Update per element, with bias-corrected moments `m̂`, `v̂`:
/// `w ← w − lr·(m̂ / (√v̂ + eps) + weight_decay·w)`.
#[derive(Debug, Clone)]
pub struct AdamW<F> {
    pub cfg: AdamWConfig,
    t: u64,
    moments: BTreeMap<String, (Vec<F>, Vec<F>)>,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(cfg: AdamWConfig) -> Self {
        AdamW { cfg, t: 0, moments: BTreeMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update from the grad buffers of `params`, then clears them.
    /// Parameters whose grad buffer is absent are still weight-decayed with a
    /// zero gradient, keeping the trajectory independent of which losses
    /// happened to touch them.
    pub fn step(&mut self, params: &mut ParamSet<F>) {
        self.t += 1;
        let lr = F::lit(self.cfg.lr);
        let b1 = F::lit(self.cfg.beta1);
        let b2 = F::lit(self.cfg.beta2);
        let eps = F::lit(self.cfg.eps);
        let wd = F::lit(self.cfg.weight_decay);
        let c1 = F::one() - F::lit(self.cfg.beta1.powi(self.t as i32));
        let c2 = F::one() - F::lit(self.cfg.beta2.powi(self.t as i32));
        for (name, tensor) in params.iter_mut() {
            let n = tensor.numel();
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![F::zero(); n], vec![F::zero(); n]));
            let grad = tensor.grad.take();
            let data = tensor.data_mut();
            for i in 0..n {
                let g = grad.as_ref().map_or(F::zero(), |g| g[i]);
                m[i] = b1 * m[i] + (F::one() - b1) * g;
                v[i] = b2 * v[i] + (F::one() - b2) * g * g;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                data[i] = data[i] - lr * (mhat / (vhat.sqrt() + eps) + wd * data[i]);
            }
        }
    }
}
