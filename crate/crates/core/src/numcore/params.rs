use std::collections::{BTreeMap, HashMap};

use crate::error::{Result, SanasError};
use crate::numcore::Tensor;

/// Named trainable tensors plus their ADAM moment buffers.
///
/// Iteration order is insertion order, which is also the checkpoint order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    index: HashMap<String, usize>,
    values: Vec<Tensor>,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(SanasError::Config(format!("duplicate parameter name {name:?}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.first_moment.push(Tensor::zeros(value.shape()));
        self.second_moment.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        self.names.push(name);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.values[i])
            .ok_or_else(|| SanasError::Config(format!("missing parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.values[i]),
            None => Err(SanasError::Config(format!("missing parameter {name:?}"))),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn moments(&self, name: &str) -> Result<(&Tensor, &Tensor)> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| SanasError::Config(format!("missing parameter {name:?}")))?;
        Ok((&self.first_moment[i], &self.second_moment[i]))
    }

    /// Restores moment buffers, e.g. from a checkpoint.
    pub fn set_moments(&mut self, name: &str, first: Tensor, second: Tensor) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| SanasError::Config(format!("missing parameter {name:?}")))?;
        let shape = self.values[i].shape();
        if first.shape() != shape || second.shape() != shape {
            return Err(SanasError::Config(format!(
                "moment buffers for {name:?} have shapes {:?}/{:?}, parameter is {shape:?}",
                first.shape(),
                second.shape()
            )));
        }
        self.first_moment[i] = first;
        self.second_moment[i] = second;
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}

/// Gradient accumulator keyed by parameter name.
///
/// Keys are kept sorted so that every whole-map operation walks parameters
/// in the same order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    entries: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(&mut self, name: &str, grad: Tensor) -> Result<()> {
        match self.entries.get_mut(name) {
            Some(acc) => acc.add_assign(&grad),
            None => {
                self.entries.insert(name.to_string(), grad);
                Ok(())
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.entries.remove(name)
    }

    pub fn merge(&mut self, other: Gradients) -> Result<()> {
        for (name, g) in other.entries {
            self.accumulate(&name, g)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.entries.values_mut() {
            g.scale(factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.entries.values().map(Tensor::l2_norm_sq).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Tensor::is_finite)
    }

    /// Pairwise (tree) reduction in index order: `((g0+g1)+(g2+g3))+...`.
    /// The result only depends on the order of `parts`, never on timing.
    pub fn sum_pairwise(mut parts: Vec<Gradients>) -> Result<Gradients> {
        if parts.is_empty() {
            return Ok(Gradients::new());
        }
        while parts.len() > 1 {
            let mut next = Vec::with_capacity(parts.len().div_ceil(2));
            let mut it = parts.into_iter();
            while let Some(mut left) = it.next() {
                if let Some(right) = it.next() {
                    left.merge(right)?;
                }
                next.push(left);
            }
            parts = next;
        }
        Ok(parts.pop().expect("non-empty"))
    }

    /// Flattens the gradients of `names` (in that order) into one vector,
    /// writing zeros for absent entries.
    pub fn flatten(&self, store: &ParamStore, names: &[&str]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for name in names {
            let len = store.get(name)?.len();
            match self.entries.get(*name) {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(std::iter::repeat_n(0.0, len)),
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected ADAM update at step `t` (1-based), then clears `grads`.
///
/// Parameters without an entry in `grads` are updated as if their gradient
/// were zero. Entries naming unknown parameters are a configuration error.
pub fn adam_step(store: &mut ParamStore, grads: &mut Gradients, cfg: &AdamConfig, t: u64) -> Result<()> {
    if t == 0 {
        return Err(SanasError::Usage("adam_step needs a step index t >= 1".into()));
    }
    if let Some(name) = grads.entries.keys().find(|n| !store.contains(n)) {
        return Err(SanasError::Config(format!("gradient for unknown parameter {name:?}")));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..store.names.len() {
        let grad = grads.entries.get(&store.names[i]);
        if let Some(g) = grad {
            if g.shape() != store.values[i].shape() {
                return Err(SanasError::Config(format!(
                    "gradient for {:?} has shape {:?}, parameter is {:?}",
                    store.names[i],
                    g.shape(),
                    store.values[i].shape()
                )));
            }
        }
        let m = store.first_moment[i].data_mut();
        let v = store.second_moment[i].data_mut();
        let theta = store.values[i].data_mut();
        for j in 0..theta.len() {
            let g = grad.map_or(0.0, |g| g.data()[j]);
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            theta[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    grads.clear();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::vector(vec![v])).unwrap();
        s
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = scalar_store(0.0);
        assert!(s.insert("w", Tensor::vector(vec![1.0])).is_err());
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        let mut s = scalar_store(1.0);
        let mut g = Gradients::new();
        g.accumulate("w", Tensor::vector(vec![0.5])).unwrap();
        adam_step(&mut s, &mut g, &AdamConfig::default(), 1).unwrap();
        let moved = 1.0 - s.get("w").unwrap().data()[0];
        // lr * 0.5 / (0.5 + 1e-8)
        assert!((moved - 1e-3 * 0.5 / (0.5 + 1e-8)).abs() < 1e-15);
        assert!((moved - 9.99998e-4).abs() / 9.99998e-4 < 1e-5);
        assert!(g.is_empty(), "gradients are cleared");
    }

    #[test]
    fn two_steps_match_scalar_recurrence() {
        let cfg = AdamConfig {
            lr: 3e-4,
            ..AdamConfig::default()
        };
        let grad = -0.8;
        let mut s = scalar_store(0.25);
        // independent hand-rolled recurrence
        let (mut m, mut v, mut theta) = (0.0f64, 0.0f64, 0.25f64);
        for t in 1..=2u64 {
            let mut g = Gradients::new();
            g.accumulate("w", Tensor::vector(vec![grad])).unwrap();
            adam_step(&mut s, &mut g, &cfg, t).unwrap();
            m = 0.9 * m + 0.1 * grad;
            v = 0.999 * v + 0.001 * grad * grad;
            let mh = m / (1.0 - 0.9f64.powi(t as i32));
            let vh = v / (1.0 - 0.999f64.powi(t as i32));
            theta -= 3e-4 * mh / (vh.sqrt() + 1e-8);
            assert!((s.get("w").unwrap().data()[0] - theta).abs() < 1e-15);
        }
    }

    #[test]
    fn missing_gradient_counts_as_zero_and_unknown_is_error() {
        let mut s = scalar_store(2.0);
        adam_step(&mut s, &mut Gradients::new(), &AdamConfig::default(), 1).unwrap();
        assert_eq!(s.get("w").unwrap().data(), &[2.0]);

        let mut g = Gradients::new();
        g.accumulate("nope", Tensor::vector(vec![1.0])).unwrap();
        assert!(adam_step(&mut s, &mut g, &AdamConfig::default(), 1).is_err());
        assert!(adam_step(&mut s, &mut Gradients::new(), &AdamConfig::default(), 0).is_err());
    }

    #[test]
    fn pairwise_sum_is_order_fixed() {
        let parts: Vec<Gradients> = (0..5)
            .map(|i| {
                let mut g = Gradients::new();
                g.accumulate("w", Tensor::vector(vec![0.1 * i as f64])).unwrap();
                g
            })
            .collect();
        let total = Gradients::sum_pairwise(parts.clone()).unwrap();
        let expected = ((0.0 + 0.1) + (0.2 + 0.30000000000000004)) + 0.4;
        assert_eq!(total.get("w").unwrap().data()[0], expected);
        assert_eq!(Gradients::sum_pairwise(parts).unwrap(), total);
    }

    proptest! {
        #[test]
        fn zero_gradient_step_is_identity(vals in proptest::collection::vec(-10.0f64..10.0, 1..20), t in 1u64..50) {
            let mut s = ParamStore::new();
            s.insert("a", Tensor::vector(vals.clone())).unwrap();
            let mut g = Gradients::new();
            g.accumulate("a", Tensor::zeros(&[vals.len()])).unwrap();
            adam_step(&mut s, &mut g, &AdamConfig::default(), t).unwrap();
            prop_assert_eq!(s.get("a").unwrap().data(), vals.as_slice());
        }
    }
}
