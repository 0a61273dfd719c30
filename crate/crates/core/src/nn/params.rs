use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Graph, Real, Tensor, Var};

/// A trainable tensor with its Adam moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T: Real> {
    pub value: Tensor<T>,
    pub adam_m: Tensor<T>,
    pub adam_v: Tensor<T>,
}

/// Named parameters in canonical (lexicographic) order, plus the optimizer
/// step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T: Real> {
    entries: BTreeMap<String, ParamEntry<T>>,
    step_count: u64,
}

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Graph leaves for every parameter of a store, keyed by name.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    /// Binds names to leaves that were created elsewhere (e.g. by a
    /// gradient checker).
    pub fn from_vars(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("no parameter named `{name}`")))
    }

    /// Pulls the named gradients out of a backward pass.
    pub fn collect<T: Real>(&self, grads: &mut Gradients<T>) -> BTreeMap<String, Tensor<T>> {
        self.vars
            .iter()
            .filter_map(|(name, &v)| grads.take(v).map(|g| (name.clone(), g)))
            .collect()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
            step_count: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let zeros = Tensor::zeros(value.shape().to_vec());
        self.entries.insert(
            name,
            ParamEntry {
                adam_m: zeros.clone(),
                adam_v: zeros,
                value,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.entries.get(name)
    }

    pub fn value(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<T>)> {
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

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// Registers every parameter as a trainable leaf on `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> BoundParams {
        let vars = self
            .entries
            .iter()
            .map(|(name, e)| (name.clone(), g.param(e.value.clone())))
            .collect();
        BoundParams { vars }
    }

    /// Registers every parameter as a constant (inference only).
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> BoundParams {
        let vars = self
            .entries
            .iter()
            .map(|(name, e)| (name.clone(), g.constant(e.value.clone())))
            .collect();
        BoundParams { vars }
    }

    /// One bias-corrected Adam update. Parameters without a gradient entry
    /// are left untouched; the step counter advances once per call.
    pub fn adam_step(&mut self, grads: &BTreeMap<String, Tensor<T>>, opt: &Adam) -> Result<()> {
        for (name, g) in grads {
            let entry = self
                .entries
                .get(name)
                .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter `{name}`")))?;
            if entry.value.shape() != g.shape() {
                return Err(Error::Contract(format!(
                    "gradient for `{name}` has shape {:?}, parameter has {:?}",
                    g.shape(),
                    entry.value.shape()
                )));
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = T::from_f64(opt.beta1);
        let b2 = T::from_f64(opt.beta2);
        let one = T::one();
        let correct1 = T::from_f64(1.0 - opt.beta1.powi(t));
        let correct2 = T::from_f64(1.0 - opt.beta2.powi(t));
        let lr = T::from_f64(opt.lr);
        let eps = T::from_f64(opt.eps);

        for (name, g) in grads {
            let entry = self.entries.get_mut(name).expect("validated above");
            let shape = entry.value.shape().to_vec();
            let mut p = entry.value.take_data();
            let mut m = entry.adam_m.take_data();
            let mut v = entry.adam_v.take_data();
            for (((p, m), v), &g) in p.iter_mut().zip(&mut m).zip(&mut v).zip(g.data()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / correct1;
                let v_hat = *v / correct2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            entry.value = Tensor::from_parts(shape.clone(), p);
            entry.adam_m = Tensor::from_parts(shape.clone(), m);
            entry.adam_v = Tensor::from_parts(shape, v);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert(name, Tensor::new(vec![values.len()], values.to_vec()).unwrap())
            .unwrap();
        s
    }

    fn grads(name: &str, values: &[f64]) -> BTreeMap<String, Tensor<f64>> {
        BTreeMap::from([(
            name.to_string(),
            Tensor::new(vec![values.len()], values.to_vec()).unwrap(),
        )])
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut s = store_with("w", &[0.5, -1.0, 2.0]);
        s.adam_step(&grads("w", &[3.0, -0.25, 1e-3]), &Adam::with_lr(0.01))
            .unwrap();
        let p = s.value("w").unwrap().data();
        assert!((p[0] - (0.5 - 0.01)).abs() < 1e-8);
        assert!((p[1] - (-1.0 + 0.01)).abs() < 1e-8);
        assert!((p[2] - (2.0 - 0.01)).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_still_counts_a_step() {
        let mut s = store_with("w", &[0.5, -1.0]);
        s.adam_step(&grads("w", &[0.0, 0.0]), &Adam::default()).unwrap();
        assert_eq!(s.value("w").unwrap().data(), &[0.5, -1.0]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn shape_mismatch_is_rejected_without_side_effects() {
        let mut s = store_with("w", &[0.5, -1.0]);
        let err = s.adam_step(&grads("w", &[1.0, 2.0, 3.0]), &Adam::default());
        assert!(matches!(err, Err(Error::Contract(_))));
        assert_eq!(s.step_count(), 0);
        assert!(s.adam_step(&grads("nope", &[1.0]), &Adam::default()).is_err());
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut s = store_with("w", &[1.0]);
        assert!(s.insert("w", Tensor::zeros(vec![1])).is_err());
    }

    #[test]
    fn adam_on_a_parabola_matches_hand_computation() {
        // f(p) = p², g = 2p, lr 0.1, default betas, from p = 1.
        // Step 1: g=2, m=0.2, v=0.004, m̂=2, v̂=4 → p = 1 - 0.1·2/(2+1e-8).
        // The loop recomputes the sequence in plain f64 without ParamStore.
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.1f64);
        let (mut p, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut expected = Vec::new();
        for t in 1..=3 {
            let g = 2.0 * p;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            p -= lr * mh / (vh.sqrt() + eps);
            expected.push(p);
        }
        let frozen = [0.900_000_000_5, 0.800_412_228_691_792_8, 0.701_586_272_946_030_3];
        for (e, f) in expected.iter().zip(frozen) {
            assert!((e - f).abs() < 1e-9, "{e} vs {f}");
        }

        let mut s = store_with("p", &[1.0]);
        for want in frozen {
            let cur = s.value("p").unwrap().data()[0];
            s.adam_step(&grads("p", &[2.0 * cur]), &Adam::with_lr(lr)).unwrap();
            assert!((s.value("p").unwrap().data()[0] - want).abs() < 1e-9);
        }
        assert_eq!(s.step_count(), 3);
    }

    #[test]
    fn first_step_is_gradient_scale_invariant() {
        let g: Vec<f64> = (0..16).map(|i| ((i as f64) * 0.7).sin() * 1e-2 + 1e-3).collect();
        let big: Vec<f64> = g.iter().map(|x| x * 100.0).collect();
        let start = vec![0.0; 16];
        let mut a = store_with("w", &start);
        let mut b = store_with("w", &start);
        a.adam_step(&grads("w", &g), &Adam::default()).unwrap();
        b.adam_step(&grads("w", &big), &Adam::default()).unwrap();
        for (x, y) in a.value("w").unwrap().data().iter().zip(b.value("w").unwrap().data()) {
            assert!(((x - y) / y).abs() < 0.01);
        }
    }
}
