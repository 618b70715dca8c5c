use rand::Rng;

use crate::error::{mismatch, TensorError};
use crate::graph::{Gradients, Graph};
use crate::real::Real;
use crate::tensor::Tensor;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor with its gradient slot and Adam moments.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    first_moment: Tensor<T>,
    second_moment: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Ordered collection of named parameters plus optimizer state.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<T> {
    params: Vec<Param<T>>,
    step: u64,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            step: 0,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let shape = value.shape().to_vec();
        self.params.push(Param {
            name: name.into(),
            value,
            grad: None,
            first_moment: Tensor::zeros(&shape),
            second_moment: Tensor::zeros(&shape),
        });
        ParamId(self.params.len() - 1)
    }

    /// Uniform Glorot initialization: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64_lossy(rng.gen_range(-limit..limit)))
            .collect();
        self.add(name, Tensor::new(shape, data).expect("glorot shape"))
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Adds the gradients recorded on `graph` into the parameter slots.
    /// Every parameter receives a slot; those without a path to the loss get zeros.
    pub fn accumulate_grads(&mut self, _graph: &Graph<T>, grads: &Gradients<T>) -> Result<()> {
        for p in &mut self.params {
            if p.grad.is_none() {
                p.grad = Some(Tensor::zeros(p.value.shape()));
            }
        }
        for (id, g) in grads.param_grads() {
            if let Some(g) = g {
                let slot = self.params[id.0].grad.as_mut().expect("slot allocated");
                slot.add_assign(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// One bias-corrected Adam update; clears the gradients afterwards.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some(p) = self.params.iter().find(|p| p.grad.is_none()) {
            return Err(TensorError::MissingGradient(p.name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64_lossy(cfg.beta1);
        let b2 = T::from_f64_lossy(cfg.beta2);
        let one = T::one();
        let c1 = one - T::from_f64_lossy(cfg.beta1.powi(t));
        let c2 = one - T::from_f64_lossy(cfg.beta2.powi(t));
        let lr = T::from_f64_lossy(cfg.lr);
        let eps = T::from_f64_lossy(cfg.eps);
        for p in &mut self.params {
            let g = p.grad.take().expect("checked above");
            if g.shape() != p.value.shape() {
                return Err(mismatch("adam_step", p.value.shape(), g.shape()));
            }
            let values = p.value.data_mut();
            let m = p.first_moment.data_mut();
            let v = p.second_moment.data_mut();
            for i in 0..values.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                values[i] = values[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Copies values into another precision; optimizer state is reset.
    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        let mut out = ParamSet::new();
        for p in &self.params {
            out.add(p.name.clone(), p.value.cast());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> ParamSet<f64> {
        let mut set = ParamSet::new();
        let id = set.add("w", Tensor::scalar(value));
        set.get_mut(id).grad = Some(Tensor::scalar(grad));
        set
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut set = single(0.7, 0.0);
        set.adam_step(&AdamConfig::default()).unwrap();
        assert_eq!(set.get(ParamId(0)).value.data()[0], 0.7);
        assert_eq!(set.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // m_hat = g, v_hat = g^2 => delta = -lr * g / (|g| + eps)
        for g in [3.0, -0.02, 1e-3] {
            let mut set = single(1.0, g);
            set.adam_step(&AdamConfig::default()).unwrap();
            let expected = 1.0 - 0.001 * g / (g.abs() + 1e-8);
            let got = set.get(ParamId(0)).value.data()[0];
            assert!((got - expected).abs() < 1e-12, "g={g}: {got} vs {expected}");
        }
    }

    #[test]
    fn step_clears_gradients_and_requires_them() {
        let mut set = single(1.0, 0.5);
        set.adam_step(&AdamConfig::default()).unwrap();
        assert!(set.get(ParamId(0)).grad.is_none());
        assert_eq!(
            set.adam_step(&AdamConfig::default()),
            Err(TensorError::MissingGradient("w".into()))
        );
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut set = ParamSet::<f64>::new();
        let used = set.add("used", Tensor::scalar(2.0));
        let unused = set.add("unused", Tensor::scalar(5.0));
        let g = Graph::new();
        let w = g.param(&set, used);
        let loss = g.sum(g.scale(w, 3.0));
        let grads = g.backward(loss).unwrap();
        set.accumulate_grads(&g, &grads).unwrap();
        assert_eq!(set.get(used).grad.as_ref().unwrap().data(), &[3.0]);
        assert_eq!(set.get(unused).grad.as_ref().unwrap().data(), &[0.0]);
    }
}
