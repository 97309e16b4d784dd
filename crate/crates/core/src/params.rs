//! Named parameter storage, Xavier initialisation and the Adam optimiser.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Grads, Graph, Var, NORM_EPS};
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub requires_grad: bool,
}

/// Ordered collection of named tensors with gradient slots.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore {
    params: Vec<Parameter>,
}

/// Xavier/Glorot uniform bound `sqrt(6 / (fan_in + fan_out))` for a weight shape.
///
/// Matrices are laid out `fan_in × fan_out`; convolution kernels
/// `out_ch × width × in_ch` have receptive field `width`.
pub fn xavier_bound(shape: &[usize]) -> f64 {
    let (fan_in, fan_out) = match shape {
        [n] => (*n, *n),
        [i, o] => (*i, *o),
        [o, w, i] => (w * i, w * o),
        _ => {
            let n: usize = shape.iter().product();
            (n, n)
        }
    };
    libm::sqrt(6.0 / (fan_in + fan_out) as f64)
}

/// Tensor of the given shape drawn uniformly from `±xavier_bound(shape)`.
pub fn xavier_init(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    xavier_with(shape, &mut rng)
}

pub(crate) fn xavier_with(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let bound = xavier_bound(shape);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive shape")
}

impl ParameterStore {
    pub fn new() -> Self {
        ParameterStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad: None,
            requires_grad: true,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalar weights.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Places every parameter on `graph`, trainable or frozen.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable && p.requires_grad {
                    graph.param(p.value.clone())
                } else {
                    graph.constant(p.value.clone())
                }
            })
            .collect();
        Bound { vars, trainable }
    }

    /// Adds `scale ×` the tape gradients of `bound` into the gradient slots.
    /// Trainable parameters the loss did not reach receive zeros.
    pub fn accumulate(&mut self, bound: &Bound, grads: &Grads, scale: f64) {
        if !bound.trainable {
            return;
        }
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            if !p.requires_grad {
                continue;
            }
            let slot = p
                .grad
                .get_or_insert_with(|| Tensor::zeros(p.value.shape()));
            if let Some(g) = grads.get(v) {
                for (s, x) in slot.data_mut().iter_mut().zip(g) {
                    *s += scale * x;
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// True when no parameter holds a non-zero gradient.
    pub fn grads_are_zero(&self) -> bool {
        self.params.iter().all(|p| {
            p.grad
                .as_ref()
                .map(|g| g.data().iter().all(|&v| v == 0.0))
                .unwrap_or(true)
        })
    }

    /// Overwrites values from `(name, tensor)` pairs; every stored name must be present
    /// with a matching shape.
    pub fn load_named(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        for p in &mut self.params {
            let (_, t) = tensors
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| Error::contract(alloc::format!("missing tensor `{}`", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Shape {
                    op: "load_named",
                    left: p.value.shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            p.value = t.clone();
        }
        Ok(())
    }

    pub fn named(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|p| (p.name.to_string(), p.value.clone()))
            .collect()
    }
}

/// Graph handles for every parameter of a store, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
    trainable: bool,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

/// Adam hyper-parameters and per-parameter moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParameterStore, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: NORM_EPS,
            step: 0,
            m: store.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: store.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. Gradients are cleared afterwards.
    pub fn step(&mut self, store: &mut ParameterStore) -> Result<()> {
        if self.m.len() != store.params.len() {
            return Err(Error::contract("optimiser state does not match parameter store"));
        }
        if let Some(p) = store.params.iter().find(|p| p.requires_grad && p.grad.is_none()) {
            return Err(Error::MissingGrad(p.name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        for ((p, m), v) in store.params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.requires_grad {
                continue;
            }
            let g = p.grad.take().expect("checked above");
            let w = p.value.data_mut();
            for (((wi, gi), mi), vi) in w
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *wi -= self.lr * mhat / (libm::sqrt(vhat) + self.eps);
            }
        }
        Ok(())
    }
}

/// Convenience wrapper matching the free-function form of the optimiser.
pub fn adam_step(store: &mut ParameterStore, state: &mut AdamState) -> Result<()> {
    state.step(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> (ParameterStore, ParamId) {
        let mut s = ParameterStore::new();
        let id = s.add("w", Tensor::scalar(w));
        (s, id)
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let (mut s, id) = scalar_store(1.5);
        let mut adam = AdamState::new(&s, 1e-3);
        s.params[0].grad = Some(Tensor::scalar(0.0));
        adam.step(&mut s).unwrap();
        assert_eq!(s.value(id).item(), 1.5);
        assert_eq!(adam.step_count(), 1);
        assert!(s.get(id).grad.is_none());
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut s, id) = scalar_store(0.0);
        let mut adam = AdamState::new(&s, 1e-3);
        s.params[0].grad = Some(Tensor::scalar(1.0));
        adam_step(&mut s, &mut adam).unwrap();
        assert!((s.value(id).item() + 1e-3).abs() < 1e-10);
    }

    #[test]
    fn missing_grad_names_parameter() {
        let (mut s, _) = scalar_store(0.0);
        let mut adam = AdamState::new(&s, 1e-3);
        assert_eq!(adam.step(&mut s), Err(Error::MissingGrad("w".into())));
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn quadratic_descends_monotonically() {
        let (mut s, id) = scalar_store(0.0);
        let mut adam = AdamState::new(&s, 1e-3);
        let f = |w: f64| (w - 2.0) * (w - 2.0);
        let mut prev = f(s.value(id).item());
        for _ in 0..10 {
            let mut g = Graph::new();
            let b = s.bind(&mut g, true);
            let w = b.var(id);
            let shifted = g.add_scalar(w, -2.0);
            let sq = g.mul(shifted, shifted).unwrap();
            let loss = g.sum(sq);
            let grads = g.backward(loss).unwrap();
            s.accumulate(&b, &grads, 1.0);
            adam.step(&mut s).unwrap();
            let now = f(s.value(id).item());
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn xavier_deterministic_and_bounded() {
        let a = xavier_init(&[512, 512], 9);
        let b = xavier_init(&[512, 512], 9);
        assert_eq!(a, b);
        let bound = (6.0f64 / 1024.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= bound));
        assert_ne!(a, xavier_init(&[512, 512], 10));
    }

    #[test]
    fn xavier_variance() {
        // 400 x 250 = 1e5 samples; uniform(-b, b) has variance b^2 / 3 = 2 / (fan_in + fan_out)
        let t = xavier_init(&[400, 250], 1);
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let expected = 2.0 / 650.0;
        assert!((var - expected).abs() / expected < 0.1);
    }

    #[test]
    fn frozen_binding_accumulates_nothing() {
        let (mut s, id) = scalar_store(3.0);
        let mut g = Graph::new();
        let b = s.bind(&mut g, false);
        let y = g.scale(b.var(id), 2.0);
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        s.accumulate(&b, &grads, 1.0);
        assert!(s.get(id).grad.is_none());
        assert!(s.grads_are_zero());
    }
}
