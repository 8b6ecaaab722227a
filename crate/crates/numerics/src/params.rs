//! Named trainable parameters, gradient slots and the Adam optimizer.

use std::collections::HashMap;

use serde_json::json;

use crate::container::{ArrayData, Container};
use crate::error::{NumericsError, Result};
use crate::tape::{Gradients, Tape};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Adam first moment.
    pub m: Tensor,
    /// Adam second moment.
    pub v: Tensor,
    /// Buffers such as batch-norm running statistics are not trainable.
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(NumericsError::DuplicateParam(name));
        }
        let id = ParamId(self.params.len());
        let zeros = Tensor::zeros(value.shape().to_vec());
        self.params.push(Param {
            name: name.clone(),
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
            trainable,
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of completed optimizer steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn trainable_elements(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Replaces every gradient slot with the gradient computed on `tape`;
    /// parameters the loss never reached get zeros.
    pub fn load_grads(&mut self, tape: &Tape, grads: &Gradients) {
        self.zero_grads();
        for &(id, var) in tape.bindings() {
            if let Some(g) = grads.get(var) {
                let p = &mut self.params[id.0];
                if p.trainable {
                    p.grad.data_mut().copy_from_slice(g.data());
                }
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.grad.squared_norm())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            let k = max_norm / norm;
            for p in self.params.iter_mut().filter(|p| p.trainable) {
                p.grad.data_mut().iter_mut().for_each(|g| *g *= k);
            }
        }
        norm
    }

    /// Serializes values (and optionally Adam state) into a container.
    pub fn to_container(&self, config_hash: &str, with_optimizer: bool) -> Container {
        let mut c = Container::new(config_hash);
        c.meta.insert("step".into(), json!(self.step));
        for p in &self.params {
            c.push_f64(format!("param/{}", p.name), &p.value);
            if with_optimizer && p.trainable {
                c.push_f64(format!("adam_m/{}", p.name), &p.m);
                c.push_f64(format!("adam_v/{}", p.name), &p.v);
            }
        }
        c
    }

    /// Loads values (and Adam state when present) for every registered parameter.
    pub fn load_container(&mut self, c: &Container) -> Result<()> {
        for p in &mut self.params {
            p.value = read_like(c, &format!("param/{}", p.name), &p.value)?;
            if c.get(&format!("adam_m/{}", p.name)).is_some() {
                p.m = read_like(c, &format!("adam_m/{}", p.name), &p.m)?;
                p.v = read_like(c, &format!("adam_v/{}", p.name), &p.v)?;
            }
        }
        self.step = c.meta.get("step").and_then(|v| v.as_u64()).unwrap_or(0);
        Ok(())
    }
}

fn read_like(c: &Container, name: &str, like: &Tensor) -> Result<Tensor> {
    let arr = c
        .get(name)
        .ok_or_else(|| NumericsError::Container(format!("missing array `{name}`")))?;
    if arr.shape != like.shape() {
        return Err(NumericsError::Container(format!(
            "array `{name}` has shape {:?}, expected {:?}",
            arr.shape,
            like.shape()
        )));
    }
    match &arr.data {
        ArrayData::F64(d) => Tensor::new(arr.shape.clone(), d.clone()),
        ArrayData::U32(_) => Err(NumericsError::Container(format!("array `{name}` is not f64"))),
    }
}

/// Adam with bias correction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one update to every trainable parameter. Non-finite gradients
    /// abort the step before anything is modified.
    pub fn step(&self, store: &mut ParamStore) -> Result<()> {
        if let Some(bad) = store.params.iter().find(|p| p.trainable && !p.grad.is_finite()) {
            return Err(NumericsError::NonFiniteGradient(bad.name.clone()));
        }
        store.step += 1;
        let t = store.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for p in store.params.iter_mut().filter(|p| p.trainable) {
            let g = p.grad.data();
            let m = p.m.data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let v = p.v.data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let (m, v) = (p.m.data(), p.v.data());
            for ((w, mi), vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                *w -= self.lr * (mi / c1) / ((vi / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::new([1], vec![w]).unwrap(), true).unwrap();
        (s, id)
    }

    #[test]
    fn names_are_unique() {
        let (mut s, _) = scalar_store(0.0);
        assert!(matches!(
            s.add("w", Tensor::zeros([1]), true),
            Err(NumericsError::DuplicateParam(_))
        ));
    }

    #[test]
    fn zero_gradient_leaves_parameter_and_decays_moments() {
        let (mut s, id) = scalar_store(1.5);
        Adam::new(0.1).step(&mut s).unwrap();
        assert_eq!(s.get(id).value.data()[0], 1.5);
        assert_eq!(s.step(), 1);

        // Existing moments decay geometrically under a zero gradient.
        s.get_mut(id).m.data_mut()[0] = 0.2;
        s.get_mut(id).v.data_mut()[0] = 0.3;
        Adam::new(0.1).step(&mut s).unwrap();
        let p = s.get(id);
        assert!((p.m.data()[0] - 0.18).abs() < 1e-15);
        assert!((p.v.data()[0] - 0.2997).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [3.7, -0.02] {
            let (mut s, id) = scalar_store(0.0);
            s.get_mut(id).grad.data_mut()[0] = g;
            Adam::new(0.01).step(&mut s).unwrap();
            let w = s.get(id).value.data()[0];
            assert!((w + 0.01 * g.signum()).abs() < 1e-8, "{w}");
        }
    }

    #[test]
    fn quadratic_converges() {
        // f(w) = (w-3)^2, gradient 2(w-3)
        let (mut s, id) = scalar_store(0.0);
        let adam = Adam::new(0.1);
        for _ in 0..200 {
            let w = s.get(id).value.data()[0];
            s.get_mut(id).grad.data_mut()[0] = 2.0 * (w - 3.0);
            adam.step(&mut s).unwrap();
        }
        let w = s.get(id).value.data()[0];
        assert!((w - 3.0).abs() < 0.05, "{w}");
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let (mut s, id) = scalar_store(0.0);
        s.get_mut(id).grad.data_mut()[0] = f64::NAN;
        match Adam::new(0.1).step(&mut s) {
            Err(NumericsError::NonFiniteGradient(name)) => assert_eq!(name, "w"),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.step(), 0);
    }

    #[test]
    fn unreached_params_get_zero_grad() {
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor::ones([2]), true).unwrap();
        let b = s.add("b", Tensor::ones([2]), true).unwrap();
        s.get_mut(b).grad = Tensor::ones([2]);
        let mut t = Tape::new();
        let va = t.param(&s, a);
        let _vb = t.param(&s, b);
        let l = t.sum(va);
        let g = t.backward(l).unwrap();
        s.load_grads(&t, &g);
        assert_eq!(s.get(a).grad.data(), &[1.0, 1.0]);
        assert_eq!(s.get(b).grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor::zeros([2]), true).unwrap();
        s.get_mut(a).grad = Tensor::new([2], vec![3.0, 4.0]).unwrap();
        assert_eq!(s.clip_grad_norm(1.0), 5.0);
        assert!((s.grad_norm() - 1.0).abs() < 1e-15);
    }
}
