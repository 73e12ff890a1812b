//! Named parameter storage, initialization and the SGD update.

use super::rng::Rng;
use super::tape::RunningStats;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Vec<f64>>,
    /// Buffers such as batch-norm running statistics are stored but never updated by SGD.
    pub trainable: bool,
}

/// Ordered, name-unique collection of parameters and buffers.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<ParamId> {
        if self.find(name).is_some() {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad: None,
            trainable,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        self.insert(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        self.insert(name, value, false)
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut Rng,
    ) -> Result<ParamId> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform(-limit, limit)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.params[id.0].value.data_mut()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, delta: &[f64]) {
        let p = &mut self.params[id.0];
        match &mut p.grad {
            Some(g) => g.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
            None => p.grad = Some(delta.to_vec()),
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Reads running statistics stored as a `(mean, var, count)` buffer triple.
    pub fn running_stats(&self, ids: [ParamId; 3]) -> RunningStats {
        RunningStats {
            mean: self.get(ids[0]).value.data().to_vec(),
            var: self.get(ids[1]).value.data().to_vec(),
            initialized: self.get(ids[2]).value.data()[0] > 0.0,
        }
    }

    pub fn set_running_stats(&mut self, ids: [ParamId; 3], stats: &RunningStats) {
        self.value_mut(ids[0]).copy_from_slice(&stats.mean);
        self.value_mut(ids[1]).copy_from_slice(&stats.var);
        if stats.initialized {
            self.value_mut(ids[2])[0] += 1.0;
        }
    }
}

/// Plain gradient descent: `p <- p - lr * grad(p)`, then clears every gradient.
pub fn sgd_step(store: &mut ParamStore, learning_rate: f64) -> Result<()> {
    if let Some(p) = store.params.iter().find(|p| p.trainable && p.grad.is_none()) {
        return Err(Error::invalid(format!(
            "sgd_step: trainable parameter {:?} has no gradient",
            p.name
        )));
    }
    for p in store.params.iter_mut().filter(|p| p.trainable) {
        let g = p.grad.as_ref().expect("checked above");
        for (v, gi) in p.value.data_mut().iter_mut().zip(g) {
            *v -= learning_rate * gi;
        }
    }
    store.zero_grad();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;

    fn one_param(v: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::scalar(v)).unwrap();
        (s, id)
    }

    #[test]
    fn sgd_single_step() {
        let (mut s, id) = one_param(1.0);
        s.accumulate_grad(id, &[2.0]);
        sgd_step(&mut s, 0.1).unwrap();
        assert!((s.get(id).value.data()[0] - 0.8).abs() < 1e-15);
        assert!(s.get(id).grad.is_none());
    }

    #[test]
    fn sgd_zero_grad_leaves_param() {
        let (mut s, id) = one_param(1.25);
        s.accumulate_grad(id, &[0.0]);
        sgd_step(&mut s, 0.5).unwrap();
        assert_eq!(s.get(id).value.data()[0], 1.25);
    }

    #[test]
    fn sgd_rejects_missing_grad() {
        let (mut s, _) = one_param(1.0);
        let err = sgd_step(&mut s, 0.1).unwrap_err();
        assert!(err.to_string().contains("\"p\""));
    }

    #[test]
    fn buffers_are_not_updated() {
        let mut s = ParamStore::new();
        let b = s.add_buffer("b", Tensor::scalar(3.0)).unwrap();
        sgd_step(&mut s, 0.1).unwrap();
        assert_eq!(s.get(b).value.data()[0], 3.0);
    }

    #[test]
    fn duplicate_names_rejected() {
        let (mut s, _) = one_param(1.0);
        assert!(s.add("p", Tensor::scalar(0.0)).is_err());
    }

    #[test]
    fn quadratic_bowl_converges() {
        // loss = (p - 3)^2, contraction factor 1 - 2*lr = 0.8 per step.
        let (mut s, id) = one_param(0.0);
        for _ in 0..100 {
            let mut tape = Tape::new();
            let p = tape.param(&s, id);
            let loss = tape.mse(p, &Tensor::scalar(3.0)).unwrap();
            tape.backward(loss).unwrap().accumulate_into(&tape, &mut s);
            sgd_step(&mut s, 0.1).unwrap();
        }
        let p = s.get(id).value.data()[0];
        assert!((p - 3.0).abs() < 1e-6, "p = {p}");
        // closed form: 3 * (1 - 0.8^100)
        assert!((p - 3.0 * (1.0 - 0.8f64.powi(100))).abs() < 1e-12);
    }
}
