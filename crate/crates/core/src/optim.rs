//! Stochastic gradient descent with momentum and decoupled weight decay.

use std::collections::BTreeMap;

use crate::autodiff::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self { lr, momentum, weight_decay, velocity: BTreeMap::new() }
    }

    /// Applies `v = m v + (g + wd p); p -= lr v` to every named tensor
    /// with a gradient. Tensors without a gradient entry are left alone.
    pub fn step(&mut self, params: &mut BTreeMap<String, Tensor>, grads: &BTreeMap<String, Vec<f64>>) {
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let v = self.velocity.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi + self.weight_decay * *pi;
                *pi -= self.lr * *vi;
            }
        }
    }
}
