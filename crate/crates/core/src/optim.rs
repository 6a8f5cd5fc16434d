//! SGD with classical momentum: `v <- m*v + g; p <- p - lr*v`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{GradMap, Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct Sgd<F> {
    pub lr: f64,
    pub momentum: f64,
    velocity: BTreeMap<String, Tensor<F>>,
}

impl<F: Scalar> Sgd<F> {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: BTreeMap::new(),
        }
    }

    pub fn velocity(&self, name: &str) -> Option<&Tensor<F>> {
        self.velocity.get(name)
    }

    /// Apply one update to every named parameter that has a gradient.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = (String, &'a mut Tensor<F>)>,
        grads: &GradMap<F>,
    ) -> Result<()> {
        let lr = F::of(self.lr);
        let m = F::of(self.momentum);
        for (name, p) in params {
            let Some(g) = grads.get(&name) else {
                continue;
            };
            if g.shape() != p.shape() {
                return Err(Error::Shape(format!(
                    "gradient for {name}: expected {}, got {}",
                    p.shape(),
                    g.shape()
                )));
            }
            let v = self
                .velocity
                .entry(name)
                .or_insert_with(|| Tensor::zeros(p.shape()));
            for ((pi, vi), &gi) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vi = m * *vi + gi;
                *pi -= lr * *vi;
            }
        }
        Ok(())
    }
}
