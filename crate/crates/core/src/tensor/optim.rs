// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::{Gradients, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
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

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    config: AdamConfig,
    step: u64,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(config: AdamConfig, params: &ParamStore<F>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, _, t)| Tensor::zeros(t.shape().to_vec()))
                .collect::<Vec<_>>()
        };
        Adam {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &Tensor<F> {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &Tensor<F> {
        &self.v[i]
    }

    /// One update of every parameter. Parameters without a gradient entry
    /// are updated as if their gradient were zero.
    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &Gradients<F>) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::dim(
                "adam",
                format!(
                    "{} params, {} moment slots, {} gradients",
                    params.len(),
                    self.m.len(),
                    grads.len()
                ),
            ));
        }
        for id in params.ids() {
            if let Some(g) = grads.get(id) {
                if g.shape() != params.get(id).shape() {
                    return Err(Error::dim(
                        "adam",
                        format!("gradient {:?} for parameter {:?}", g.shape(), params.get(id).shape()),
                    ));
                }
            }
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let (one_b1, one_b2) = (F::lit(1.0 - c.beta1), F::lit(1.0 - c.beta2));
        let bc1 = F::lit(1.0 - c.beta1.powf(self.step as f64));
        let bc2 = F::lit(1.0 - c.beta2.powf(self.step as f64));
        let (lr, eps) = (F::lit(c.lr), F::lit(c.eps));
        for id in params.ids() {
            let i = id.index();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let p = params.get_mut(id).data_mut();
            match grads.get(id) {
                Some(g) => {
                    for (((pj, mj), vj), &gj) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                        *mj = b1 * *mj + one_b1 * gj;
                        *vj = b2 * *vj + one_b2 * gj * gj;
                        *pj -= lr * (*mj / bc1) / ((*vj / bc2).sqrt() + eps);
                    }
                }
                None => {
                    for ((pj, mj), vj) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mj *= b1;
                        *vj *= b2;
                        *pj -= lr * (*mj / bc1) / ((*vj / bc2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
