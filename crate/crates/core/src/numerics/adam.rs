use serde::{Deserialize, Serialize};

use super::{DenseMatrix, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for a subset of the tensors in a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    /// Indices into the parameter set this optimizer owns.
    pub params: Vec<usize>,
    pub m: Vec<DenseMatrix>,
    pub v: Vec<DenseMatrix>,
}

impl AdamState {
    pub fn new(config: AdamConfig, set: &ParamSet, params: Vec<usize>) -> Self {
        let zeros = |&i: &usize| {
            let (r, c) = set.get(i).value.shape();
            DenseMatrix::zeros(r, c)
        };
        Self {
            config,
            step: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            params,
        }
    }

    /// One bias-corrected update. `grads` is indexed like the parameter set;
    /// a missing gradient counts as zero. `ascend` flips the update direction.
    pub fn step(
        &mut self,
        set: &mut ParamSet,
        grads: &[Option<DenseMatrix>],
        ascend: bool,
    ) -> Result<()> {
        for &i in &self.params {
            if let Some(g) = &grads[i] {
                if g.shape() != set.get(i).value.shape() {
                    return Err(Error::shape(
                        "adam_step",
                        format!("gradient {:?} for {}", g.shape(), set.get(i).name),
                    ));
                }
                if !g.is_finite() {
                    return Err(Error::NonFinite {
                        what: format!("gradient of {}", set.get(i).name),
                        step: self.step + 1,
                    });
                }
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let sign = if ascend { -1.0 } else { 1.0 };
        for (slot, &i) in self.params.iter().enumerate() {
            let g = grads[i].as_ref();
            let m = self.m[slot].data_mut();
            let v = self.v[slot].data_mut();
            let p = set.get_mut(i).value.data_mut();
            for k in 0..p.len() {
                let gk = sign * g.map_or(0.0, |g| g.data()[k]);
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                p[k] -= lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
