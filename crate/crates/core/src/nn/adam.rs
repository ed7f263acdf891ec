use std::collections::BTreeMap;

use dml_autodiff::{ParamGrads, ParameterStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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

/// Bias-corrected Adam with per-parameter moments.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.first.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor> {
        self.second.get(name)
    }

    /// Applies one update. `grads` must cover exactly the trainable
    /// parameters of `params`.
    pub fn step(&mut self, params: &mut ParameterStore, grads: &ParamGrads) -> Result<()> {
        for name in grads.keys() {
            if !params.contains(name) || params.is_frozen(name) {
                return Err(Error::UnexpectedGradient(name.clone()));
            }
        }
        let names: Vec<String> = params.trainable_names().map(str::to_string).collect();
        for name in &names {
            let grad = grads
                .get(name)
                .ok_or_else(|| Error::MissingGradient(name.clone()))?;
            if grad.shape() != params.get(name)?.shape() {
                return Err(Error::Model(format!(
                    "gradient for `{name}` has shape {}, parameter has {}",
                    grad.shape(),
                    params.get(name)?.shape()
                )));
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for name in names {
            let grad = &grads[&name];
            let param = params.get_mut(&name)?;
            let (rows, cols) = (param.rows(), param.cols());
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(rows, cols));
            let v = self
                .second
                .entry(name)
                .or_insert_with(|| Tensor::zeros(rows, cols));
            let (pd, md, vd) = (param.data_mut(), m.data_mut(), v.data_mut());
            for (i, &gi) in grad.data().iter().enumerate() {
                md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                pd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
