use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{AutodiffError, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: HashMap<String, Vec<f64>>,
    second: HashMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            first: HashMap::new(),
            second: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.first.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f64]> {
        self.second.get(name).map(Vec::as_slice)
    }
}

/// One bias-corrected Adam update of every parameter in `ps`, then clears
/// the gradients. Fails without touching anything if a gradient is missing.
pub fn adam_step(ps: &mut ParamStore, st: &mut AdamState) -> Result<(), AutodiffError> {
    for (name, p) in ps.iter() {
        match &p.grad {
            None => return Err(AutodiffError::MissingGrad(name.to_string())),
            Some(g) if g.shape() != p.value.shape() => {
                return Err(AutodiffError::Shape(format!(
                    "gradient of {name} has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.value.shape()
                )))
            }
            Some(_) => {}
        }
    }

    st.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
        weight_decay,
    } = st.config;
    let t = st.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);

    for (name, p) in ps.iter_mut() {
        let grad = p.grad.take().expect("checked above");
        let len = grad.len();
        let m = st.first.entry(name.to_string()).or_insert_with(|| vec![0.0; len]);
        let v = st.second.entry(name.to_string()).or_insert_with(|| vec![0.0; len]);
        for (i, (theta, &g)) in p.value.data_mut().iter_mut().zip(grad.data()).enumerate() {
            let g = g + weight_decay * *theta;
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
