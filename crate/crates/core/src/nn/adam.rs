//! Adam optimizer with bias-corrected moments.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

/// Optimizer state: step count plus first/second moments per parameter.
/// Moments are kept in double precision; parameter storage precision is
/// untouched by the update.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub t: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl AdamState {
    /// Canonical defaults: lr 0.001, beta1 0.9, beta2 0.999, eps 1e-8.
    pub fn new(learning_rate: f64) -> AdamState {
        AdamState {
            t: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState::new(0.001)
    }
}

/// One Adam step over every parameter that has a gradient.
///
/// The step count is incremented once, before bias correction. A non-finite
/// gradient rejects the whole update: no parameter or moment is touched.
pub fn adam_step(
    params: &mut BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
) -> Result<()> {
    // Validate everything before mutating anything.
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter `{name}`")))?;
        if g.shape() != p.shape() {
            return Err(Error::Contract(format!(
                "gradient shape {:?} does not match parameter `{name}` {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if let Some(idx) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { param: name.clone(), index: idx });
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);

    for (name, g) in grads {
        let param = params.get_mut(name).expect("validated above");
        let m = state
            .first
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros_with(g.shape().to_vec(), Precision::Double));
        let v = state
            .second
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros_with(g.shape().to_vec(), Precision::Double));
        let md = m.data_mut();
        let vd = v.data_mut();
        let gd = g.data();
        let precision = param.precision();
        let pd = param.data_mut();
        for i in 0..gd.len() {
            md[i] = state.beta1 * md[i] + (1.0 - state.beta1) * gd[i];
            vd[i] = state.beta2 * vd[i] + (1.0 - state.beta2) * gd[i] * gd[i];
            let mhat = md[i] / bc1;
            let vhat = vd[i] / bc2;
            pd[i] = precision.store(pd[i] - state.learning_rate * mhat / (vhat.sqrt() + state.epsilon));
        }
    }
    Ok(())
}
