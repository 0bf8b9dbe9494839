//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{CnnModel, Gradients, PARAM_NAMES};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Apply weight decay to bias tensors as well as weights.
    pub decay_biases: bool,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay_biases: true,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.weight_decay >= 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0
            && [self.lr, self.weight_decay, self.epsilon].iter().all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad AdamW config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<T = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamWState<T> {
    pub fn for_shapes<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let m: Vec<Tensor<T>> = shapes.into_iter().map(Tensor::zeros).collect();
        Self { v: m.clone(), m, t: 0 }
    }

    pub fn for_model(model: &CnnModel<T>) -> Self {
        Self::for_shapes(model.layers().tensors().map(|t| t.shape()))
    }
}

pub struct AdamW<T = f32> {
    pub config: AdamWConfig,
    pub state: AdamWState<T>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, model: &CnnModel<T>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            state: AdamWState::for_model(model),
        })
    }

    pub fn step(&mut self, model: &mut CnnModel<T>, grads: &Gradients<T>) -> Result<()> {
        let decay: Vec<bool> = PARAM_NAMES
            .iter()
            .map(|n| self.config.decay_biases || !n.ends_with(".bias"))
            .collect();
        let mut params = model.layers_mut().tensors_mut();
        adamw_step(
            &mut params,
            &grads.tensors(),
            &PARAM_NAMES,
            &decay,
            &mut self.state,
            &self.config,
        )
    }
}

/// One AdamW update over a list of parameter tensors.
///
/// Everything is validated before any tensor is touched, so an error leaves
/// both parameters and state unchanged.
pub fn adamw_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    names: &[&str],
    decay: &[bool],
    state: &mut AdamWState<T>,
    config: &AdamWConfig,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || names.len() != n || decay.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::InvalidState(format!(
            "adamw: {n} params, {} grads, {} moment tensors",
            grads.len(),
            state.m.len()
        )));
    }
    for i in 0..n {
        let shape = params[i].shape();
        if grads[i].shape() != shape || state.m[i].shape() != shape || state.v[i].shape() != shape {
            return Err(Error::InvalidState(format!("adamw: shape mismatch for `{}`", names[i])));
        }
        grads[i].check_finite(names[i])?;
    }

    state.t += 1;
    let t = state.t as i32;
    let b1 = config.beta1;
    let b2 = config.beta2;
    let bc1 = T::from_f64(1.0 - b1.powi(t));
    let bc2 = T::from_f64(1.0 - b2.powi(t));
    let (b1, b2) = (T::from_f64(b1), T::from_f64(b2));
    let one = T::one();
    let lr = T::from_f64(config.lr);
    let eps = T::from_f64(config.epsilon);
    let lr_wd = T::from_f64(config.lr * config.weight_decay);

    for i in 0..n {
        let wd = if decay[i] { lr_wd } else { T::zero() };
        let theta = params[i].data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((p, &g), mi), vi) in theta.iter_mut().zip(grads[i].data()).zip(m).zip(v) {
            *mi = b1 * *mi + (one - b1) * g;
            *vi = b2 * *vi + (one - b2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps) - wd * *p;
        }
    }
    Ok(())
}
