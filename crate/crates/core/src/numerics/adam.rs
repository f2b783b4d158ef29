use super::{Gradients, ModelParams};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Gradients,
    v: Gradients,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self::with_config(params, AdamConfig::default())
    }

    pub fn with_config(params: &ModelParams, config: AdamConfig) -> Self {
        Self {
            config,
            m: params.zero_grads(),
            v: params.zero_grads(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if lr.is_nan() || lr <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "learning rate {lr} must be > 0"
        )));
    }
    params.check_layout(grads)?;
    params.check_layout(&state.m)?;
    let AdamConfig { beta1, beta2, eps } = state.config;
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for id in params.ids().collect::<Vec<_>>() {
        let g = grads.get(id).data();
        let m = state.m.get_mut(id).data_mut();
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
        }
        let v = state.v.get_mut(id).data_mut();
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
        }
        let m = state.m.get(id).data();
        let v = state.v.get(id).data();
        let p = params.get_mut(id).data_mut();
        for ((pi, mi), vi) in p.iter_mut().zip(m).zip(v) {
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
