use super::{Mlp, MlpGrads};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    first: MlpGrads,
    second: MlpGrads,
    step: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(mlp: &Mlp, config: AdamConfig) -> Self {
        Self {
            first: MlpGrads::zeros_like(mlp),
            second: MlpGrads::zeros_like(mlp),
            step: 0,
            config,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. Non-finite gradients abort the update
/// before any parameter is touched.
pub fn adam_step(params: &mut Mlp, grads: &MlpGrads, state: &mut AdamState, learning_rate: f64) -> Result<()> {
    if grads.layers.len() != params.layers().len()
        || state.first.layers.len() != params.layers().len()
        || grads
            .layers
            .iter()
            .zip(params.layers())
            .any(|(g, l)| g.weight.len() != l.weight().len() || g.bias.len() != l.bias().len())
    {
        return Err(Error::Usage("gradient shapes do not match parameters".into()));
    }
    if !grads.is_finite() {
        return Err(Error::Training(format!(
            "non-finite gradient at Adam step {} (max |g| = {})",
            state.step + 1,
            grads.max_abs()
        )));
    }
    state.step += 1;
    let AdamConfig { beta1, beta2, epsilon } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    };
    for (l, layer) in params.layers_mut().iter_mut().enumerate() {
        let g = &grads.layers[l];
        let m = &mut state.first.layers[l];
        let v = &mut state.second.layers[l];
        update(layer.weight_mut(), &g.weight, &mut m.weight, &mut v.weight);
        update(layer.bias_mut(), &g.bias, &mut m.bias, &mut v.bias);
    }
    Ok(())
}
