//! Adam optimizer with stepped learning-rate decay.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Multiplicative decay applied every `decay_every` steps.
    pub decay_gamma: f64,
    pub decay_every: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay_gamma: 0.95,
            decay_every: 250,
        }
    }
}

/// First/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, config: AdamConfig) -> Self {
        let shapes: Vec<_> = params.arrays().iter().map(|(_, a)| a.raw_dim()).collect();
        Self {
            config,
            m: shapes.iter().map(|d| Array2::zeros(*d)).collect(),
            v: shapes.iter().map(|d| Array2::zeros(*d)).collect(),
            step: 0,
        }
    }

    /// Learning rate in effect at `step`: lr·γ^⌊step/decay_every⌋.
    pub fn effective_lr_at(config: &AdamConfig, step: u64) -> f64 {
        config.learning_rate * config.decay_gamma.powi((step / config.decay_every) as i32)
    }

    pub fn effective_lr(&self) -> f64 {
        Self::effective_lr_at(&self.config, self.step)
    }
}

/// One Adam update with bias correction. `grads` must be congruent to the
/// canonical parameter array order.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[Array2<f64>],
    state: &mut OptimizerState,
) -> Result<()> {
    let arrays = params.arrays_mut();
    if arrays.len() != grads.len() || arrays.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam_step: {} parameter arrays, {} gradients, {} moment slots",
            arrays.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let cfg = state.config;
    let lr = state.effective_lr();
    let t = (state.step + 1) as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);

    for (i, theta) in arrays.into_iter().enumerate() {
        if theta.raw_dim() != grads[i].raw_dim() {
            return Err(Error::ShapeMismatch(format!(
                "adam_step: parameter {i} has shape {:?}, gradient {:?}",
                theta.raw_dim(),
                grads[i].raw_dim()
            )));
        }
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        ndarray::Zip::from(theta)
            .and(m)
            .and(v)
            .and(&grads[i])
            .for_each(|t_ref, m_ref, v_ref, &g| {
                *m_ref = cfg.beta1 * *m_ref + (1.0 - cfg.beta1) * g;
                *v_ref = cfg.beta2 * *v_ref + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m_ref / bias1;
                let v_hat = *v_ref / bias2;
                *t_ref -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
            });
    }
    state.step += 1;
    params.check_finite().map_err(|_| Error::NonFinite("adam update".into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::ModelConfig;

    fn tiny_params() -> ModelParams {
        let config = ModelConfig {
            d_in: 2,
            d_out: 1,
            encoder_width: 3,
            latent_dim: 2,
            attention_hidden: 2,
            attention_heads: 1,
        };
        ModelParams::init(config, 0)
    }

    #[test]
    fn lr_schedule_exact() {
        let cfg = AdamConfig::default();
        assert_eq!(OptimizerState::effective_lr_at(&cfg, 0), 1e-3);
        assert_eq!(OptimizerState::effective_lr_at(&cfg, 249), 1e-3);
        assert_eq!(OptimizerState::effective_lr_at(&cfg, 250), 0.95e-3);
        assert_eq!(OptimizerState::effective_lr_at(&cfg, 500), 0.9025e-3);
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut params = tiny_params();
        let before = params.clone();
        let mut state = OptimizerState::new(&params, AdamConfig::default());
        let zeros: Vec<Array2<f64>> =
            params.arrays().iter().map(|(_, a)| Array2::zeros(a.raw_dim())).collect();
        adam_step(&mut params, &zeros, &mut state).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step, 1);

        // with non-zero moments, a zero gradient still decays them by beta1
        state.m[0].fill(1.0);
        state.v[0].fill(1.0);
        adam_step(&mut params, &zeros, &mut state).unwrap();
        assert!((state.m[0][[0, 0]] - 0.9).abs() < 1e-15);
        assert!((state.v[0][[0, 0]] - 0.999).abs() < 1e-15);
    }

    #[test]
    fn first_step_is_signed_unit_step_times_lr() {
        // hand evaluation of the Adam recurrences at step 0:
        // m̂ = g, v̂ = g², update = −lr·g/(|g| + ε)
        let mut params = tiny_params();
        let w_before = params.node_encoder.w1[[0, 0]];
        let mut state = OptimizerState::new(&params, AdamConfig::default());
        let mut grads: Vec<Array2<f64>> =
            params.arrays().iter().map(|(_, a)| Array2::zeros(a.raw_dim())).collect();
        grads[0][[0, 0]] = 0.5;
        adam_step(&mut params, &grads, &mut state).unwrap();
        let expected = w_before - 1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((params.node_encoder.w1[[0, 0]] - expected).abs() < 1e-15);
    }

    #[test]
    fn non_finite_update_is_an_error() {
        let mut params = tiny_params();
        let mut state = OptimizerState::new(&params, AdamConfig::default());
        let mut grads: Vec<Array2<f64>> =
            params.arrays().iter().map(|(_, a)| Array2::zeros(a.raw_dim())).collect();
        grads[0][[0, 0]] = f64::NAN;
        assert!(adam_step(&mut params, &grads, &mut state).is_err());
    }
}
