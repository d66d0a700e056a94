use serde::{Deserialize, Serialize};

use super::{CnnModel, Gradients};
use crate::error::{Error, Result};

/// ADAM hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub learning_rate: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            learning_rate: 1e-4,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub m: Gradients,
    pub v: Gradients,
    pub step: u64,
    /// Completed training epochs, carried across checkpoints.
    pub epoch: usize,
}

impl OptimizerState {
    pub fn new(model: &CnnModel, config: AdamConfig) -> Self {
        Self {
            config,
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            step: 0,
            epoch: 0,
        }
    }
}

fn update(theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], c: &AdamConfig, bc1: f64, bc2: f64) {
    for (((p, &g), m), v) in theta.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
    }
}

/// One bias-corrected ADAM update of every parameter.
pub fn adam_step(model: &mut CnnModel, state: &mut OptimizerState, grads: &Gradients) -> Result<()> {
    if grads.weights.len() != model.layers.len() || state.m.weights.len() != model.layers.len() {
        return Err(Error::ShapeMismatch("gradient/optimizer layer count".into()));
    }
    for (i, layer) in model.layers.iter().enumerate() {
        if grads.weights[i].dim() != layer.weights.dim() || state.m.weights[i].dim() != layer.weights.dim() {
            return Err(Error::ShapeMismatch(format!("layer {i} parameter shape")));
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let slice = |a: &ndarray::Array2<f64>| a.as_slice().expect("standard layout").to_vec();
    for (i, layer) in model.layers.iter_mut().enumerate() {
        let g = slice(&grads.weights[i]);
        update(
            layer.weights.as_slice_mut().expect("standard layout"),
            &g,
            state.m.weights[i].as_slice_mut().expect("standard layout"),
            state.v.weights[i].as_slice_mut().expect("standard layout"),
            &c,
            bc1,
            bc2,
        );
        update(
            layer.bias.as_slice_mut().expect("standard layout"),
            grads.bias[i].as_slice().expect("standard layout"),
            state.m.bias[i].as_slice_mut().expect("standard layout"),
            state.v.bias[i].as_slice_mut().expect("standard layout"),
            &c,
            bc1,
            bc2,
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::ModelShape;
    use crate::features::ChannelLayout;

    fn scalar_model() -> CnnModel {
        let shape = ModelShape {
            in_channels: 1,
            widths: vec![1],
            kernels: vec![1],
        };
        CnnModel::zeros(&shape, ChannelLayout::new(1, 0)).unwrap()
    }

    fn grads_of(model: &CnnModel, g: f64) -> Gradients {
        let mut out = Gradients::zeros_like(model);
        out.weights[0].fill(g);
        out
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut model = scalar_model();
        let mut state = OptimizerState::new(&model, AdamConfig::default());
        let g = grads_of(&model, 1.0);
        adam_step(&mut model, &mut state, &g).unwrap();
        let delta = model.layers[0].weights[[0, 0]];
        assert!((delta + 1e-4 / (1.0 + 1e-8)).abs() < 1e-18);
        assert_eq!(model.layers[0].bias[0], 0.0);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut model = scalar_model();
        model.layers[0].weights[[0, 0]] = 0.7;
        let mut state = OptimizerState::new(&model, AdamConfig::default());
        let g = grads_of(&model, 0.0);
        adam_step(&mut model, &mut state, &g).unwrap();
        assert_eq!(model.layers[0].weights[[0, 0]], 0.7);
    }

    #[test]
    fn constant_gradient_decreases_monotonically() {
        let mut model = scalar_model();
        let mut state = OptimizerState::new(&model, AdamConfig::default());
        let g = grads_of(&model, 0.3);
        let mut last = model.layers[0].weights[[0, 0]];
        for _ in 0..2 {
            adam_step(&mut model, &mut state, &g).unwrap();
            let now = model.layers[0].weights[[0, 0]];
            assert!(now < last);
            last = now;
        }
    }
}
