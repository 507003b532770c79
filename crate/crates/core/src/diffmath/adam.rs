use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{DpiError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2.5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one [`ParamSet`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    initialized: bool,
}

impl AdamState {
    /// Creates a state that must be bound with [`AdamState::init`] before stepping.
    pub fn uninitialized(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
            initialized: false,
        }
    }

    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let mut s = Self::uninitialized(config);
        s.init(params);
        s
    }

    pub fn init(&mut self, params: &ParamSet) {
        self.m = params
            .ids()
            .map(|id| Tensor::zeros(params.get(id).shape()))
            .collect();
        self.v = self.m.clone();
        self.step = 0;
        self.initialized = true;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected Adam update from the accumulated gradients,
    /// then zeroes them.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if !self.initialized {
            return Err(DpiError::usage("adam state used before init"));
        }
        if self.m.len() != params.len() {
            return Err(DpiError::usage(format!(
                "adam state tracks {} tensors but parameter set `{}` has {}",
                self.m.len(),
                params.name(),
                params.len()
            )));
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
        for id in params.ids().collect::<Vec<_>>() {
            let grad = params.grad(id).clone();
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            if m.shape() != grad.shape() {
                return Err(DpiError::usage(format!(
                    "adam moment shape {:?} does not match `{}`",
                    m.shape(),
                    params.param_name(id)
                )));
            }
            let value = params.get_mut(id);
            for (((w, g), mk), vk) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mk = beta1 * *mk + (1.0 - beta1) * g;
                *vk = beta2 * *vk + (1.0 - beta2) * g * g;
                let m_hat = *mk / bc1;
                let v_hat = *vk / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        params.zero_grad();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(w: f64) -> (ParamSet, super::super::ParamId) {
        let mut ps = ParamSet::new("s");
        let id = ps.add("w", Tensor::row(&[w])).unwrap();
        (ps, id)
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut ps, id) = scalar_set(0.0);
        ps.grad_mut(id).data_mut()[0] = 1.0;
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(cfg, &ps);
        adam.step(&mut ps).unwrap();
        // m̂ = 1, v̂ = 1  =>  w = -0.1 / (1 + 1e-8)
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((ps.get(id).data()[0] - expected).abs() < 1e-15);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let (mut ps, id) = scalar_set(0.7);
        let mut adam = AdamState::new(AdamConfig::default(), &ps);
        for _ in 0..5 {
            adam.step(&mut ps).unwrap();
        }
        assert_eq!(ps.get(id).data()[0], 0.7);
        assert_eq!(adam.steps(), 5);
    }

    #[test]
    fn identical_parameters_get_identical_updates() {
        let mut ps = ParamSet::new("s");
        let a = ps.add("a", Tensor::row(&[0.3, 0.3])).unwrap();
        ps.grad_mut(a).data_mut().copy_from_slice(&[0.25, 0.25]);
        let mut adam = AdamState::new(AdamConfig::default(), &ps);
        adam.step(&mut ps).unwrap();
        let d = ps.get(a).data();
        assert_eq!(d[0].to_bits(), d[1].to_bits());
    }

    #[test]
    fn uninitialized_state_is_usage_error() {
        let (mut ps, _) = scalar_set(0.0);
        let mut adam = AdamState::uninitialized(AdamConfig::default());
        assert!(matches!(adam.step(&mut ps), Err(DpiError::Usage(_))));
    }

    #[test]
    fn step_zeroes_gradients() {
        let (mut ps, id) = scalar_set(0.0);
        ps.grad_mut(id).data_mut()[0] = 3.0;
        let mut adam = AdamState::new(AdamConfig::default(), &ps);
        adam.step(&mut ps).unwrap();
        assert_eq!(ps.grad(id).data()[0], 0.0);
    }
}
