//! First-order optimizers shared by the softmax head and the metric network.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    /// Plain gradient descent, mostly useful for checking monotone loss curves.
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state for one flat parameter block.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    params: AdamParams,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: AdamParams, len: usize) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Adam => (vec![0.0; len], vec![0.0; len]),
            OptimizerKind::GradientDescent => (Vec::new(), Vec::new()),
        };
        Optimizer {
            kind,
            params,
            step: 0,
            m,
            v,
        }
    }

    pub fn step(&mut self, weights: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(weights.len(), grads.len());
        self.step += 1;
        let lr = self.params.learning_rate;
        match self.kind {
            OptimizerKind::GradientDescent => {
                for (w, g) in weights.iter_mut().zip(grads) {
                    *w -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                let AdamParams {
                    beta1,
                    beta2,
                    epsilon,
                    ..
                } = self.params;
                let bc1 = 1.0 - beta1.powi(self.step as i32);
                let bc2 = 1.0 - beta2.powi(self.step as i32);
                for i in 0..weights.len() {
                    let g = grads[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    weights[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut w = vec![5.0, -3.0];
        let mut opt = Optimizer::new(
            OptimizerKind::Adam,
            AdamParams {
                learning_rate: 0.1,
                ..AdamParams::default()
            },
            2,
        );
        for _ in 0..500 {
            let g: Vec<f64> = w.iter().map(|x| 2.0 * x).collect();
            opt.step(&mut w, &g);
        }
        assert!(w.iter().all(|x| x.abs() < 1e-2), "{w:?}");
    }

    #[test]
    fn first_adam_step_is_lr_sized() {
        // bias correction makes the first step exactly lr * sign(g)
        let mut w = vec![0.0];
        let mut opt = Optimizer::new(OptimizerKind::Adam, AdamParams::default(), 1);
        opt.step(&mut w, &[123.0]);
        assert!((w[0] + 1e-3).abs() < 1e-9);
    }
}
