//! Adam with decoupled weight decay and a linear warmup schedule.

use serde::{Deserialize, Serialize};

use crate::encoder::{BiEncoderParams, TowerGrad};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Self {
            first: vec![0.0; n],
            second: vec![0.0; n],
        }
    }
}

/// Gradients for both towers.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub query: TowerGrad,
    pub demo: TowerGrad,
}

impl EncoderGrads {
    pub fn zeros_like(params: &BiEncoderParams) -> Self {
        Self {
            query: TowerGrad::zeros_like(&params.query_tower),
            demo: TowerGrad::zeros_like(&params.demo_tower),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    // query embeddings, query projection, demo embeddings, demo projection
    moments: [Moments; 4],
}

impl OptimizerState {
    pub fn new(params: &BiEncoderParams, config: AdamWConfig) -> Self {
        let q = &params.query_tower;
        let d = &params.demo_tower;
        Self {
            config,
            step: 0,
            moments: [
                Moments::zeros(q.embeddings.len()),
                Moments::zeros(q.projection.len()),
                Moments::zeros(d.embeddings.len()),
                Moments::zeros(d.projection.len()),
            ],
        }
    }

    /// One update at learning rate `lr`. Parameters are rounded to f32
    /// afterwards.
    pub fn update(&mut self, params: &mut BiEncoderParams, grads: &EncoderGrads, lr: f64) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let slots: [(&mut Vec<f64>, &Vec<f64>); 4] = [
            (&mut params.query_tower.embeddings, &grads.query.embeddings),
            (&mut params.query_tower.projection, &grads.query.projection),
            (&mut params.demo_tower.embeddings, &grads.demo.embeddings),
            (&mut params.demo_tower.projection, &grads.demo.projection),
        ];
        for ((values, grad), m) in slots.into_iter().zip(self.moments.iter_mut()) {
            for k in 0..values.len() {
                let g = grad[k];
                m.first[k] = c.beta1 * m.first[k] + (1.0 - c.beta1) * g;
                m.second[k] = c.beta2 * m.second[k] + (1.0 - c.beta2) * g * g;
                let m_hat = m.first[k] / bias1;
                let v_hat = m.second[k] / bias2;
                values[k] -= lr * (m_hat / (v_hat.sqrt() + c.epsilon) + c.weight_decay * values[k]);
            }
        }
        params.quantize();
    }
}

/// Linear warmup from `lr/warmup` to `lr` over `warmup` steps, then constant.
pub fn warmup_lr(base: f64, warmup: usize, step: usize) -> f64 {
    if warmup == 0 {
        base
    } else {
        base * ((step + 1) as f64 / warmup as f64).min(1.0)
    }
}
