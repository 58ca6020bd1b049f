//! Adam with cosine learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Per-epoch learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Cosine,
    CosineWarmRestarts { t_max: usize },
}

impl Schedule {
    /// Learning rate for `epoch` of `total` at base rate `lr0`.
    pub fn lr_at(&self, lr0: f32, epoch: usize, total: usize) -> f32 {
        let phase = |e: usize, span: usize| {
            let span = span.max(1) as f32;
            0.5 * (1.0 + (std::f32::consts::PI * e as f32 / span).cos())
        };
        match self {
            Schedule::Cosine => lr0 * phase(epoch, total),
            Schedule::CosineWarmRestarts { t_max } => lr0 * phase(epoch % (*t_max).max(1), *t_max),
        }
    }
}

/// Standard Adam (bias-corrected first and second moments).
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    steps: u64,
}

impl Adam {
    pub fn new() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            steps: 0,
        }
    }

    /// Apply one update using each parameter's `grad` buffer. Parameter
    /// order must be stable across calls.
    pub fn step(&mut self, params: &mut [&mut Tensor], lr: f32) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        debug_assert_eq!(self.m.len(), params.len());
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(grad) = p.grad() else { continue };
            let grad = grad.to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let data = p.data_mut();
            for j in 0..data.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * grad[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * grad[j] * grad[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new()
    }
}
