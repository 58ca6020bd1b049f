//! Batch normalization over `[B, C, H, W]` with per-channel statistics.
//!
//! Parameters and running statistics are shared across timesteps: every
//! per-timestep call in train mode contributes to the running estimates
//! with the configured momentum.

use super::{Tensor, TensorError};

pub const BN_EPSILON: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Running per-channel mean/variance, updated in train mode.
#[derive(Debug, Clone)]
pub struct BatchNormState {
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub momentum: f32,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

/// Normalize per channel over the (batch, height, width) axes.
///
/// Train mode uses the statistics of the current call and folds them into
/// the running estimates; eval mode normalizes with the running estimates.
/// A zero-variance channel is handled by the epsilon in the denominator.
pub fn batchnorm(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    state: &mut BatchNormState,
    mode: BnMode,
) -> Result<Tensor, TensorError> {
    let (_, channels, _, _) = input.dims4("batchnorm")?;
    if channels != state.channels() {
        return Err(TensorError::DimMismatch {
            context: "batchnorm",
            dim: "channels",
            expected: state.channels(),
            actual: channels,
        });
    }
    match mode {
        BnMode::Train => {
            let (out, mean, var) = batchnorm_train_stats(input, gamma, beta)?;
            let m = state.momentum;
            for c in 0..channels {
                state.running_mean[c] = (1.0 - m) * state.running_mean[c] + m * mean[c];
                state.running_var[c] = (1.0 - m) * state.running_var[c] + m * var[c];
            }
            Ok(out)
        }
        BnMode::Eval => {
            normalize_with(input, gamma, beta, &state.running_mean, &state.running_var)
        }
    }
}

/// Train-mode forward returning the batch statistics needed by backward.
pub(crate) fn batchnorm_train_stats(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
) -> Result<(Tensor, Vec<f32>, Vec<f32>), TensorError> {
    let (batch, channels, h, w) = input.dims4("batchnorm")?;
    let n = (batch * h * w) as f32;
    let mut mean = vec![0.0f32; channels];
    let mut var = vec![0.0f32; channels];
    for_each_channel(input, batch, channels, h * w, |c, slice| {
        mean[c] += slice.iter().sum::<f32>();
    });
    mean.iter_mut().for_each(|m| *m /= n);
    for_each_channel(input, batch, channels, h * w, |c, slice| {
        var[c] += slice.iter().map(|&v| (v - mean[c]) * (v - mean[c])).sum::<f32>();
    });
    var.iter_mut().for_each(|v| *v /= n);

    let out = normalize_with(input, gamma, beta, &mean, &var)?;
    Ok((out, mean, var))
}

fn normalize_with(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &[f32],
    var: &[f32],
) -> Result<Tensor, TensorError> {
    let (batch, channels, h, w) = input.dims4("batchnorm")?;
    if gamma.len() != channels || beta.len() != channels {
        return Err(TensorError::DimMismatch {
            context: "batchnorm scale/shift",
            dim: "channels",
            expected: channels,
            actual: gamma.len(),
        });
    }
    let mut out = input.clone();
    let plane = h * w;
    for b in 0..batch {
        for c in 0..channels {
            let inv = (var[c] + BN_EPSILON).sqrt().recip();
            let (g, s) = (gamma.data()[c], beta.data()[c]);
            let start = (b * channels + c) * plane;
            for v in &mut out.data_mut()[start..start + plane] {
                *v = (*v - mean[c]) * inv * g + s;
            }
        }
    }
    Ok(out)
}

fn for_each_channel<F: FnMut(usize, &[f32])>(
    input: &Tensor,
    batch: usize,
    channels: usize,
    plane: usize,
    mut f: F,
) {
    for b in 0..batch {
        for c in 0..channels {
            let start = (b * channels + c) * plane;
            f(c, &input.data()[start..start + plane]);
        }
    }
}

/// Standard train-mode backward through the batch statistics.
pub(crate) fn batchnorm_backward(
    input: &Tensor,
    gamma: &Tensor,
    mean: &[f32],
    var: &[f32],
    grad_out: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let (batch, channels, h, w) = input.dims4("batchnorm backward").expect("validated in forward");
    let plane = h * w;
    let n = (batch * plane) as f32;
    let mut dx = vec![0.0f32; input.len()];
    let mut dgamma = vec![0.0f32; channels];
    let mut dbeta = vec![0.0f32; channels];

    for c in 0..channels {
        let inv = (var[c] + BN_EPSILON).sqrt().recip();
        let g = gamma.data()[c];
        // First pass: reductions sum(dy), sum(dy * xhat).
        let mut sum_dy = 0.0f32;
        let mut sum_dy_xhat = 0.0f32;
        for b in 0..batch {
            let start = (b * channels + c) * plane;
            for i in 0..plane {
                let dy = grad_out[start + i];
                let xhat = (input.data()[start + i] - mean[c]) * inv;
                sum_dy += dy;
                sum_dy_xhat += dy * xhat;
            }
        }
        dbeta[c] = sum_dy;
        dgamma[c] = sum_dy_xhat;
        // dx = (g*inv/n) * (n*dy - sum_dy - xhat * sum_dy_xhat)
        let scale = g * inv / n;
        for b in 0..batch {
            let start = (b * channels + c) * plane;
            for i in 0..plane {
                let dy = grad_out[start + i];
                let xhat = (input.data()[start + i] - mean[c]) * inv;
                dx[start + i] = scale * (n * dy - sum_dy - xhat * sum_dy_xhat);
            }
        }
    }
    (dx, dgamma, dbeta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn unit_params(channels: usize) -> (Tensor, Tensor) {
        (Tensor::filled(&[channels], 1.0), Tensor::zeros(&[channels]))
    }

    #[test]
    fn already_normalized_channel_passes_through() {
        // Data with exact zero mean and unit (population) variance.
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let (gamma, beta) = unit_params(1);
        let mut state = BatchNormState::new(1);
        let y = batchnorm(&x, &gamma, &beta, &mut state, BnMode::Train).unwrap();
        for (a, b) in y.iter().zip(x.iter()) {
            assert!((a - b).abs() <= 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        let x = Tensor::filled(&[2, 1, 3, 3], 5.0);
        let (gamma, beta) = unit_params(1);
        let mut state = BatchNormState::new(1);
        let y = batchnorm(&x, &gamma, &beta, &mut state, BnMode::Train).unwrap();
        assert!(y.iter().all(|&v| v.abs() < 1e-6), "{:?}", y.data());
    }

    #[test]
    fn train_mode_output_has_unit_moments() {
        let mut rng = StdRng::seed_from_u64(21);
        let x = Tensor::from_vec(
            &[4, 2, 5, 5],
            (0..200).map(|_| rng.random_range(-3.0..5.0)).collect(),
        )
        .unwrap();
        let (gamma, beta) = unit_params(2);
        let mut state = BatchNormState::new(2);
        let y = batchnorm(&x, &gamma, &beta, &mut state, BnMode::Train).unwrap();
        // Recompute moments from the output.
        for c in 0..2 {
            let mut vals = Vec::new();
            for b in 0..4 {
                let start = (b * 2 + c) * 25;
                vals.extend_from_slice(&y.data()[start..start + 25]);
            }
            let n = vals.len() as f32;
            let mean = vals.iter().sum::<f32>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
            assert!(mean.abs() <= 1e-5, "channel {c} mean {mean}");
            assert!((var - 1.0).abs() <= 1e-3, "channel {c} var {var}");
        }
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let x = Tensor::filled(&[1, 1, 2, 2], 2.0);
        let (gamma, beta) = unit_params(1);
        let mut state = BatchNormState::new(1);
        state.running_mean[0] = 2.0;
        state.running_var[0] = 4.0;
        let y = batchnorm(&x, &gamma, &beta, &mut state, BnMode::Eval).unwrap();
        assert!(y.iter().all(|&v| v.abs() < 1e-6));
        // Eval must not touch the running stats.
        assert_eq!(state.running_mean[0], 2.0);
    }

    #[test]
    fn zero_variance_channel_does_not_divide_by_zero() {
        let x = Tensor::filled(&[1, 1, 4, 4], 3.0);
        let (gamma, beta) = unit_params(1);
        let mut state = BatchNormState::new(1);
        let y = batchnorm(&x, &gamma, &beta, &mut state, BnMode::Train).unwrap();
        assert!(y.iter().all(|v| v.is_finite()));
    }
}
