//! Leaky integrate-and-fire dynamics with surrogate gradients.
//!
//! The membrane update is `v' = beta^p * v + input`, a spike fires when
//! `v' >= v_th` (equality fires), and the reset subtracts `v_th`. The
//! exponent `p` is 1 for a plain step and `K` when a whole aggregation
//! group is folded into one step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum NeuronError {
    #[error("invalid LIF parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Which smooth stand-in replaces the spike derivative in backward passes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    FastSigmoid,
    Arctan,
}

/// Surrogate derivative family and sharpness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    pub kind: SurrogateKind,
    pub alpha: f32,
}

impl SurrogateSpec {
    pub fn fast_sigmoid(alpha: f32) -> Self {
        SurrogateSpec {
            kind: SurrogateKind::FastSigmoid,
            alpha,
        }
    }

    pub fn arctan(alpha: f32) -> Self {
        SurrogateSpec {
            kind: SurrogateKind::Arctan,
            alpha,
        }
    }

    /// Surrogate derivative at membrane offset `x = v - v_th`.
    ///
    /// Fast sigmoid: `a / (1 + a|x|)^2`. Arctan: `(a/2) / (1 + (pi/2 a x)^2)`.
    /// Both are even, positive, and peak at 0.
    pub fn grad(&self, x: f32) -> f32 {
        match self.kind {
            SurrogateKind::FastSigmoid => {
                let denom = 1.0 + self.alpha * x.abs();
                self.alpha / (denom * denom)
            }
            SurrogateKind::Arctan => {
                let z = std::f32::consts::FRAC_PI_2 * self.alpha * x;
                (self.alpha / 2.0) / (1.0 + z * z)
            }
        }
    }

    /// Smooth primitive whose derivative is [`Self::grad`]; used by the
    /// finite-difference tests to validate the surrogate path.
    pub fn soft_spike(&self, x: f32) -> f32 {
        match self.kind {
            SurrogateKind::FastSigmoid => self.alpha * x / (1.0 + self.alpha * x.abs()),
            SurrogateKind::Arctan => {
                (std::f32::consts::FRAC_PI_2 * self.alpha * x).atan() / std::f32::consts::PI
            }
        }
    }
}

/// Whether the reset term participates in the backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetMode {
    Subtract,
    SubtractDetached,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    /// Membrane decay in (0, 1).
    pub beta: f32,
    /// Firing threshold, positive.
    pub v_th: f32,
    pub surrogate: SurrogateSpec,
    pub reset: ResetMode,
}

impl LifParams {
    pub fn new(beta: f32, v_th: f32, surrogate: SurrogateSpec, reset: ResetMode) -> Result<Self, NeuronError> {
        if !(0.0 < beta && beta < 1.0) {
            return Err(NeuronError::InvalidParam(format!("beta must be in (0,1), got {beta}")));
        }
        if v_th <= 0.0 {
            return Err(NeuronError::InvalidParam(format!("v_th must be positive, got {v_th}")));
        }
        if surrogate.alpha <= 0.0 {
            return Err(NeuronError::InvalidParam(format!(
                "surrogate alpha must be positive, got {}",
                surrogate.alpha
            )));
        }
        Ok(LifParams {
            beta,
            v_th,
            surrogate,
            reset,
        })
    }
}

/// Per-element membrane potential.
#[derive(Debug, Clone)]
pub struct LifState {
    pub v: Tensor,
}

impl LifState {
    pub fn zeros(shape: &[usize]) -> Self {
        LifState {
            v: Tensor::zeros(shape),
        }
    }
}

/// One LIF update: decay by `beta^decay_power`, integrate, threshold, reset.
///
/// Returns the binary spike tensor and the post-reset state. Spikes fire at
/// exact threshold (`theta(0) = 1`).
pub fn lif_step(
    state: &LifState,
    input: &Tensor,
    params: &LifParams,
    decay_power: u32,
) -> Result<(Tensor, LifState), NeuronError> {
    state.v.check_same_shape(input, "lif_step")?;
    if decay_power == 0 {
        return Err(NeuronError::InvalidParam("decay_power must be >= 1".into()));
    }
    let decay = params.beta.powi(decay_power as i32);
    let mut spikes = Tensor::zeros(input.shape());
    let mut v_next = Tensor::zeros(input.shape());
    for i in 0..input.len() {
        let v = decay * state.v.data()[i] + input.data()[i];
        let s = if v - params.v_th >= 0.0 { 1.0 } else { 0.0 };
        spikes.data_mut()[i] = s;
        v_next.data_mut()[i] = v - s * params.v_th;
    }
    Ok((spikes, LifState { v: v_next }))
}

/// Elementwise surrogate derivative of the spike nonlinearity.
pub fn surrogate_grad(x: &Tensor, spec: &SurrogateSpec) -> Tensor {
    x.map(|v| spec.grad(v))
}

/// [`lif_step`] recorded on a tape for BPTT.
///
/// The spike's backward pass uses the surrogate derivative at `v - v_th`;
/// with [`ResetMode::SubtractDetached`] the reset term is cut out of the
/// gradient graph.
pub fn lif_step_on_tape(
    tape: &mut crate::tape::Tape,
    v: crate::tape::Var,
    input: crate::tape::Var,
    params: &LifParams,
    decay_power: u32,
) -> Result<(crate::tape::Var, crate::tape::Var), NeuronError> {
    if decay_power == 0 {
        return Err(NeuronError::InvalidParam("decay_power must be >= 1".into()));
    }
    let decay = params.beta.powi(decay_power as i32);
    let v_in = tape.axpy(decay, v, input)?;
    let shifted = tape.add_scalar(v_in, -params.v_th);
    let spikes = tape.spike(shifted, params.surrogate);
    let reset_source = match params.reset {
        ResetMode::Subtract => spikes,
        ResetMode::SubtractDetached => tape.detach(spikes),
    };
    let reset = tape.scale(reset_source, params.v_th);
    let v_next = tape.sub(v_in, reset)?;
    Ok((spikes, v_next))
}
