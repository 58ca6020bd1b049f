//! Temporal operators over spike trains.
//!
//! A standard spiking conv layer applies one convolution per timestep.
//! The operators here change how the temporal axis is traversed:
//!
//! - `baseline`: one conv per step, one LIF step each.
//! - `tac`: aggregate K frames with exponential decay weights, convolve
//!   once, take one LIF step with decay `beta^K`. Output has T/K steps.
//! - `tac_tp`: same aggregation and single conv per group, but the shared
//!   conv output drives K sequential LIF steps. Output keeps T steps.
//! - `tcc`: per-step conv that skips frames which are entirely zero;
//!   output is bit-identical to baseline.
//! - `ftc`: per-step conv followed by a learnable biquad filter in place
//!   of the first-order LIF membrane (see [`BiquadFilter`]).
//! - `imc`: capacity-based channel gating (see [`ChannelGateSpec`]).
//!
//! Every forward threads an explicit [`ConvCallCounter`] owned by the run
//! context; nothing global.

mod ftc;
mod imc;
mod probe;

pub use ftc::{ftc_forward, BiquadFilter};
pub use imc::{binary_entropy, bsc_capacity, imc_gate, ChannelGateSpec};
pub use probe::{error_probe, variance_probe, ErrorProbeRow, ErrorScalingReport, VarianceRow};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neuron::{lif_step, LifParams, LifState, NeuronError};
use crate::tensor::{conv2d, ConvSpec, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TemporalError {
    #[error("spike train must be rank 5 [T,B,C,H,W], got {0:?}")]
    BadRank(Vec<usize>),
    #[error("spike train flagged binary has non-binary value {value} at flat index {index}")]
    NotBinary { value: f32, index: usize },
    #[error("group size {k} does not divide temporal extent {t}")]
    GroupMismatch { k: usize, t: usize },
    #[error("empty frame slice")]
    EmptySlice,
    #[error("layer {layer} collapses temporal extent {extent} below 1 (group size {k})")]
    SubUnitResolution { layer: usize, extent: usize, k: usize },
    #[error("binary input required for {0}")]
    BinaryRequired(&'static str),
    #[error("all channels gated: no channel has positive capacity")]
    AllChannelsGated,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Neuron(#[from] NeuronError),
}

/// Time-indexed stack of frames, `[T, B, C, H, W]` with time outermost.
#[derive(Debug, Clone)]
pub struct SpikeTrain {
    data: Tensor,
    binary: bool,
}

impl SpikeTrain {
    /// Wrap a rank-5 tensor; a `binary` train must contain only 0s and 1s.
    pub fn new(data: Tensor, binary: bool) -> Result<Self, TemporalError> {
        if data.shape().len() != 5 || data.shape()[0] == 0 {
            return Err(TemporalError::BadRank(data.shape().to_vec()));
        }
        if binary {
            if let Some(index) = data.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(TemporalError::NotBinary {
                    value: data.data()[index],
                    index,
                });
            }
        }
        Ok(SpikeTrain { data, binary })
    }

    pub fn from_frames(frames: &[Tensor], binary: bool) -> Result<Self, TemporalError> {
        if frames.is_empty() {
            return Err(TemporalError::EmptySlice);
        }
        let (b, c, h, w) = frames[0].dims4("spike train frame")?;
        let mut data = Vec::with_capacity(frames.len() * frames[0].len());
        for f in frames {
            f.check_same_shape(&frames[0], "spike train frames")
                .map_err(TemporalError::Tensor)?;
            data.extend_from_slice(f.data());
        }
        SpikeTrain::new(Tensor::from_vec(&[frames.len(), b, c, h, w], data)?, binary)
    }

    pub fn steps(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn is_binary(&self) -> bool {
        self.binary
    }

    /// Frame shape as `[B, C, H, W]`.
    pub fn frame_shape(&self) -> [usize; 4] {
        let s = self.data.shape();
        [s[1], s[2], s[3], s[4]]
    }

    pub fn frame_len(&self) -> usize {
        self.data.len() / self.steps()
    }

    pub fn frame_data(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data.data()[t * n..(t + 1) * n]
    }

    /// Copy of frame `t` as a `[B, C, H, W]` tensor.
    pub fn frame(&self, t: usize) -> Tensor {
        Tensor::from_vec(&self.frame_shape(), self.frame_data(t).to_vec()).expect("frame shape")
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    /// Fraction of nonzero entries.
    pub fn density(&self) -> f32 {
        let nz = self.data.iter().filter(|&&v| v != 0.0).count();
        nz as f32 / self.data.len() as f32
    }
}

/// Operator selector for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Baseline,
    Tac,
    TacTp,
    Tcc,
    Ftc,
    Imc,
}

impl OpKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OpKind::Baseline => "baseline",
            OpKind::Tac => "tac",
            OpKind::TacTp => "tac_tp",
            OpKind::Tcc => "tcc",
            OpKind::Ftc => "ftc",
            OpKind::Imc => "imc",
        }
    }
}

/// Per-layer temporal operator configuration.
#[derive(Debug, Clone)]
pub struct TemporalOpConfig {
    pub kind: OpKind,
    /// Group size K; meaningful for `tac` and `tac_tp`, 1 otherwise.
    pub group_size: usize,
    pub ftc_coeffs: Option<BiquadFilter>,
    pub imc_target_bits: Option<f32>,
}

impl TemporalOpConfig {
    pub fn baseline() -> Self {
        TemporalOpConfig {
            kind: OpKind::Baseline,
            group_size: 1,
            ftc_coeffs: None,
            imc_target_bits: None,
        }
    }

    pub fn tac(k: usize) -> Self {
        TemporalOpConfig {
            kind: OpKind::Tac,
            group_size: k,
            ftc_coeffs: None,
            imc_target_bits: None,
        }
    }

    pub fn tac_tp(k: usize) -> Self {
        TemporalOpConfig {
            kind: OpKind::TacTp,
            group_size: k,
            ftc_coeffs: None,
            imc_target_bits: None,
        }
    }

    pub fn tcc() -> Self {
        TemporalOpConfig {
            kind: OpKind::Tcc,
            group_size: 1,
            ftc_coeffs: None,
            imc_target_bits: None,
        }
    }

    pub fn ftc(filter: BiquadFilter) -> Self {
        TemporalOpConfig {
            kind: OpKind::Ftc,
            group_size: 1,
            ftc_coeffs: Some(filter),
            imc_target_bits: None,
        }
    }

    pub fn imc(target_bits: f32) -> Self {
        TemporalOpConfig {
            kind: OpKind::Imc,
            group_size: 1,
            ftc_coeffs: None,
            imc_target_bits: Some(target_bits),
        }
    }

    /// Effective group size: K for aggregating kinds, 1 for the rest.
    pub fn effective_k(&self) -> usize {
        match self.kind {
            OpKind::Tac | OpKind::TacTp => self.group_size,
            _ => 1,
        }
    }
}

/// Monotone per-run convolution-call counter, threaded explicitly.
#[derive(Debug, Default, Clone)]
pub struct ConvCallCounter {
    calls: u64,
}

impl ConvCallCounter {
    pub fn new() -> Self {
        ConvCallCounter::default()
    }

    pub fn bump(&mut self) {
        self.calls += 1;
    }

    pub fn count(&self) -> u64 {
        self.calls
    }
}

fn check_group(k: usize, t: usize) -> Result<(), TemporalError> {
    if k == 0 || t % k != 0 {
        return Err(TemporalError::GroupMismatch { k, t });
    }
    Ok(())
}

/// Decay-weighted sum of K frames: weight `beta^(K-1-j)` on frame `j`, so
/// the newest frame enters with weight 1 and the oldest with `beta^(K-1)`.
pub fn aggregate(frames: &[Tensor], beta: f32) -> Result<Tensor, TemporalError> {
    if frames.is_empty() {
        return Err(TemporalError::EmptySlice);
    }
    let k = frames.len();
    let mut out = Tensor::zeros(frames[0].shape());
    for (j, f) in frames.iter().enumerate() {
        out.accumulate(beta.powi((k - 1 - j) as i32), f)?;
    }
    Ok(out)
}

/// Aggregate frames `[t0, t0+k)` of a train without copying each frame.
fn aggregate_slice(train: &SpikeTrain, t0: usize, k: usize, beta: f32) -> Tensor {
    let mut out = Tensor::zeros(&train.frame_shape());
    for j in 0..k {
        let w = beta.powi((k - 1 - j) as i32);
        let src = train.frame_data(t0 + j);
        for (o, &s) in out.data_mut().iter_mut().zip(src.iter()) {
            *o += w * s;
        }
    }
    out
}

/// Reference per-step layer: T convolutions, T LIF steps.
pub fn baseline_forward(
    input: &SpikeTrain,
    weights: &Tensor,
    spec: &ConvSpec,
    params: &LifParams,
    counter: &mut ConvCallCounter,
) -> Result<SpikeTrain, TemporalError> {
    tac_tp_forward(input, weights, spec, params, 1, counter)
}

/// Temporal collapse: T/K convolutions, output has T/K timesteps.
pub fn tac_forward(
    input: &SpikeTrain,
    weights: &Tensor,
    spec: &ConvSpec,
    params: &LifParams,
    k: usize,
    counter: &mut ConvCallCounter,
) -> Result<SpikeTrain, TemporalError> {
    let t = input.steps();
    check_group(k, t)?;
    let mut out_frames = Vec::with_capacity(t / k);
    let mut state: Option<LifState> = None;
    for g in 0..t / k {
        let agg = aggregate_slice(input, g * k, k, params.beta);
        let y = conv2d(&agg, weights, None, spec)?;
        counter.bump();
        let st = state.unwrap_or_else(|| LifState::zeros(y.shape()));
        let (spikes, next) = lif_step(&st, &y, params, k as u32)?;
        out_frames.push(spikes);
        state = Some(next);
    }
    SpikeTrain::from_frames(&out_frames, true)
}

/// Temporal preservation: T/K convolutions, each shared output drives K
/// sequential LIF steps; output keeps all T timesteps.
pub fn tac_tp_forward(
    input: &SpikeTrain,
    weights: &Tensor,
    spec: &ConvSpec,
    params: &LifParams,
    k: usize,
    counter: &mut ConvCallCounter,
) -> Result<SpikeTrain, TemporalError> {
    let t = input.steps();
    check_group(k, t)?;
    let mut out_frames = Vec::with_capacity(t);
    let mut state: Option<LifState> = None;
    for g in 0..t / k {
        let agg = aggregate_slice(input, g * k, k, params.beta);
        let y = conv2d(&agg, weights, None, spec)?;
        counter.bump();
        for _ in 0..k {
            let st = state.unwrap_or_else(|| LifState::zeros(y.shape()));
            let (spikes, next) = lif_step(&st, &y, params, 1)?;
            out_frames.push(spikes);
            state = Some(next);
        }
    }
    SpikeTrain::from_frames(&out_frames, true)
}

/// Silent-window skip: convolution is skipped for all-zero frames (the
/// membrane still decays and may spike). Output is bit-identical to the
/// baseline; only the call count differs.
pub fn tcc_forward(
    input: &SpikeTrain,
    weights: &Tensor,
    spec: &ConvSpec,
    params: &LifParams,
    counter: &mut ConvCallCounter,
) -> Result<SpikeTrain, TemporalError> {
    if !input.is_binary() {
        return Err(TemporalError::BinaryRequired("tcc_forward"));
    }
    let t = input.steps();
    let mut out_frames = Vec::with_capacity(t);
    let mut state: Option<LifState> = None;
    let out_shape = {
        let [b, _, h, w] = input.frame_shape();
        [
            b,
            spec.out_channels,
            spec.out_extent(h)?,
            spec.out_extent(w)?,
        ]
    };
    for step in 0..t {
        let silent = input.frame_data(step).iter().all(|&v| v == 0.0);
        let y = if silent {
            Tensor::zeros(&out_shape)
        } else {
            let frame = input.frame(step);
            let y = conv2d(&frame, weights, None, spec)?;
            counter.bump();
            y
        };
        let st = state.unwrap_or_else(|| LifState::zeros(y.shape()));
        let (spikes, next) = lif_step(&st, &y, params, 1)?;
        out_frames.push(spikes);
        state = Some(next);
    }
    SpikeTrain::from_frames(&out_frames, true)
}

/// Output temporal extent after a stack of layers; collapse below one
/// timestep is an error, not a truncation.
pub fn temporal_resolution(layer_configs: &[TemporalOpConfig], t: usize) -> Result<usize, TemporalError> {
    let mut extent = t;
    for (layer, cfg) in layer_configs.iter().enumerate() {
        if cfg.kind == OpKind::Tac {
            let k = cfg.group_size;
            if k == 0 || extent % k != 0 || extent / k < 1 {
                return Err(TemporalError::SubUnitResolution { layer, extent, k });
            }
            extent /= k;
        }
    }
    Ok(extent)
}

/// Analytic conv-call count for a layer stack: each layer contributes its
/// incoming extent divided by its effective group size.
pub fn predicted_conv_calls(layer_configs: &[TemporalOpConfig], t: usize) -> Result<u64, TemporalError> {
    let mut extent = t;
    let mut calls = 0u64;
    for (layer, cfg) in layer_configs.iter().enumerate() {
        let k = cfg.effective_k();
        if k == 0 || extent % k != 0 {
            return Err(TemporalError::SubUnitResolution { layer, extent, k });
        }
        calls += (extent / k) as u64;
        if cfg.kind == OpKind::Tac {
            extent /= k;
        }
    }
    Ok(calls)
}
